"""Multi-UAV joint edge-computing / data-collection simulator and trainer."""

__version__ = "0.1.0"

from .scenario import (  # noqa: F401
    ConfigError,
    Scenario,
    ScenarioError,
    generate_scenario,
    validate,
)
from .env import JointMecDcEnv, RewardBreakdown, WorldState  # noqa: F401
from .matching import Association, MatchingProblem, tma  # noqa: F401
from .sac import ReplayBuffer, SacAgent, SacHyper, train  # noqa: F401
