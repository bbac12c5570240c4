"""Scenario configuration: every physical constant used anywhere in the package.

A :class:`Scenario` is immutable after construction and is the single source of
truth for area geometry, radio constants, compute constants, task/data
generation profiles, propulsion constants, reward shaping constants and
roster sizes.  Scenarios are built either from defaults or from a flat
``key = value`` config document (see :func:`parse_config`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s

KBIT = 1024  # task sizes are quoted in binary Kbits


class ConfigError(ValueError):
    """Malformed config document (unknown key, unparseable value)."""


class ScenarioError(ValueError):
    """Scenario violates a structural invariant."""


@dataclass(frozen=True)
class AreaSpec:
    """Service area bounds and UAV flight geometry."""

    x_min: float = -750.0
    x_max: float = 750.0
    y_min: float = -750.0
    y_max: float = 750.0
    uav_altitude: float = 100.0   # fixed flight altitude H, m
    min_separation: float = 3.0   # collision distance d_min, m

    @property
    def half_width(self) -> float:
        return (self.x_max - self.x_min) / 2.0

    @property
    def half_height(self) -> float:
        return (self.y_max - self.y_min) / 2.0

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)


@dataclass(frozen=True)
class RadioParams:
    """Air-to-ground channel constants.

    ``lambda1``/``lambda2`` are environment constants of the probabilistic
    LoS model (dense-urban values; not fixed by the measurement tables, so
    configurable).  ``noise_psd_dbm`` is converted to linear watts/Hz once,
    here, and consumed as :attr:`noise_psd_w` everywhere else.
    """

    lambda1: float = 9.61
    lambda2: float = 0.16
    eta_los: float = 0.1          # excess LoS loss, dB
    eta_nlos: float = 21.0        # excess NLoS loss, dB
    carrier_freq: float = 2.0e9   # f_c, Hz
    noise_psd_dbm: float = -140.0  # n0, dBm/Hz
    bandwidth: float = 3.0e6      # W per UAV, Hz
    rate_threshold_mec: float = 1.6e6  # R_Mth, bits/s
    rate_threshold_dc: float = 1.0e6   # R_Dth, bits/s
    max_tx_power: float = 0.5     # p_max, W
    # Elevation angle from the horizontal ground distance instead of the
    # literal 3D link distance (which caps the angle at 45 deg overhead).
    elevation_from_horizontal: bool = False
    noise_psd_w: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "noise_psd_w", 10.0 ** ((self.noise_psd_dbm - 30.0) / 10.0)
        )


@dataclass(frozen=True)
class ComputeParams:
    """Edge-server constants shared by all MEC-UAVs."""

    cycles_per_bit: float = 1000.0   # C
    cpu_freq: float = 6.0e9          # omega, cycles/s
    switch_cap: float = 1.0e-27      # kappa
    energy_budget: float = 30.0e3    # E_max per UAV per episode, J


@dataclass(frozen=True)
class TaskProfile:
    """Intermittent task / data generation profile.

    MEC task sizes, probabilities and per-size tolerance limits are aligned
    lists.  The data-collection side reuses the same size set; stored data is
    capped at ``dc_storage_limit`` with overflow counted as discarded.
    """

    sizes: tuple[float, ...] = (512 * KBIT, 256 * KBIT, 128 * KBIT)  # bits
    size_probs: tuple[float, ...] = (0.2, 0.3, 0.5)
    tolerance_limits: tuple[float, ...] = (1.0, 0.5, 0.25)  # t_max per size, s
    deadline: float = 20.0        # D, s
    density: float = 0.2          # delta_g, per-slot generation increment
    dc_storage_limit: float = 60.0e6   # L_max per DC user, bits
    dc_min_collectible: float = 1.0e6  # D_min eligibility gate, bits
    # Also require cumulative service time <= t_max for a task to count as
    # completed (default: t_max shapes the reward only).
    strict_tmax_completion: bool = False


@dataclass(frozen=True)
class PropulsionParams:
    """Rotary-wing propulsion constants (canonical values, not table-fixed)."""

    hover_blade_power: float = 79.86        # P0, W
    hover_induced_power: float = 88.63      # Pi, W
    tip_speed: float = 120.0                # U_tip, m/s
    mean_rotor_induced_velocity: float = 4.03  # v0, m/s
    fuselage_drag_ratio: float = 0.6        # d0
    air_density: float = 1.225              # kg/m^3
    rotor_solidity: float = 0.05
    rotor_disc_area: float = 0.503          # m^2


@dataclass(frozen=True)
class RewardParams:
    """Reward-shaping constants (unvalued in the source material; logged)."""

    collision_penalty: float = 10.0        # rho-collision constant per event
    boundary_penalty_factor: float = 1.0   # rho in the boundary term
    energy_penalty_coeff: float = 0.01     # delta_p in the energy term
    dc_reward_scale: float = 1.0e-7        # reward units per stored bit
    # Charge/credit signed per-slot energy deviation instead of max(0, .).
    signed_energy_penalty: bool = False


@dataclass(frozen=True)
class Scenario:
    """Complete immutable world description."""

    area: AreaSpec = AreaSpec()
    radio: RadioParams = RadioParams()
    compute: ComputeParams = ComputeParams()
    tasks: TaskProfile = TaskProfile()
    propulsion: PropulsionParams = PropulsionParams()
    reward: RewardParams = RewardParams()
    num_mec_uavs: int = 3
    num_mec_users: int = 25
    num_dc_users: int = 10
    uav_capacity: int = 4        # N_u_max
    slot_len: float = 1.0        # tau, s
    horizon: int = 300           # T slots per episode
    max_speed: float = 50.0      # m/s
    uav_init_positions: tuple[tuple[float, float], ...] = (
        (-500.0, 500.0),
        (-500.0, -500.0),
        (500.0, 500.0),
        (500.0, -500.0),
    )
    iteration_cap: int = 500     # swap applications per association call
    allow_outside: bool = False  # skip clamping UAVs back into the area
    seed: int = 0
    gu_positions: tuple[tuple[float, float], ...] = ()

    # There is always exactly one data-collection UAV.
    @property
    def num_dc_uavs(self) -> int:
        return 1

    @property
    def num_uavs(self) -> int:
        return self.num_mec_uavs + 1

    @property
    def dc_uav_index(self) -> int:
        return self.num_mec_uavs

    @property
    def num_gus(self) -> int:
        return self.num_mec_users + self.num_dc_users

    @property
    def mec_user_ids(self) -> range:
        return range(self.num_mec_users)

    @property
    def dc_user_ids(self) -> range:
        return range(self.num_mec_users, self.num_gus)

    @property
    def max_move(self) -> float:
        """Maximum per-slot displacement m_max = max_speed * slot_len."""
        return self.max_speed * self.slot_len

    def is_dc_user(self, gu: int) -> bool:
        return gu >= self.num_mec_users

    def describe(self) -> str:
        """Serialize to the flat config format; round-trips through
        :func:`generate_scenario` (GU positions are regenerated from the seed)."""
        lines = []
        for key, (section, attr, kind) in sorted(_CONFIG_KEYS.items()):
            value = getattr(self if section is None else getattr(self, section), attr)
            lines.append(f"{key} = {_format_value(value, kind)}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Config parsing


def _parse_float(text: str) -> float:
    return float(text)


def _parse_int(text: str) -> int:
    return int(text, 0)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    items = [piece.strip() for piece in text.split(",") if piece.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(float(piece) for piece in items)


def _parse_position_list(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"position needs two coordinates: {chunk!r}")
        pairs.append((float(parts[0]), float(parts[1])))
    if not pairs:
        raise ValueError("empty position list")
    return tuple(pairs)


def _format_value(value, kind: str) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float_list":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "positions":
        return "; ".join(f"{x!r} {y!r}" for x, y in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


_PARSERS = {
    "float": _parse_float,
    "int": _parse_int,
    "bool": _parse_bool,
    "float_list": _parse_float_list,
    "positions": _parse_position_list,
}

# Flat config key -> (scenario section or None, attribute, kind).
_CONFIG_KEYS: dict[str, tuple[str | None, str, str]] = {
    # area
    "x_min": ("area", "x_min", "float"),
    "x_max": ("area", "x_max", "float"),
    "y_min": ("area", "y_min", "float"),
    "y_max": ("area", "y_max", "float"),
    "uav_altitude": ("area", "uav_altitude", "float"),
    "min_separation": ("area", "min_separation", "float"),
    # radio
    "lambda1": ("radio", "lambda1", "float"),
    "lambda2": ("radio", "lambda2", "float"),
    "eta_los": ("radio", "eta_los", "float"),
    "eta_nlos": ("radio", "eta_nlos", "float"),
    "carrier_freq": ("radio", "carrier_freq", "float"),
    "noise_psd_dbm": ("radio", "noise_psd_dbm", "float"),
    "bandwidth": ("radio", "bandwidth", "float"),
    "rate_threshold_mec": ("radio", "rate_threshold_mec", "float"),
    "rate_threshold_dc": ("radio", "rate_threshold_dc", "float"),
    "max_tx_power": ("radio", "max_tx_power", "float"),
    "elevation_from_horizontal": ("radio", "elevation_from_horizontal", "bool"),
    # compute
    "cycles_per_bit": ("compute", "cycles_per_bit", "float"),
    "cpu_freq": ("compute", "cpu_freq", "float"),
    "switch_cap": ("compute", "switch_cap", "float"),
    "energy_budget": ("compute", "energy_budget", "float"),
    # tasks
    "task_sizes": ("tasks", "sizes", "float_list"),
    "task_size_probs": ("tasks", "size_probs", "float_list"),
    "task_tolerance_limits": ("tasks", "tolerance_limits", "float_list"),
    "task_deadline": ("tasks", "deadline", "float"),
    "task_density": ("tasks", "density", "float"),
    "dc_storage_limit": ("tasks", "dc_storage_limit", "float"),
    "dc_min_collectible": ("tasks", "dc_min_collectible", "float"),
    "strict_tmax_completion": ("tasks", "strict_tmax_completion", "bool"),
    # propulsion
    "hover_blade_power": ("propulsion", "hover_blade_power", "float"),
    "hover_induced_power": ("propulsion", "hover_induced_power", "float"),
    "tip_speed": ("propulsion", "tip_speed", "float"),
    "mean_rotor_induced_velocity": ("propulsion", "mean_rotor_induced_velocity", "float"),
    "fuselage_drag_ratio": ("propulsion", "fuselage_drag_ratio", "float"),
    "air_density": ("propulsion", "air_density", "float"),
    "rotor_solidity": ("propulsion", "rotor_solidity", "float"),
    "rotor_disc_area": ("propulsion", "rotor_disc_area", "float"),
    # reward shaping
    "collision_penalty": ("reward", "collision_penalty", "float"),
    "boundary_penalty_factor": ("reward", "boundary_penalty_factor", "float"),
    "energy_penalty_coeff": ("reward", "energy_penalty_coeff", "float"),
    "dc_reward_scale": ("reward", "dc_reward_scale", "float"),
    "signed_energy_penalty": ("reward", "signed_energy_penalty", "bool"),
    # rosters and episode shape
    "num_mec_uavs": (None, "num_mec_uavs", "int"),
    "num_mec_users": (None, "num_mec_users", "int"),
    "num_dc_users": (None, "num_dc_users", "int"),
    "uav_capacity": (None, "uav_capacity", "int"),
    "slot_len": (None, "slot_len", "float"),
    "horizon": (None, "horizon", "int"),
    "max_speed": (None, "max_speed", "float"),
    "uav_init_positions": (None, "uav_init_positions", "positions"),
    "iteration_cap": (None, "iteration_cap", "int"),
    "allow_outside": (None, "allow_outside", "bool"),
    "seed": (None, "seed", "int"),
}


def parse_config(text: str) -> dict[str, object]:
    """Parse a flat ``key = value`` document into typed overrides.

    Lines starting with ``#`` (or trailing ``#`` comments) are ignored.
    Unknown keys and unparseable values raise :class:`ConfigError` naming the
    offending key.
    """
    overrides: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        _, _, kind = _CONFIG_KEYS[key]
        try:
            overrides[key] = _PARSERS[kind](value.strip())
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return overrides


def _apply_overrides(overrides: dict[str, object]) -> Scenario:
    sections: dict[str, dict[str, object]] = {}
    top: dict[str, object] = {}
    for key, value in overrides.items():
        section, attr, _ = _CONFIG_KEYS[key]
        if section is None:
            top[attr] = value
        else:
            sections.setdefault(section, {})[attr] = value
    base = Scenario()
    parts = {}
    for section, kwargs in sections.items():
        parts[section] = replace(getattr(base, section), **kwargs)
    return replace(base, **parts, **top)


def generate_scenario(config_source: str | None = None, seed: int | None = None) -> Scenario:
    """Build a validated scenario from a config document and a seed.

    GU positions are drawn independently and uniformly over the area with
    ``numpy.random.default_rng(seed)``; the first ``num_mec_users`` ids are
    MEC users, the rest DC users, so the rosters are disjoint.  Pure function
    of (config, seed).
    """
    overrides = parse_config(config_source) if config_source else {}
    scenario = _apply_overrides(overrides)
    if seed is not None:
        scenario = replace(scenario, seed=int(seed))
    rng = np.random.default_rng(scenario.seed)
    xs = rng.uniform(scenario.area.x_min, scenario.area.x_max, size=scenario.num_gus)
    ys = rng.uniform(scenario.area.y_min, scenario.area.y_max, size=scenario.num_gus)
    scenario = replace(
        scenario, gu_positions=tuple((float(x), float(y)) for x, y in zip(xs, ys))
    )
    violations = validate(scenario)
    if violations:
        raise ScenarioError("; ".join(violations))
    return scenario


def validate(scenario: Scenario) -> list[str]:
    """Return every type-invariant violation (empty list means valid)."""
    bad: list[str] = []
    area, radio, comp, tasks = scenario.area, scenario.radio, scenario.compute, scenario.tasks

    if not area.x_min < area.x_max:
        bad.append("area.x_min must be < area.x_max")
    if not area.y_min < area.y_max:
        bad.append("area.y_min must be < area.y_max")
    if not area.uav_altitude > 0:
        bad.append("area.uav_altitude must be > 0")
    if not area.min_separation > 0:
        bad.append("area.min_separation must be > 0")

    if not radio.bandwidth > 0:
        bad.append("radio.bandwidth must be > 0")
    if not radio.max_tx_power > 0:
        bad.append("radio.max_tx_power must be > 0")
    if not radio.rate_threshold_dc > 0:
        bad.append("radio.rate_threshold_dc must be > 0")
    if not radio.rate_threshold_mec >= radio.rate_threshold_dc:
        bad.append("radio.rate_threshold_mec must be >= rate_threshold_dc")
    if not radio.carrier_freq > 0:
        bad.append("radio.carrier_freq must be > 0")

    for name in ("cycles_per_bit", "cpu_freq", "switch_cap", "energy_budget"):
        if not getattr(comp, name) > 0:
            bad.append(f"compute.{name} must be > 0")

    if not (len(tasks.sizes) == len(tasks.size_probs) == len(tasks.tolerance_limits)):
        bad.append("tasks.sizes, size_probs and tolerance_limits must align")
    if abs(sum(tasks.size_probs) - 1.0) > 1e-9:
        bad.append("tasks.size_probs must sum to 1 within 1e-9")
    if any(s <= 0 for s in tasks.sizes):
        bad.append("tasks.sizes must be positive")
    if any(t <= 0 for t in tasks.tolerance_limits):
        bad.append("tasks.tolerance_limits must be positive")
    if not tasks.deadline > 0:
        bad.append("tasks.deadline must be > 0")
    if not 0.0 < tasks.density <= 1.0:
        bad.append("tasks.density must lie in (0, 1]")
    if not tasks.dc_storage_limit > 0:
        bad.append("tasks.dc_storage_limit must be > 0")
    if tasks.dc_min_collectible < 0:
        bad.append("tasks.dc_min_collectible must be >= 0")

    prop = scenario.propulsion
    for f in fields(prop):
        if not getattr(prop, f.name) > 0:
            bad.append(f"propulsion.{f.name} must be > 0")

    rew = scenario.reward
    if rew.collision_penalty < 0:
        bad.append("reward.collision_penalty must be >= 0")
    if not rew.boundary_penalty_factor > 0:
        bad.append("reward.boundary_penalty_factor must be > 0")
    if rew.energy_penalty_coeff < 0:
        bad.append("reward.energy_penalty_coeff must be >= 0")
    if not rew.dc_reward_scale > 0:
        bad.append("reward.dc_reward_scale must be > 0")

    if scenario.num_mec_uavs < 1:
        bad.append("num_mec_uavs must be >= 1")
    if scenario.num_mec_users < 1:
        bad.append("num_mec_users must be >= 1")
    if scenario.num_dc_users < 0:
        bad.append("num_dc_users must be >= 0")
    if scenario.uav_capacity < 1:
        bad.append("uav_capacity must be >= 1")
    if not scenario.slot_len > 0:
        bad.append("slot_len must be > 0")
    if scenario.horizon < 1:
        bad.append("horizon must be >= 1")
    if not scenario.max_speed > 0:
        bad.append("max_speed must be > 0")

    if len(scenario.uav_init_positions) != scenario.num_uavs:
        bad.append(
            f"uav_init_positions must list {scenario.num_uavs} positions, "
            f"got {len(scenario.uav_init_positions)}"
        )
    for idx, (x, y) in enumerate(scenario.uav_init_positions):
        if not (area.x_min <= x <= area.x_max and area.y_min <= y <= area.y_max):
            bad.append(f"uav_init_positions[{idx}] lies outside the area bounds")
    for idx, (x, y) in enumerate(scenario.gu_positions):
        if not (area.x_min <= x <= area.x_max and area.y_min <= y <= area.y_max):
            bad.append(f"gu_positions[{idx}] lies outside the area bounds")
    if scenario.gu_positions and len(scenario.gu_positions) != scenario.num_gus:
        bad.append("gu_positions must list one position per GU")

    if scenario.iteration_cap < 1:
        bad.append("iteration_cap must be >= 1")
    return bad
