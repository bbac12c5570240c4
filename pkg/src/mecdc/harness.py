"""Experiment orchestration: controllers, evaluation, sweeps, CSV artifacts.

Every controller drives the same environment through the same step pipeline;
only the action source (and for the greedy baseline, the embedded association
strategy) differs, so metric comparisons are apples to apples.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean, pstdev

import numpy as np

from . import __version__, matching, tasking
from .env import (
    JointMecDcEnv,
    WorldState,
    action_slices,
    make_world,
    normalize_action,
)
from .matching import MatchingProblem, strategy_variant, tma
from .sac import EpisodeRecord, SacAgent, SacHyper, episode_seed, train
from .scenario import ConfigError, Scenario, generate_scenario

CONTROLLER_KINDS = ("sac_tma", "sac_tma_greedy", "distance_greedy", "random")
LEARNABLE_CONTROLLERS = ("sac_tma", "sac_tma_greedy")

# Association strategy each controller runs inside the env step.
CONTROLLER_ASSOCIATION = {
    "sac_tma": "tma",
    "sac_tma_greedy": "tma",
    "distance_greedy": "distance_gs",
    "random": "tma",
}


def _heading_and_distance(origin: np.ndarray, target: np.ndarray, max_move: float):
    delta = target - origin
    dist = float(np.hypot(delta[0], delta[1]))
    heading = float(math.atan2(delta[1], delta[0])) % (2.0 * math.pi)
    return min(dist, max_move), heading


class RandomController:
    """Uniform actions over the normalized box."""

    def __init__(self, action_dim: int, seed: int = 0):
        self.action_dim = action_dim
        self.rng = np.random.default_rng(seed)

    def act(self, env: JointMecDcEnv) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, self.action_dim)


class DistanceGreedyController:
    """Chase the centroid of the currently served users; random powers.

    Each UAV flies min(m_max, distance) toward the centroid of the users it
    served last slot (hovers when it served none); every GU transmit power is
    drawn uniformly from [0, p_max].
    """

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def act(self, env: JointMecDcEnv) -> np.ndarray:
        world = env.world
        scenario = env.scenario
        num_uavs = scenario.num_uavs
        move = np.zeros(num_uavs)
        heading = np.zeros(num_uavs)
        assoc = world.last_association
        for uav in range(num_uavs):
            members = assoc.members(uav) if assoc is not None else []
            if not members:
                continue
            centroid = world.gu_xy[members].mean(axis=0)
            move[uav], heading[uav] = _heading_and_distance(
                world.uav_xy[uav], centroid, scenario.max_move
            )
        power = self.rng.uniform(0.0, scenario.radio.max_tx_power, scenario.num_gus)
        return normalize_action(move, heading, power, scenario)


def greedy_dc_action_transform(world: WorldState, action: np.ndarray) -> np.ndarray:
    """Override the DC-UAV movement components with buffer-greedy pursuit.

    The DC-UAV heads toward the eligible DC user holding the most data
    (hovers when none is eligible); every other component is untouched.
    """
    scenario = world.scenario
    slices = action_slices(scenario)
    dc = scenario.dc_uav_index
    threshold = scenario.tasks.dc_min_collectible
    best_gu, best_stored = None, -1.0
    for gu in scenario.dc_user_ids:
        stored = world.buffers[gu].stored_bits
        if stored >= threshold and stored > best_stored:
            best_gu, best_stored = gu, stored
    action = np.array(action, dtype=float, copy=True)
    if best_gu is None:
        move, heading = 0.0, 0.0
    else:
        move, heading = _heading_and_distance(
            world.uav_xy[dc], world.gu_xy[best_gu], scenario.max_move
        )
    action[slices["move"]][dc] = 2.0 * move / scenario.max_move - 1.0
    action[slices["heading"]][dc] = 2.0 * heading / (2.0 * math.pi) - 1.0
    return action


class SacPolicyController:
    """Act through a trained policy, optionally with the greedy DC override."""

    def __init__(self, agent: SacAgent, deterministic: bool = True, dc_greedy: bool = False):
        self.agent = agent
        self.deterministic = deterministic
        self.dc_greedy = dc_greedy

    def act(self, env: JointMecDcEnv) -> np.ndarray:
        from .env import state_vector

        state = state_vector(env.world)
        mode = "deterministic" if self.deterministic else "stochastic"
        action = self.agent.sample_action(state, mode)
        if self.dc_greedy:
            action = greedy_dc_action_transform(env.world, action)
        return action


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalEpisode:
    seed: int
    sum_reward: float
    latency_reward: float
    dc_volume_bits: float
    completion_rate: float
    dc_rate: float
    avg_energy_per_uav_step: float
    collisions: int


@dataclass
class EpisodeTrace:
    trajectory_rows: list[tuple] = field(default_factory=list)  # (slot, uav, x, y)
    association_rows: list[tuple] = field(default_factory=list)  # (slot, gu, uav)
    reward_rows: list[tuple] = field(default_factory=list)  # (slot, r_l, r_d, r_p, total)
    energy_rows: list[tuple] = field(default_factory=list)
    task_rows: list[tuple] = field(default_factory=list)
    dc_ledger_rows: list[tuple] = field(default_factory=list)  # per-GU conservation totals


def evaluate_controller(
    env: JointMecDcEnv,
    controller,
    episodes: int,
    base_seed: int = 0,
    record_trace: bool = False,
) -> tuple[list[EvalEpisode], EpisodeTrace | None]:
    """Deterministic evaluation episodes; the trace covers the last episode."""
    results: list[EvalEpisode] = []
    trace: EpisodeTrace | None = None
    for episode in range(episodes):
        seed = episode_seed(base_seed, episode)
        env.reset(seed=seed)
        trace = EpisodeTrace() if record_trace else None
        sums = {"reward": 0.0, "latency": 0.0, "collisions": 0}
        done = False
        while not done:
            action = controller.act(env)
            _, reward, done, info = env.step(action)
            sums["reward"] += reward.total
            sums["latency"] += reward.latency
            sums["collisions"] += info["collisions"]
            if trace is not None:
                world = env.world
                slot = world.slot
                for uav in range(env.scenario.num_uavs):
                    trace.trajectory_rows.append(
                        (slot, uav, float(world.uav_xy[uav, 0]), float(world.uav_xy[uav, 1]))
                    )
                for uav, gu in info["association"].pairs():
                    trace.association_rows.append((slot, gu, uav))
                trace.reward_rows.append(
                    (slot, reward.latency, reward.dc, reward.penalty, reward.total)
                )
        world = env.world
        collected = sum(b.collected_total for b in world.buffers.values())
        steps = env.scenario.horizon * env.scenario.num_uavs
        results.append(
            EvalEpisode(
                seed=seed,
                sum_reward=sums["reward"],
                latency_reward=sums["latency"],
                dc_volume_bits=collected,
                completion_rate=tasking.completion_rate(world.task_log),
                dc_rate=tasking.dc_rate(world.buffers),
                avg_energy_per_uav_step=world.ledger.total() / steps,
                collisions=sums["collisions"],
            )
        )
        if trace is not None:
            trace.energy_rows = list(world.ledger.csv_rows())
            trace.task_rows = list(world.task_log.csv_rows())
            trace.dc_ledger_rows = [
                (gu, buf.generated_total, buf.collected_total, buf.discarded_total, buf.stored_bits)
                for gu, buf in sorted(world.buffers.items())
            ]
    return results, trace


def build_controller(kind: str, env: JointMecDcEnv, seed: int, agent: SacAgent | None = None):
    if kind == "random":
        return RandomController(env.action_dim, seed)
    if kind == "distance_greedy":
        return DistanceGreedyController(seed)
    if kind == "sac_tma":
        if agent is None:
            raise ConfigError("sac_tma controller needs a trained agent")
        return SacPolicyController(agent, deterministic=True)
    if kind == "sac_tma_greedy":
        if agent is None:
            raise ConfigError("sac_tma_greedy controller needs a trained agent")
        return SacPolicyController(agent, deterministic=True, dc_greedy=True)
    raise ConfigError(f"unknown controller {kind!r}")


def train_controller(
    kind: str,
    scenario: Scenario,
    hyper: SacHyper,
    episodes: int,
    seed: int,
    callback=None,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
) -> tuple[SacAgent | None, list[EpisodeRecord]]:
    """Train learnable controllers; non-learning baselines return immediately."""
    if kind not in CONTROLLER_KINDS:
        raise ConfigError(f"unknown controller {kind!r}")
    if kind not in LEARNABLE_CONTROLLERS:
        return None, []
    transform = greedy_dc_action_transform if kind == "sac_tma_greedy" else None
    agent, records = train(
        lambda: JointMecDcEnv(scenario, CONTROLLER_ASSOCIATION[kind]),
        hyper,
        episodes,
        seed=seed,
        action_transform=transform,
        callback=callback,
        checkpoint_dir=checkpoint_dir,
        checkpoint_every=checkpoint_every,
    )
    return agent, records


# ---------------------------------------------------------------------------
# Experiment plans


@dataclass
class ExperimentPlan:
    """A sweep cell grid: scenario overrides x controller x seeds."""

    base_config: str | None = None
    sweep_key: str | None = None
    sweep_values: tuple = ()
    controller: str = "sac_tma"
    seeds: tuple[int, ...] = (0, 1, 2)
    train_episodes: int = 1500
    eval_episodes: int = 50
    hyper: SacHyper = field(default_factory=SacHyper)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("plan needs at least one seed")
        if self.controller not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller {self.controller!r}")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")

    def scenario_cells(self) -> list[tuple[str, str | None]]:
        base = self.base_config or ""
        if not self.sweep_key:
            return [("base", self.base_config)]
        cells = []
        for value in self.sweep_values:
            text = base + f"\n{self.sweep_key} = {value}\n"
            cells.append((f"{self.sweep_key}={value}", text))
        return cells


def run_plan(plan: ExperimentPlan) -> tuple[list[dict], list[dict]]:
    """Execute every (scenario, seed) cell; returns per-seed rows and aggregates."""
    rows: list[dict] = []
    for label, config in plan.scenario_cells():
        for seed in plan.seeds:
            scenario = generate_scenario(config, seed)
            agent, _ = train_controller(
                plan.controller, scenario, plan.hyper, plan.train_episodes, seed
            )
            env = JointMecDcEnv(scenario, CONTROLLER_ASSOCIATION[plan.controller])
            controller = build_controller(plan.controller, env, seed, agent)
            episodes, _ = evaluate_controller(env, controller, plan.eval_episodes, seed)
            row = {
                "controller": plan.controller,
                "scenario": label,
                "seed": seed,
                "sum_reward": mean(e.sum_reward for e in episodes),
                "latency_reward": mean(e.latency_reward for e in episodes),
                "dc_volume_bits": mean(e.dc_volume_bits for e in episodes),
                "completion_rate": mean(e.completion_rate for e in episodes),
                "dc_rate": mean(e.dc_rate for e in episodes),
                "avg_energy_per_uav_step": mean(e.avg_energy_per_uav_step for e in episodes),
            }
            rows.append(row)
    aggregates = aggregate_rows(rows)
    return rows, aggregates


_METRIC_FIELDS = (
    "sum_reward",
    "latency_reward",
    "dc_volume_bits",
    "completion_rate",
    "dc_rate",
    "avg_energy_per_uav_step",
)


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Mean and population std across seeds for each (controller, scenario) cell."""
    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        cells.setdefault((row["controller"], row["scenario"]), []).append(row)
    aggregates = []
    for (controller, label), cell_rows in cells.items():
        agg = {"controller": controller, "scenario": label, "seeds": len(cell_rows)}
        for key in _METRIC_FIELDS:
            values = [r[key] for r in cell_rows]
            agg[f"{key}_mean"] = mean(values)
            agg[f"{key}_std"] = pstdev(values) if len(values) > 1 else 0.0
        aggregates.append(agg)
    return aggregates


# ---------------------------------------------------------------------------
# Matching effectiveness study


@dataclass
class StrategyStudyRow:
    strategy: str
    mean_sum_rate: float
    mean_runtime_s: float
    total_runtime_s: float


def matching_effectiveness_study(
    scenario: Scenario,
    slots: int = 300,
    seeds: tuple[int, ...] = (0, 1, 2),
    strategies: tuple[str, ...] = matching.STRATEGY_KINDS,
) -> dict[str, StrategyStudyRow]:
    """Compare association strategies on identical random-motion worlds.

    Per slot the UAVs move with random headings/distances and every GU gets a
    random power; each strategy is timed (association call only) and scored on
    the same world snapshot.  The world then advances under the two-phase
    matching so queues and buffers evolve identically for every strategy.
    """
    sums = {kind: [0.0, 0.0] for kind in strategies}  # sum rate, runtime
    samples = 0
    for seed in seeds:
        world = make_world(scenario, seed)
        drive = np.random.default_rng(np.random.SeedSequence([seed, 9091]))
        for slot in range(1, slots + 1):
            world.slot = slot
            move = drive.uniform(0.0, scenario.max_move, scenario.num_uavs)
            heading = drive.uniform(0.0, 2.0 * math.pi, scenario.num_uavs)
            commanded = world.uav_xy + np.stack(
                [move * np.cos(heading), move * np.sin(heading)], axis=1
            )
            world.uav_xy = np.stack(
                [
                    np.clip(commanded[:, 0], scenario.area.x_min, scenario.area.x_max),
                    np.clip(commanded[:, 1], scenario.area.y_min, scenario.area.y_max),
                ],
                axis=1,
            )
            powers = drive.uniform(0.0, scenario.radio.max_tx_power, scenario.num_gus)
            for gu in scenario.mec_user_ids:
                tasking.maybe_generate_task(
                    world.queues[gu], slot, world.rng, scenario.tasks,
                    world.task_log, scenario.slot_len,
                )
            for gu in scenario.dc_user_ids:
                tasking.maybe_generate_dc_data(world.buffers[gu], slot, world.rng, scenario.tasks)
            problem = MatchingProblem.from_world(world, powers)
            reference = None
            for index, kind in enumerate(strategies):
                rng = np.random.default_rng(np.random.SeedSequence([seed, slot, index]))
                start = time.perf_counter()
                assoc = strategy_variant(kind, problem, rng, scenario.iteration_cap)
                elapsed = time.perf_counter() - start
                sums[kind][0] += matching.utility(problem, assoc)
                sums[kind][1] += elapsed
                if kind == "tma":
                    reference = assoc
            if reference is None:
                reference = tma(problem, scenario.iteration_cap).association
            rates = matching.rates_for(problem, reference)
            tasking.serve_slot(
                reference.gu_to_uav, rates, world.queues, world.buffers, slot,
                scenario.slot_len, scenario.compute, scenario.dc_uav_index,
                scenario.tasks.strict_tmax_completion,
            )
            tasking.expire_and_rotate(world.queues, slot)
            samples += 1
    return {
        kind: StrategyStudyRow(
            strategy=kind,
            mean_sum_rate=sums[kind][0] / samples,
            mean_runtime_s=sums[kind][1] / samples,
            total_runtime_s=sums[kind][1],
        )
        for kind in strategies
    }


# ---------------------------------------------------------------------------
# CSV artifacts


def _write_csv(path: Path, header: tuple, rows) -> Path:
    try:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write artifact {path}: {exc}") from exc
    return path


def write_metrics_csv(rows: list[dict], path: Path) -> Path:
    if not rows:
        return _write_csv(path, ("controller", "scenario", "seed") + _METRIC_FIELDS, [])
    header = tuple(rows[0].keys())
    return _write_csv(path, header, [tuple(row[k] for k in header) for row in rows])


def write_training_curve_csv(records: list[EpisodeRecord], path: Path) -> Path:
    header = ("episode", "sum_reward", "latency_reward", "dc_reward", "penalty_reward", "energy_joules")
    rows = [
        (r.episode, r.sum_reward, r.latency, r.dc, r.penalty, r.energy_joules)
        for r in records
    ]
    return _write_csv(path, header, rows)


def write_trajectory_csv(rows: list[tuple], path: Path) -> Path:
    return _write_csv(path, ("slot", "uav", "x", "y"), rows)


def write_association_csv(rows: list[tuple], path: Path) -> Path:
    return _write_csv(path, ("slot", "gu", "uav"), rows)


def write_energy_csv(rows: list[tuple], path: Path) -> Path:
    return _write_csv(path, ("uav_id", "slot", "move_J", "compute_J"), rows)


def write_task_events_csv(rows: list[tuple], path: Path) -> Path:
    return _write_csv(path, ("task_id", "owner", "birth", "bits", "status", "finish_slot"), rows)


def write_manifest(
    scenario: Scenario, path: Path, seeds: tuple[int, ...] = (), **run_fields
) -> Path:
    """Full resolved config plus run metadata; the file parses as a config."""
    lines = [
        "# mecdc run manifest",
        f"# version: {__version__}",
        f"# seeds: {','.join(str(s) for s in seeds)}",
    ]
    lines += [f"# {key}: {value}" for key, value in run_fields.items()]
    text = "\n".join(lines) + "\n" + scenario.describe()
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write artifact {path}: {exc}") from exc
    return Path(path)


@dataclass
class RunArtifacts:
    """Everything a CLI run may want exported."""

    scenario: Scenario
    seeds: tuple[int, ...]
    run_fields: dict = field(default_factory=dict)
    metrics_rows: list[dict] | None = None
    aggregate_rows: list[dict] | None = None
    training_records: list[EpisodeRecord] | None = None
    trace: EpisodeTrace | None = None
    study_rows: dict[str, StrategyStudyRow] | None = None


def export_artifacts(artifacts: RunArtifacts, out_dir: str | Path) -> list[Path]:
    """Write every present artifact as CSV plus a plain-text manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        write_manifest(
            artifacts.scenario, out / "manifest.txt", artifacts.seeds, **artifacts.run_fields
        )
    ]
    if artifacts.metrics_rows is not None:
        written.append(write_metrics_csv(artifacts.metrics_rows, out / "metrics.csv"))
    if artifacts.aggregate_rows:
        written.append(write_metrics_csv(artifacts.aggregate_rows, out / "metrics_aggregate.csv"))
    if artifacts.training_records is not None:
        written.append(
            write_training_curve_csv(artifacts.training_records, out / "training_curve.csv")
        )
    if artifacts.trace is not None:
        written.append(write_trajectory_csv(artifacts.trace.trajectory_rows, out / "trajectory.csv"))
        written.append(
            write_association_csv(artifacts.trace.association_rows, out / "associations.csv")
        )
        written.append(
            _write_csv(
                out / "rewards.csv",
                ("slot", "latency_reward", "dc_reward", "penalty_reward", "total"),
                artifacts.trace.reward_rows,
            )
        )
        written.append(write_energy_csv(artifacts.trace.energy_rows, out / "energy.csv"))
        written.append(write_task_events_csv(artifacts.trace.task_rows, out / "task_events.csv"))
        written.append(
            _write_csv(
                out / "dc_ledger.csv",
                ("gu", "generated_bits", "collected_bits", "discarded_bits", "stored_bits"),
                artifacts.trace.dc_ledger_rows,
            )
        )
    if artifacts.study_rows is not None:
        rows = [
            (row.strategy, row.mean_sum_rate, row.mean_runtime_s, row.total_runtime_s)
            for row in artifacts.study_rows.values()
        ]
        written.append(
            _write_csv(
                out / "match_study.csv",
                ("strategy", "mean_sum_rate", "mean_runtime_s", "total_runtime_s"),
                rows,
            )
        )
    return written
