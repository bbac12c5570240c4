"""Action-space-reduced MDP over the joint edge-computing / data-collection world.

One centralized agent moves all UAVs and sets every user's transmit power;
the user association is not an action: it is recomputed inside every step by
the matching strategy (two-phase matching by default).  States and actions
are exchanged in normalized [-1, 1] coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import matching, tasking
from .energy import EnergyLedger, compute_energy, propulsion_energy
from .matching import Association, MatchingProblem
from .scenario import ConfigError, Scenario
from .tasking import DcBuffer, GuQueue, ServiceReport, TaskLog


def state_dim(scenario: Scenario) -> int:
    """2 per UAV + 2 per GU + 2 per MEC user + 1 per DC user + 1 (slots left)."""
    return (
        2 * scenario.num_uavs
        + 2 * scenario.num_gus
        + 2 * scenario.num_mec_users
        + scenario.num_dc_users
        + 1
    )


def action_dim(scenario: Scenario) -> int:
    """Move distance and heading per UAV plus one transmit power per GU."""
    return 2 * scenario.num_uavs + scenario.num_gus


def action_slices(scenario: Scenario) -> dict[str, slice]:
    """Component layout of the flat action vector."""
    num_uavs = scenario.num_uavs
    return {
        "move": slice(0, num_uavs),
        "heading": slice(num_uavs, 2 * num_uavs),
        "power": slice(2 * num_uavs, 2 * num_uavs + scenario.num_gus),
    }


@dataclass
class RewardBreakdown:
    """Per-slot reward and its three components (total = latency + dc + penalty)."""

    latency: float
    dc: float
    penalty: float
    collision_penalty: float = 0.0
    boundary_penalty: float = 0.0
    energy_penalty: float = 0.0

    @property
    def total(self) -> float:
        return self.latency + self.dc + self.penalty


@dataclass
class WorldState:
    """Mutable per-episode world: positions, queues, buffers, ledgers."""

    scenario: Scenario
    uav_xy: np.ndarray
    gu_xy: np.ndarray
    queues: dict[int, GuQueue]
    buffers: dict[int, DcBuffer]
    ledger: EnergyLedger
    task_log: TaskLog
    rng: np.random.Generator
    slot: int = 0
    remaining: int = 0
    last_association: Association | None = None
    trajectory: list[np.ndarray] = field(default_factory=list)


def make_world(scenario: Scenario, seed: int | None = None) -> WorldState:
    if len(scenario.gu_positions) != scenario.num_gus:
        raise ConfigError(
            "scenario has no generated GU positions; build it via generate_scenario()"
        )
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    return WorldState(
        scenario=scenario,
        uav_xy=np.array(scenario.uav_init_positions, dtype=float),
        gu_xy=np.array(scenario.gu_positions, dtype=float),
        queues={gu: GuQueue(owner=gu) for gu in scenario.mec_user_ids},
        buffers={gu: DcBuffer(owner=gu) for gu in scenario.dc_user_ids},
        ledger=EnergyLedger(num_uavs=scenario.num_uavs),
        task_log=TaskLog(),
        rng=rng,
        slot=0,
        remaining=scenario.horizon,
    )


def state_vector(world: WorldState, normalize: bool = True) -> np.ndarray:
    """Observation in the fixed field order:

    UAV (x, y) pairs, GU (x, y) pairs, per-MEC-user unfinished bits, per-MEC-user
    earliest-task remaining deadline (seconds), per-DC-user stored bits, slots
    remaining.  When ``normalize`` is set (the learning default) positions are
    divided by the area half-extents, bit quantities by the DC storage limit,
    deadlines by the task deadline, the slot counter by the horizon, and the
    result is clipped into [-1, 1].
    """
    scenario = world.scenario
    area = scenario.area
    cx, cy = area.center
    if normalize:
        parts = [
            ((world.uav_xy - (cx, cy)) / (area.half_width, area.half_height)).ravel(),
            ((world.gu_xy - (cx, cy)) / (area.half_width, area.half_height)).ravel(),
        ]
    else:
        parts = [world.uav_xy.ravel().copy(), world.gu_xy.ravel().copy()]
    unfinished = np.array(
        [world.queues[gu].pending_bits() for gu in scenario.mec_user_ids]
    )
    deadlines = np.zeros(scenario.num_mec_users)
    for idx, gu in enumerate(scenario.mec_user_ids):
        head = world.queues[gu].head()
        if head is not None:
            slots_left = max(0, head.deadline_slot - world.slot)
            deadlines[idx] = slots_left * scenario.slot_len
    stored = np.array([world.buffers[gu].stored_bits for gu in scenario.dc_user_ids])
    remaining = np.array([float(world.remaining)])
    if normalize:
        limit = scenario.tasks.dc_storage_limit
        unfinished = unfinished / limit
        deadlines = deadlines / scenario.tasks.deadline
        stored = stored / limit
        remaining = remaining / scenario.horizon
    parts.extend([unfinished, deadlines, stored, remaining])
    state = np.concatenate(parts)
    return np.clip(state, -1.0, 1.0) if normalize else state


def denormalize_action(action: np.ndarray, scenario: Scenario) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map [-1, 1] components to (move m, heading alpha, power p) physical ranges."""
    action = np.asarray(action, dtype=float)
    if action.shape != (action_dim(scenario),):
        raise ValueError(
            f"action must have shape ({action_dim(scenario)},), got {action.shape}"
        )
    if not np.all(np.isfinite(action)):
        raise ValueError("action contains non-finite entries")
    slices = action_slices(scenario)
    unit = (np.clip(action, -1.0, 1.0) + 1.0) / 2.0
    move = unit[slices["move"]] * scenario.max_move
    heading = unit[slices["heading"]] * 2.0 * math.pi
    power = unit[slices["power"]] * scenario.radio.max_tx_power
    return move, heading, power


def normalize_action(
    move: np.ndarray, heading: np.ndarray, power: np.ndarray, scenario: Scenario
) -> np.ndarray:
    """Inverse of :func:`denormalize_action` for controller-built actions."""
    unit = np.concatenate(
        [
            np.asarray(move, dtype=float) / scenario.max_move,
            np.asarray(heading, dtype=float) / (2.0 * math.pi),
            np.asarray(power, dtype=float) / scenario.radio.max_tx_power,
        ]
    )
    return np.clip(unit * 2.0 - 1.0, -1.0, 1.0)


def latency_reward(report: ServiceReport) -> float:
    """Sum over served tasks of (tolerance - seconds of service this slot)."""
    return sum(
        svc.tolerance - (svc.tx_seconds + svc.compute_seconds)
        for svc in report.task_services
    )


def dc_reward(
    assoc: Association, stored_before: dict[int, float], scenario: Scenario
) -> float:
    """Stored bits of every associated DC user, halved at the storage cap."""
    limit = scenario.tasks.dc_storage_limit
    total = 0.0
    for gu in scenario.dc_user_ids:
        if assoc.gu_to_uav[gu] == scenario.dc_uav_index:
            stored = stored_before[gu]
            sigma = 0.5 if stored >= limit else 1.0
            total += sigma * stored
    return total * scenario.reward.dc_reward_scale


def boundary_excess(positions: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Per-UAV (x, y) distances beyond the area bounds; zero inside."""
    area = scenario.area
    x, y = positions[:, 0], positions[:, 1]
    bx = np.maximum(0.0, np.maximum(x - area.x_max, area.x_min - x))
    by = np.maximum(0.0, np.maximum(y - area.y_max, area.y_min - y))
    return np.stack([bx, by], axis=1)


def boundary_penalty(excess: np.ndarray, scenario: Scenario) -> float:
    norms = np.hypot(excess[:, 0], excess[:, 1])
    return float(
        -np.sum(norms) / (scenario.reward.boundary_penalty_factor * scenario.max_move)
    )


def collision_count(positions: np.ndarray, min_separation: float) -> int:
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    closer = dist < min_separation
    return int(np.triu(closer, k=1).sum())


def energy_penalty(per_uav_joules: np.ndarray, scenario: Scenario) -> float:
    budget = scenario.compute.energy_budget / scenario.horizon
    excess = per_uav_joules - budget
    if not scenario.reward.signed_energy_penalty:
        excess = np.maximum(excess, 0.0)
    return float(-scenario.reward.energy_penalty_coeff * excess.sum())


class JointMecDcEnv:
    """Single-writer episodic environment; one instance per rollout stream."""

    def __init__(self, scenario: Scenario, association_kind: str = "tma"):
        if association_kind not in matching.STRATEGY_KINDS:
            raise ConfigError(f"unknown association strategy {association_kind!r}")
        self.scenario = scenario
        self.association_kind = association_kind
        self.world: WorldState | None = None
        self._done = True

    @property
    def state_dim(self) -> int:
        return state_dim(self.scenario)

    @property
    def action_dim(self) -> int:
        return action_dim(self.scenario)

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.world = make_world(self.scenario, seed)
        self.world.trajectory.append(self.world.uav_xy.copy())
        self._done = False
        return state_vector(self.world)

    def _associate(self, problem: MatchingProblem) -> tuple[Association, dict]:
        if self.association_kind == "tma":
            result = matching.tma(problem, self.scenario.iteration_cap)
            info = {
                "capped": result.capped,
                "swaps_applied": result.swaps_applied,
                "sum_rate": result.utility,
            }
            return result.association, info
        assoc = matching.strategy_variant(
            self.association_kind,
            problem,
            rng=self.world.rng,
            iteration_cap=self.scenario.iteration_cap,
        )
        return assoc, {"capped": False, "sum_rate": matching.utility(problem, assoc)}

    def step(self, action: np.ndarray) -> tuple[np.ndarray, RewardBreakdown, bool, dict]:
        if self._done or self.world is None:
            raise RuntimeError("step() called on a finished episode; call reset()")
        world = self.world
        scenario = self.scenario
        world.slot += 1
        slot = world.slot

        # 1-2) de-normalize and move
        move, heading, power = denormalize_action(action, scenario)
        old_xy = world.uav_xy.copy()
        commanded = old_xy + np.stack(
            [move * np.cos(heading), move * np.sin(heading)], axis=1
        )

        # 3) boundary penalty on the commanded position, then clamp
        excess = boundary_excess(commanded, scenario)
        b_pen = boundary_penalty(excess, scenario)
        new_xy = commanded
        if not scenario.allow_outside:
            new_xy = np.stack(
                [
                    np.clip(commanded[:, 0], scenario.area.x_min, scenario.area.x_max),
                    np.clip(commanded[:, 1], scenario.area.y_min, scenario.area.y_max),
                ],
                axis=1,
            )
        world.uav_xy = new_xy

        # 4) collision check
        collisions = collision_count(new_xy, scenario.area.min_separation)
        c_pen = -scenario.reward.collision_penalty * collisions

        # 5) intermittent task / data generation
        for gu in scenario.mec_user_ids:
            tasking.maybe_generate_task(
                world.queues[gu], slot, world.rng, scenario.tasks,
                world.task_log, scenario.slot_len,
            )
        for gu in scenario.dc_user_ids:
            tasking.maybe_generate_dc_data(world.buffers[gu], slot, world.rng, scenario.tasks)

        # 6) association through the embedded matching strategy
        problem = MatchingProblem.from_world(world, power)
        assoc, assoc_info = self._associate(problem)
        assoc.slot = slot
        world.last_association = assoc

        # 7) rates under the final association
        rates = matching.rates_for(problem, assoc)

        # 8) serve, with DC reward measured on pre-collection buffer levels
        stored_before = {gu: world.buffers[gu].stored_bits for gu in scenario.dc_user_ids}
        d_rew = dc_reward(assoc, stored_before, scenario)
        report = tasking.serve_slot(
            assoc.gu_to_uav,
            rates,
            world.queues,
            world.buffers,
            slot,
            scenario.slot_len,
            scenario.compute,
            scenario.dc_uav_index,
            scenario.tasks.strict_tmax_completion,
        )

        # 9) deadline expiry
        expired = tasking.expire_and_rotate(world.queues, slot)

        # 10) energy ledger and energy penalty
        displacement = np.hypot(new_xy[:, 0] - old_xy[:, 0], new_xy[:, 1] - old_xy[:, 1])
        per_uav = np.zeros(scenario.num_uavs)
        for uav in range(scenario.num_uavs):
            speed = displacement[uav] / scenario.slot_len
            move_j = propulsion_energy(speed, scenario.slot_len, scenario.propulsion)
            comp_j = 0.0
            if uav != scenario.dc_uav_index:
                comp_j = compute_energy(
                    report.uav_bits_computed.get(uav, 0.0), scenario.compute
                )
            world.ledger.record(uav, slot, move_j, comp_j)
            per_uav[uav] = move_j + comp_j
        e_pen = energy_penalty(per_uav, scenario)

        # 11) reward assembly
        breakdown = RewardBreakdown(
            latency=latency_reward(report),
            dc=d_rew,
            penalty=c_pen + b_pen + e_pen,
            collision_penalty=c_pen,
            boundary_penalty=b_pen,
            energy_penalty=e_pen,
        )

        # 12) advance the clock
        world.remaining -= 1
        self._done = world.remaining <= 0
        world.trajectory.append(new_xy.copy())

        info = {
            "association": assoc,
            "problem": problem,
            "rates": rates,
            "report": report,
            "expired": expired,
            "collisions": collisions,
            "energy_per_uav": per_uav,
            "commanded_xy": commanded,
            **assoc_info,
        }
        return state_vector(world), breakdown, self._done, info
