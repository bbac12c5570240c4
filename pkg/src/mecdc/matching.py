"""One-to-many user association as a matching game with externalities.

The association decision is solved per slot: a deferred-acceptance style
pre-evaluation (distance-based, then rate-based) seeds the matching, and a
swap phase exchanges user pairs while the system sum rate strictly improves.
Rates are fully interference-coupled, so every evaluation accounts for the
whole association currently in force.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .channel import RateContext, gain_matrix, rate_vector
from .scenario import ConfigError, Scenario

UNASSIGNED = -1

# Minimum utility improvement (bits/s) for a swap to count as blocking; keeps
# the strict-improvement guarantee clear of float rounding on Mbps-scale sums.
MIN_GAIN = 1e-3

STRATEGY_KINDS = (
    "random",
    "distance_gs",
    "rate_gs",
    "swap_random_init",
    "swap_distance_init",
    "tma",
)


class Association:
    """Bidirectionally-consistent GU-to-UAV matching for one slot."""

    def __init__(self, num_uavs: int, num_gus: int, slot: int = 0):
        self.num_uavs = num_uavs
        self.num_gus = num_gus
        self.slot = slot
        self.gu_to_uav = np.full(num_gus, UNASSIGNED, dtype=int)
        self._members: list[set[int]] = [set() for _ in range(num_uavs)]

    def assign(self, gu: int, uav: int) -> None:
        if self.gu_to_uav[gu] != UNASSIGNED:
            raise ValueError(f"GU {gu} is already associated")
        self.gu_to_uav[gu] = uav
        self._members[uav].add(gu)

    def unassign(self, gu: int) -> None:
        uav = self.gu_to_uav[gu]
        if uav != UNASSIGNED:
            self._members[uav].discard(gu)
            self.gu_to_uav[gu] = UNASSIGNED

    def members(self, uav: int) -> list[int]:
        return sorted(self._members[uav])

    def count(self, uav: int) -> int:
        return len(self._members[uav])

    def served(self) -> np.ndarray:
        return np.nonzero(self.gu_to_uav >= 0)[0]

    def pairs(self):
        for gu in self.served():
            yield int(self.gu_to_uav[gu]), int(gu)

    def copy(self) -> "Association":
        dup = Association(self.num_uavs, self.num_gus, self.slot)
        dup.gu_to_uav = self.gu_to_uav.copy()
        dup._members = [set(m) for m in self._members]
        return dup

    def validate(self, problem: "MatchingProblem") -> list[str]:
        """Scan the three matching conditions; empty list means valid."""
        bad: list[str] = []
        for gu in range(self.num_gus):
            uav = self.gu_to_uav[gu]
            if uav == UNASSIGNED:
                continue
            if problem.dc_user_mask[gu] and uav != problem.dc_uav:
                bad.append(f"DC user {gu} associated with non-DC UAV {uav}")
            if not problem.dc_user_mask[gu] and uav >= problem.num_mec_uavs:
                bad.append(f"MEC user {gu} associated with the DC-UAV")
            if gu not in self._members[uav]:
                bad.append(f"GU {gu} missing from member set of UAV {uav}")
        for uav in range(self.num_uavs):
            if len(self._members[uav]) > problem.capacity:
                bad.append(f"UAV {uav} serves {len(self._members[uav])} > capacity")
            for gu in self._members[uav]:
                if self.gu_to_uav[gu] != uav:
                    bad.append(f"member set of UAV {uav} disagrees with GU {gu}")
        return bad


@dataclass
class MatchingProblem:
    """Immutable per-slot inputs of the association decision."""

    gains: np.ndarray          # (U, G)
    powers: np.ndarray         # (G,)
    uav_xy: np.ndarray         # (U, 2)
    gu_xy: np.ndarray          # (G, 2)
    num_mec_uavs: int
    capacity: int
    dc_user_mask: np.ndarray   # (G,) bool
    eligible: np.ndarray       # (G,) bool; queue/buffer gates already applied
    bandwidth: float
    noise_w: float
    thr_mec: float
    thr_dc: float
    full_recompute: bool = False  # force whole-system recomputation of swap deltas

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        self.powers = np.asarray(self.powers, dtype=float)
        self.uav_xy = np.asarray(self.uav_xy, dtype=float)
        self.gu_xy = np.asarray(self.gu_xy, dtype=float)
        self.dc_user_mask = np.asarray(self.dc_user_mask, dtype=bool)
        self.eligible = np.asarray(self.eligible, dtype=bool)

    @property
    def num_uavs(self) -> int:
        return self.gains.shape[0]

    @property
    def num_gus(self) -> int:
        return self.gains.shape[1]

    @property
    def dc_uav(self) -> int:
        return self.num_mec_uavs

    def threshold(self, uav: int) -> float:
        return self.thr_dc if uav == self.dc_uav else self.thr_mec

    def mec_user_ids(self) -> np.ndarray:
        return np.nonzero(~self.dc_user_mask)[0]

    def dc_user_ids(self) -> np.ndarray:
        return np.nonzero(self.dc_user_mask)[0]

    @classmethod
    def from_world(cls, world, powers: np.ndarray, full_recompute: bool = False) -> "MatchingProblem":
        """Snapshot a live world (see ``env.WorldState``) into a problem."""
        scenario: Scenario = world.scenario
        gains = gain_matrix(
            world.uav_xy, world.gu_xy, scenario.area.uav_altitude, scenario.radio
        )
        num_gus = scenario.num_gus
        dc_mask = np.zeros(num_gus, dtype=bool)
        dc_mask[list(scenario.dc_user_ids)] = True
        eligible = np.zeros(num_gus, dtype=bool)
        for gu in scenario.mec_user_ids:
            eligible[gu] = world.queues[gu].pending_bits() > 0.0
        for gu in scenario.dc_user_ids:
            eligible[gu] = world.buffers[gu].stored_bits >= scenario.tasks.dc_min_collectible
        return cls(
            gains=gains,
            powers=np.asarray(powers, dtype=float),
            uav_xy=np.asarray(world.uav_xy, dtype=float),
            gu_xy=np.asarray(world.gu_xy, dtype=float),
            num_mec_uavs=scenario.num_mec_uavs,
            capacity=scenario.uav_capacity,
            dc_user_mask=dc_mask,
            eligible=eligible,
            bandwidth=scenario.radio.bandwidth,
            noise_w=scenario.radio.noise_psd_w,
            thr_mec=scenario.radio.rate_threshold_mec,
            thr_dc=scenario.radio.rate_threshold_dc,
            full_recompute=full_recompute,
        )


# ---------------------------------------------------------------------------
# Rates and utility under a full association


def rate_context(problem: MatchingProblem, assoc: Association) -> RateContext:
    served = assoc.gu_to_uav >= 0
    return RateContext(
        gains=problem.gains,
        tx_powers=problem.powers,
        gu_to_uav=assoc.gu_to_uav,
        transmit_mask=served & problem.eligible,
    )


def rates_for(problem: MatchingProblem, assoc: Association) -> np.ndarray:
    """Per-GU achievable rate under the full association (0 when unassigned)."""
    radio_view = SimpleNamespace(bandwidth=problem.bandwidth, noise_psd_w=problem.noise_w)
    return rate_vector(rate_context(problem, assoc), radio_view)


def utility(problem: MatchingProblem, assoc: Association) -> float:
    """System sum rate over all associated pairs, bits/s."""
    return float(rates_for(problem, assoc).sum())


def _cell_rates(
    problem: MatchingProblem, assoc: Association, uav: int, members: list[int]
) -> np.ndarray:
    """Rates of a hypothetical member list of one cell.

    ``assoc`` supplies the transmit set of every other GU; GUs named in
    ``members`` are treated as served by ``uav`` regardless of their current
    assignment, so the same helper evaluates admissions and swap candidates.
    """
    if not members:
        return np.zeros(0)
    member_arr = np.asarray(members, dtype=int)
    tx = problem.eligible & (assoc.gu_to_uav >= 0)
    tx[member_arr] = False
    interference = float(problem.gains[uav] @ (problem.powers * tx))
    share = problem.bandwidth / len(members)
    noise = problem.noise_w * share
    signal = problem.powers[member_arr] * problem.gains[uav, member_arr]
    return share * np.log2(1.0 + signal / (interference + noise))


def _hypothetical_rate(
    problem: MatchingProblem, assoc: Association, gu: int, uav: int
) -> float:
    """Rate ``gu`` would get if it joined ``uav`` on top of the current matching."""
    members = assoc.members(uav) + [gu]
    return float(_cell_rates(problem, assoc, uav, members)[-1])


# ---------------------------------------------------------------------------
# Phase I: deferred-acceptance style pre-evaluations


def _distance_row(problem: MatchingProblem, uav: int) -> np.ndarray:
    diff = problem.gu_xy - problem.uav_xy[uav]
    return np.hypot(diff[:, 0], diff[:, 1])


def distance_based_evaluation(problem: MatchingProblem) -> Association:
    """Nearest-UAV requests with farthest-user rejection (capacity-bounded).

    Deterministic: requesters are processed in ascending GU id, ties on
    distance break toward the lower index.
    """
    assoc = Association(problem.num_uavs, problem.num_gus)
    distances = np.array([_distance_row(problem, u) for u in range(problem.num_uavs)])

    available: dict[int, set[int]] = {
        int(m): set(range(problem.num_mec_uavs))
        for m in problem.mec_user_ids()
        if problem.eligible[m]
    }
    satisfied: dict[int, bool] = {m: False for m in available}
    pending = sorted(available)
    while pending:
        m = pending.pop(0)
        if satisfied[m] or not available[m]:
            continue
        candidates = sorted(available[m])
        nearest = min(candidates, key=lambda u: (distances[u, m], u))
        assoc.assign(m, nearest)
        satisfied[m] = True
        if assoc.count(nearest) > problem.capacity:
            members = assoc.members(nearest)
            farthest = max(members, key=lambda g: (distances[nearest, g], -g))
            assoc.unassign(farthest)
            available[farthest].discard(nearest)
            satisfied[farthest] = False
            pending.append(farthest)
        pending.sort()

    dc_uav = problem.dc_uav
    for n in problem.dc_user_ids():
        n = int(n)
        if not problem.eligible[n]:
            continue
        assoc.assign(n, dc_uav)
        if assoc.count(dc_uav) > problem.capacity:
            members = assoc.members(dc_uav)
            farthest = max(members, key=lambda g: (distances[dc_uav, g], -g))
            assoc.unassign(farthest)
    return assoc


def rate_based_evaluation(problem: MatchingProblem) -> Association:
    """Highest-rate requests on top of the distance-based seed.

    Rates are evaluated against the association in force at request time
    (interference and bandwidth shares included), and a pair is admitted only
    when it clears its rate threshold; over-capacity UAVs evict their
    lowest-rate user.
    """
    assoc = distance_based_evaluation(problem)

    available: dict[int, set[int]] = {
        int(m): set(range(problem.num_mec_uavs))
        for m in problem.mec_user_ids()
        if problem.eligible[m]
    }
    satisfied: dict[int, bool] = {m: False for m in available}
    pending = sorted(available)
    while pending:
        m = pending.pop(0)
        if satisfied[m] or not available[m]:
            continue
        assoc.unassign(m)
        candidates = sorted(available[m])
        best_uav, best_rate = None, -np.inf
        for u in candidates:
            rate = _hypothetical_rate(problem, assoc, m, u)
            if rate > best_rate:
                best_uav, best_rate = u, rate
        satisfied[m] = True
        if best_uav is None or best_rate < problem.thr_mec:
            continue  # best option misses the threshold; m stays unassigned
        assoc.assign(m, best_uav)
        if assoc.count(best_uav) > problem.capacity:
            members = assoc.members(best_uav)
            rates = _cell_rates(problem, assoc, best_uav, members)
            lowest = members[int(np.argmin(rates))]
            assoc.unassign(lowest)
            available[lowest].discard(best_uav)
            satisfied[lowest] = False
            pending.append(lowest)
            pending.sort()

    dc_uav = problem.dc_uav
    for n in problem.dc_user_ids():
        n = int(n)
        assoc.unassign(n)
        if not problem.eligible[n]:
            continue
        rate = _hypothetical_rate(problem, assoc, n, dc_uav)
        if rate < problem.thr_dc:
            continue
        assoc.assign(n, dc_uav)
        if assoc.count(dc_uav) > problem.capacity:
            members = assoc.members(dc_uav)
            rates = _cell_rates(problem, assoc, dc_uav, members)
            lowest = members[int(np.argmin(rates))]
            assoc.unassign(lowest)
    return assoc


# ---------------------------------------------------------------------------
# Phase II: swap matching


@dataclass
class SwapPair:
    """A utility-improving exchange; ``gu_b`` joins ``gu_a``'s UAV.

    For scope ``"mec"`` both users are associated and trade UAVs; for scope
    ``"dc"`` ``gu_a`` leaves the DC-UAV and the previously unassociated
    ``gu_b`` takes the slot.
    """

    gu_a: int
    gu_b: int
    utility_delta: float
    scope: str


def apply_swap(assoc: Association, pair: SwapPair, problem: MatchingProblem) -> None:
    if pair.scope == "mec":
        uav_a = int(assoc.gu_to_uav[pair.gu_a])
        uav_b = int(assoc.gu_to_uav[pair.gu_b])
        assoc.unassign(pair.gu_a)
        assoc.unassign(pair.gu_b)
        assoc.assign(pair.gu_a, uav_b)
        assoc.assign(pair.gu_b, uav_a)
    elif pair.scope == "dc":
        assoc.unassign(pair.gu_a)
        assoc.assign(pair.gu_b, problem.dc_uav)
    else:
        raise ValueError(f"unknown swap scope {pair.scope!r}")


def _mec_swap_delta(
    problem: MatchingProblem, assoc: Association, g: int, gp: int
) -> tuple[float, bool]:
    """(utility delta, thresholds-ok) for exchanging two served MEC users.

    Only the two affected cells change: both users keep transmitting, so the
    interference seen anywhere else is invariant under the exchange.  The
    swap may not create a new threshold violation; a user already below its
    threshold before the swap is allowed to move.
    """
    u, up = int(assoc.gu_to_uav[g]), int(assoc.gu_to_uav[gp])
    before_u = assoc.members(u)
    before_up = assoc.members(up)
    after_u = sorted(set(before_u) - {g} | {gp})
    after_up = sorted(set(before_up) - {gp} | {g})
    rates_before_u = _cell_rates(problem, assoc, u, before_u)
    rates_before_up = _cell_rates(problem, assoc, up, before_up)
    before = rates_before_u.sum() + rates_before_up.sum()
    rates_u = _cell_rates(problem, assoc, u, after_u)
    rates_up = _cell_rates(problem, assoc, up, after_up)
    after = rates_u.sum() + rates_up.sum()
    ok_g = (
        rates_up[after_up.index(g)] >= problem.threshold(up)
        or rates_before_u[before_u.index(g)] < problem.threshold(u)
    )
    ok_gp = (
        rates_u[after_u.index(gp)] >= problem.threshold(u)
        or rates_before_up[before_up.index(gp)] < problem.threshold(up)
    )
    return float(after - before), bool(ok_g and ok_gp)


def _dc_swap_delta(
    problem: MatchingProblem, assoc: Association, n: int, np_: int
) -> tuple[float, bool]:
    """(utility delta, thresholds-ok) for replacing served ``n`` with idle ``np_``.

    The transmit set changes, so interference moves at every receiver; the
    delta is a whole-system recomputation on a swapped copy.
    """
    base = utility(problem, assoc)
    trial = assoc.copy()
    apply_swap(trial, SwapPair(n, np_, 0.0, "dc"), problem)
    after = utility(problem, trial)
    new_rate = rates_for(problem, trial)[np_]
    return float(after - base), bool(new_rate >= problem.thr_dc)


def _full_swap_delta(
    problem: MatchingProblem, assoc: Association, pair: SwapPair
) -> tuple[float, bool]:
    """Whole-system recomputation of any swap; reference path for testing."""
    rates_before = rates_for(problem, assoc)
    base = float(rates_before.sum())
    trial = assoc.copy()
    apply_swap(trial, pair, problem)
    rates = rates_for(problem, trial)
    after = float(rates.sum())
    if pair.scope == "mec":
        ok = all(
            rates[gu] >= problem.threshold(int(trial.gu_to_uav[gu]))
            or rates_before[gu] < problem.threshold(int(assoc.gu_to_uav[gu]))
            for gu in (pair.gu_a, pair.gu_b)
        )
    else:
        ok = rates[pair.gu_b] >= problem.thr_dc
    return float(after - base), bool(ok)


def find_swap_blocking_pair(
    problem: MatchingProblem,
    assoc: Association,
    scope: str,
    counter: list[int] | None = None,
) -> SwapPair | None:
    """First utility-improving, threshold-respecting pair in ascending id order.

    Returns ``None`` exactly when the matching is stable within ``scope``.
    """
    if scope == "mec":
        served = [
            int(g)
            for g in assoc.served()
            if not problem.dc_user_mask[g] and assoc.gu_to_uav[g] < problem.num_mec_uavs
        ]
        for i, g in enumerate(served):
            for gp in served[i + 1 :]:
                if assoc.gu_to_uav[g] == assoc.gu_to_uav[gp]:
                    continue
                if counter is not None:
                    counter[0] += 1
                pair = SwapPair(g, gp, 0.0, "mec")
                if problem.full_recompute:
                    delta, ok = _full_swap_delta(problem, assoc, pair)
                else:
                    delta, ok = _mec_swap_delta(problem, assoc, g, gp)
                if ok and delta > MIN_GAIN:
                    pair.utility_delta = delta
                    return pair
        return None
    if scope == "dc":
        served = [int(g) for g in assoc.served() if problem.dc_user_mask[g]]
        idle = [
            int(g)
            for g in problem.dc_user_ids()
            if problem.eligible[g] and assoc.gu_to_uav[g] == UNASSIGNED
        ]
        for n in served:
            for np_ in idle:
                if counter is not None:
                    counter[0] += 1
                if problem.full_recompute:
                    delta, ok = _full_swap_delta(
                        problem, assoc, SwapPair(n, np_, 0.0, "dc")
                    )
                else:
                    delta, ok = _dc_swap_delta(problem, assoc, n, np_)
                if ok and delta > MIN_GAIN:
                    return SwapPair(n, np_, delta, "dc")
        return None
    raise ValueError(f"unknown swap scope {scope!r}")


@dataclass
class TmaResult:
    association: Association
    capped: bool
    swaps_applied: int
    swap_evaluations: int
    utility: float
    utility_trace: list[float] = field(default_factory=list)


def swap_refine(
    problem: MatchingProblem, assoc: Association, iteration_cap: int = 500
) -> TmaResult:
    """Apply improving swaps (MEC scope, then DC scope) until stable or capped."""
    counter = [0]
    trace = [utility(problem, assoc)]
    swaps = 0
    capped = False
    improved = True
    while improved and not capped:
        improved = False
        for scope in ("mec", "dc"):
            while True:
                if swaps >= iteration_cap:
                    capped = True
                    break
                pair = find_swap_blocking_pair(problem, assoc, scope, counter)
                if pair is None:
                    break
                apply_swap(assoc, pair, problem)
                swaps += 1
                improved = True
                trace.append(utility(problem, assoc))
            if capped:
                break
    return TmaResult(
        association=assoc,
        capped=capped,
        swaps_applied=swaps,
        swap_evaluations=counter[0],
        utility=trace[-1],
        utility_trace=trace,
    )


def tma(problem: MatchingProblem, iteration_cap: int = 500) -> TmaResult:
    """Two-phase association: rate-based pre-evaluation, then swap matching."""
    seed_assoc = rate_based_evaluation(problem)
    return swap_refine(problem, seed_assoc, iteration_cap)


def random_association(problem: MatchingProblem, rng: np.random.Generator) -> Association:
    """Feasible uniform matching: eligible users pick any compatible UAV with room."""
    assoc = Association(problem.num_uavs, problem.num_gus)
    order = rng.permutation(problem.num_gus)
    for gu in order:
        gu = int(gu)
        if not problem.eligible[gu]:
            continue
        if problem.dc_user_mask[gu]:
            options = [problem.dc_uav] if assoc.count(problem.dc_uav) < problem.capacity else []
        else:
            options = [
                u for u in range(problem.num_mec_uavs) if assoc.count(u) < problem.capacity
            ]
        if options:
            assoc.assign(gu, int(rng.choice(options)))
    return assoc


def strategy_variant(
    kind: str,
    problem: MatchingProblem,
    rng: np.random.Generator | None = None,
    iteration_cap: int = 500,
) -> Association:
    """Dispatch one of the six association strategies."""
    if kind not in STRATEGY_KINDS:
        raise ConfigError(f"unknown association strategy {kind!r}")
    if kind in ("random", "swap_random_init") and rng is None:
        raise ConfigError(f"strategy {kind!r} needs an rng")
    if kind == "random":
        return random_association(problem, rng)
    if kind == "distance_gs":
        return distance_based_evaluation(problem)
    if kind == "rate_gs":
        return rate_based_evaluation(problem)
    if kind == "swap_random_init":
        return swap_refine(problem, random_association(problem, rng), iteration_cap).association
    if kind == "swap_distance_init":
        return swap_refine(problem, distance_based_evaluation(problem), iteration_cap).association
    return tma(problem, iteration_cap).association
