import itertools

import numpy as np
import pytest

from mecdc import matching
from mecdc.matching import (
    Association,
    MatchingProblem,
    SwapPair,
    apply_swap,
    distance_based_evaluation,
    find_swap_blocking_pair,
    random_association,
    rate_based_evaluation,
    rates_for,
    strategy_variant,
    swap_refine,
    tma,
    utility,
)
from mecdc.scenario import ConfigError, RadioParams

from _helpers import (
    enumerate_optimum,
    exhaustive_improving_pairs,
    make_problem,
    random_problem,
)

RADIO = RadioParams()


class TestUtility:
    def test_empty_association_zero(self):
        problem = random_problem(np.random.default_rng(0))
        assert utility(problem, Association(problem.num_uavs, problem.num_gus)) == 0.0

    def test_single_pair_equals_rate(self):
        problem = make_problem([[0, 0], [400, 0]], [[30, 10]], num_mec_uavs=2)
        assoc = Association(2, 1)
        assoc.assign(0, 0)
        assert utility(problem, assoc) == pytest.approx(
            float(rates_for(problem, assoc)[0]), rel=1e-12
        )

    def test_brute_force_sum(self):
        # independent summation recomputing each rate from scratch
        rng = np.random.default_rng(1)
        problem = make_problem(
            rng.uniform(-400, 400, (2, 2)), rng.uniform(-600, 600, (4, 2)), num_mec_uavs=2,
            powers=rng.uniform(0.1, 0.5, 4),
        )
        assoc = Association(2, 4)
        for g, u in enumerate((0, 0, 1, 1)):
            assoc.assign(g, u)
        total = 0.0
        for g in range(4):
            u = int(assoc.gu_to_uav[g])
            s_u = int(np.sum(assoc.gu_to_uav == u))
            interference = sum(
                problem.powers[l] * problem.gains[u, l]
                for l in range(4)
                if assoc.gu_to_uav[l] >= 0 and assoc.gu_to_uav[l] != u
            )
            share = problem.bandwidth / s_u
            total += share * np.log2(
                1.0
                + problem.powers[g] * problem.gains[u, g]
                / (interference + problem.noise_w * share)
            )
        assert utility(problem, assoc) == pytest.approx(total, rel=1e-10)


class TestDistanceBased:
    def test_capacity_slack_takes_everyone(self):
        problem = make_problem([[0, 0]], [[10, 0], [50, 50]], num_mec_uavs=1)
        assoc = distance_based_evaluation(problem)
        assert list(assoc.gu_to_uav) == [0, 0]

    def test_farthest_of_five_is_rejected(self):
        gu_xy = [[10, 0], [20, 0], [30, 0], [40, 0], [500, 0]]
        problem = make_problem([[0, 0]], gu_xy, num_mec_uavs=1, capacity=4)
        assoc = distance_based_evaluation(problem)
        assert assoc.gu_to_uav[4] == matching.UNASSIGNED
        assert all(assoc.gu_to_uav[g] == 0 for g in range(4))

    def test_rejected_gu_falls_back_to_next_uav(self):
        gu_xy = [[10, 0], [20, 0], [30, 0], [40, 0], [60, 0]]
        problem = make_problem([[0, 0], [300, 0]], gu_xy, num_mec_uavs=2, capacity=4)
        assoc = distance_based_evaluation(problem)
        assert assoc.gu_to_uav[4] == 1  # farthest from UAV 0 lands on UAV 1
        assert assoc.count(0) == 4

    def test_ineligible_dc_user_never_associated(self):
        dc_mask = [False, True, True]
        eligible = [True, True, False]  # last DC user below the data gate
        problem = make_problem(
            [[0, 0], [200, 0]], [[10, 0], [190, 0], [210, 0]], num_mec_uavs=1,
            dc_mask=dc_mask, eligible=eligible,
        )
        assoc = distance_based_evaluation(problem)
        assert assoc.gu_to_uav[1] == 1
        assert assoc.gu_to_uav[2] == matching.UNASSIGNED

    def test_dc_capacity_keeps_nearest(self):
        dc_mask = [True] * 6
        gu_xy = [[0, d] for d in (10, 20, 30, 40, 50, 60)]
        problem = make_problem(
            [[0, 0], [0, 0]], gu_xy, num_mec_uavs=1, dc_mask=dc_mask, capacity=4
        )
        assoc = distance_based_evaluation(problem)
        assert [assoc.gu_to_uav[g] for g in range(6)] == [1, 1, 1, 1, -1, -1]


class TestRateBased:
    def test_all_rates_below_threshold_empty(self):
        problem = make_problem(
            [[0, 0], [300, 0]], [[100, 0], [200, 0]], num_mec_uavs=2,
            powers=[1e-9, 1e-9],
        )
        assoc = rate_based_evaluation(problem)
        assert not list(assoc.pairs())

    def test_single_gu_prefers_higher_gain_uav(self):
        problem = make_problem([[0, 0], [500, 0]], [[100, 0]], num_mec_uavs=2)
        assoc = rate_based_evaluation(problem)
        assert assoc.gu_to_uav[0] == 0

    def test_solo_admissions_meet_thresholds(self):
        # Thresholds are checked at admission time against the association
        # then in force; with one user per cell no later admission can drift
        # the context, so the guarantee is visible in the final rates too.
        rng = np.random.default_rng(2)
        for _ in range(20):
            num_mec_uavs = 3
            problem = make_problem(
                uav_xy=rng.uniform(-600, 600, (num_mec_uavs + 1, 2)),
                gu_xy=rng.uniform(-750, 750, (3, 2)),
                num_mec_uavs=num_mec_uavs,
                dc_mask=[False, False, True],
                powers=rng.uniform(0.05, 0.5, 3),
            )
            assoc = rate_based_evaluation(problem)
            rates = rates_for(problem, assoc)
            for uav, gu in assoc.pairs():
                assert rates[gu] >= problem.threshold(uav) * (1 - 1e-9)

    def test_sub_threshold_everywhere_stays_unassigned(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            problem = random_problem(rng)
            weak = MatchingProblem(
                gains=problem.gains, powers=problem.powers * 1e-6,
                uav_xy=problem.uav_xy, gu_xy=problem.gu_xy,
                num_mec_uavs=problem.num_mec_uavs, capacity=problem.capacity,
                dc_user_mask=problem.dc_user_mask, eligible=problem.eligible,
                bandwidth=problem.bandwidth, noise_w=problem.noise_w,
                thr_mec=problem.thr_mec, thr_dc=problem.thr_dc,
            )
            assert not list(rate_based_evaluation(weak).pairs())

    def test_invariants_on_random_fixtures(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            problem = random_problem(rng)
            assoc = rate_based_evaluation(problem)
            assert assoc.validate(problem) == []
            for gu in np.nonzero(~problem.eligible)[0]:
                assert assoc.gu_to_uav[gu] == matching.UNASSIGNED


class TestSwap:
    def crossed_fixture(self):
        # two MEC users assigned to the wrong (far) UAVs; swapping fixes both
        problem = make_problem(
            [[-300, 0], [300, 0]], [[280, 0], [-280, 0]], num_mec_uavs=2,
            thr_mec=1e3,
        )
        assoc = Association(2, 2)
        assoc.assign(0, 0)  # GU 0 sits near UAV 1 but is served by UAV 0
        assoc.assign(1, 1)
        return problem, assoc

    def test_crossed_pair_is_blocking(self):
        problem, assoc = self.crossed_fixture()
        pair = find_swap_blocking_pair(problem, assoc, "mec")
        assert pair is not None
        assert (pair.gu_a, pair.gu_b) == (0, 1)
        assert pair.utility_delta > 0
        before = utility(problem, assoc)
        apply_swap(assoc, pair, problem)
        assert utility(problem, assoc) == pytest.approx(
            before + pair.utility_delta, rel=1e-6
        )

    def test_stable_fixture_has_no_pair(self):
        problem, assoc = self.crossed_fixture()
        pair = find_swap_blocking_pair(problem, assoc, "mec")
        apply_swap(assoc, pair, problem)
        assert find_swap_blocking_pair(problem, assoc, "mec") is None

    def test_local_delta_matches_full_recompute(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            problem = random_problem(rng)
            assoc = rate_based_evaluation(problem)
            served = [int(g) for g in assoc.served() if not problem.dc_user_mask[g]]
            for g, gp in itertools.combinations(served, 2):
                if assoc.gu_to_uav[g] == assoc.gu_to_uav[gp]:
                    continue
                local, ok_local = matching._mec_swap_delta(problem, assoc, g, gp)
                full, ok_full = matching._full_swap_delta(
                    problem, assoc, SwapPair(g, gp, 0.0, "mec")
                )
                assert local == pytest.approx(full, abs=1e-4)
                assert ok_local == ok_full

    def test_dc_swap_brings_in_better_user(self):
        # served DC user is far away; an unassociated one sits below the UAV
        dc_mask = [True, True]
        problem = make_problem(
            [[0, 0], [0, 0]], [[600, 0], [5, 0]], num_mec_uavs=1, dc_mask=dc_mask,
            thr_dc=1e3, capacity=1,
        )
        assoc = Association(2, 2)
        assoc.assign(0, 1)
        pair = find_swap_blocking_pair(problem, assoc, "dc")
        assert pair is not None
        assert (pair.gu_a, pair.gu_b) == (0, 1)
        apply_swap(assoc, pair, problem)
        assert assoc.gu_to_uav[0] == matching.UNASSIGNED
        assert assoc.gu_to_uav[1] == 1


class TestTma:
    def test_never_worse_than_rate_based(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            problem = random_problem(rng)
            seed_utility = utility(problem, rate_based_evaluation(problem))
            result = tma(problem)
            assert result.utility >= seed_utility - 1e-9

    def test_utility_trace_strictly_increasing(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            problem = random_problem(rng)
            trace = tma(problem).utility_trace
            for earlier, later in zip(trace, trace[1:]):
                assert later > earlier

    def test_uncapped_output_is_stable(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            problem = random_problem(rng)
            result = tma(problem)
            assert not result.capped
            assert exhaustive_improving_pairs(problem, result.association) == []

    def test_definition_invariants_hold(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            problem = random_problem(rng)
            result = tma(problem)
            assert result.association.validate(problem) == []

    def test_beats_random_on_every_seed(self):
        rng = np.random.default_rng(9)
        problem = random_problem(rng, num_gus=12)
        tma_utility = tma(problem).utility
        for seed in range(100):
            rand = random_association(problem, np.random.default_rng(seed))
            assert tma_utility >= utility(problem, rand)

    def test_iteration_cap_sets_flag(self):
        problem, assoc = TestSwap().crossed_fixture()
        result = swap_refine(problem, assoc, iteration_cap=0)
        assert result.capped
        assert result.swaps_applied == 0

    def test_swap_evaluation_count_stays_within_complexity_budget(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            problem = random_problem(rng)
            result = tma(problem)
            served_cap = problem.num_mec_uavs * problem.capacity
            pair_bound = served_cap * (served_cap - 1) // 2 + problem.capacity * int(
                problem.dc_user_mask.sum()
            )
            # every applied swap triggers at most one full rescan of all pairs
            assert result.swap_evaluations <= (result.swaps_applied + 3) * pair_bound

    def test_small_instance_optimality_gap(self):
        rng = np.random.default_rng(11)
        problem = make_problem(
            rng.uniform(-300, 300, (2, 2)), rng.uniform(-400, 400, (5, 2)),
            num_mec_uavs=2, capacity=2, powers=rng.uniform(0.2, 0.5, 5),
        )
        best, _ = enumerate_optimum(problem)
        result = tma(problem)
        assert result.utility >= 0.95 * best


class TestStrategyVariants:
    def test_unknown_kind_rejected(self):
        problem = random_problem(np.random.default_rng(12))
        with pytest.raises(ConfigError):
            strategy_variant("greedy", problem)

    def test_tma_dispatch_identity(self):
        problem = random_problem(np.random.default_rng(13))
        direct = tma(problem, iteration_cap=500).association
        dispatched = strategy_variant("tma", problem, iteration_cap=500)
        assert np.array_equal(direct.gu_to_uav, dispatched.gu_to_uav)

    def test_random_reproducible_and_feasible(self):
        problem = random_problem(np.random.default_rng(14))
        a = strategy_variant("random", problem, np.random.default_rng(99))
        b = strategy_variant("random", problem, np.random.default_rng(99))
        assert np.array_equal(a.gu_to_uav, b.gu_to_uav)
        assert a.validate(problem) == []

    def test_random_requires_rng(self):
        problem = random_problem(np.random.default_rng(15))
        with pytest.raises(ConfigError):
            strategy_variant("random", problem)

    def test_swap_variants_dominate_their_seeds(self):
        rng = np.random.default_rng(16)
        for _ in range(10):
            problem = random_problem(rng)
            dist = utility(problem, strategy_variant("distance_gs", problem))
            dist_swap = utility(problem, strategy_variant("swap_distance_init", problem))
            assert dist_swap >= dist - 1e-9
            rand_rng = np.random.default_rng(17)
            rand = utility(problem, strategy_variant("random", problem, np.random.default_rng(17)))
            rand_swap = utility(
                problem, strategy_variant("swap_random_init", problem, np.random.default_rng(17))
            )
            assert rand_swap >= rand - 1e-9

    def test_all_variants_satisfy_matching_conditions(self):
        rng = np.random.default_rng(18)
        problem = random_problem(rng)
        for kind in matching.STRATEGY_KINDS:
            assoc = strategy_variant(kind, problem, np.random.default_rng(1))
            assert assoc.validate(problem) == []
