import numpy as np
import pytest

from mecdc.scenario import ComputeParams, TaskProfile
from mecdc.tasking import (
    DcBuffer,
    GuQueue,
    TaskLog,
    TaskStatus,
    completion_rate,
    dc_rate,
    expire_and_rotate,
    generation_probability,
    maybe_generate_dc_data,
    maybe_generate_task,
    serve_slot,
)

PROFILE = TaskProfile()
COMP = ComputeParams()


class TestGeneration:
    def test_zero_gap_never_generates(self):
        rng = np.random.default_rng(0)
        queue = GuQueue(owner=0, last_generation_slot=5)
        log = TaskLog()
        for _ in range(200):
            assert maybe_generate_task(queue, 5, rng, PROFILE, log) is None
        assert not log.tasks

    def test_gap_five_always_generates(self):
        # density 0.2 and a gap of 5 slots force probability 1
        rng = np.random.default_rng(1)
        log = TaskLog()
        for trial in range(100):
            queue = GuQueue(owner=0, last_generation_slot=0)
            task = maybe_generate_task(queue, 5, rng, PROFILE, log)
            assert task is not None
            assert queue.last_generation_slot == 5
            assert task.bits_total in PROFILE.sizes

    def test_tolerance_aligned_with_size(self):
        rng = np.random.default_rng(2)
        log = TaskLog()
        by_size = dict(zip(PROFILE.sizes, PROFILE.tolerance_limits))
        for _ in range(300):
            queue = GuQueue(owner=0, last_generation_slot=0)
            task = maybe_generate_task(queue, 5, rng, PROFILE, log)
            assert task.tolerance == by_size[task.bits_total]

    def test_empirical_frequency_at_gap_two(self):
        # Monte-Carlo check of the generation law: p = 0.2 * 2 = 0.4
        rng = np.random.default_rng(3)
        log = TaskLog()
        hits = 0
        trials = 100_000
        for _ in range(trials):
            queue = GuQueue(owner=0, last_generation_slot=0)
            if maybe_generate_task(queue, 2, rng, PROFILE, log) is not None:
                hits += 1
        assert hits / trials == pytest.approx(0.4, abs=0.01)

    def test_probability_formula(self):
        assert generation_probability(7, 7, 0.2) == 0.0
        assert generation_probability(9, 7, 0.2) == pytest.approx(0.4)
        assert generation_probability(100, 7, 0.2) == 1.0

    def test_deadline_slots_respect_slot_length(self):
        rng = np.random.default_rng(4)
        log = TaskLog()
        queue = GuQueue(owner=0, last_generation_slot=0)
        task = maybe_generate_task(queue, 5, rng, PROFILE, log, slot_len=0.5)
        assert task.deadline_slot == 5 + 40  # ceil(20 / 0.5)


class TestDcBuffer:
    def test_add_to_empty(self):
        buf = DcBuffer(owner=0)
        kept = buf.add(512 * 1024, PROFILE.dc_storage_limit)
        assert kept == 512 * 1024
        assert buf.stored_bits == 512 * 1024

    def test_cap_discards_overflow(self):
        limit = PROFILE.dc_storage_limit
        buf = DcBuffer(owner=0, stored_bits=limit)
        buf.generated_total = limit
        buf.add(256 * 1024, limit)
        assert buf.stored_bits == limit
        assert buf.discarded_total == 256 * 1024

    def test_conservation_over_random_history(self):
        rng = np.random.default_rng(5)
        buf = DcBuffer(owner=0)
        for slot in range(1, 10_001):
            maybe_generate_dc_data(buf, slot, rng, PROFILE)
            if rng.random() < 0.3:
                buf.collect(rng.uniform(0, 2e6))
            assert 0.0 <= buf.stored_bits <= PROFILE.dc_storage_limit
            assert buf.generated_total == pytest.approx(
                buf.collected_total + buf.discarded_total + buf.stored_bits, abs=1e-6
            )


def _single_task_setup(bits, rate, owner=0, uav=0):
    log = TaskLog()
    queue = GuQueue(owner=owner)
    task = log.new_task(owner=owner, bits=bits, tolerance=1.0, birth_slot=0, deadline_slot=20)
    queue.tasks.append(task)
    assoc = np.array([uav])
    rates = np.array([rate])
    return log, queue, task, assoc, rates


class TestServeSlot:
    def test_transfer_and_compute_times(self):
        log, queue, task, assoc, rates = _single_task_setup(128 * 1024, 1.6e6)
        report = serve_slot(assoc, rates, {0: queue}, {}, 1, 1.0, COMP, dc_uav=3)
        svc = report.task_services[0]
        assert svc.tx_seconds == pytest.approx(0.08192, rel=1e-12)
        assert svc.compute_seconds == pytest.approx(1000 * 131072 / 6e9, rel=1e-12)
        assert svc.completed
        assert task.status is TaskStatus.COMPLETED
        assert report.uav_tx_seconds[0] == pytest.approx(0.08192, rel=1e-12)

    def test_oversized_task_carries_over(self):
        bits = 4e6
        rate = 1.6e6
        log, queue, task, assoc, rates = _single_task_setup(bits, rate)
        report = serve_slot(assoc, rates, {0: queue}, {}, 1, 1.0, COMP, dc_uav=3)
        assert task.status is TaskStatus.IN_SERVICE
        assert task.bits_remaining == pytest.approx(bits - rate * 1.0, rel=1e-12)
        assert report.task_services[0].tx_seconds == pytest.approx(1.0)
        assert queue.tasks  # still enqueued

    def test_fifo_across_multiple_tasks(self):
        log = TaskLog()
        queue = GuQueue(owner=0)
        first = log.new_task(0, 131072, 0.25, 0, 20)
        second = log.new_task(0, 131072, 0.25, 1, 21)
        queue.tasks += [first, second]
        report = serve_slot(
            np.array([0]), np.array([1.6e6]), {0: queue}, {}, 2, 1.0, COMP, dc_uav=3
        )
        assert [svc.task_id for svc in report.task_services] == [first.id, second.id]
        assert first.status is TaskStatus.COMPLETED
        assert second.status is TaskStatus.COMPLETED

    def test_budget_limits_transmission_seconds(self):
        log = TaskLog()
        queue = GuQueue(owner=0)
        for i in range(5):
            queue.tasks.append(log.new_task(0, 4e6, 1.0, 0, 20))
        report = serve_slot(
            np.array([0]), np.array([1.6e6]), {0: queue}, {}, 1, 1.0, COMP, dc_uav=3
        )
        assert sum(s.tx_seconds for s in report.task_services) == pytest.approx(1.0)

    def test_dc_collection_caps_at_buffer(self):
        buf = DcBuffer(owner=1, stored_bits=0.5e6)
        buf.generated_total = 0.5e6
        report = serve_slot(
            np.array([-1, 3]), np.array([0.0, 1.2e6]), {}, {1: buf}, 1, 1.0, COMP, dc_uav=3
        )
        assert report.dc_collected[1] == pytest.approx(0.5e6)
        assert buf.stored_bits == 0.0

    def test_dc_empty_buffer_collects_nothing(self):
        buf = DcBuffer(owner=1)
        report = serve_slot(
            np.array([-1, 3]), np.array([0.0, 1.2e6]), {}, {1: buf}, 1, 1.0, COMP, dc_uav=3
        )
        assert report.dc_collected[1] == 0.0

    def test_unknown_gu_is_contract_violation(self):
        with pytest.raises(ValueError):
            serve_slot(np.array([0]), np.array([1e6]), {}, {}, 1, 1.0, COMP, dc_uav=3)

    def test_strict_tolerance_flag_marks_slow_tasks(self):
        log, queue, task, assoc, rates = _single_task_setup(2e6, 1.6e6)
        serve_slot(assoc, rates, {0: queue}, {}, 1, 1.0, COMP, dc_uav=3)
        report = serve_slot(
            assoc, rates, {0: queue}, {}, 2, 1.0, COMP, dc_uav=3,
            strict_tmax_completion=True,
        )
        # finished on slot 2, but cumulative service exceeded t_max = 1 s
        assert task.status is TaskStatus.EXPIRED
        assert not report.completed_task_ids


class TestExpiry:
    def test_overdue_task_expires(self):
        log = TaskLog()
        queue = GuQueue(owner=0)
        task = log.new_task(0, 131072, 1.0, birth_slot=0, deadline_slot=20)
        queue.tasks.append(task)
        assert expire_and_rotate({0: queue}, 20) == []
        expired = expire_and_rotate({0: queue}, 21)
        assert expired == [task]
        assert task.status is TaskStatus.EXPIRED
        assert not queue.tasks

    def test_finished_task_never_expires(self):
        log = TaskLog()
        queue = GuQueue(owner=0)
        task = log.new_task(0, 131072, 1.0, 0, 20)
        queue.tasks.append(task)
        serve_slot(np.array([0]), np.array([1.6e6]), {0: queue}, {}, 1, 1.0, COMP, dc_uav=3)
        assert expire_and_rotate({0: queue}, 25) == []
        assert task.status is TaskStatus.COMPLETED

    def test_idempotent_within_slot(self):
        log = TaskLog()
        queue = GuQueue(owner=0)
        queue.tasks.append(log.new_task(0, 131072, 1.0, 0, 5))
        first = expire_and_rotate({0: queue}, 6)
        second = expire_and_rotate({0: queue}, 6)
        assert len(first) == 1
        assert second == []


class TestRates:
    def test_completion_rate_conventions(self):
        log = TaskLog()
        assert completion_rate(log) == 100.0
        for i in range(4):
            log.new_task(0, 1000, 1.0, 0, 20)
        for task in log.tasks[:3]:
            task.status = TaskStatus.COMPLETED
        log.tasks[3].status = TaskStatus.EXPIRED
        assert completion_rate(log) == pytest.approx(75.0)

    def test_completion_matches_event_log_recount(self):
        rng = np.random.default_rng(8)
        log = TaskLog()
        queues = {g: GuQueue(owner=g) for g in range(4)}
        for slot in range(1, 200):
            for g, queue in queues.items():
                maybe_generate_task(queue, slot, rng, PROFILE, log)
            assoc = np.array([0, 0, 1, -1])
            rates = np.array([2e6, 1e6, 3e6, 0.0])
            serve_slot(assoc, rates, queues, {}, slot, 1.0, COMP, dc_uav=3)
            expire_and_rotate(queues, slot)
        rows = list(log.csv_rows())
        completed = sum(1 for r in rows if r[4] == "completed")
        assert completion_rate(log) == pytest.approx(100.0 * completed / len(rows))
        counts = log.counts()
        assert counts["completed"] + counts["expired"] + counts["live"] == counts["generated"]

    def test_dc_rate_conventions(self):
        empty = DcBuffer(owner=0)
        assert dc_rate([empty]) == 100.0
        nothing_collected = DcBuffer(owner=0, stored_bits=5e5)
        nothing_collected.generated_total = 5e5
        assert dc_rate([nothing_collected]) == 0.0
        half = DcBuffer(owner=0)
        half.generated_total = 2e6
        half.collected_total = 1e6
        half.stored_bits = 1e6
        assert dc_rate([half]) == pytest.approx(50.0)
