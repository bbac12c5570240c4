"""MEC task lifecycle and DC data buffers.

MEC users intermittently generate compute tasks (generation probability grows
linearly with the number of slots since the last generation) that queue FIFO
and expire past their deadline.  DC users accumulate data under the same
intermittent model into capped buffers; overflow is discarded oldest-first,
which for the accounting here means it simply counts as discarded bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .scenario import ComputeParams, TaskProfile

_BIT_EPS = 1e-6  # below this many bits a task counts as fully transferred


class TaskStatus(str, Enum):
    PENDING = "pending"
    IN_SERVICE = "in_service"
    COMPLETED = "completed"
    EXPIRED = "expired"


@dataclass
class Task:
    """One MEC workload unit."""

    id: int
    owner: int
    bits_total: float
    bits_remaining: float
    tolerance: float        # t_max, s
    birth_slot: int
    deadline_slot: int      # expires once the slot index passes this
    status: TaskStatus = TaskStatus.PENDING
    service_time_accrued: float = 0.0
    finish_slot: int | None = None


@dataclass
class GuQueue:
    """FIFO task queue of one MEC user."""

    owner: int
    tasks: list[Task] = field(default_factory=list)
    last_generation_slot: int = 0  # eta_g

    def pending_bits(self) -> float:
        return sum(t.bits_remaining for t in self.tasks)

    def head(self) -> Task | None:
        return self.tasks[0] if self.tasks else None


@dataclass
class DcBuffer:
    """Capped data store of one DC user with conservation counters."""

    owner: int
    stored_bits: float = 0.0
    generated_total: float = 0.0
    discarded_total: float = 0.0
    collected_total: float = 0.0
    last_generation_slot: int = 0

    def at_capacity(self, limit: float) -> bool:
        return self.stored_bits >= limit

    def add(self, bits: float, limit: float) -> float:
        """Store ``bits`` up to ``limit``; overflow counts as discarded."""
        self.generated_total += bits
        space = max(0.0, limit - self.stored_bits)
        kept = min(bits, space)
        self.stored_bits += kept
        self.discarded_total += bits - kept
        return kept

    def collect(self, bits: float) -> float:
        taken = min(bits, self.stored_bits)
        self.stored_bits -= taken
        self.collected_total += taken
        return taken


@dataclass
class TaskService:
    """Service received by one task within one slot."""

    task_id: int
    owner: int
    uav: int
    tx_seconds: float
    compute_seconds: float
    bits_moved: float
    tolerance: float
    completed: bool


@dataclass
class ServiceReport:
    """Everything that happened during one slot of service."""

    slot: int
    task_services: list[TaskService] = field(default_factory=list)
    uav_tx_seconds: dict[int, float] = field(default_factory=dict)
    uav_bits_computed: dict[int, float] = field(default_factory=dict)
    dc_collected: dict[int, float] = field(default_factory=dict)
    completed_task_ids: list[int] = field(default_factory=list)


class TaskLog:
    """Registry of every task ever generated; source of episode statistics."""

    def __init__(self):
        self.tasks: list[Task] = []
        self._next_id = 0

    def new_task(
        self, owner: int, bits: float, tolerance: float, birth_slot: int, deadline_slot: int
    ) -> Task:
        task = Task(
            id=self._next_id,
            owner=owner,
            bits_total=bits,
            bits_remaining=bits,
            tolerance=tolerance,
            birth_slot=birth_slot,
            deadline_slot=deadline_slot,
        )
        self._next_id += 1
        self.tasks.append(task)
        return task

    def counts(self) -> dict[str, int]:
        generated = len(self.tasks)
        completed = sum(1 for t in self.tasks if t.status is TaskStatus.COMPLETED)
        expired = sum(1 for t in self.tasks if t.status is TaskStatus.EXPIRED)
        return {
            "generated": generated,
            "completed": completed,
            "expired": expired,
            "live": generated - completed - expired,
        }

    def csv_rows(self):
        for t in self.tasks:
            yield (t.id, t.owner, t.birth_slot, t.bits_total, t.status.value, t.finish_slot)


def generation_probability(slot: int, last_slot: int, density: float) -> float:
    """min(1, density * slots-since-last-generation); zero at a zero gap."""
    return min(1.0, density * max(0, slot - last_slot))


def maybe_generate_task(
    queue: GuQueue,
    slot: int,
    rng: np.random.Generator,
    profile: TaskProfile,
    log: TaskLog,
    slot_len: float = 1.0,
) -> Task | None:
    """Roll the intermittent generation model for one MEC user."""
    p = generation_probability(slot, queue.last_generation_slot, profile.density)
    if rng.random() >= p:
        return None
    idx = int(rng.choice(len(profile.sizes), p=profile.size_probs))
    task = log.new_task(
        owner=queue.owner,
        bits=float(profile.sizes[idx]),
        tolerance=float(profile.tolerance_limits[idx]),
        birth_slot=slot,
        deadline_slot=slot + math.ceil(profile.deadline / slot_len),
    )
    queue.tasks.append(task)
    queue.last_generation_slot = slot
    return task


def maybe_generate_dc_data(
    buffer: DcBuffer,
    slot: int,
    rng: np.random.Generator,
    profile: TaskProfile,
) -> float:
    """Roll the same intermittent model for one DC user; returns bits generated."""
    p = generation_probability(slot, buffer.last_generation_slot, profile.density)
    if rng.random() >= p:
        return 0.0
    idx = int(rng.choice(len(profile.sizes), p=profile.size_probs))
    bits = float(profile.sizes[idx])
    buffer.add(bits, profile.dc_storage_limit)
    buffer.last_generation_slot = slot
    return bits


def serve_slot(
    gu_to_uav: np.ndarray,
    rates: np.ndarray,
    queues: dict[int, GuQueue],
    buffers: dict[int, DcBuffer],
    slot: int,
    tau: float,
    compute: ComputeParams,
    dc_uav: int,
    strict_tmax_completion: bool = False,
) -> ServiceReport:
    """Serve every associated GU for one slot.

    MEC users transmit head-of-queue tasks FIFO within a per-user budget of
    ``tau`` transmission seconds; edge compute runs in parallel and charges
    C * bits / omega seconds per task without consuming the budget.  DC users
    drain min(stored, rate * tau) bits from their buffers.
    """
    report = ServiceReport(slot=slot)
    for gu in np.nonzero(np.asarray(gu_to_uav) >= 0)[0]:
        gu = int(gu)
        uav = int(gu_to_uav[gu])
        rate = float(rates[gu])
        if uav == dc_uav:
            buffer = buffers.get(gu)
            if buffer is None:
                raise ValueError(f"associated GU {gu} has no DC buffer")
            collected = buffer.collect(rate * tau) if rate > 0.0 else 0.0
            report.dc_collected[gu] = collected
            continue
        queue = queues.get(gu)
        if queue is None:
            raise ValueError(f"associated GU {gu} has no task queue")
        if rate <= 0.0:
            continue
        budget = tau
        while queue.tasks and budget > 1e-12:
            task = queue.tasks[0]
            needed = task.bits_remaining / rate
            tx = min(needed, budget)
            moved = task.bits_remaining if needed <= budget else rate * tx
            comp = compute.cycles_per_bit * moved / compute.cpu_freq
            task.bits_remaining -= moved
            task.service_time_accrued += tx + comp
            budget -= tx
            finished = task.bits_remaining <= _BIT_EPS
            if finished:
                task.bits_remaining = 0.0
                queue.tasks.pop(0)
                if strict_tmax_completion and task.service_time_accrued > task.tolerance:
                    task.status = TaskStatus.EXPIRED
                else:
                    task.status = TaskStatus.COMPLETED
                    report.completed_task_ids.append(task.id)
                task.finish_slot = slot
            else:
                task.status = TaskStatus.IN_SERVICE
            report.task_services.append(
                TaskService(
                    task_id=task.id,
                    owner=gu,
                    uav=uav,
                    tx_seconds=tx,
                    compute_seconds=comp,
                    bits_moved=moved,
                    tolerance=task.tolerance,
                    completed=finished and task.status is TaskStatus.COMPLETED,
                )
            )
            report.uav_tx_seconds[uav] = report.uav_tx_seconds.get(uav, 0.0) + tx
            report.uav_bits_computed[uav] = report.uav_bits_computed.get(uav, 0.0) + moved
    return report


def expire_and_rotate(queues: dict[int, GuQueue], slot: int) -> list[Task]:
    """Expire every unfinished task whose deadline slot has passed."""
    expired: list[Task] = []
    for queue in queues.values():
        keep: list[Task] = []
        for task in queue.tasks:
            if slot > task.deadline_slot and task.bits_remaining > 0.0:
                task.status = TaskStatus.EXPIRED
                task.finish_slot = slot
                expired.append(task)
            else:
                keep.append(task)
        queue.tasks = keep
    return expired


def completion_rate(log: TaskLog) -> float:
    """Completed tasks over generated tasks, percent; 100 when none generated."""
    counts = log.counts()
    if counts["generated"] == 0:
        return 100.0
    return 100.0 * counts["completed"] / counts["generated"]


def dc_rate(buffers: dict[int, DcBuffer] | list[DcBuffer]) -> float:
    """Collected bits over generated bits, percent; 100 when nothing generated."""
    items = list(buffers.values()) if isinstance(buffers, dict) else list(buffers)
    generated = sum(b.generated_total for b in items)
    collected = sum(b.collected_total for b in items)
    if generated <= 0.0:
        return 100.0
    return 100.0 * collected / generated
