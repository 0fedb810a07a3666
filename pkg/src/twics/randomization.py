"""Arm allocation and the three cohort sampling approaches.

``SingleBatch`` randomises everyone eligible at one moment, ``MultipleBatch``
repeats that at several ticks (only never-assigned patients are eligible
again) and ``OnEntry`` randomises each patient at their enrolment tick.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from . import _seeding
from .cohort import CohortRegistry, EligibilityCriteria, screen_eligible
from .errors import DuplicateCandidateError, RecruitmentShortfallError


class Arm(enum.IntEnum):
    CONTROL = 0
    OFFERED = 1


@dataclass(frozen=True)
class SingleBatch:
    tick: int | None = None  # None: screen after all enrolment


@dataclass(frozen=True)
class MultipleBatch:
    batch_ticks: tuple[int, ...]
    per_batch_cap: int | None = None

    def __post_init__(self):
        ticks = tuple(int(t) for t in self.batch_ticks)
        if not ticks or any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ValueError("batch_ticks must be non-empty and strictly increasing")
        if self.per_batch_cap is not None and self.per_batch_cap < 1:
            raise ValueError("per_batch_cap must be >= 1")
        object.__setattr__(self, "batch_ticks", ticks)


@dataclass(frozen=True)
class OnEntry:
    pass


SamplingApproach = Union[SingleBatch, MultipleBatch, OnEntry]


@dataclass(frozen=True)
class SimpleBernoulli:
    p_offered: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p_offered < 1.0:
            raise ValueError("p_offered must lie in (0, 1)")


@dataclass(frozen=True)
class PermutedBlocks:
    block_size: int = 4

    def __post_init__(self):
        if self.block_size < 2 or self.block_size % 2:
            raise ValueError("block_size must be even and >= 2")


Allocator = Union[SimpleBernoulli, PermutedBlocks]


@dataclass(frozen=True)
class Assignment:
    patient_id: int
    arm: Arm
    batch_index: int
    time: int


@dataclass(eq=False)
class Assignments:
    """Column-oriented assignment list for one trial."""

    trial_id: str
    ids: np.ndarray
    arm: np.ndarray
    batch_index: np.ndarray
    time: np.ndarray
    complete: bool = True
    notes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Assignment]:
        for pid, arm, b, t in zip(self.ids.tolist(), self.arm.tolist(), self.batch_index.tolist(), self.time.tolist()):
            yield Assignment(pid, Arm(arm), b, t)

    @property
    def n_offered(self) -> int:
        return int(self.arm.sum())

    @property
    def n_control(self) -> int:
        return len(self) - self.n_offered

    def batch_sizes(self) -> list[int]:
        if not len(self):
            return []
        return np.bincount(self.batch_index).tolist()

    def concat(self, other: "Assignments") -> "Assignments":
        return Assignments(
            self.trial_id,
            np.concatenate([self.ids, other.ids]),
            np.concatenate([self.arm, other.arm]),
            np.concatenate([self.batch_index, other.batch_index]),
            np.concatenate([self.time, other.time]),
            complete=other.complete,
            notes=self.notes + other.notes,
        )

    @classmethod
    def empty(cls, trial_id: str) -> "Assignments":
        z = np.empty(0, dtype=np.int64)
        return cls(trial_id, z, z.astype(np.int8), z.copy(), z.copy())


def _permuted_block_arms(m: int, block_size: int, rng: np.random.Generator) -> np.ndarray:
    k = block_size // 2
    n_full, rest = divmod(m, block_size)
    block = np.repeat(np.array([1, 0], dtype=np.int8), k)
    full = rng.permuted(np.tile(block, (n_full, 1)), axis=1).ravel()
    if rest:
        # balanced partial block, the odd slot (if any) decided by a coin flip
        tail = np.repeat(np.array([1, 0], dtype=np.int8), rest // 2)
        if rest % 2:
            tail = np.append(tail, np.int8(rng.integers(2)))
        full = np.concatenate([full, rng.permutation(tail)])
    return full


def allocate(
    candidates: Sequence[int] | np.ndarray,
    allocator: Allocator,
    seed: int,
    *,
    trial_id: str = "",
    batch_index: int = 0,
    time: int | Sequence[int] = 0,
) -> Assignments:
    """Assign each candidate (in the given order) to an arm."""
    ids = np.asarray(candidates, dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise DuplicateCandidateError("candidate ids must be distinct")
    rng = _seeding.rng(seed)
    if isinstance(allocator, SimpleBernoulli):
        arm = (rng.random(len(ids)) < allocator.p_offered).astype(np.int8)
    elif isinstance(allocator, PermutedBlocks):
        arm = _permuted_block_arms(len(ids), allocator.block_size, rng)
    else:
        raise TypeError(f"unknown allocator {allocator!r}")
    return Assignments(
        trial_id,
        ids,
        arm,
        np.full(len(ids), batch_index, dtype=np.int64),
        np.broadcast_to(np.asarray(time, dtype=np.int64), ids.shape).copy(),
    )


def _invite(cands: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(cands) <= n:
        return cands
    return np.sort(rng.choice(cands, size=n, replace=False))


def run_sampling_plan(
    approach: SamplingApproach,
    registry: CohortRegistry,
    criteria: EligibilityCriteria,
    allocator: Allocator,
    trial_id: str,
    target_n: int,
    seed: int,
) -> Assignments:
    """Screen, invite and randomise patients for one trial; updates ``registry.history``.

    A closed cohort that cannot supply ``target_n`` under ``SingleBatch``
    raises :class:`RecruitmentShortfallError`. The other approaches return
    the partial result with ``complete=False`` (still recruiting).
    """
    if target_n < 1:
        raise ValueError("target_n must be >= 1")

    if isinstance(approach, SingleBatch):
        cands = screen_eligible(registry, criteria, trial_id, approach.tick)
        if len(cands) < target_n:
            raise RecruitmentShortfallError(
                f"trial {trial_id}: only {len(cands)} eligible patients for target {target_n}",
                achieved=len(cands),
                target=target_n,
            )
        invited = _invite(cands, target_n, _seeding.rng(seed, 0))
        tick = approach.tick if approach.tick is not None else int(registry.enrollment_times.max())
        out = allocate(invited, allocator, _seeding.derive_seed(seed, 1), trial_id=trial_id, time=tick)
        registry.record_assignments(out)
        return out

    if isinstance(approach, MultipleBatch):
        out = Assignments.empty(trial_id)
        remaining = target_n
        for b, tick in enumerate(approach.batch_ticks):
            if remaining == 0:
                break
            cands = screen_eligible(registry, criteria, trial_id, tick)
            take = remaining if approach.per_batch_cap is None else min(remaining, approach.per_batch_cap)
            invited = _invite(cands, take, _seeding.rng(seed, 0, b))
            if not len(invited):
                continue
            batch = allocate(
                invited, allocator, _seeding.derive_seed(seed, 1, b), trial_id=trial_id, batch_index=b, time=tick
            )
            registry.record_assignments(batch)
            out = out.concat(batch)
            remaining -= len(batch)
        out.complete = remaining == 0
        if not out.complete:
            out.notes.append(f"still recruiting: {len(out)} of {target_n} randomised")
        return out

    if isinstance(approach, OnEntry):
        cands = screen_eligible(registry, criteria, trial_id, None)
        pos = np.searchsorted(registry.ids, cands, sorter=np.argsort(registry.ids))
        times = registry.enrollment_times[np.argsort(registry.ids)[pos]]
        order = np.lexsort((cands, times))[:target_n]
        out = allocate(cands[order], allocator, _seeding.derive_seed(seed, 1), trial_id=trial_id, time=times[order])
        registry.record_assignments(out)
        out.complete = len(out) == target_n
        if not out.complete:
            out.notes.append(f"still recruiting: {len(out)} of {target_n} randomised")
        return out

    raise TypeError(f"unknown sampling approach {approach!r}")
