"""Cohort registry, staged informed consent and eligibility screening.

Consent is staged: stage 1 is cohort participation, stage 2 is broad
consent to future randomisation (decided once, at enrolment) and stage 3 is
trial-specific consent, asked only of patients randomised to be offered the
alternative treatment. Controls are never informed, so their stage 3 state
stays ``NOT_OFFERED``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ConsentViolationError, CriteriaValidationError, EnrollmentConflictError

if TYPE_CHECKING:
    from .population import PatientRecord, Population
    from .randomization import Assignments


class Stage3(enum.IntEnum):
    NOT_OFFERED = 0
    OFFERED = 1
    CONSENTED = 2
    REFUSED = 3


@dataclass(frozen=True)
class ConsentState:
    stage1_cohort: bool
    stage2_broad_randomization: bool
    stage3: dict[str, Stage3] = field(default_factory=dict)


@dataclass(frozen=True)
class MeasurementSchedule:
    measurement_ticks: tuple[int, ...]

    def __post_init__(self):
        ticks = tuple(int(t) for t in self.measurement_ticks)
        if not ticks:
            raise ValueError("measurement schedule must be non-empty")
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ValueError("measurement ticks must be strictly increasing")
        object.__setattr__(self, "measurement_ticks", ticks)


@dataclass(frozen=True)
class Predicate:
    """Inclusive interval (``low``/``high``) or equality test on one covariate."""

    covariate: str
    low: float | None = None
    high: float | None = None
    equals: float | None = None

    def mask(self, values: np.ndarray) -> np.ndarray:
        keep = np.ones(values.shape, dtype=bool)
        if self.low is not None:
            keep &= values >= self.low
        if self.high is not None:
            keep &= values <= self.high
        if self.equals is not None:
            keep &= values == self.equals
        return keep


@dataclass(frozen=True)
class EligibilityCriteria:
    predicates: tuple[Predicate, ...] = ()
    exclude_prior_trials: frozenset[str] = frozenset()
    require_broad_consent: bool = True

    def __post_init__(self):
        if not self.require_broad_consent:
            raise CriteriaValidationError("broad (stage-2) consent is always required for eligibility")
        object.__setattr__(self, "predicates", tuple(self.predicates))
        object.__setattr__(self, "exclude_prior_trials", frozenset(self.exclude_prior_trials))


@dataclass(frozen=True)
class Aligned:
    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Mismatch:
    unmatched: tuple[int, ...]

    def __bool__(self) -> bool:
        return False


class CohortRegistry:
    """Single-writer registry of enrolled cohort patients.

    Per-patient attributes live in growable lists and are exposed as cached
    numpy arrays so screening stays vectorised.
    """

    def __init__(self, covariate_names: Sequence[str] = ()):
        self.covariate_names = tuple(covariate_names)
        self._ids: list[int] = []
        self._times: list[int] = []
        self._stage2: list[bool] = []
        self._x: list[np.ndarray] = []
        self._pos: dict[int, int] = {}
        self._cache: dict[str, np.ndarray] = {}
        self.history: dict[str, "Assignments"] = {}
        self._stage3: dict[str, dict[int, Stage3]] = {}

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, patient_id: int) -> bool:
        return int(patient_id) in self._pos

    def _array(self, key: str) -> np.ndarray:
        if key not in self._cache:
            if key == "x":
                k = len(self.covariate_names)
                arr = np.vstack(self._x) if self._x else np.empty((0, k))
            else:
                arr = np.asarray(getattr(self, "_" + key), dtype={"ids": np.int64, "times": np.int64, "stage2": bool}[key])
            self._cache[key] = arr
        return self._cache[key]

    @property
    def ids(self) -> np.ndarray:
        return self._array("ids")

    @property
    def enrollment_times(self) -> np.ndarray:
        return self._array("times")

    @property
    def stage2(self) -> np.ndarray:
        return self._array("stage2")

    @property
    def x(self) -> np.ndarray:
        return self._array("x")

    def enrollment_time(self, patient_id: int) -> int:
        return self._times[self._pos[int(patient_id)]]

    def consent_state(self, patient_id: int) -> ConsentState:
        pid = int(patient_id)
        i = self._pos[pid]
        stage3 = {t: states.get(pid, Stage3.NOT_OFFERED) for t, states in self._stage3.items()}
        return ConsentState(True, self._stage2[i], stage3)

    def stage3(self, trial_id: str, patient_id: int) -> Stage3:
        return self._stage3.get(trial_id, {}).get(int(patient_id), Stage3.NOT_OFFERED)

    def arm_of(self, trial_id: str, patient_id: int) -> int | None:
        a = self.history.get(trial_id)
        if a is None:
            return None
        hit = np.flatnonzero(a.ids == int(patient_id))
        return int(a.arm[hit[0]]) if hit.size else None

    def participated(self, trial_ids: Iterable[str]) -> np.ndarray:
        mask = np.zeros(len(self), dtype=bool)
        for t in trial_ids:
            a = self.history.get(t)
            if a is not None and len(a):
                mask |= np.isin(self.ids, a.ids)
        return mask

    def _add(self, patient_id: int, x: np.ndarray, broad_consent: bool, time: int) -> None:
        pid = int(patient_id)
        if pid in self._pos:
            raise EnrollmentConflictError(f"patient {pid} is already enrolled")
        self._pos[pid] = len(self._ids)
        self._ids.append(pid)
        self._times.append(int(time))
        self._stage2.append(bool(broad_consent))
        self._x.append(np.asarray(x, dtype=float).reshape(1, -1))

    def record_assignments(self, assignments: "Assignments") -> None:
        trial = assignments.trial_id
        if len(np.unique(assignments.ids)) != len(assignments):
            raise ConsentViolationError(f"duplicate patient in assignments for trial {trial}")
        prior = self.history.get(trial)
        if prior is not None and np.isin(assignments.ids, prior.ids).any():
            raise ConsentViolationError(f"patient randomised twice in trial {trial}")
        pos = np.array([self._pos[i] for i in assignments.ids.tolist()], dtype=np.int64)
        if len(pos) and not self.stage2[pos].all():
            raise ConsentViolationError("cannot randomise a patient without broad (stage-2) consent")
        self.history[trial] = assignments if prior is None else prior.concat(assignments)

    def set_stage3(self, trial_id: str, ids: Sequence[int], states: Sequence[int]) -> None:
        """Record trial-specific consent outcomes, enforcing the consent invariants."""
        ids = np.asarray(ids, dtype=np.int64)
        states = np.asarray(states, dtype=np.int64)
        active = states != Stage3.NOT_OFFERED
        ids, states = ids[active], states[active]
        if not len(ids):
            return
        pos = np.array([self._pos[pid] for pid in ids.tolist()], dtype=np.int64)
        if not self.stage2[pos].all():
            raise ConsentViolationError("stage-3 consent recorded for a patient without stage-2 consent")
        assigned = self.history.get(trial_id)
        if assigned is None:
            raise ConsentViolationError(f"no randomisation recorded for trial {trial_id}")
        order = np.argsort(assigned.ids, kind="stable")
        hit = np.clip(np.searchsorted(assigned.ids, ids, sorter=order), 0, len(order) - 1)
        hit = order[hit]
        if np.any(assigned.ids[hit] != ids) or np.any(assigned.arm[hit] != 1):
            raise ConsentViolationError(f"stage-3 consent recorded outside the offered arm of {trial_id}")
        book = self._stage3.setdefault(trial_id, {})
        final = (Stage3.CONSENTED, Stage3.REFUSED)
        for pid, state in zip(ids.tolist(), states.tolist()):
            old = book.get(pid, Stage3.NOT_OFFERED)
            if old in final and state != old:
                raise ConsentViolationError(f"stage-3 consent of patient {pid} cannot be reverted")
            book[pid] = Stage3(state)

    def invalidate(self) -> None:
        self._cache.clear()


def enroll_patient(
    registry: CohortRegistry, patient: "PatientRecord", broad_consent: bool, time: int
) -> CohortRegistry:
    """Enrol one patient; stage 1 is implied and stage 2 is fixed now."""
    registry._add(patient.id, np.asarray(patient.x, dtype=float), broad_consent, time)
    registry.invalidate()
    return registry


def enroll_population(
    registry: CohortRegistry,
    population: "Population",
    broad_consent: Sequence[bool] | np.ndarray,
    times: Sequence[int] | np.ndarray,
) -> CohortRegistry:
    broad_consent = np.broadcast_to(np.asarray(broad_consent, dtype=bool), (len(population),))
    times = np.broadcast_to(np.asarray(times, dtype=np.int64), (len(population),))
    if not registry.covariate_names and population.covariate_names:
        registry.covariate_names = population.covariate_names
    dup = [int(i) for i in population.ids if int(i) in registry._pos]
    if dup:
        raise EnrollmentConflictError(f"patient {dup[0]} is already enrolled")
    start = len(registry._ids)
    ids = population.ids.tolist()
    registry._ids.extend(ids)
    registry._times.extend(times.tolist())
    registry._stage2.extend(broad_consent.tolist())
    registry._x.append(population.x)
    registry._pos.update({pid: start + j for j, pid in enumerate(ids)})
    registry.invalidate()
    return registry


def screen_eligible(
    registry: CohortRegistry,
    criteria: EligibilityCriteria,
    trial_id: str,
    time: int | None = None,
) -> np.ndarray:
    """Ids (sorted) of enrolled patients eligible for ``trial_id`` at ``time``."""
    names = registry.covariate_names
    for p in criteria.predicates:
        if p.covariate not in names:
            raise CriteriaValidationError(f"unknown covariate {p.covariate!r} in eligibility predicate")
    if len(registry) == 0:
        return np.empty(0, dtype=np.int64)
    keep = registry.stage2.copy()
    if time is not None:
        keep &= registry.enrollment_times <= time
    x = registry.x
    for p in criteria.predicates:
        keep &= p.mask(x[:, names.index(p.covariate)])
    keep &= ~registry.participated([trial_id])
    if criteria.exclude_prior_trials:
        keep &= ~registry.participated(criteria.exclude_prior_trials)
    return np.sort(registry.ids[keep])


def check_schedule_alignment(
    endpoint_ticks: Sequence[int], schedule: MeasurementSchedule, tolerance: int = 0
) -> Aligned | Mismatch:
    """Check that every trial endpoint falls on a routine cohort measurement."""
    if len(endpoint_ticks) == 0:
        raise ValueError("endpoint_ticks must be non-empty")
    sched = np.asarray(schedule.measurement_ticks)
    unmatched = tuple(int(t) for t in endpoint_ticks if np.min(np.abs(sched - t)) > tolerance)
    return Mismatch(unmatched) if unmatched else Aligned()
