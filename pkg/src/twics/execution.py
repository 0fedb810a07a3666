"""Running an embedded trial over recorded assignments.

Offered-arm patients accept iff their latent draw ``u_accept`` is below
``pi_accept``; accepters receive the alternative (``d = 1``, ``y = y1``),
refusers and controls stay on standard of care (``d = 0``, ``y = y0``).
Refusers' outcomes equal ``y0`` exactly, so the exclusion restriction holds
by construction.

In the biomarker-gated variant the offered arm is first asked consent for a
test; only test-positive consenters receive the treatment offer, which they
accept under the same latent-draw rule. Controls are never tested.

Two violation knobs act on controls only: contamination (a control obtains
the alternative) and refusal of standard care. The latter is logged and, by
default, leaves the outcome at ``y0``.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterator, Sequence

import numpy as np

from . import _seeding
from .cohort import CohortRegistry, EligibilityCriteria, Stage3
from .errors import ConfigurationError, UndefinedEstimateError
from .population import CONTINUOUS, Population
from .randomization import Allocator, PermutedBlocks, SamplingApproach, SingleBatch

STANDARD = "standard"
BIOMARKER_GATED = "biomarker_gated"

UNDEFINED = -1  # int8 marker for undefined boolean cells


class EventKind(str, enum.Enum):
    REFUSAL = "Refusal"
    CONTAMINATION = "Contamination"
    CONTROL_SOC_REFUSAL = "ControlSOCRefusal"


_EVENT_CODES = list(EventKind)


@dataclass(frozen=True)
class TrialDesign:
    trial_id: str = "trial"
    criteria: EligibilityCriteria = field(default_factory=EligibilityCriteria)
    approach: SamplingApproach = field(default_factory=SingleBatch)
    allocator: Allocator = field(default_factory=PermutedBlocks)
    variant: str = STANDARD
    target_n: int = 100
    endpoint_tick: int = 0
    control_contamination_prob: float = 0.0
    control_soc_refusal_prob: float = 0.0
    control_soc_refusal_outcome: float | None = None
    testing_consent_prob: float = 1.0

    def __post_init__(self):
        if self.variant not in (STANDARD, BIOMARKER_GATED):
            raise ConfigurationError(f"unknown design variant {self.variant!r}")
        for name in ("control_contamination_prob", "control_soc_refusal_prob", "testing_consent_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        if self.target_n < 1:
            raise ConfigurationError("target_n must be >= 1")

    @property
    def knobs_off(self) -> bool:
        return self.control_contamination_prob == 0 and self.control_soc_refusal_prob == 0


@dataclass(frozen=True)
class TrialRow:
    id: int
    z: int
    offered: bool
    stage3: Stage3
    a: bool | None
    tested: bool
    biomarker_pos: bool | None
    d: int
    y: float
    x: tuple[float, ...]
    contaminated: bool = False


def _opt(v: int) -> bool | None:
    return None if v == UNDEFINED else bool(v)


@dataclass(eq=False)
class TrialData:
    """Column-oriented realised trial dataset.

    ``a`` and ``biomarker_pos`` are int8 columns with ``-1`` where the value
    is undefined (no offer / not tested).
    """

    ids: np.ndarray
    z: np.ndarray
    offered: np.ndarray
    stage3: np.ndarray
    a: np.ndarray
    tested: np.ndarray
    biomarker_pos: np.ndarray
    d: np.ndarray
    y: np.ndarray
    x: np.ndarray
    contaminated: np.ndarray
    covariate_names: tuple[str, ...] = ()
    outcome_kind: str = CONTINUOUS
    trial_id: str = "trial"

    _COLUMNS = ("ids", "z", "offered", "stage3", "a", "tested", "biomarker_pos", "d", "y", "x", "contaminated")

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[TrialRow]:
        return iter(self.rows())

    def rows(self) -> list[TrialRow]:
        return [
            TrialRow(
                id=int(self.ids[i]),
                z=int(self.z[i]),
                offered=bool(self.offered[i]),
                stage3=Stage3(int(self.stage3[i])),
                a=_opt(int(self.a[i])),
                tested=bool(self.tested[i]),
                biomarker_pos=_opt(int(self.biomarker_pos[i])),
                d=int(self.d[i]),
                y=float(self.y[i]),
                x=tuple(float(v) for v in self.x[i]),
                contaminated=bool(self.contaminated[i]),
            )
            for i in range(len(self))
        ]

    def take(self, idx) -> "TrialData":
        cols = {c: getattr(self, c)[idx] for c in self._COLUMNS}
        return TrialData(**cols, covariate_names=self.covariate_names, outcome_kind=self.outcome_kind, trial_id=self.trial_id)

    def with_outcome(self, y: np.ndarray) -> "TrialData":
        cols = {c: getattr(self, c) for c in self._COLUMNS}
        cols["y"] = np.asarray(y, dtype=float)
        return TrialData(**cols, covariate_names=self.covariate_names, outcome_kind=self.outcome_kind, trial_id=self.trial_id)

    def covariate(self, name: str) -> np.ndarray:
        if name not in self.covariate_names:
            raise KeyError(f"unknown covariate {name!r}")
        return self.x[:, self.covariate_names.index(name)]

    @property
    def accepted(self) -> np.ndarray:
        return self.a == 1

    @property
    def refused(self) -> np.ndarray:
        return self.a == 0

    @classmethod
    def from_rows(
        cls,
        rows: Sequence[TrialRow],
        covariate_names: Sequence[str] | None = None,
        outcome_kind: str = CONTINUOUS,
        trial_id: str = "trial",
    ) -> "TrialData":
        k = len(rows[0].x) if rows else 0

        def opt(v):
            return UNDEFINED if v is None else int(v)

        return cls(
            ids=np.array([r.id for r in rows], dtype=np.int64),
            z=np.array([r.z for r in rows], dtype=np.int8),
            offered=np.array([r.offered for r in rows], dtype=bool),
            stage3=np.array([int(r.stage3) for r in rows], dtype=np.int8),
            a=np.array([opt(r.a) for r in rows], dtype=np.int8),
            tested=np.array([r.tested for r in rows], dtype=bool),
            biomarker_pos=np.array([opt(r.biomarker_pos) for r in rows], dtype=np.int8),
            d=np.array([r.d for r in rows], dtype=np.int8),
            y=np.array([r.y for r in rows], dtype=float),
            x=np.array([r.x for r in rows], dtype=float).reshape(len(rows), k),
            contaminated=np.array([r.contaminated for r in rows], dtype=bool),
            covariate_names=tuple(covariate_names or (f"x{j + 1}" for j in range(k))),
            outcome_kind=outcome_kind,
            trial_id=trial_id,
        )

    def to_csv(self, dest: str | IO[str] | None = None) -> str | None:
        """Write ``id,z,offered,a,tested,biomarker_pos,d,y,x1..xk``.

        Undefined cells are empty. Returns the text when ``dest`` is None.
        """
        k = self.x.shape[1]
        buf = io.StringIO() if dest is None else None
        fh = buf if buf is not None else (open(dest, "w", newline="", encoding="utf-8") if isinstance(dest, str) else dest)
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "z", "offered", "a", "tested", "biomarker_pos", "d", "y"] + [f"x{j + 1}" for j in range(k)])
            for i in range(len(self)):
                a, bm = int(self.a[i]), int(self.biomarker_pos[i])
                w.writerow(
                    [int(self.ids[i]), int(self.z[i]), int(self.offered[i]), "" if a == UNDEFINED else a,
                     int(self.tested[i]), "" if bm == UNDEFINED else bm, int(self.d[i]), repr(float(self.y[i]))]
                    + [repr(float(v)) for v in self.x[i]]
                )
        finally:
            if isinstance(dest, str):
                fh.close()
        return buf.getvalue() if buf is not None else None


@dataclass(eq=False)
class IntercurrentEventLog:
    patient_ids: np.ndarray
    kinds: np.ndarray  # index into EventKind
    ticks: np.ndarray

    def __len__(self) -> int:
        return len(self.patient_ids)

    def __iter__(self) -> Iterator[tuple[int, EventKind, int]]:
        for pid, k, t in zip(self.patient_ids.tolist(), self.kinds.tolist(), self.ticks.tolist()):
            yield pid, _EVENT_CODES[k], t

    def count(self, kind: EventKind) -> int:
        return int(np.sum(self.kinds == _EVENT_CODES.index(kind)))

    def ids_of(self, kind: EventKind) -> np.ndarray:
        return self.patient_ids[self.kinds == _EVENT_CODES.index(kind)]


def validate_design(design: TrialDesign, population: Population) -> None:
    if design.variant == BIOMARKER_GATED and population.biomarker is None:
        raise ConfigurationError("biomarker-gated design requires a population with biomarker status")


def execute_trial(
    design: TrialDesign,
    registry: CohortRegistry,
    population: Population,
    seed: int,
) -> tuple[TrialData, IntercurrentEventLog]:
    """Realise offers, consent, exposure and outcomes for ``design.trial_id``.

    Assignments are read from ``registry.history``. The registry is not
    modified; call :func:`record_consent` to write stage-3 states back.
    """
    validate_design(design, population)
    assigned = registry.history.get(design.trial_id)
    if assigned is None:
        raise ConfigurationError(f"no assignments recorded for trial {design.trial_id!r}")
    rng = _seeding.rng(seed)
    n = len(assigned)
    idx = population.index_of(assigned.ids)
    z = assigned.arm.astype(np.int8)
    arm1 = z == 1
    u = population.u_accept[idx]
    pi = population.pi_accept[idx]
    latent_accept = u < pi

    # row-major draws: extending the assignment list leaves earlier rows unchanged
    consent_draw, contam_draw, socref_draw = rng.random((n, 3)).T

    stage3 = np.full(n, Stage3.NOT_OFFERED, dtype=np.int8)
    tested = np.zeros(n, dtype=bool)
    bm_pos = np.full(n, UNDEFINED, dtype=np.int8)
    a = np.full(n, UNDEFINED, dtype=np.int8)
    refusal = np.zeros(n, dtype=bool)

    if design.variant == STANDARD:
        offered = arm1
        accept = offered & latent_accept
        stage3[offered] = np.where(accept[offered], Stage3.CONSENTED, Stage3.REFUSED)
        a[offered] = accept[offered]
        refusal = offered & ~accept
    else:
        test_consent = arm1 & (consent_draw < design.testing_consent_prob)
        stage3[arm1] = np.where(test_consent[arm1], Stage3.CONSENTED, Stage3.REFUSED)
        tested = test_consent
        positive = population.biomarker[idx]
        bm_pos[tested] = positive[tested]
        offered = tested & positive
        accept = offered & latent_accept
        a[offered] = accept[offered]
        refusal = (arm1 & ~test_consent) | (offered & ~accept)

    control = ~arm1
    contaminated = control & (contam_draw < design.control_contamination_prob)
    soc_refusal = control & ~contaminated & (socref_draw < design.control_soc_refusal_prob)

    d = (accept | contaminated).astype(np.int8)
    y = np.where(d == 1, population.y1[idx], population.y0[idx])
    if design.control_soc_refusal_outcome is not None:
        y = np.where(soc_refusal, design.control_soc_refusal_outcome, y)

    ev_ids, ev_kinds, ev_ticks = [], [], []
    for mask, kind in ((refusal, 0), (contaminated, 1), (soc_refusal, 2)):
        ev_ids.append(assigned.ids[mask])
        ev_kinds.append(np.full(int(mask.sum()), kind, dtype=np.int8))
        ev_ticks.append(assigned.time[mask])
    log = IntercurrentEventLog(np.concatenate(ev_ids), np.concatenate(ev_kinds), np.concatenate(ev_ticks))

    data = TrialData(
        ids=assigned.ids.copy(),
        z=z,
        offered=offered,
        stage3=stage3,
        a=a,
        tested=tested,
        biomarker_pos=bm_pos,
        d=d,
        y=y.astype(float),
        x=population.x[idx],
        contaminated=contaminated,
        covariate_names=population.covariate_names,
        outcome_kind=population.outcome_kind,
        trial_id=design.trial_id,
    )
    return data, log


def record_consent(registry: CohortRegistry, data: TrialData) -> None:
    """Write the realised stage-3 consent states into the registry."""
    registry.set_stage3(data.trial_id, data.ids, data.stage3)


@dataclass(frozen=True)
class RefusalRate:
    rate: float
    numerator: int
    denominator: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    def __iter__(self):
        return iter((self.rate, self.numerator, self.denominator))


def observed_refusal_rate(rows: TrialData | Sequence[TrialRow]) -> RefusalRate:
    """Share of patients offered the alternative who refused it."""
    data = rows if isinstance(rows, TrialData) else TrialData.from_rows(rows)
    denom = int(data.offered.sum())
    if denom == 0:
        raise UndefinedEstimateError("no offered patients; refusal rate undefined")
    num = int((data.offered & data.refused).sum())
    return RefusalRate(num / denom, num, denom)
