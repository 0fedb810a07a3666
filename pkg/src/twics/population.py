"""Synthetic cohort populations with both potential outcomes materialised.

Each patient carries covariates ``x``, potential outcomes ``y0`` (standard of
care) and ``y1`` (alternative treatment), a latent probability ``pi_accept``
of accepting the alternative if it is offered, and one latent uniform draw
``u_accept``. A patient accepts an offer iff ``u_accept < pi_accept``; the
draw is fixed at generation time, so "complier" is an attribute of the
patient and the complier effect can be computed exactly.

Acceptance follows a logistic model on the covariates. That parametric form
is a modelling choice of this package and is reported as such.
"""

from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np
from scipy import optimize, special

from . import _seeding
from .errors import CalibrationError, ModelMisspecificationError, UndefinedEstimateError

CONTINUOUS = "continuous"
BINARY = "binary"

ACCEPTANCE_MODEL_NOTE = "acceptance follows a logistic model in the covariates (modelling assumption)"


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError(f"Normal sd must be > 0, got {self.sd}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.sd, n)


@dataclass(frozen=True)
class Bernoulli:
    p: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"Bernoulli p must lie in [0, 1], got {self.p}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return (rng.random(n) < self.p).astype(float)


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"Uniform needs lo < hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, n)


Distribution = Union[Normal, Bernoulli, Uniform]


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    distribution: Distribution = field(default_factory=Normal)

    def __post_init__(self):
        if not self.name or not self.name.isidentifier():
            raise ValueError(f"covariate name must be an identifier, got {self.name!r}")


@dataclass(frozen=True)
class OutcomeModel:
    """Outcome model on the additive (mean or risk difference) scale.

    ``y0 = control_level + coefs @ x (+ noise)`` and
    ``y1 = y0 + treatment_effect + heterogeneity @ x``. Binary outcomes
    draw both potential outcomes from one shared uniform so that
    ``y1 >= y0`` whenever the individual risk difference is positive.
    """

    kind: str = CONTINUOUS
    control_level: float = 0.0
    treatment_effect: float = 0.0
    covariate_coefs: tuple[float, ...] = ()
    noise_sd: float = 1.0
    effect_heterogeneity: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"outcome kind must be {CONTINUOUS!r} or {BINARY!r}")
        if self.kind == CONTINUOUS and not self.noise_sd > 0:
            raise ValueError("noise_sd must be > 0")
        if self.kind == BINARY and not 0.0 <= self.control_level <= 1.0:
            raise ValueError("binary control_level is a risk and must lie in [0, 1]")


@dataclass(frozen=True)
class AcceptanceModel:
    intercept: float = 0.0
    covariate_coefs: tuple[float, ...] = ()
    target_marginal_rate: float | None = None

    def __post_init__(self):
        t = self.target_marginal_rate
        if t is not None and not 0.0 < t <= 1.0:
            raise ValueError(f"target_marginal_rate must lie in (0, 1], got {t}")
        if not all(math.isfinite(c) for c in self.covariate_coefs):
            raise ValueError("acceptance covariate coefficients must be finite")

    @classmethod
    def constant(cls, rate: float) -> "AcceptanceModel":
        """Covariate-free model whose acceptance probability is ``rate``."""
        return cls(intercept=_logit(rate), target_marginal_rate=rate)


@dataclass(frozen=True)
class BiomarkerModel:
    prevalence: float
    covariate_coefs: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.prevalence <= 1.0:
            raise ValueError(f"prevalence must lie in [0, 1], got {self.prevalence}")


@dataclass(frozen=True)
class PatientRecord:
    id: int
    x: tuple[float, ...]
    y0: float
    y1: float
    pi_accept: float
    u_accept: float
    biomarker: bool | None = None

    @property
    def complier(self) -> bool:
        return self.u_accept < self.pi_accept


@dataclass(eq=False)
class Population:
    """Column-oriented patient table; indexing yields :class:`PatientRecord`."""

    ids: np.ndarray
    x: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    pi_accept: np.ndarray
    u_accept: np.ndarray
    covariate_names: tuple[str, ...] = ()
    biomarker: np.ndarray | None = None
    outcome_kind: str = CONTINUOUS

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> PatientRecord:
        return PatientRecord(
            id=int(self.ids[i]),
            x=tuple(float(v) for v in self.x[i]),
            y0=float(self.y0[i]),
            y1=float(self.y1[i]),
            pi_accept=float(self.pi_accept[i]),
            u_accept=float(self.u_accept[i]),
            biomarker=None if self.biomarker is None else bool(self.biomarker[i]),
        )

    def __iter__(self) -> Iterator[PatientRecord]:
        return (self[i] for i in range(len(self)))

    def records(self) -> list[PatientRecord]:
        return list(self)

    @property
    def complier(self) -> np.ndarray:
        return self.u_accept < self.pi_accept

    def covariate(self, name: str) -> np.ndarray:
        return self.x[:, self.covariate_names.index(name)]

    def index_of(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self.ids, ids)
        pos = np.clip(pos, 0, max(len(self.ids) - 1, 0))
        if len(ids) and (len(self.ids) == 0 or np.any(self.ids[pos] != ids)):
            raise KeyError("patient ids not present in population")
        return pos

    def take(self, idx) -> "Population":
        idx = np.asarray(idx)
        return Population(
            ids=self.ids[idx],
            x=self.x[idx],
            y0=self.y0[idx],
            y1=self.y1[idx],
            pi_accept=self.pi_accept[idx],
            u_accept=self.u_accept[idx],
            covariate_names=self.covariate_names,
            biomarker=None if self.biomarker is None else self.biomarker[idx],
            outcome_kind=self.outcome_kind,
        )

    @classmethod
    def from_records(
        cls,
        records: Sequence[PatientRecord],
        covariate_names: Sequence[str] | None = None,
        outcome_kind: str = CONTINUOUS,
    ) -> "Population":
        records = sorted(records, key=lambda r: r.id)
        k = len(records[0].x) if records else 0
        has_bm = bool(records) and records[0].biomarker is not None
        return cls(
            ids=np.array([r.id for r in records], dtype=np.int64),
            x=np.array([r.x for r in records], dtype=float).reshape(len(records), k),
            y0=np.array([r.y0 for r in records], dtype=float),
            y1=np.array([r.y1 for r in records], dtype=float),
            pi_accept=np.array([r.pi_accept for r in records], dtype=float),
            u_accept=np.array([r.u_accept for r in records], dtype=float),
            covariate_names=tuple(covariate_names or (f"x{j + 1}" for j in range(k))),
            biomarker=np.array([bool(r.biomarker) for r in records]) if has_bm else None,
            outcome_kind=outcome_kind,
        )


@dataclass(frozen=True)
class TrueEstimands:
    ace_received: float
    ace_offered: float
    cace: float
    acceptance_rate: float
    n: int
    n_compliers: int


def _logit(p: float) -> float:
    return float(special.logit(p))


def _coef_vector(coefs: Sequence[float], k: int, what: str) -> np.ndarray:
    if len(coefs) == 0:
        return np.zeros(k)
    if len(coefs) != k:
        raise ValueError(f"{what} has {len(coefs)} coefficients for {k} covariates")
    return np.asarray(coefs, dtype=float)


def _draw_covariates(covariates: Sequence[CovariateSpec], rng: np.random.Generator, n: int) -> np.ndarray:
    x = np.empty((n, len(covariates)))
    for j, spec in enumerate(covariates):
        x[:, j] = spec.distribution.sample(rng, n)
    return x


def calibrate_acceptance_intercept(
    acceptance: AcceptanceModel,
    covariates: Sequence[CovariateSpec],
    target_rate: float,
    seed: int,
    n_draws: int = 200_000,
) -> float:
    """Find the intercept whose marginal acceptance rate equals ``target_rate``.

    Without covariate effects the answer is the closed-form logit. Otherwise
    the marginal rate is estimated on ``n_draws`` fixed covariate draws
    (common random numbers keep it monotone in the intercept) and the root
    is bracketed and solved with Brent's method.
    """
    if not 0.0 < target_rate < 1.0:
        raise ValueError(f"target_rate must lie in (0, 1), got {target_rate}")
    gamma = _coef_vector(acceptance.covariate_coefs, len(covariates), "acceptance model")
    if not np.any(gamma):
        return _logit(target_rate)

    x = _draw_covariates(covariates, _seeding.rng(seed, _seeding.CALIBRATION), n_draws)
    lp = x @ gamma

    def excess(b: float) -> float:
        return float(special.expit(b + lp).mean()) - target_rate

    lo, hi = -60.0, 60.0
    while excess(lo) > 0 and lo > -1e4:
        lo *= 4
    while excess(hi) < 0 and hi < 1e4:
        hi *= 4
    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo > 0 or f_hi < 0:
        raise CalibrationError(
            f"target acceptance {target_rate} unattainable; achievable range "
            f"[{f_lo + target_rate:.6g}, {f_hi + target_rate:.6g}]",
            bounds=(f_lo + target_rate, f_hi + target_rate),
        )
    return float(optimize.brentq(excess, lo, hi, xtol=1e-12))


def resolve_acceptance(
    acceptance: AcceptanceModel, covariates: Sequence[CovariateSpec], seed: int
) -> AcceptanceModel:
    """Return a copy whose intercept realises ``target_marginal_rate`` (if set)."""
    t = acceptance.target_marginal_rate
    if t is None:
        return acceptance
    if t == 1.0:
        intercept = np.inf
    else:
        intercept = calibrate_acceptance_intercept(acceptance, covariates, t, seed)
    return AcceptanceModel(intercept=intercept, covariate_coefs=acceptance.covariate_coefs)


def generate_population(
    n: int,
    covariates: Sequence[CovariateSpec],
    outcome: OutcomeModel,
    acceptance: AcceptanceModel,
    biomarker: BiomarkerModel | None = None,
    seed: int = 0,
    *,
    first_id: int = 0,
) -> Population:
    """Draw ``n`` patients with ids ``first_id, first_id + 1, ...``.

    If ``acceptance.target_marginal_rate`` is set the intercept is
    calibrated first (see :func:`calibrate_acceptance_intercept`).

    Raises:
        ModelMisspecificationError: a binary outcome risk falls outside
            [0, 1] after the covariate contribution.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    _seeding.check_seed(seed)
    k = len(covariates)
    names = tuple(c.name for c in covariates)
    if len(set(names)) != k:
        raise ValueError("covariate names must be unique")
    beta = _coef_vector(outcome.covariate_coefs, k, "outcome model")
    delta = _coef_vector(outcome.effect_heterogeneity, k, "effect heterogeneity")
    acceptance = resolve_acceptance(acceptance, covariates, seed)
    gamma = _coef_vector(acceptance.covariate_coefs, k, "acceptance model")

    rng = _seeding.rng(seed, _seeding.POPULATION)
    x = _draw_covariates(covariates, rng, n)
    base = rng.random(n) if outcome.kind == BINARY else rng.standard_normal(n)
    u = rng.random(n)
    bm_draw = rng.random(n) if biomarker is not None else None

    mu0 = outcome.control_level + x @ beta
    effect = outcome.treatment_effect + x @ delta
    if outcome.kind == CONTINUOUS:
        y0 = mu0 + outcome.noise_sd * base
        y1 = y0 + effect
    else:
        p1 = mu0 + effect
        for risk, arm in ((mu0, "control"), (p1, "treated")):
            bad = np.flatnonzero((risk < 0.0) | (risk > 1.0))
            if bad.size:
                i = int(bad[0])
                raise ModelMisspecificationError(
                    f"{arm} risk {risk[i]:.4g} outside [0, 1] for patient index {i}", index=i
                )
        y0 = (base < mu0).astype(float)
        y1 = (base < p1).astype(float)

    pi = special.expit(acceptance.intercept + x @ gamma)
    if biomarker is not None:
        bcoef = _coef_vector(biomarker.covariate_coefs, k, "biomarker model")
        if np.any(bcoef):
            p_bm = special.expit(_logit(biomarker.prevalence) + x @ bcoef)
        else:
            p_bm = np.full(n, biomarker.prevalence)
        bm = bm_draw < p_bm
    else:
        bm = None

    return Population(
        ids=np.arange(first_id, first_id + n, dtype=np.int64),
        x=x,
        y0=y0,
        y1=y1,
        pi_accept=pi,
        u_accept=u,
        covariate_names=names,
        biomarker=bm,
        outcome_kind=outcome.kind,
    )


def compute_true_estimands(
    population: Population | Sequence[PatientRecord],
    *,
    gate: np.ndarray | None = None,
    gate_probability: float = 1.0,
) -> TrueEstimands:
    """Ground-truth estimands by direct summation over the population.

    ``gate`` restricts who can ever be exposed (e.g. biomarker-positive
    patients in a gated design); ``gate_probability`` is an independent
    pass-through probability such as consent to testing. Both default to
    the ungated design.
    """
    if not isinstance(population, Population):
        population = Population.from_records(population)
    if len(population) == 0:
        raise UndefinedEstimateError("cannot compute estimands of an empty population")
    tau = population.y1 - population.y0
    pi = population.pi_accept
    complier = population.complier
    if gate is not None:
        gate = np.asarray(gate, dtype=bool)
        pi = pi * gate * gate_probability
        complier = complier & gate
    n_c = int(complier.sum())
    if n_c == 0:
        raise UndefinedEstimateError("population has no compliers; CACE undefined")
    return TrueEstimands(
        ace_received=float(tau.mean()),
        ace_offered=float(np.mean(pi * tau)),
        cace=float(tau[complier].mean()),
        acceptance_rate=float(pi.mean()),
        n=len(population),
        n_compliers=n_c,
    )
