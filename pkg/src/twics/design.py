"""Sample size, power and re-estimation when the offer is diluted by refusal.

The randomised contrast estimates the effect of the *offer*. With an
acceptance proportion ``q`` and a homogeneous effect ``delta`` among those
treated, the offered-arm effect is ``q * delta``, so a continuous-outcome
trial needs ``1 / q**2`` times the patients of a fully compliant one.
Binary outcomes are diluted on the risk scale:
``p1' = q * p1 + (1 - q) * p0``.

All formulas use the normal approximation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import _seeding
from .errors import CapacityError, EstimationError, InfeasibleDesignError, InstabilityError, UndefinedEstimateError
from .estimators import EstimateResult, Estimand, estimate_itt, estimate_per_protocol, run_estimator
from .execution import TrialData, TrialDesign, TrialRow, observed_refusal_rate
from .population import Population, generate_population
from .randomization import SingleBatch
from .simulate import CohortSpec, PopulationSpec, enroll_cohort, run_trial, simulate_replication

NONINFERIORITY_CAVEAT = (
    "Caution: refusal in the offered arm dilutes the intention-to-treat contrast towards zero, "
    "which makes a non-inferiority claim easier to reach (anti-conservative); "
    "read the per-protocol decision alongside it."
)


@dataclass(frozen=True)
class DesignAssumptions:
    """Planning inputs.

    Continuous outcomes use ``effect`` and ``sd``; binary outcomes use the
    control risk ``p0`` and the treated risk ``p1``. ``alpha`` is two-sided.
    """

    effect: float | None = None
    sd: float = 1.0
    p0: float | None = None
    p1: float | None = None
    alpha: float = 0.05
    power: float = 0.8
    planned_acceptance: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.5 < self.power < 1:
            raise ValueError("power must lie in (0.5, 1)")
        if not 0 <= self.planned_acceptance <= 1:
            raise ValueError("planned_acceptance must lie in (0, 1]")
        if self.binary:
            if not (0 < self.p0 < 1 and self.p1 is not None and 0 < self.p1 < 1) or self.p0 == self.p1:
                raise ValueError("binary design needs 0 < p0, p1 < 1 and p0 != p1")
        elif self.effect is None or self.effect == 0 or not self.sd > 0:
            raise ValueError("continuous design needs a non-zero effect and sd > 0")

    @property
    def binary(self) -> bool:
        return self.p0 is not None


@dataclass
class SampleSize:
    n_per_arm: int
    inflation_factor: float
    inputs: dict
    warnings: list[str] = field(default_factory=list)

    def __int__(self) -> int:
        return self.n_per_arm

    def to_dict(self) -> dict:
        return {
            "n_per_arm": self.n_per_arm,
            "inflation_factor": self.inflation_factor,
            "inputs": self.inputs,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def _z_sum(a: DesignAssumptions) -> tuple[float, float]:
    return float(stats.norm.ppf(1 - a.alpha / 2)), float(stats.norm.ppf(a.power))


def _ceil(x: float) -> int:
    # guard against 63.000000000001 style round-off pushing ceil up by one
    return int(math.ceil(x - 1e-9))


def _raw_continuous(a: DesignAssumptions, acceptance: float) -> float:
    za, zb = _z_sum(a)
    return 2 * a.sd**2 * (za + zb) ** 2 / (acceptance * a.effect) ** 2


def _raw_binary(a: DesignAssumptions, acceptance: float) -> float:
    za, zb = _z_sum(a)
    p0 = a.p0
    p1 = acceptance * a.p1 + (1 - acceptance) * p0
    if abs(p1 - p0) < 1e-12:
        raise InfeasibleDesignError("diluted treated risk equals the control risk; no detectable effect")
    pbar = (p0 + p1) / 2
    num = za * math.sqrt(2 * pbar * (1 - pbar)) + zb * math.sqrt(p0 * (1 - p0) + p1 * (1 - p1))
    return num**2 / (p1 - p0) ** 2


def _sample_size(a: DesignAssumptions, acceptance: float) -> SampleSize:
    if acceptance <= 0:
        raise InfeasibleDesignError("acceptance must be > 0; nobody would receive the treatment")
    raw = _raw_binary if a.binary else _raw_continuous
    n = _ceil(raw(a, acceptance))
    n_full = _ceil(raw(a, 1.0))
    inputs = {k: v for k, v in asdict(a).items() if v is not None}
    inputs["acceptance_used"] = acceptance
    if a.binary:
        inputs["diluted_p1"] = acceptance * a.p1 + (1 - acceptance) * a.p0
    return SampleSize(n, n / n_full, inputs)


def sample_size_continuous(a: DesignAssumptions) -> SampleSize:
    """Per-arm n for a difference in means at the diluted effect ``q * delta``."""
    if a.binary:
        raise ValueError("assumptions describe a binary outcome")
    return _sample_size(a, a.planned_acceptance)


def sample_size_binary(a: DesignAssumptions) -> SampleSize:
    """Per-arm n for two proportions (pooled-variance formula) at the diluted risk."""
    if not a.binary:
        raise ValueError("assumptions describe a continuous outcome")
    return _sample_size(a, a.planned_acceptance)


def sample_size(a: DesignAssumptions) -> SampleSize:
    return _sample_size(a, a.planned_acceptance)


# --- Monte Carlo power ----------------------------------------------------


@dataclass(frozen=True)
class PowerResult:
    power: float
    mc_se: float
    rejections: int
    replications: int
    failures: int
    n_per_arm: float

    def to_dict(self) -> dict:
        return asdict(self)


Analysis = Callable[[TrialData], EstimateResult]


def _analysis(analysis: Estimand | str | Analysis, level: float, seed: int) -> Analysis:
    if callable(analysis):
        return analysis
    return lambda data: run_estimator(analysis, data, level=level, seed=seed)


def _power_design(design: TrialDesign, n_per_arm: int) -> TrialDesign:
    return replace(design, target_n=2 * n_per_arm)


def _summarise_power(rejects: list[bool], failures: int, replications: int, n_mean: float) -> PowerResult:
    if failures > 0.05 * replications:
        raise InstabilityError(f"analysis failed in {failures} of {replications} replications", failures, replications)
    r = int(sum(rejects))
    m = len(rejects)
    p = r / m
    return PowerResult(p, math.sqrt(p * (1 - p) / m), r, m, failures, n_mean)


def mc_power(
    design: TrialDesign,
    population: PopulationSpec,
    n_per_arm: int,
    replications: int,
    analysis: Estimand | str | Analysis = Estimand.ACE_OFFERED,
    seed: int = 0,
    *,
    alpha: float = 0.05,
    cohort: CohortSpec | None = None,
) -> PowerResult:
    """Fraction of simulated trials whose two-sided level-``alpha`` test rejects 0.

    Replication ``r`` uses a seed derived from ``(seed, r)``.
    """
    if replications < 100:
        raise ValueError("replications must be >= 100")
    design = _power_design(design, n_per_arm)
    population = population.resolved(_seeding.derive_seed(seed, _seeding.CALIBRATION))
    cohort = cohort or CohortSpec(size=design.target_n)
    fn = _analysis(analysis, 1 - alpha, seed)
    rejects, failures = [], 0
    for r in range(replications):
        rep = simulate_replication(population, design, _seeding.derive_seed(seed, r), cohort)
        try:
            rejects.append(fn(rep.data).rejects(0.0))
        except EstimationError:
            failures += 1
    return _summarise_power(rejects, failures, replications, n_per_arm)


# --- adaptive re-estimation -----------------------------------------------


@dataclass(frozen=True)
class AdaptivePlan:
    assumptions: DesignAssumptions
    review_ticks: tuple[int, ...] = ()
    cohort_capacity: int | None = None
    min_offered: int = 10

    def __post_init__(self):
        ticks = tuple(self.review_ticks)
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ValueError("review_ticks must be increasing")


def adaptive_sample_size_reestimation(
    plan: AdaptivePlan, interim_rows: TrialData | Sequence[TrialRow]
) -> SampleSize:
    """Recompute n with the planned acceptance replaced by the observed one.

    The observed acceptance pools every offered patient so far. The result
    never drops below the number already randomised in the larger arm.

    Raises:
        CapacityError: a closed cohort cannot supply the re-estimated total.
    """
    data = interim_rows if isinstance(interim_rows, TrialData) else TrialData.from_rows(interim_rows)
    if int(data.offered.sum()) < plan.min_offered:
        raise UndefinedEstimateError(
            f"need at least {plan.min_offered} offered patients before re-estimating, have {int(data.offered.sum())}"
        )
    refusal = observed_refusal_rate(data)
    observed = 1.0 - refusal.rate
    a = plan.assumptions
    planned = _sample_size(a, a.planned_acceptance)
    updated = _sample_size(a, observed)
    already = max(int((data.z == 1).sum()), int((data.z == 0).sum()))
    n = max(updated.n_per_arm, already)
    warnings = []
    if n > updated.n_per_arm:
        warnings.append(f"kept at the {already} patients per arm already randomised")
    inputs = dict(updated.inputs)
    inputs.update(
        planned_acceptance=a.planned_acceptance,
        observed_acceptance=observed,
        observed_refusals=refusal.numerator,
        observed_offered=refusal.denominator,
        planned_n_per_arm=planned.n_per_arm,
    )
    if plan.cohort_capacity is not None and 2 * n > plan.cohort_capacity:
        raise CapacityError(
            f"re-estimated total of {2 * n} patients exceeds the closed-cohort capacity of "
            f"{plan.cohort_capacity}; the cohort cannot supply the sample size needed at the observed refusal rate",
            required_total=2 * n,
            capacity=plan.cohort_capacity,
        )
    return SampleSize(n, n / planned.n_per_arm, inputs, warnings)


def mc_power_adaptive(
    plan: AdaptivePlan,
    design: TrialDesign,
    population: PopulationSpec,
    replications: int,
    analysis: Estimand | str | Analysis = Estimand.ACE_OFFERED,
    seed: int = 0,
    *,
    interim_n_per_arm: int | None = None,
) -> PowerResult:
    """Power of a two-stage recruiting design with one sample-size review.

    Each replication randomises ``interim_n_per_arm`` per arm (default: the
    planned n), re-estimates n from the observed refusals, recruits the
    extra patients into the same cohort and analyses everyone.
    """
    if replications < 100:
        raise ValueError("replications must be >= 100")
    a = plan.assumptions
    n_plan = _sample_size(a, a.planned_acceptance).n_per_arm
    n_int = interim_n_per_arm or n_plan
    population = population.resolved(_seeding.derive_seed(seed, _seeding.CALIBRATION))
    fn = _analysis(analysis, 1 - a.alpha, seed)
    stage1 = replace(design, target_n=2 * n_int, approach=SingleBatch(tick=0))
    rejects, failures, n_final = [], 0, []
    for r in range(replications):
        rs = _seeding.derive_seed(seed, r)
        rep = simulate_replication(population, stage1, rs, CohortSpec(size=2 * n_int))
        new_n = adaptive_sample_size_reestimation(replace(plan, cohort_capacity=None), rep.data).n_per_arm
        extra = new_n - n_int
        data = rep.data
        if extra > 0:
            more = generate_population(
                2 * extra, population.covariates, population.outcome, population.acceptance, population.biomarker,
                _seeding.derive_seed(rs, _seeding.ADAPTIVE, _seeding.POPULATION), first_id=2 * n_int,
            )
            enroll_cohort(rep.registry, more, CohortSpec(start_tick=1), _seeding.derive_seed(rs, _seeding.ADAPTIVE))
            pop = _concat_population(rep.population, more)
            stage2 = replace(design, target_n=2 * extra, approach=SingleBatch(tick=1))
            _, data, _ = run_trial(stage2, rep.registry, pop, _seeding.derive_seed(rs, _seeding.ADAPTIVE))
        n_final.append(new_n)
        try:
            rejects.append(fn(data).rejects(0.0))
        except EstimationError:
            failures += 1
    return _summarise_power(rejects, failures, replications, float(np.mean(n_final)))


def _concat_population(a: Population, b: Population) -> Population:
    return Population(
        ids=np.concatenate([a.ids, b.ids]),
        x=np.vstack([a.x, b.x]),
        y0=np.concatenate([a.y0, b.y0]),
        y1=np.concatenate([a.y1, b.y1]),
        pi_accept=np.concatenate([a.pi_accept, b.pi_accept]),
        u_accept=np.concatenate([a.u_accept, b.u_accept]),
        covariate_names=a.covariate_names,
        biomarker=None if a.biomarker is None else np.concatenate([a.biomarker, b.biomarker]),
        outcome_kind=a.outcome_kind,
    )


# --- non-inferiority --------------------------------------------------------


@dataclass
class NonInferiorityResult:
    itt_decision: bool
    pp_decision: bool | None
    details: dict
    caveat: str = NONINFERIORITY_CAVEAT

    def __iter__(self):
        return iter((self.itt_decision, self.pp_decision, self.details))


def noninferiority_decision(
    rows: TrialData | Sequence[TrialRow],
    margin: float,
    *,
    alpha: float = 0.025,
    higher_is_better: bool = True,
) -> NonInferiorityResult:
    """Non-inferiority by the one-sided level-``alpha`` confidence bound.

    With ``higher_is_better`` the claim needs the lower bound of
    (offered - control) above ``-margin``; otherwise the upper bound must sit
    below ``+margin``. Both the randomised and the per-protocol sets are
    judged.
    """
    if not margin > 0:
        raise ValueError("margin must be > 0")
    data = rows if isinstance(rows, TrialData) else TrialData.from_rows(rows)
    level = 1 - 2 * alpha
    zc = float(stats.norm.ppf(1 - alpha))

    def judge(res: EstimateResult) -> tuple[bool, float]:
        if higher_is_better:
            bound = res.point - zc * res.se
            return bool(bound > -margin), bound
        bound = res.point + zc * res.se
        return bool(bound < margin), bound

    itt = estimate_itt(data, level)
    itt_ok, itt_bound = judge(itt)
    details = {"margin": margin, "alpha": alpha, "itt_point": itt.point, "itt_bound": itt_bound}
    pp_ok = None
    try:
        pp = estimate_per_protocol(data, level)
    except UndefinedEstimateError:
        details["pp_note"] = "per-protocol set empty; decision undefined"
    else:
        pp_ok, pp_bound = judge(pp)
        details.update(pp_point=pp.point, pp_bound=pp_bound)
    return NonInferiorityResult(itt_ok, pp_ok, details)
