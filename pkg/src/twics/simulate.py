"""One end-to-end replication: population, cohort, sampling, execution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

from . import _seeding
from .cohort import CohortRegistry, MeasurementSchedule, enroll_population
from .execution import BIOMARKER_GATED, IntercurrentEventLog, TrialData, TrialDesign, execute_trial, record_consent
from .population import (
    AcceptanceModel,
    BiomarkerModel,
    CovariateSpec,
    OutcomeModel,
    Population,
    TrueEstimands,
    compute_true_estimands,
    generate_population,
    resolve_acceptance,
)
from .randomization import Assignments, run_sampling_plan


@dataclass(frozen=True)
class PopulationSpec:
    covariates: tuple[CovariateSpec, ...] = ()
    outcome: OutcomeModel = field(default_factory=OutcomeModel)
    acceptance: AcceptanceModel = field(default_factory=AcceptanceModel)
    biomarker: BiomarkerModel | None = None

    def resolved(self, seed: int) -> "PopulationSpec":
        """Fix the acceptance intercept once so replications skip calibration."""
        return replace(self, acceptance=resolve_acceptance(self.acceptance, self.covariates, seed))


@dataclass(frozen=True)
class CohortSpec:
    """How the cohort fills up.

    ``size=None`` sizes the cohort from the trial target and the broad
    consent rate. ``enrollment_per_tick=None`` enrols everyone at
    ``start_tick`` (closed cohort); otherwise patients arrive in that many
    per tick (recruiting cohort). ``consent_covariate`` optionally makes
    broad consent depend on a covariate on the log-odds scale.
    """

    size: int | None = None
    broad_consent_rate: float = 1.0
    enrollment_per_tick: int | None = None
    start_tick: int = 0
    schedule: MeasurementSchedule | None = None
    consent_covariate: str | None = None
    consent_covariate_coef: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.broad_consent_rate <= 1.0:
            raise ValueError("broad_consent_rate must lie in (0, 1]")
        if self.enrollment_per_tick is not None and self.enrollment_per_tick < 1:
            raise ValueError("enrollment_per_tick must be >= 1")

    def cohort_size(self, target_n: int) -> int:
        if self.size is not None:
            return self.size
        if self.broad_consent_rate == 1.0:
            return target_n
        return math.ceil(1.2 * target_n / self.broad_consent_rate) + 10


@dataclass(eq=False)
class Replicate:
    population: Population
    registry: CohortRegistry
    assignments: Assignments
    data: TrialData
    log: IntercurrentEventLog
    prior: dict[str, TrialData] = field(default_factory=dict)

    def participants(self) -> Population:
        return self.population.take(self.population.index_of(self.data.ids))

    def truths(self, design: TrialDesign) -> TrueEstimands:
        """Ground truth over the randomised participants of this replication."""
        part = self.participants()
        if design.variant == BIOMARKER_GATED:
            return compute_true_estimands(part, gate=part.biomarker, gate_probability=design.testing_consent_prob)
        return compute_true_estimands(part)


def enroll_cohort(registry: CohortRegistry, population: Population, cohort: CohortSpec, seed: int) -> None:
    n = len(population)
    rng = _seeding.rng(seed)
    if cohort.consent_covariate is not None and cohort.consent_covariate_coef != 0 and cohort.broad_consent_rate < 1:
        lp = special.logit(cohort.broad_consent_rate) + cohort.consent_covariate_coef * population.covariate(
            cohort.consent_covariate
        )
        p = special.expit(lp)
    else:
        p = np.full(n, cohort.broad_consent_rate)
    consent = rng.random(n) < p
    if cohort.enrollment_per_tick is None:
        times = np.full(n, cohort.start_tick, dtype=np.int64)
    else:
        times = cohort.start_tick + np.arange(n, dtype=np.int64) // cohort.enrollment_per_tick
    enroll_population(registry, population, consent, times)


def run_trial(design: TrialDesign, registry: CohortRegistry, population: Population, seed: int):
    assignments = run_sampling_plan(
        design.approach, registry, design.criteria, design.allocator, design.trial_id, design.target_n,
        _seeding.derive_seed(seed, _seeding.SAMPLING),
    )
    data, log = execute_trial(design, registry, population, _seeding.derive_seed(seed, _seeding.EXECUTION))
    record_consent(registry, data)
    return assignments, data, log


def simulate_replication(
    population: PopulationSpec,
    design: TrialDesign,
    seed: int,
    cohort: CohortSpec | None = None,
    prior_designs: Sequence[TrialDesign] = (),
) -> Replicate:
    """Run one replication; every random stream is derived from ``seed``."""
    cohort = cohort or CohortSpec()
    n = cohort.cohort_size(design.target_n)
    pop = generate_population(
        n, population.covariates, population.outcome, population.acceptance, population.biomarker,
        _seeding.derive_seed(seed, _seeding.POPULATION),
    )
    registry = CohortRegistry(pop.covariate_names)
    enroll_cohort(registry, pop, cohort, _seeding.derive_seed(seed, _seeding.COHORT))
    prior = {}
    for j, pd in enumerate(prior_designs):
        _, pdata, _ = run_trial(pd, registry, pop, _seeding.derive_seed(seed, _seeding.PRIOR_TRIALS, j))
        prior[pd.trial_id] = pdata
    assignments, data, log = run_trial(design, registry, pop, seed)
    return Replicate(pop, registry, assignments, data, log, prior)
