"""Strict JSON scenario configuration.

A config file is a single JSON object. Unknown keys are rejected at every
level and ``schema_version`` must be present. Covariate effects are written
as ``{"name": coefficient}`` maps so that every reference can be checked
against the declared covariates.

Validation collects every problem it can find before failing, so a user
sees the whole list at once rather than fixing errors one at a time.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..cohort import EligibilityCriteria, MeasurementSchedule, Predicate, check_schedule_alignment
from ..errors import ConfigurationError
from ..estimators import Estimand
from ..execution import BIOMARKER_GATED, STANDARD, TrialDesign
from ..population import (
    BINARY,
    CONTINUOUS,
    AcceptanceModel,
    Bernoulli,
    BiomarkerModel,
    CovariateSpec,
    Normal,
    OutcomeModel,
    Uniform,
)
from ..randomization import MultipleBatch, OnEntry, PermutedBlocks, SimpleBernoulli, SingleBatch
from ..simulate import CohortSpec, PopulationSpec

SCHEMA_VERSION = 1

Probability = Annotated[float, Field(ge=0.0, le=1.0)]


class ConfigValidationError(ConfigurationError):
    """Carries every validation message found in a config."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario config:\n" + "\n".join(f"  - {e}" for e in self.errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- population block -------------------------------------------------------


class NormalDist(_Strict):
    type: Literal["normal"]
    mean: float = 0.0
    sd: float = Field(1.0, gt=0)


class BernoulliDist(_Strict):
    type: Literal["bernoulli"]
    p: Probability = 0.5


class UniformDist(_Strict):
    type: Literal["uniform"]
    lo: float = 0.0
    hi: float = 1.0

    @model_validator(mode="after")
    def _order(self):
        if not self.lo < self.hi:
            raise ValueError("uniform requires lo < hi")
        return self


class CovariateConfig(_Strict):
    name: str = Field(pattern=r"^[A-Za-z_][A-Za-z0-9_]*$")
    distribution: Annotated[Union[NormalDist, BernoulliDist, UniformDist], Field(discriminator="type")] = NormalDist(
        type="normal"
    )


class OutcomeConfig(_Strict):
    kind: Literal["continuous", "binary"] = CONTINUOUS
    control_level: float = 0.0
    treatment_effect: float
    noise_sd: float = Field(1.0, gt=0)
    covariate_coefs: dict[str, float] = {}
    effect_heterogeneity: dict[str, float] = {}

    @model_validator(mode="after")
    def _binary_level(self):
        if self.kind == BINARY and not 0.0 <= self.control_level <= 1.0:
            raise ValueError("binary outcome needs control_level in [0, 1]")
        return self


class AcceptanceConfig(_Strict):
    """Exactly one of ``rate``, ``refusal_rate`` or ``intercept``.

    ``rate`` and ``refusal_rate`` combine with ``covariate_coefs`` by
    calibrating the intercept to hit the marginal rate.
    """

    rate: Optional[Annotated[float, Field(gt=0.0, le=1.0)]] = None
    refusal_rate: Optional[Annotated[float, Field(ge=0.0, lt=1.0)]] = None
    intercept: Optional[float] = None
    covariate_coefs: dict[str, float] = {}

    @model_validator(mode="after")
    def _one_of(self):
        given = [k for k in ("rate", "refusal_rate", "intercept") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError(f"give exactly one of rate, refusal_rate, intercept (got {given or 'none'})")
        return self

    @property
    def marginal_rate(self) -> float | None:
        if self.rate is not None:
            return self.rate
        if self.refusal_rate is not None:
            return 1.0 - self.refusal_rate
        return None


class BiomarkerConfig(_Strict):
    prevalence: Probability
    covariate_coefs: dict[str, float] = {}


class PopulationConfig(_Strict):
    covariates: list[CovariateConfig] = []
    outcome: OutcomeConfig
    acceptance: AcceptanceConfig = AcceptanceConfig(rate=1.0)
    biomarker: Optional[BiomarkerConfig] = None


# --- cohort block -------------------------------------------------------------


class CohortConfig(_Strict):
    size: Optional[Annotated[int, Field(ge=1)]] = None
    broad_consent_rate: Annotated[float, Field(gt=0.0, le=1.0)] = 1.0
    enrollment_per_tick: Optional[Annotated[int, Field(ge=1)]] = None
    start_tick: int = 0
    schedule: Optional[list[int]] = None
    consent_covariate: Optional[str] = None
    consent_covariate_coef: float = 0.0


# --- design block -------------------------------------------------------------


class SingleBatchConfig(_Strict):
    approach: Literal["single_batch"]
    tick: Optional[int] = None


class MultipleBatchConfig(_Strict):
    approach: Literal["multiple_batch"]
    batch_ticks: list[int] = Field(min_length=1)
    per_batch_cap: Optional[Annotated[int, Field(ge=1)]] = None


class OnEntryConfig(_Strict):
    approach: Literal["on_entry"]


Sampling = Annotated[Union[SingleBatchConfig, MultipleBatchConfig, OnEntryConfig], Field(discriminator="approach")]


class PermutedBlocksConfig(_Strict):
    type: Literal["permuted_blocks"]
    block_size: int = Field(4, ge=2)


class BernoulliAllocConfig(_Strict):
    type: Literal["bernoulli"]
    p_offered: Annotated[float, Field(gt=0.0, lt=1.0)] = 0.5


Allocation = Annotated[Union[PermutedBlocksConfig, BernoulliAllocConfig], Field(discriminator="type")]


class PredicateConfig(_Strict):
    covariate: str
    low: Optional[float] = None
    high: Optional[float] = None
    equals: Optional[float] = None


class EligibilityConfig(_Strict):
    predicates: list[PredicateConfig] = []
    exclude_prior_trials: list[str] = []


class DesignConfig(_Strict):
    trial_id: str = "trial"
    variant: Literal["standard", "biomarker_gated"] = STANDARD
    target_n: int = Field(ge=1)
    sampling: Sampling = SingleBatchConfig(approach="single_batch")
    allocator: Allocation = PermutedBlocksConfig(type="permuted_blocks")
    eligibility: EligibilityConfig = EligibilityConfig()
    endpoint_tick: int = 0
    control_contamination_prob: Probability = 0.0
    control_soc_refusal_prob: Probability = 0.0
    control_soc_refusal_outcome: Optional[float] = None
    testing_consent_prob: Probability = 1.0


# --- top level ------------------------------------------------------------------


class SweepConfig(_Strict):
    """One config parameter addressed by a dotted path, e.g.
    ``population.acceptance.refusal_rate``, and the values to try."""

    parameter: str = Field(min_length=1)
    values: list[Any] = Field(min_length=1)


class PlanningConfig(_Strict):
    """Design-stage assumptions kept alongside the simulated reality."""

    planned_refusal: Optional[Probability] = None
    actual_refusal: Optional[Probability] = None
    planned_positives: Optional[int] = None


class ScenarioConfig(_Strict):
    schema_version: Literal[1]
    name: str = "scenario"
    description: str = ""
    population: PopulationConfig
    cohort: CohortConfig = CohortConfig()
    design: DesignConfig
    prior_designs: list[DesignConfig] = []
    analyses: list[Estimand] = Field(default=[Estimand.ACE_OFFERED], min_length=1)
    analysis_covariates: list[str] = []
    replications: int = Field(100, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    outputs: str = "results"
    bootstrap_reps: int = Field(200, ge=0)
    ci_level: Annotated[float, Field(gt=0.0, lt=1.0)] = 0.95
    sweep: Optional[SweepConfig] = None
    planning: Optional[PlanningConfig] = None
    warnings: list[str] = []

    def to_json_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


# --- cross-field checks -------------------------------------------------------


def _cross_field_errors(cfg: ScenarioConfig) -> list[str]:
    errors: list[str] = []
    pop = cfg.population
    names = [c.name for c in pop.covariates]
    known = set(names)
    if len(known) != len(names):
        errors.append("population.covariates: covariate names must be unique")

    def refs(where: str, keys) -> None:
        for k in keys:
            if k not in known:
                errors.append(f"{where}: unknown covariate {k!r}")

    refs("population.outcome.covariate_coefs", pop.outcome.covariate_coefs)
    refs("population.outcome.effect_heterogeneity", pop.outcome.effect_heterogeneity)
    refs("population.acceptance.covariate_coefs", pop.acceptance.covariate_coefs)
    if pop.biomarker is not None:
        refs("population.biomarker.covariate_coefs", pop.biomarker.covariate_coefs)
    if cfg.cohort.consent_covariate is not None:
        refs("cohort.consent_covariate", [cfg.cohort.consent_covariate])
    refs("analysis_covariates", cfg.analysis_covariates)

    # prior designs run first, so the main design may exclude any of them
    designs = [(f"prior_designs[{i}]", d) for i, d in enumerate(cfg.prior_designs)] + [("design", cfg.design)]
    prior_ids: list[str] = []
    for where, d in designs:
        refs(f"{where}.eligibility.predicates", [p.covariate for p in d.eligibility.predicates])
        if d.variant == BIOMARKER_GATED and pop.biomarker is None:
            errors.append(f"{where}.variant: biomarker_gated design requires a population.biomarker block")
        if isinstance(d.allocator, PermutedBlocksConfig) and d.allocator.block_size % 2:
            errors.append(f"{where}.allocator.block_size: must be even")
        if isinstance(d.sampling, MultipleBatchConfig):
            t = d.sampling.batch_ticks
            if any(b <= a for a, b in zip(t, t[1:])):
                errors.append(f"{where}.sampling.batch_ticks: must be strictly increasing")
        for tid in d.eligibility.exclude_prior_trials:
            if tid not in prior_ids:
                errors.append(f"{where}.eligibility.exclude_prior_trials: {tid!r} is not an earlier prior design")
        if d.trial_id in prior_ids:
            errors.append(f"{where}.trial_id: duplicate trial id {d.trial_id!r}")
        prior_ids.append(d.trial_id)

    if Estimand.CACE_PROPENSITY in cfg.analyses and not cfg.analysis_covariates:
        errors.append("analysis_covariates: CACE_Propensity needs at least one covariate")
    if len(set(cfg.analyses)) != len(cfg.analyses):
        errors.append("analyses: labels must be unique")
    if 0 < cfg.bootstrap_reps < 100 and {Estimand.CACE_2SPS, Estimand.CACE_2SRI} & set(cfg.analyses):
        errors.append("bootstrap_reps: must be 0 (point only) or >= 100")

    sched = cfg.cohort.schedule
    if sched is not None:
        if not sched or any(b <= a for a, b in zip(sched, sched[1:])):
            errors.append("cohort.schedule: must be non-empty and strictly increasing")
        else:
            for where, d in designs:
                if not check_schedule_alignment([d.endpoint_tick], MeasurementSchedule(tuple(sched))):
                    errors.append(
                        f"{where}.endpoint_tick: {d.endpoint_tick} is not a cohort measurement tick; "
                        "the trial endpoint must be collected through the cohort schedule"
                    )
    if cfg.sweep is not None:
        errors.extend(_sweep_errors(cfg))
    return errors


def _sweep_errors(cfg: ScenarioConfig) -> list[str]:
    errors = []
    base = cfg.model_dump(mode="json")
    path = cfg.sweep.parameter
    if path.split(".")[0] in ("sweep", "replications", "master_seed", "outputs", "schema_version"):
        return [f"sweep.parameter: {path!r} cannot be swept"]
    for v in cfg.sweep.values:
        try:
            override = set_dotted(base, path, v)
        except KeyError as exc:
            return [f"sweep.parameter: {exc.args[0]}"]
        override.pop("sweep", None)
        try:
            sub = ScenarioConfig.model_validate(override)
        except ValidationError as exc:
            errors.extend(f"sweep value {v!r}: {m}" for m in _format_pydantic(exc))
            continue
        errors.extend(f"sweep value {v!r}: {m}" for m in _cross_field_errors(sub))
    return errors


def set_dotted(config: dict, path: str, value: Any) -> dict:
    """Copy of ``config`` with the dotted ``path`` replaced by ``value``.

    List elements are addressed by integer components (``prior_designs.0``).
    The parent of the final key must exist.
    """
    out = copy.deepcopy(config)
    keys = path.split(".")
    node: Any = out
    for k in keys[:-1]:
        if isinstance(node, list):
            if not k.isdigit() or int(k) >= len(node):
                raise KeyError(f"no list element {k!r} in path {path!r}")
            node = node[int(k)]
        elif isinstance(node, dict) and isinstance(node.get(k), (dict, list)):
            node = node[k]
        else:
            raise KeyError(f"path {path!r} does not resolve at {k!r}")
    if not isinstance(node, dict):
        raise KeyError(f"path {path!r} does not end in an object field")
    node[keys[-1]] = value
    return out


def _format_pydantic(exc: ValidationError) -> list[str]:
    out = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"])
        out.append(f"{loc or '<root>'}: {e['msg']}")
    return out


# --- entry points ---------------------------------------------------------------


def validate_config_dict(data: Any) -> ScenarioConfig:
    """Validate a decoded JSON object; raises :class:`ConfigValidationError`."""
    if not isinstance(data, dict):
        raise ConfigValidationError(["<root>: config must be a JSON object"])
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigValidationError(_format_pydantic(exc)) from None
    errors = _cross_field_errors(cfg)
    if errors:
        raise ConfigValidationError(errors)
    return cfg


def load_and_validate_config(path: str | Path) -> ScenarioConfig:
    """Read and fully validate a scenario file.

    Raises:
        ConfigValidationError: malformed JSON, unknown fields or any
            invariant violation; ``errors`` lists every problem found.
        FileNotFoundError: ``path`` does not exist.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigValidationError([f"malformed JSON: {exc}"]) from None
    return validate_config_dict(data)


# --- translation into simulation objects ------------------------------------------


def _coefs(mapping: dict[str, float], names: list[str]) -> tuple[float, ...]:
    if not mapping:
        return ()
    return tuple(float(mapping.get(n, 0.0)) for n in names)


def _distribution(d):
    if d.type == "normal":
        return Normal(d.mean, d.sd)
    if d.type == "bernoulli":
        return Bernoulli(d.p)
    return Uniform(d.lo, d.hi)


def _design(d: DesignConfig) -> TrialDesign:
    s = d.sampling
    if isinstance(s, SingleBatchConfig):
        approach = SingleBatch(s.tick)
    elif isinstance(s, MultipleBatchConfig):
        approach = MultipleBatch(tuple(s.batch_ticks), s.per_batch_cap)
    else:
        approach = OnEntry()
    a = d.allocator
    allocator = PermutedBlocks(a.block_size) if isinstance(a, PermutedBlocksConfig) else SimpleBernoulli(a.p_offered)
    criteria = EligibilityCriteria(
        tuple(Predicate(p.covariate, p.low, p.high, p.equals) for p in d.eligibility.predicates),
        frozenset(d.eligibility.exclude_prior_trials),
    )
    return TrialDesign(
        trial_id=d.trial_id,
        criteria=criteria,
        approach=approach,
        allocator=allocator,
        variant=d.variant,
        target_n=d.target_n,
        endpoint_tick=d.endpoint_tick,
        control_contamination_prob=d.control_contamination_prob,
        control_soc_refusal_prob=d.control_soc_refusal_prob,
        control_soc_refusal_outcome=d.control_soc_refusal_outcome,
        testing_consent_prob=d.testing_consent_prob,
    )


@dataclass(frozen=True)
class Scenario:
    """A validated config turned into the objects the simulator consumes."""

    config: ScenarioConfig
    population: PopulationSpec
    cohort: CohortSpec
    design: TrialDesign
    prior_designs: tuple[TrialDesign, ...]

    @property
    def analyses(self) -> tuple[Estimand, ...]:
        return tuple(self.config.analyses)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    names = [c.name for c in cfg.population.covariates]
    pop = cfg.population
    covariates = tuple(CovariateSpec(c.name, _distribution(c.distribution)) for c in pop.covariates)
    outcome = OutcomeModel(
        kind=pop.outcome.kind,
        control_level=pop.outcome.control_level,
        treatment_effect=pop.outcome.treatment_effect,
        covariate_coefs=_coefs(pop.outcome.covariate_coefs, names),
        noise_sd=pop.outcome.noise_sd,
        effect_heterogeneity=_coefs(pop.outcome.effect_heterogeneity, names),
    )
    acc = pop.acceptance
    coefs = _coefs(acc.covariate_coefs, names)
    rate = acc.marginal_rate
    if rate is None:
        acceptance = AcceptanceModel(acc.intercept, coefs)
    else:
        acceptance = AcceptanceModel(0.0, coefs, rate)
    biomarker = None
    if pop.biomarker is not None:
        biomarker = BiomarkerModel(pop.biomarker.prevalence, _coefs(pop.biomarker.covariate_coefs, names))
    c = cfg.cohort
    cohort = CohortSpec(
        size=c.size,
        broad_consent_rate=c.broad_consent_rate,
        enrollment_per_tick=c.enrollment_per_tick,
        start_tick=c.start_tick,
        schedule=MeasurementSchedule(tuple(c.schedule)) if c.schedule else None,
        consent_covariate=c.consent_covariate,
        consent_covariate_coef=c.consent_covariate_coef,
    )
    return Scenario(
        cfg,
        PopulationSpec(covariates, outcome, acceptance, biomarker),
        cohort,
        _design(cfg.design),
        tuple(_design(d) for d in cfg.prior_designs),
    )
