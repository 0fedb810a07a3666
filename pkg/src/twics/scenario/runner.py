"""Replicated end-to-end simulation of a scenario and its aggregation.

Replication ``r`` draws everything from ``derive_seed(master_seed, r)``, so
results do not depend on how replications are scheduled. Set the
``TWICS_WORKERS`` environment variable to spread replications over worker
processes; outputs are byte-identical to a serial run.

Every analysis label is compared with its own estimand truth, computed from
the randomised participants of the same replication:

=================  ==============
label              truth
=================  ==============
ACE_Offered        ace_offered
PerProtocol        ace_received
AsTreated          ace_received
CACE_*             cace
=================  ==============

PerProtocol and AsTreated are scored against ``ace_received`` on purpose:
their bias there shows what excluding refusers does.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import _seeding
from ..errors import EstimationError, RecruitmentShortfallError, ScenarioFailure, TwicsError
from ..estimators import MAX_FAILURE_FRACTION, EstimateResult, Estimand, run_estimator
from ..execution import observed_refusal_rate
from ..population import TrueEstimands
from ..simulate import simulate_replication
from .config import Scenario, ScenarioConfig, build_scenario, set_dotted, validate_config_dict

WORKERS_ENV = "TWICS_WORKERS"

PER_PROTOCOL_FOOTNOTE = (
    "PerProtocol and AsTreated are scored against ace_received, the effect had everyone "
    "offered taken the treatment; their bias shows the cost of excluding refusers."
)

_TRUTH_FIELD = {
    Estimand.ACE_OFFERED: "ace_offered",
    Estimand.PER_PROTOCOL: "ace_received",
    Estimand.AS_TREATED: "ace_received",
    Estimand.CACE_WALD: "cace",
    Estimand.CACE_2SPS: "cace",
    Estimand.CACE_2SRI: "cace",
    Estimand.CACE_PROPENSITY: "cace",
}


def truth_field(label: Estimand | str) -> str:
    return _TRUTH_FIELD[Estimand(label)]


def matched_truth(label: Estimand | str, truths: TrueEstimands | Mapping[str, float] | float) -> float:
    if isinstance(truths, (int, float)):
        return float(truths)
    name = truth_field(label)
    if isinstance(truths, Mapping):
        return float(truths[name])
    return float(getattr(truths, name))


@dataclass
class ReplicationOutcome:
    """What one replication contributes to the aggregate."""

    index: int
    seed: int
    estimates: dict[str, EstimateResult | None]
    truths: TrueEstimands | None
    refusal: tuple[int, int]
    n_randomized: int
    n_offered: int
    recruitment_complete: bool
    n_batches: int
    last_tick: int
    failure: str | None = None


@dataclass(frozen=True)
class EstimateSummary:
    label: str
    mean_point: float
    truth: float
    bias: float
    emp_se: float
    mean_se: float
    coverage: float
    reject_rate: float
    n_reps: int
    failures: int

    def row(self) -> dict:
        return {
            "label": self.label,
            "mean_point": self.mean_point,
            "truth": self.truth,
            "bias": self.bias,
            "emp_se": self.emp_se,
            "mean_se": self.mean_se,
            "coverage": self.coverage,
            "reject_rate": self.reject_rate,
            "n_reps": self.n_reps,
        }


@dataclass
class ScenarioResult:
    name: str = "scenario"
    replications: int = 0
    master_seed: int = 0
    estimates: list[EstimateSummary] = field(default_factory=list)
    refusal: list[dict] = field(default_factory=list)
    refusal_summary: dict = field(default_factory=dict)
    recruitment: dict = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)
    failure_messages: list[str] = field(default_factory=list)
    sweep_parameter: str | None = None
    sweep: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def estimate(self, label: Estimand | str) -> EstimateSummary:
        label = Estimand(label).value
        for e in self.estimates:
            if e.label == label:
                return e
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "replications": self.replications,
            "master_seed": self.master_seed,
            "estimates": [_clean({**e.row(), "failures": e.failures}) for e in self.estimates],
            "refusal_summary": _clean(self.refusal_summary),
            "refusal": [_clean(r) for r in self.refusal],
            "recruitment": _clean(self.recruitment),
            "failures": dict(self.failures),
            "failure_messages": list(self.failure_messages),
            "sweep_parameter": self.sweep_parameter,
            "sweep": [_clean(r) for r in self.sweep],
            "notes": list(self.notes),
            "config": self.config,
        }


def _clean(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (float, np.floating)):
            v = float(v)
            out[k] = v if math.isfinite(v) else None
        elif isinstance(v, np.integer):
            out[k] = int(v)
        else:
            out[k] = v
    return out


# --- aggregation -----------------------------------------------------------------


def aggregate_replications(
    per_rep: Sequence[Mapping[str, EstimateResult | None]],
    truths: Sequence[TrueEstimands | Mapping[str, float] | float | None],
    labels: Sequence[Estimand | str] | None = None,
) -> ScenarioResult:
    """Summarise replications in index order.

    ``per_rep[i]`` maps each label to its estimate in replication ``i``;
    ``None`` or a missing label counts as a failure, as does a ``None``
    truth. Bias is the mean point minus the mean truth, the empirical SE is
    the sample SD of the points and coverage counts intervals that contain
    their own replication's truth.
    """
    if len(per_rep) == 0:
        raise ValueError("need at least one replication")
    if len(per_rep) != len(truths):
        raise ValueError("per_rep and truths differ in length")
    if labels is None:
        seen: dict[str, None] = {}
        for rep in per_rep:
            seen.update(dict.fromkeys(Estimand(k).value for k in rep))
        labels = list(seen)
    summaries = []
    failures = {}
    for label in labels:
        label = Estimand(label)
        pts, ses, truth, covered, rejected = [], [], [], [], []
        for rep, tr in zip(per_rep, truths):
            res = rep.get(label, rep.get(label.value))
            if res is None or tr is None:
                continue
            t = matched_truth(label, tr)
            pts.append(res.point)
            ses.append(res.se)
            truth.append(t)
            lo, hi = res.ci
            if math.isfinite(lo) and math.isfinite(hi):
                covered.append(lo <= t <= hi)
                rejected.append(res.rejects(0.0))
        n = len(pts)
        fail = len(per_rep) - n
        failures[label.value] = fail
        pts_a, ses_a = np.asarray(pts, float), np.asarray(ses, float)
        finite_se = ses_a[np.isfinite(ses_a)]
        mean_point = float(np.mean(pts_a)) if n else math.nan
        mean_truth = float(np.mean(truth)) if n else math.nan
        summaries.append(
            EstimateSummary(
                label=label.value,
                mean_point=mean_point,
                truth=mean_truth,
                bias=mean_point - mean_truth,
                emp_se=float(np.std(pts_a, ddof=1)) if n > 1 else math.nan,
                mean_se=float(np.mean(finite_se)) if finite_se.size else math.nan,
                coverage=float(np.mean(covered)) if covered else math.nan,
                reject_rate=float(np.mean(rejected)) if rejected else math.nan,
                n_reps=n,
                failures=fail,
            )
        )
    return ScenarioResult(replications=len(per_rep), estimates=summaries, failures=failures)


# --- running ---------------------------------------------------------------------


def replication_seed(master_seed: int, r: int) -> int:
    """Seed of replication ``r``: ``master_seed`` and ``r`` mixed by SeedSequence."""
    return _seeding.derive_seed(master_seed, r)


def run_replication(scenario: Scenario, population, r: int) -> ReplicationOutcome:
    cfg = scenario.config
    seed = replication_seed(cfg.master_seed, r)
    labels = [Estimand(a).value for a in scenario.analyses]
    try:
        rep = simulate_replication(population, scenario.design, seed, scenario.cohort, scenario.prior_designs)
        truths = rep.truths(scenario.design)
    except (EstimationError, RecruitmentShortfallError) as exc:
        return ReplicationOutcome(r, seed, dict.fromkeys(labels), None, (0, 0), 0, 0, False, 0, -1, str(exc))
    estimates: dict[str, EstimateResult | None] = {}
    messages = []
    for label in labels:
        try:
            estimates[label] = run_estimator(
                label, rep.data, covariates=cfg.analysis_covariates, n_boot=cfg.bootstrap_reps,
                level=cfg.ci_level, seed=seed,
            )
        except EstimationError as exc:
            estimates[label] = None
            messages.append(f"{label}: {exc}")
    try:
        rr = observed_refusal_rate(rep.data)
        refusal = (rr.numerator, rr.denominator)
    except EstimationError:
        refusal = (0, 0)
    a = rep.assignments
    return ReplicationOutcome(
        index=r,
        seed=seed,
        estimates=estimates,
        truths=truths,
        refusal=refusal,
        n_randomized=len(a),
        n_offered=a.n_offered,
        recruitment_complete=a.complete,
        n_batches=len(a.batch_sizes()),
        last_tick=int(a.time.max()) if len(a) else -1,
        failure="; ".join(messages) or None,
    )


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ScenarioFailure(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _run_chunk(args) -> list[ReplicationOutcome]:
    scenario, population, indices = args
    return [run_replication(scenario, population, r) for r in indices]


def _run_all(scenario: Scenario, workers: int) -> list[ReplicationOutcome]:
    cfg = scenario.config
    population = scenario.population.resolved(_seeding.derive_seed(cfg.master_seed, _seeding.CALIBRATION))
    R = cfg.replications
    if workers <= 1 or R < 2:
        return [run_replication(scenario, population, r) for r in range(R)]
    chunks = [list(c) for c in np.array_split(np.arange(R), min(R, 4 * workers)) if len(c)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [(scenario, population, [int(i) for i in c]) for c in chunks])
        outcomes = [o for part in parts for o in part]
    return sorted(outcomes, key=lambda o: o.index)


def _recruitment_summary(outcomes: Sequence[ReplicationOutcome]) -> dict:
    ok = [o for o in outcomes if o.truths is not None]
    if not ok:
        return {}
    return {
        "mean_randomized": float(np.mean([o.n_randomized for o in ok])),
        "mean_offered": float(np.mean([o.n_offered for o in ok])),
        "fraction_complete": float(np.mean([o.recruitment_complete for o in ok])),
        "mean_batches": float(np.mean([o.n_batches for o in ok])),
        "mean_last_tick": float(np.mean([o.last_tick for o in ok])),
        "max_last_tick": int(max(o.last_tick for o in ok)),
    }


def _refusal_rows(outcomes: Sequence[ReplicationOutcome]) -> list[dict]:
    rows = []
    for o in outcomes:
        num, den = o.refusal
        rows.append(
            {"replication": o.index, "refusals": num, "offered": den, "rate": num / den if den else math.nan}
        )
    return rows


def _refusal_summary(rows: Sequence[dict]) -> dict:
    rates = np.array([r["rate"] for r in rows], float)
    rates = rates[np.isfinite(rates)]
    if not rates.size:
        return {}
    q = np.quantile(rates, [0.05, 0.5, 0.95])
    return {
        "mean": float(rates.mean()),
        "sd": float(rates.std(ddof=1)) if rates.size > 1 else math.nan,
        "q05": float(q[0]),
        "median": float(q[1]),
        "q95": float(q[2]),
        "min": float(rates.min()),
        "max": float(rates.max()),
    }


def _summarise(scenario: Scenario, outcomes: list[ReplicationOutcome]) -> ScenarioResult:
    cfg = scenario.config
    result = aggregate_replications(
        [o.estimates for o in outcomes], [o.truths for o in outcomes], list(scenario.analyses)
    )
    result.name = cfg.name
    result.master_seed = cfg.master_seed
    result.refusal = _refusal_rows(outcomes)
    result.refusal_summary = _refusal_summary(result.refusal)
    result.recruitment = _recruitment_summary(outcomes)
    result.failure_messages = [f"replication {o.index}: {o.failure}" for o in outcomes if o.failure][:20]
    return result


def _check_failures(result: ScenarioResult, where: str = "") -> None:
    R = result.replications
    bad = {k: v for k, v in result.failures.items() if v > MAX_FAILURE_FRACTION * R}
    if bad:
        detail = ", ".join(f"{k} {v}/{R}" for k, v in bad.items())
        first = result.failure_messages[0] if result.failure_messages else ""
        raise ScenarioFailure(f"{where}failure fraction above {MAX_FAILURE_FRACTION:.0%}: {detail}. {first}".strip())


def run_scenario(config: ScenarioConfig | Scenario, *, workers: int | None = None) -> ScenarioResult:
    """Run every replication (and every sweep point) of a scenario.

    Raises:
        ScenarioFailure: some analysis failed in more than 5% of
            replications.
    """
    scenario = config if isinstance(config, Scenario) else build_scenario(config)
    cfg = scenario.config
    workers = _worker_count() if workers is None else max(1, workers)
    try:
        outcomes = _run_all(scenario, workers)
    except TwicsError as exc:
        raise ScenarioFailure(str(exc)) from exc
    result = _summarise(scenario, outcomes)
    result.config = {k: v for k, v in cfg.to_json_dict().items() if k != "outputs"}
    if Estimand.PER_PROTOCOL in scenario.analyses or Estimand.AS_TREATED in scenario.analyses:
        result.notes.append(PER_PROTOCOL_FOOTNOTE)
    result.notes.extend(cfg.warnings)
    _check_failures(result)
    if cfg.sweep is not None:
        result.sweep_parameter = cfg.sweep.parameter
        result.sweep = _run_sweep(cfg, workers)
    return result


def _run_sweep(cfg: ScenarioConfig, workers: int) -> list[dict]:
    """Each grid point reuses the replication seeds of the base run."""
    base = cfg.model_dump(mode="json")
    rows = []
    for value in cfg.sweep.values:
        sub = set_dotted(base, cfg.sweep.parameter, value)
        sub.pop("sweep", None)
        scenario = build_scenario(validate_config_dict(sub))
        try:
            outcomes = _run_all(scenario, workers)
        except TwicsError as exc:
            raise ScenarioFailure(f"sweep value {value!r}: {exc}") from exc
        res = _summarise(scenario, outcomes)
        _check_failures(res, f"sweep value {value!r}: ")
        for e in res.estimates:
            rows.append({"parameter": cfg.sweep.parameter, "value": value, **e.row()})
    return rows
