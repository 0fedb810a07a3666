"""Estimators for trials with one-sided refusal of the offered treatment.

The intention-to-treat contrast estimates the effect of being *offered* the
alternative, not of receiving it. The complier effect is targeted by the
Wald ratio and by two instrumental-variable pipelines in which
randomisation instruments exposure:

* predictor substitution (2SPS): logistic first stage ``d ~ z``, then OLS of
  ``y`` on the predicted exposure;
* residual inclusion (2SRI): same first stage, then OLS of ``y`` on ``d``
  and the first-stage residual ``d - d_hat``.

Under one-sided refusal no control is exposed, so the control-arm cell of
the first stage sits on the boundary (probability exactly 0) and a joint
logistic fit would diverge. The first stage therefore fits a logistic model
only within arms whose exposure varies and uses the observed constant in
the others. With contamination both arms vary and ``d ~ 1 + z (+ x)`` is
fitted jointly.

The propensity analysis compares accepters with controls predicted to
accept; it is a sensitivity analysis, not a replacement for the IV
estimates.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from . import _seeding
from .errors import EstimationError, InstabilityError, UndefinedEstimateError
from .execution import TrialData, TrialRow
from .population import BINARY
from .regression import fit_logistic_irls, fit_ols

DEFAULT_BOOT = 200
MAX_FAILURE_FRACTION = 0.05


class Estimand(str, enum.Enum):
    ACE_OFFERED = "ACE_Offered"
    PER_PROTOCOL = "PerProtocol"
    AS_TREATED = "AsTreated"
    CACE_WALD = "CACE_Wald"
    CACE_2SPS = "CACE_2SPS"
    CACE_2SRI = "CACE_2SRI"
    CACE_PROPENSITY = "CACE_Propensity"


_REPORT_PHRASES = {
    Estimand.ACE_OFFERED: "effect of being (offered to be) treated with the alternative versus standard of care "
    "(average causal effect of the offered treatment)",
    Estimand.PER_PROTOCOL: "per-protocol contrast of offered-arm accepters versus all controls "
    "(refusers excluded; not a randomised comparison)",
    Estimand.AS_TREATED: "as-treated contrast by exposure actually received (not a randomised comparison)",
    Estimand.CACE_WALD: "complier average causal effect (Wald ratio)",
    Estimand.CACE_2SPS: "complier average causal effect (two-stage predictor substitution)",
    Estimand.CACE_2SRI: "complier average causal effect (two-stage residual inclusion)",
    Estimand.CACE_PROPENSITY: "accepters versus controls predicted to accept (propensity sensitivity analysis)",
}


@dataclass
class EstimateResult:
    estimand: Estimand
    point: float
    se: float
    ci: tuple[float, float]
    n_by_group: dict[str, int]
    method: str
    warnings: list[str] = field(default_factory=list)
    level: float = 0.95
    details: dict = field(default_factory=dict, repr=False)

    @property
    def n_offered(self) -> int:
        return self.n_by_group.get("offered_arm", 0)

    @property
    def n_control(self) -> int:
        return self.n_by_group.get("control", 0)

    def rejects(self, null: float = 0.0) -> bool:
        lo, hi = self.ci
        return bool(lo > null or hi < null)

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or not math.isfinite(v) else float(v)

        return {
            "estimand": self.estimand.value,
            "point": num(self.point),
            "se": num(self.se),
            "ci_lo": num(self.ci[0]),
            "ci_hi": num(self.ci[1]),
            "n_offered": self.n_offered,
            "n_control": self.n_control,
            "method": self.method,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def report(self) -> str:
        pct = round(100 * self.level)
        return (
            f"{self.estimand.value}: {_REPORT_PHRASES[self.estimand]} = {self.point:.4g} "
            f"({pct}% CI {self.ci[0]:.4g} to {self.ci[1]:.4g})"
        )


def as_trial_data(rows: TrialData | Sequence[TrialRow]) -> TrialData:
    return rows if isinstance(rows, TrialData) else TrialData.from_rows(rows)


def _z_crit(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(stats.norm.ppf(0.5 + level / 2))


def _diff_in_means(y1: np.ndarray, y0: np.ndarray, kind: str) -> tuple[float, float]:
    n1, n0 = len(y1), len(y0)
    m1, m0 = float(y1.mean()), float(y0.mean())
    if kind == BINARY:
        se = math.sqrt(m1 * (1 - m1) / n1 + m0 * (1 - m0) / n0)
    elif n1 + n0 > 2:
        ss = float(((y1 - m1) ** 2).sum() + ((y0 - m0) ** 2).sum())
        se = math.sqrt(ss / (n1 + n0 - 2) * (1 / n1 + 1 / n0))
    else:
        se = math.nan
    return m1 - m0, se


def _result(label, point, se, level, groups, method, warnings=(), details=None) -> EstimateResult:
    z = _z_crit(level)
    ci = (point - z * se, point + z * se) if math.isfinite(se) else (math.nan, math.nan)
    return EstimateResult(label, float(point), float(se), ci, groups, method, list(warnings), level, details or {})


def _groups(data: TrialData, **extra: int) -> dict[str, int]:
    n1 = int((data.z == 1).sum())
    return {"offered_arm": n1, "control": len(data) - n1, **extra}


def _arms(data: TrialData) -> tuple[np.ndarray, np.ndarray]:
    arm1, arm0 = data.z == 1, data.z == 0
    if not arm1.any() or not arm0.any():
        raise UndefinedEstimateError("both randomised arms must be non-empty")
    return arm1, arm0


def _contamination_warning(data: TrialData) -> list[str]:
    if np.any((data.z == 0) & (data.d == 1)):
        return ["control-arm exposure present (contamination); one-sided complier identification is violated"]
    return []


def estimate_itt(rows: TrialData | Sequence[TrialRow], level: float = 0.95) -> EstimateResult:
    """Difference in mean outcome by randomised arm, i.e. the effect of the offer."""
    data = as_trial_data(rows)
    arm1, arm0 = _arms(data)
    point, se = _diff_in_means(data.y[arm1], data.y[arm0], data.outcome_kind)
    method = "difference in means as randomised; " + (
        "risk-difference standard error" if data.outcome_kind == BINARY else "pooled two-sample standard error"
    )
    return _result(Estimand.ACE_OFFERED, point, se, level, _groups(data), method)


def estimate_per_protocol(rows: TrialData | Sequence[TrialRow], level: float = 0.95) -> EstimateResult:
    """Offered-arm accepters against all controls, refusers dropped."""
    data = as_trial_data(rows)
    arm1, arm0 = _arms(data)
    acc = arm1 & (data.a == 1)
    if not acc.any():
        raise UndefinedEstimateError("no accepters in the offered arm; per-protocol set is empty")
    point, se = _diff_in_means(data.y[acc], data.y[arm0], data.outcome_kind)
    groups = _groups(data, accepters=int(acc.sum()), excluded=int((arm1 & ~acc).sum()))
    return _result(Estimand.PER_PROTOCOL, point, se, level, groups, "accepters vs all controls")


def estimate_as_treated(rows: TrialData | Sequence[TrialRow], level: float = 0.95) -> EstimateResult:
    data = as_trial_data(rows)
    exp = data.d == 1
    if exp.all() or not exp.any():
        raise UndefinedEstimateError("as-treated contrast needs both exposed and unexposed patients")
    point, se = _diff_in_means(data.y[exp], data.y[~exp], data.outcome_kind)
    groups = _groups(data, exposed=int(exp.sum()), unexposed=int((~exp).sum()))
    return _result(Estimand.AS_TREATED, point, se, level, groups, "exposed vs unexposed")


def estimate_wald_cace(rows: TrialData | Sequence[TrialRow], level: float = 0.95) -> EstimateResult:
    """Intention-to-treat effect divided by the exposure difference between arms.

    Without contamination the denominator is the acceptance proportion in
    the offered arm. The standard error uses the delta method.
    """
    data = as_trial_data(rows)
    arm1, arm0 = _arms(data)
    y1, y0 = data.y[arm1], data.y[arm0]
    d1, d0 = data.d[arm1].astype(float), data.d[arm0].astype(float)
    n1, n0 = len(y1), len(y0)
    itt_y = float(y1.mean() - y0.mean())
    itt_d = float(d1.mean() - d0.mean())
    if itt_d <= 0:
        raise UndefinedEstimateError("no excess exposure in the offered arm; complier effect undefined")
    point = itt_y / itt_d

    def var(v):
        return float(v.var(ddof=1)) if len(v) > 1 else 0.0

    def cov(a, b):
        return float(np.cov(a, b, ddof=1)[0, 1]) if len(a) > 1 else 0.0

    v_y = var(y1) / n1 + var(y0) / n0
    v_d = var(d1) / n1 + var(d0) / n0
    c_yd = cov(y1, d1) / n1 + cov(y0, d0) / n0
    se = math.sqrt(max(v_y - 2 * point * c_yd + point**2 * v_d, 0.0)) / itt_d
    groups = _groups(data, accepters=int(((data.z == 1) & (data.d == 1)).sum()))
    return _result(
        Estimand.CACE_WALD, point, se, level, groups, "ITT / exposure difference; delta-method SE",
        _contamination_warning(data), {"itt": itt_y, "exposure_difference": itt_d},
    )


# --- two-stage IV ---------------------------------------------------------


def _covariate_matrix(data: TrialData, covariates: Sequence[str] | None) -> np.ndarray:
    if not covariates:
        return np.empty((len(data), 0))
    return np.column_stack([data.covariate(c) for c in covariates])


def _first_stage(z: np.ndarray, d: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Predicted exposure probability; see the module docstring."""
    d = d.astype(float)
    d_hat = np.empty(len(d))
    arms = [z == 0, z == 1]
    varying = []
    for m in arms:
        vals = d[m]
        if vals.size and vals.min() == vals.max():
            d_hat[m] = vals[0]
        else:
            varying.append(m)
    if len(varying) == 2:
        design = np.column_stack([np.ones(len(d)), z, X])
        fit = fit_logistic_irls(design, d).require_converged()
        d_hat[:] = special.expit(design @ fit.coefficients)
    elif len(varying) == 1:
        m = varying[0]
        design = np.column_stack([np.ones(int(m.sum())), X[m]])
        fit = fit_logistic_irls(design, d[m]).require_converged()
        d_hat[m] = special.expit(design @ fit.coefficients)
    return d_hat


def _second_stage_coef(y: np.ndarray, cols: list[np.ndarray], X: np.ndarray) -> float:
    design = np.column_stack([np.ones(len(y)), *cols, X])
    return float(fit_ols(design, y).coefficients[1])


def _twosps_point(y, z, d, X) -> float:
    return _second_stage_coef(y, [_first_stage(z, d, X)], X)


def _twosri_point(y, z, d, X, notes: list[str] | None = None) -> float:
    d_hat = _first_stage(z, d, X)
    resid = d - d_hat
    if np.max(np.abs(resid)) < 1e-12:
        if notes is not None:
            notes.append("first-stage residual is constant (no refusal); residual column dropped")
        return _second_stage_coef(y, [d.astype(float)], X)
    return _second_stage_coef(y, [d.astype(float), resid], X)


def _bootstrap_arrays(point_fn, y, z, d, X, B, level, seed) -> tuple[float, tuple[float, float], int]:
    idx1, idx0 = np.flatnonzero(z == 1), np.flatnonzero(z == 0)
    pts = np.empty(B)
    failures = 0
    for b in range(B):
        r = _seeding.rng(seed, _seeding.BOOTSTRAP, b)
        idx = np.concatenate([r.choice(idx1, idx1.size), r.choice(idx0, idx0.size)])
        try:
            pts[b] = point_fn(y[idx], z[idx], d[idx], X[idx])
        except EstimationError:
            pts[b] = np.nan
            failures += 1
    return _summarise_bootstrap(pts, failures, B, level)


def _summarise_bootstrap(pts: np.ndarray, failures: int, B: int, level: float):
    if failures > MAX_FAILURE_FRACTION * B:
        raise InstabilityError(f"estimator failed in {failures} of {B} bootstrap resamples", failures, B)
    ok = pts[np.isfinite(pts)]
    se = float(ok.std(ddof=1)) if ok.size > 1 else 0.0
    alpha = 1 - level
    lo, hi = np.quantile(ok, [alpha / 2, 1 - alpha / 2])
    return se, (float(lo), float(hi)), failures


def _two_stage(label, point_fn, rows, covariates, n_boot, level, seed, method) -> EstimateResult:
    data = as_trial_data(rows)
    _arms(data)
    X = _covariate_matrix(data, covariates)
    y, z, d = data.y, data.z.astype(float), data.d.astype(float)
    notes: list[str] = []
    if label == Estimand.CACE_2SRI:
        point = _twosri_point(y, z, d, X, notes)
    else:
        point = point_fn(y, z, d, X)
    warnings = _contamination_warning(data) + notes
    groups = _groups(data, accepters=int(((data.z == 1) & (data.d == 1)).sum()))
    if n_boot == 0:
        warnings.append("bootstrap disabled; no standard error")
        return EstimateResult(label, point, math.nan, (math.nan, math.nan), groups, method, warnings, level)
    if n_boot < 100:
        raise ValueError("n_boot must be 0 (disabled) or >= 100")
    se, ci, failures = _bootstrap_arrays(point_fn, y, z, d, X, n_boot, level, seed)
    if failures:
        warnings.append(f"{failures} of {n_boot} bootstrap resamples failed")
    lo, hi = ci
    if not lo <= point <= hi:
        warnings.append("point estimate outside percentile interval; interval widened to include it")
        lo, hi = min(lo, point), max(hi, point)
    return EstimateResult(label, point, se, (lo, hi), groups, method, warnings, level, {"n_boot": n_boot})


def estimate_iv_2sps(
    rows: TrialData | Sequence[TrialRow],
    covariates: Sequence[str] | None = None,
    *,
    n_boot: int = DEFAULT_BOOT,
    level: float = 0.95,
    seed: int = 0,
) -> EstimateResult:
    """Two-stage predictor substitution with an arm-stratified bootstrap SE."""
    return _two_stage(
        Estimand.CACE_2SPS, _twosps_point, rows, covariates, n_boot, level, seed,
        "logistic first stage, OLS on predicted exposure; stratified percentile bootstrap",
    )


def estimate_iv_2sri(
    rows: TrialData | Sequence[TrialRow],
    covariates: Sequence[str] | None = None,
    *,
    n_boot: int = DEFAULT_BOOT,
    level: float = 0.95,
    seed: int = 0,
) -> EstimateResult:
    """Two-stage residual inclusion with an arm-stratified bootstrap SE."""
    return _two_stage(
        Estimand.CACE_2SRI, _twosri_point, rows, covariates, n_boot, level, seed,
        "logistic first stage, OLS on exposure and first-stage residual; stratified percentile bootstrap",
    )


def propensity_accepter_analysis(
    rows: TrialData | Sequence[TrialRow],
    covariates: Sequence[str],
    level: float = 0.95,
) -> EstimateResult:
    """Accepters versus the controls most likely to have accepted.

    A logistic acceptance model is fitted on offered patients and used to
    score every control. The controls above the score threshold that keeps
    the same fraction as the observed acceptance rate form the comparison
    group (ties broken by patient id).
    """
    data = as_trial_data(rows)
    arm1, arm0 = _arms(data)
    if not covariates:
        raise ValueError("propensity analysis needs at least one covariate")
    offered = data.offered & (data.a >= 0)
    acc = offered & (data.a == 1)
    n_off, n_acc = int(offered.sum()), int(acc.sum())
    if n_acc == 0 or n_acc == n_off:
        raise UndefinedEstimateError("offered patients must include both accepters and refusers")
    X = _covariate_matrix(data, covariates)
    design = np.column_stack([np.ones(len(data)), X])
    fit = fit_logistic_irls(design[offered], data.a[offered].astype(float)).require_converged()
    ctrl = np.flatnonzero(arm0)
    score = special.expit(design[ctrl] @ fit.coefficients)
    rate = n_acc / n_off
    k = int(round(rate * ctrl.size))
    if k == 0:
        raise UndefinedEstimateError("no controls selected as would-be accepters")
    order = np.lexsort((data.ids[ctrl], -score))[:k]
    chosen = ctrl[order]
    point, se = _diff_in_means(data.y[acc], data.y[chosen], data.outcome_kind)
    groups = _groups(data, accepters=n_acc, selected_controls=k)
    return _result(
        Estimand.CACE_PROPENSITY, point, se, level, groups,
        "logistic acceptance score; controls above the acceptance-rate quantile",
        ["sensitivity analysis to the IV analysis; SE treats the selected control set as fixed"],
        {"threshold": float(score[order[-1]]), "selected_ids": data.ids[chosen], "acceptance_model": fit},
    )


def bootstrap_ci(
    estimator: Callable[[TrialData], float | EstimateResult],
    rows: TrialData | Sequence[TrialRow],
    B: int = DEFAULT_BOOT,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, tuple[float, float]]:
    """Arm-stratified case-resampling bootstrap with a percentile interval.

    Resample ``b`` uses a stream derived from ``(seed, b)`` so the result
    does not depend on evaluation order.

    Raises:
        InstabilityError: the estimator failed in more than 5% of resamples.
    """
    if B < 100:
        raise ValueError("B must be >= 100")
    data = as_trial_data(rows)
    idx1, idx0 = np.flatnonzero(data.z == 1), np.flatnonzero(data.z == 0)
    pts = np.empty(B)
    failures = 0
    for b in range(B):
        r = _seeding.rng(seed, _seeding.BOOTSTRAP, b)
        idx = np.concatenate([r.choice(idx1, idx1.size), r.choice(idx0, idx0.size)])
        try:
            out = estimator(data.take(idx))
            pts[b] = out.point if isinstance(out, EstimateResult) else float(out)
        except EstimationError:
            pts[b] = np.nan
            failures += 1
    se, ci, _ = _summarise_bootstrap(pts, failures, B, level)
    return se, ci


ESTIMATORS: dict[Estimand, Callable[..., EstimateResult]] = {
    Estimand.ACE_OFFERED: estimate_itt,
    Estimand.PER_PROTOCOL: estimate_per_protocol,
    Estimand.AS_TREATED: estimate_as_treated,
    Estimand.CACE_WALD: estimate_wald_cace,
    Estimand.CACE_2SPS: estimate_iv_2sps,
    Estimand.CACE_2SRI: estimate_iv_2sri,
    Estimand.CACE_PROPENSITY: propensity_accepter_analysis,
}


def run_estimator(
    label: Estimand | str,
    data: TrialData,
    *,
    covariates: Sequence[str] = (),
    n_boot: int = DEFAULT_BOOT,
    level: float = 0.95,
    seed: int = 0,
) -> EstimateResult:
    """Dispatch by label with the keyword arguments each estimator accepts."""
    label = Estimand(label)
    if label in (Estimand.CACE_2SPS, Estimand.CACE_2SRI):
        return ESTIMATORS[label](data, covariates or None, n_boot=n_boot, level=level, seed=seed)
    if label == Estimand.CACE_PROPENSITY:
        return propensity_accepter_analysis(data, covariates, level)
    return ESTIMATORS[label](data, level)
