import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from twics.errors import CalibrationError, ModelMisspecificationError, UndefinedEstimateError
from twics.population import (
    BINARY,
    AcceptanceModel,
    Bernoulli,
    BiomarkerModel,
    CovariateSpec,
    Normal,
    OutcomeModel,
    PatientRecord,
    Uniform,
    calibrate_acceptance_intercept,
    compute_true_estimands,
    generate_population,
)


def test_distribution_invariants():
    with pytest.raises(ValueError):
        Normal(0, 0)
    with pytest.raises(ValueError):
        Bernoulli(1.2)
    with pytest.raises(ValueError):
        Uniform(1, 1)
    with pytest.raises(ValueError):
        CovariateSpec("not a name")
    with pytest.raises(ValueError):
        OutcomeModel(noise_sd=0)
    with pytest.raises(ValueError):
        BiomarkerModel(prevalence=-0.1)


def test_empty_population():
    pop = generate_population(0, (), OutcomeModel(), AcceptanceModel())
    assert len(pop) == 0
    assert pop.records() == []


def test_control_mean_law_of_large_numbers():
    n = 100_000
    pop = generate_population(n, (), OutcomeModel(treatment_effect=1.0), AcceptanceModel(), seed=3)
    assert abs(pop.y0.mean()) < 3 / math.sqrt(n)
    np.testing.assert_allclose(pop.y1 - pop.y0, 1.0)


def test_constant_propensity_is_exact():
    pop = generate_population(100_000, (), OutcomeModel(), AcceptanceModel(intercept=math.log(0.7 / 0.3)), seed=1)
    np.testing.assert_allclose(pop.pi_accept, 0.7, rtol=0, atol=1e-15)
    assert pop.pi_accept.mean() == pytest.approx(0.7, abs=1e-12)


def test_sequential_ids_and_determinism():
    covs = (CovariateSpec("age", Normal(60, 10)), CovariateSpec("male", Bernoulli(0.4)))
    out = OutcomeModel(treatment_effect=0.5, covariate_coefs=(0.01, 0.2))
    acc = AcceptanceModel(0.3, (0.02, -0.5))
    a = generate_population(50, covs, out, acc, seed=99, first_id=10)
    b = generate_population(50, covs, out, acc, seed=99, first_id=10)
    assert a.ids.tolist() == list(range(10, 60))
    assert a.records() == b.records()
    c = generate_population(50, covs, out, acc, seed=100, first_id=10)
    assert a.records() != c.records()


def test_records_round_trip():
    pop = generate_population(20, (CovariateSpec("x"),), OutcomeModel(), AcceptanceModel.constant(0.6),
                              BiomarkerModel(0.3), seed=5)
    back = type(pop).from_records(pop.records(), pop.covariate_names)
    assert back.records() == pop.records()
    rec = pop[0]
    assert isinstance(rec, PatientRecord)
    assert rec.complier == (rec.u_accept < rec.pi_accept)


def test_binary_outcomes_and_misspecification():
    out = OutcomeModel(kind=BINARY, control_level=0.3, treatment_effect=0.2)
    pop = generate_population(2000, (), out, AcceptanceModel(), seed=2)
    assert set(np.unique(pop.y0)) <= {0.0, 1.0}
    assert np.all(pop.y1 >= pop.y0)  # shared uniform: risk increase never removes an event
    bad = OutcomeModel(kind=BINARY, control_level=0.5, treatment_effect=0.1, covariate_coefs=(0.3,))
    with pytest.raises(ModelMisspecificationError) as err:
        generate_population(500, (CovariateSpec("x", Normal(0, 1)),), bad, AcceptanceModel(), seed=4)
    assert err.value.index is not None
    assert f"index {err.value.index}" in str(err.value)


def test_biomarker_prevalence():
    pop = generate_population(50_000, (), OutcomeModel(), AcceptanceModel(), BiomarkerModel(0.1), seed=8)
    assert abs(pop.biomarker.mean() - 0.1) < 3 * math.sqrt(0.09 / 50_000)


class TestCalibration:
    def test_closed_forms(self):
        assert calibrate_acceptance_intercept(AcceptanceModel(), (), 0.5, 0) == 0.0
        assert calibrate_acceptance_intercept(AcceptanceModel(), (), 0.7, 0) == pytest.approx(0.8472978603872037)

    def test_with_normal_covariate(self):
        covs = (CovariateSpec("x", Normal(0, 1)),)
        acc = AcceptanceModel(0.0, (1.0,))
        b0 = calibrate_acceptance_intercept(acc, covs, 0.7, seed=11)
        # independent draws, not the calibration sample
        x = np.random.default_rng(2024).standard_normal(200_000)
        assert 0.695 <= special.expit(b0 + x).mean() <= 0.705

    def test_monotone_in_target(self):
        covs = (CovariateSpec("x", Uniform(-1, 2)),)
        acc = AcceptanceModel(0.0, (0.8,))
        vals = [calibrate_acceptance_intercept(acc, covs, t, seed=1) for t in (0.2, 0.4, 0.6, 0.8)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_target_rate_used_by_generator(self):
        covs = (CovariateSpec("x", Normal(0, 1)),)
        pop = generate_population(100_000, covs, OutcomeModel(), AcceptanceModel(0.0, (1.5,), 0.55), seed=6)
        assert abs(pop.complier.mean() - 0.55) < 0.01

    def test_invalid_target(self):
        with pytest.raises(ValueError):
            calibrate_acceptance_intercept(AcceptanceModel(), (), 1.0, 0)

    def test_unattainable(self):
        # half the patients sit so far out on the log-odds scale that no
        # intercept in the search range brings the marginal rate below 1/2
        covs = (CovariateSpec("x", Bernoulli(0.5)),)
        with pytest.raises(CalibrationError) as err:
            calibrate_acceptance_intercept(AcceptanceModel(0.0, (1e7,)), covs, 0.3, 0)
        lo, hi = err.value.bounds
        assert lo > 0.3 and hi <= 1.0
        with pytest.raises(ValueError):
            AcceptanceModel(0.0, (float("nan"),))


class TestTruths:
    def test_mixture_closed_form(self):
        pop = generate_population(10_000, (), OutcomeModel(treatment_effect=1.0), AcceptanceModel.constant(0.7), seed=1)
        t = compute_true_estimands(pop)
        assert t.ace_received == pytest.approx(1.0, abs=1e-12)
        assert t.ace_offered == pytest.approx(0.7, abs=1e-12)
        assert t.cace == pytest.approx(1.0, abs=1e-12)

    def test_full_compliance_identity(self):
        covs = (CovariateSpec("x"),)
        out = OutcomeModel(treatment_effect=0.4, effect_heterogeneity=(0.5,))
        pop = generate_population(3000, covs, out, AcceptanceModel(float("inf")), seed=2)
        t = compute_true_estimands(pop)
        assert t.acceptance_rate == 1.0
        assert t.ace_offered == pytest.approx(t.ace_received, abs=1e-12)
        assert t.cace == pytest.approx(t.ace_received, abs=1e-12)

    def test_null_effect(self):
        pop = generate_population(1000, (), OutcomeModel(treatment_effect=0.0), AcceptanceModel.constant(0.4), seed=3)
        t = compute_true_estimands(pop)
        assert (t.ace_received, t.ace_offered, t.cace) == (0.0, 0.0, 0.0)

    def test_direct_summation_oracle(self):
        covs = (CovariateSpec("x"),)
        out = OutcomeModel(treatment_effect=1.0, effect_heterogeneity=(0.7,))
        pop = generate_population(5000, covs, out, AcceptanceModel(0.2, (1.0,)), seed=4)
        t = compute_true_estimands(pop)
        recs = pop.records()
        tau = [r.y1 - r.y0 for r in recs]
        assert t.ace_received == pytest.approx(sum(tau) / len(recs), rel=1e-12)
        assert t.ace_offered == pytest.approx(sum(r.pi_accept * (r.y1 - r.y0) for r in recs) / len(recs), rel=1e-12)
        comp = [r.y1 - r.y0 for r in recs if r.complier]
        assert t.cace == pytest.approx(sum(comp) / len(comp), rel=1e-12)
        assert t.n_compliers == len(comp)

    def test_accepts_record_lists(self):
        pop = generate_population(50, (), OutcomeModel(treatment_effect=2.0), AcceptanceModel.constant(0.5), seed=9)
        assert compute_true_estimands(pop.records()) == compute_true_estimands(pop)

    def test_errors(self):
        with pytest.raises(UndefinedEstimateError):
            compute_true_estimands([])
        pop = generate_population(10, (), OutcomeModel(treatment_effect=1.0), AcceptanceModel(-math.inf), seed=1)
        with pytest.raises(UndefinedEstimateError):
            compute_true_estimands(pop)


@settings(max_examples=40, deadline=None)
@given(
    effect=st.floats(-3, 3),
    rate=st.floats(0.05, 1.0),
    seed=st.integers(0, 2**32),
)
def test_offered_is_rate_times_received_when_independent(effect, rate, seed):
    pop = generate_population(200, (), OutcomeModel(treatment_effect=effect),
                              AcceptanceModel(0.0, (), rate), seed=seed)
    t = compute_true_estimands(pop) if pop.complier.any() else None
    if t is None:
        return
    assert t.ace_offered == pytest.approx(t.acceptance_rate * t.ace_received, abs=1e-12)
    assert t.cace == pytest.approx(t.ace_received, abs=1e-12)
