import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twics.cohort import CohortRegistry, Stage3, enroll_population
from twics.errors import ConfigurationError, UndefinedEstimateError
from twics.execution import (
    BIOMARKER_GATED,
    EventKind,
    TrialData,
    TrialDesign,
    TrialRow,
    execute_trial,
    observed_refusal_rate,
    record_consent,
)
from twics.population import AcceptanceModel, BiomarkerModel, CovariateSpec, OutcomeModel, generate_population
from twics.randomization import Assignments, SimpleBernoulli
from twics.simulate import CohortSpec, PopulationSpec, simulate_replication


def spec(rate=0.7, effect=1.0, biomarker=None):
    return PopulationSpec((), OutcomeModel(treatment_effect=effect), AcceptanceModel.constant(rate), biomarker)


def test_full_compliance():
    rep = simulate_replication(spec(rate=1.0), TrialDesign(target_n=4000), seed=1)
    assert rep.log.count(EventKind.REFUSAL) == 0
    d = rep.data
    diff = d.y[d.z == 1].mean() - d.y[d.z == 0].mean()
    assert abs(diff - 1.0) < 3 * math.sqrt(2 / 2000)
    np.testing.assert_array_equal(d.d, d.z)


def test_refusal_rate_large_sample():
    rep = simulate_replication(spec(rate=0.73), TrialDesign(target_n=200_000), seed=2)
    rr = observed_refusal_rate(rep.data)
    assert rr.denominator == 100_000
    assert abs(rr.rate - 0.27) < 3 * math.sqrt(0.73 * 0.27 / 1e5)


def test_exclusion_restriction_and_outcomes():
    rep = simulate_replication(spec(rate=0.6), TrialDesign(target_n=1000), seed=3)
    d, pop = rep.data, rep.participants()
    idx = pop.index_of(d.ids)
    np.testing.assert_array_equal(d.y[d.d == 0], pop.y0[idx][d.d == 0])
    np.testing.assert_array_equal(d.y[d.d == 1], pop.y1[idx][d.d == 1])
    refusers = d.refused
    assert refusers.any()
    np.testing.assert_array_equal(d.y[refusers], pop.y0[idx][refusers])
    # acceptance is the population's latent draw: compliers are exactly the accepters
    np.testing.assert_array_equal(d.accepted[d.z == 1], pop.complier[idx][d.z == 1])


def test_refusal_events_match_rows():
    rep = simulate_replication(spec(rate=0.5), TrialDesign(target_n=300), seed=4)
    ids = set(rep.log.ids_of(EventKind.REFUSAL).tolist())
    assert ids == set(rep.data.ids[rep.data.refused].tolist())
    for pid, kind, tick in rep.log:
        assert kind == EventKind.REFUSAL and rep.registry.arm_of("trial", pid) == 1


def test_consent_written_back():
    rep = simulate_replication(spec(rate=0.5), TrialDesign(target_n=40), seed=5)
    for row in rep.data:
        assert rep.registry.stage3("trial", row.id) == row.stage3
        if row.z == 0:
            assert row.stage3 == Stage3.NOT_OFFERED and row.a is None and not row.offered


def test_determinism():
    a = simulate_replication(spec(), TrialDesign(target_n=200, control_contamination_prob=0.1), seed=6)
    b = simulate_replication(spec(), TrialDesign(target_n=200, control_contamination_prob=0.1), seed=6)
    assert a.data.to_csv() == b.data.to_csv()
    assert list(a.log) == list(b.log)


def test_execution_does_not_mutate_registry():
    rep = simulate_replication(spec(), TrialDesign(target_n=100), seed=7)
    again, _ = execute_trial(TrialDesign(target_n=100), rep.registry, rep.population, seed=123)
    again2, _ = execute_trial(TrialDesign(target_n=100), rep.registry, rep.population, seed=123)
    assert again.to_csv() == again2.to_csv()


class TestControlKnobs:
    def test_contamination(self):
        design = TrialDesign(target_n=4000, control_contamination_prob=0.2)
        rep = simulate_replication(spec(), design, seed=8)
        d = rep.data
        ctrl = d.z == 0
        assert abs(d.contaminated[ctrl].mean() - 0.2) < 0.04
        assert np.all(d.d[d.contaminated] == 1)
        assert np.all(d.stage3[ctrl] == Stage3.NOT_OFFERED)
        assert rep.log.count(EventKind.CONTAMINATION) == int(d.contaminated.sum())

    def test_soc_refusal_logged_only(self):
        design = TrialDesign(target_n=2000, control_soc_refusal_prob=0.3)
        rep = simulate_replication(spec(), design, seed=9)
        pop = rep.participants()
        np.testing.assert_array_equal(rep.data.y[rep.data.z == 0], pop.y0[pop.index_of(rep.data.ids)][rep.data.z == 0])
        ids = rep.log.ids_of(EventKind.CONTROL_SOC_REFUSAL)
        assert len(ids) > 0 and all(rep.registry.arm_of("trial", i) == 0 for i in ids.tolist())

    def test_soc_refusal_third_outcome(self):
        design = TrialDesign(target_n=500, control_soc_refusal_prob=0.5, control_soc_refusal_outcome=-9.0)
        rep = simulate_replication(spec(), design, seed=10)
        ids = set(rep.log.ids_of(EventKind.CONTROL_SOC_REFUSAL).tolist())
        for row in rep.data:
            assert (row.y == -9.0) == (row.id in ids)

    def test_probability_bounds(self):
        with pytest.raises(ConfigurationError):
            TrialDesign(control_contamination_prob=1.5)
        with pytest.raises(ConfigurationError):
            TrialDesign(variant="adaptive")


class TestBiomarkerGated:
    def test_requires_biomarker(self):
        with pytest.raises(ConfigurationError):
            simulate_replication(spec(), TrialDesign(target_n=10, variant=BIOMARKER_GATED), seed=0)

    def test_exposure_subset(self):
        design = TrialDesign(target_n=2000, variant=BIOMARKER_GATED, testing_consent_prob=0.8)
        rep = simulate_replication(spec(rate=0.6, biomarker=BiomarkerModel(0.3)), design, seed=11)
        d = rep.data
        assert not d.tested[d.z == 0].any()
        exposed = d.d == 1
        assert np.all(d.biomarker_pos[exposed] == 1)
        assert np.all(d.stage3[exposed] == Stage3.CONSENTED)
        assert np.all(d.tested[exposed] & (d.z[exposed] == 1))
        # testing refusals are logged as refusals
        assert set(d.ids[(d.z == 1) & ~d.tested].tolist()) <= set(rep.log.ids_of(EventKind.REFUSAL).tolist())

    def test_sixty_positives_when_all_are_tested(self):
        # 1320 patients all in the tested pathway at 60/1320 prevalence
        counts = []
        for r in range(300):
            pop = generate_population(1320, (), OutcomeModel(), AcceptanceModel(), BiomarkerModel(60 / 1320), seed=r)
            reg = enroll_population(CohortRegistry(), pop, True, 0)
            z = np.ones(1320, dtype=np.int8)
            reg.record_assignments(Assignments("m", pop.ids.copy(), z, np.zeros(1320, np.int64), np.zeros(1320, np.int64)))
            data, _ = execute_trial(TrialDesign("m", variant=BIOMARKER_GATED, target_n=1320), reg, pop, seed=r)
            counts.append(int((data.tested & (data.biomarker_pos == 1)).sum()))
        se = np.std(counts, ddof=1) / math.sqrt(len(counts))
        assert abs(np.mean(counts) - 60) < 3 * se


class TestRefusalRate:
    @staticmethod
    def rows(n_offered, n_refuse, n_control):
        out = []
        for i in range(n_offered):
            acc = i >= n_refuse
            out.append(TrialRow(i, 1, True, Stage3.CONSENTED if acc else Stage3.REFUSED, acc, False, None,
                                int(acc), 0.0, ()))
        for j in range(n_control):
            out.append(TrialRow(n_offered + j, 0, False, Stage3.NOT_OFFERED, None, False, None, 0, 0.0, ()))
        return out

    def test_one_in_six(self):
        rr = observed_refusal_rate(self.rows(6, 1, 6))
        assert rr.fraction == Fraction(1, 6)
        rate, num, den = rr
        assert (num, den) == (1, 6) and rate == pytest.approx(1 / 6)

    def test_boundaries(self):
        assert observed_refusal_rate(self.rows(5, 0, 5)).rate == 0.0
        assert observed_refusal_rate(self.rows(5, 5, 5)).rate == 1.0
        with pytest.raises(UndefinedEstimateError):
            observed_refusal_rate(self.rows(0, 0, 5))


def test_csv_layout():
    rows = [
        TrialRow(1, 1, True, Stage3.CONSENTED, True, False, None, 1, 2.5, (0.5,)),
        TrialRow(2, 0, False, Stage3.NOT_OFFERED, None, False, None, 0, -1.0, (1.25,)),
    ]
    text = TrialData.from_rows(rows).to_csv()
    assert text == "id,z,offered,a,tested,biomarker_pos,d,y,x1\n1,1,1,1,0,,1,2.5,0.5\n2,0,0,,0,,0,-1.0,1.25\n"


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(2, 150),
    rate=st.floats(0.0, 1.0),
    prevalence=st.floats(0.0, 1.0),
    gated=st.booleans(),
    test_consent=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**32),
)
def test_control_blindness_and_one_sided_refusal(n, rate, prevalence, gated, test_consent, seed):
    acc = AcceptanceModel(intercept=math.inf if rate == 1 else (-math.inf if rate == 0 else math.log(rate / (1 - rate))))
    pop_spec = PopulationSpec((CovariateSpec("x"),), OutcomeModel(treatment_effect=0.3), acc, BiomarkerModel(prevalence))
    design = TrialDesign(target_n=n, allocator=SimpleBernoulli(0.5), testing_consent_prob=test_consent,
                         variant=BIOMARKER_GATED if gated else "standard")
    rep = simulate_replication(pop_spec, design, seed, CohortSpec(broad_consent_rate=0.8))
    d = rep.data
    ctrl = d.z == 0
    assert np.all(d.d[ctrl] == 0) and not d.tested[ctrl].any() and not d.offered[ctrl].any()
    assert np.all(d.stage3[ctrl] == Stage3.NOT_OFFERED)
    for pid in rep.log.ids_of(EventKind.REFUSAL).tolist():
        assert rep.registry.arm_of("trial", pid) == 1
    assert all(rep.registry.consent_state(pid).stage2_broad_randomization for pid in d.ids.tolist())
    if gated:
        exposed = d.d == 1
        assert np.all(d.biomarker_pos[exposed] == 1) and np.all(d.tested[exposed])


def test_record_consent_writes_states():
    pop = generate_population(30, (), OutcomeModel(), AcceptanceModel.constant(0.5), seed=1)
    reg = enroll_population(CohortRegistry(), pop, True, 0)
    reg.record_assignments(Assignments("k", pop.ids.copy(), (pop.ids % 2).astype(np.int8),
                                       np.zeros(30, np.int64), np.zeros(30, np.int64)))
    data, _ = execute_trial(TrialDesign("k", target_n=30), reg, pop, seed=3)
    record_consent(reg, data)
    assert [reg.stage3("k", int(i)) for i in data.ids] == data.stage3.tolist()
