import csv
import io
import json
import math

import pytest

from twics.errors import ScenarioFailure
from twics.estimators import EstimateResult, Estimand
from twics.scenario import (
    ConfigValidationError,
    aggregate_replications,
    build_scenario,
    emit_reports,
    load_and_validate_config,
    preset,
    preset_catalog,
    preset_names,
    run_scenario,
    validate_config_dict,
)
from twics.scenario.config import set_dotted
from twics.scenario.presets import MEDOCC_PREVALENCE


def minimal(**over):
    cfg = {
        "schema_version": 1,
        "population": {"outcome": {"treatment_effect": 1.0}, "acceptance": {"rate": 0.7}},
        "design": {"target_n": 60},
        "replications": 20,
        "master_seed": 5,
    }
    cfg.update(over)
    return cfg


def result(point, lo, hi):
    return EstimateResult(Estimand.ACE_OFFERED, point, 1.0, (lo, hi), {}, "test")


class TestValidation:
    def test_minimal_defaults(self):
        cfg = validate_config_dict(minimal())
        assert cfg.analyses == [Estimand.ACE_OFFERED]
        assert cfg.bootstrap_reps == 200 and cfg.ci_level == 0.95
        assert cfg.design.sampling.approach == "single_batch"
        assert cfg.design.allocator.block_size == 4

    def test_zero_replications_names_field(self):
        with pytest.raises(ConfigValidationError) as err:
            validate_config_dict(minimal(replications=0))
        assert any(e.startswith("replications") for e in err.value.errors)

    def test_gated_without_biomarker(self):
        with pytest.raises(ConfigValidationError) as err:
            validate_config_dict(minimal(design={"target_n": 10, "variant": "biomarker_gated"}))
        assert any("biomarker" in e for e in err.value.errors)

    def test_unknown_key(self):
        with pytest.raises(ConfigValidationError) as err:
            validate_config_dict(minimal(replicatons=5))
        assert any("replicatons" in e for e in err.value.errors)

    def test_missing_schema_version(self):
        cfg = minimal()
        del cfg["schema_version"]
        with pytest.raises(ConfigValidationError):
            validate_config_dict(cfg)

    def test_all_errors_collected(self):
        with pytest.raises(ConfigValidationError) as err:
            validate_config_dict(minimal(replications=0, bootstrap_reps=-1, extra=1))
        assert len(err.value.errors) >= 3

    def test_cross_field_errors_collected(self):
        cfg = minimal(
            analyses=["CACE_Propensity", "CACE_2SPS"],
            bootstrap_reps=50,
            design={"target_n": 10, "allocator": {"type": "permuted_blocks", "block_size": 3},
                    "eligibility": {"predicates": [{"covariate": "age", "low": 50}]}},
        )
        with pytest.raises(ConfigValidationError) as err:
            validate_config_dict(cfg)
        text = "\n".join(err.value.errors)
        for fragment in ("CACE_Propensity", "bootstrap_reps", "block_size", "'age'"):
            assert fragment in text

    def test_schedule_alignment(self):
        with pytest.raises(ConfigValidationError) as err:
            validate_config_dict(minimal(cohort={"schedule": [0, 6, 12]}, design={"target_n": 10, "endpoint_tick": 13}))
        assert any("endpoint_tick" in e for e in err.value.errors)
        validate_config_dict(minimal(cohort={"schedule": [0, 6, 12]}, design={"target_n": 10, "endpoint_tick": 12}))

    def test_acceptance_one_of(self):
        with pytest.raises(ConfigValidationError):
            validate_config_dict(minimal(population={"outcome": {"treatment_effect": 1},
                                                     "acceptance": {"rate": 0.5, "refusal_rate": 0.5}}))

    def test_malformed_json_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigValidationError) as err:
            load_and_validate_config(p)
        assert "malformed JSON" in err.value.errors[0]

    def test_round_trip(self, tmp_path):
        cfg = validate_config_dict(minimal())
        p = tmp_path / "c.json"
        p.write_text(cfg.to_json())
        assert load_and_validate_config(p) == cfg

    def test_set_dotted(self):
        d = {"a": {"b": 1}, "l": [{"x": 1}]}
        assert set_dotted(d, "a.b", 2) == {"a": {"b": 2}, "l": [{"x": 1}]}
        assert set_dotted(d, "l.0.x", 3)["l"][0]["x"] == 3
        assert d["a"]["b"] == 1
        with pytest.raises(KeyError):
            set_dotted(d, "q.r", 1)

    def test_bad_sweep_value(self):
        with pytest.raises(ConfigValidationError) as err:
            validate_config_dict(minimal(sweep={"parameter": "population.acceptance.rate", "values": [0.5, 2.0]}))
        assert any("sweep value 2.0" in e for e in err.value.errors)


class TestBuild:
    def test_translation(self):
        cfg = validate_config_dict(minimal(
            population={
                "covariates": [{"name": "age", "distribution": {"type": "normal", "mean": 60, "sd": 10}},
                               {"name": "male", "distribution": {"type": "bernoulli", "p": 0.4}}],
                "outcome": {"treatment_effect": 1.0, "covariate_coefs": {"male": 0.3}},
                "acceptance": {"refusal_rate": 0.27, "covariate_coefs": {"age": 0.01}},
            }
        ))
        sc = build_scenario(cfg)
        assert sc.population.outcome.covariate_coefs == (0.0, 0.3)
        assert sc.population.acceptance.covariate_coefs == (0.01, 0.0)
        assert sc.population.acceptance.target_marginal_rate == pytest.approx(0.73)
        assert sc.design.target_n == 60


class TestAggregate:
    def test_two_point_example(self):
        res = aggregate_replications([{"ACE_Offered": result(0.0, -1, 1)}, {"ACE_Offered": result(2.0, 1, 3)}], [1.0, 1.0])
        e = res.estimate("ACE_Offered")
        assert e.bias == 0.0 and e.emp_se == pytest.approx(math.sqrt(2))
        assert e.coverage == 1.0 and e.reject_rate == 0.5 and e.n_reps == 2

    def test_failures_counted(self):
        res = aggregate_replications([{"ACE_Offered": None}, {"ACE_Offered": result(1.0, 0, 2)}], [1.0, 1.0])
        assert res.failures == {"ACE_Offered": 1}
        assert res.estimate("ACE_Offered").n_reps == 1

    def test_truth_mapping(self):
        per = [{"CACE_Wald": EstimateResult(Estimand.CACE_WALD, 1.0, 0.1, (0.8, 1.2), {}, "t"),
                "ACE_Offered": result(0.7, 0.5, 0.9)}]
        truths = [{"ace_offered": 0.7, "ace_received": 1.0, "cace": 1.0}]
        res = aggregate_replications(per, truths)
        assert res.estimate("CACE_Wald").bias == 0.0
        assert res.estimate("ACE_Offered").bias == pytest.approx(0.0)


class TestRun:
    def test_reports_and_rerun_identical(self, tmp_path):
        cfg = validate_config_dict(minimal(analyses=["ACE_Offered"]))
        a = emit_reports(run_scenario(cfg), tmp_path / "a")
        b = emit_reports(run_scenario(cfg), tmp_path / "b")
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()
        lines = (tmp_path / "a" / "estimates.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == "label,mean_point,truth,bias,emp_se,mean_se,coverage,reject_rate,n_reps"
        refusal = list(csv.DictReader(io.StringIO((tmp_path / "a" / "refusal.csv").read_text())))
        assert len(refusal) == 20 and set(refusal[0]) == {"replication", "refusals", "offered", "rate"}
        doc = json.loads((tmp_path / "a" / "result.json").read_text())
        assert doc["replications"] == 20 and "outputs" not in doc["config"]

    def test_sweep_rows(self, tmp_path):
        cfg = validate_config_dict(minimal(
            analyses=["ACE_Offered", "CACE_Wald"],
            sweep={"parameter": "population.acceptance.rate", "values": [0.5, 0.7, 0.9]},
        ))
        res = run_scenario(cfg)
        assert len(res.sweep) == 6
        paths = emit_reports(res, tmp_path)
        sweep = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(sweep) == 7 and sweep[0].startswith("parameter,value,label")
        assert tmp_path / "sweep.csv" in paths

    def test_serial_equals_parallel(self):
        cfg = validate_config_dict(minimal(analyses=["ACE_Offered", "CACE_2SPS"], bootstrap_reps=100))
        a = run_scenario(cfg, workers=1).to_dict()
        b = run_scenario(cfg, workers=3).to_dict()
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_failure_threshold(self):
        # a cohort too small for the target: every replication fails
        cfg = validate_config_dict(minimal(cohort={"size": 10}))
        with pytest.raises(ScenarioFailure):
            run_scenario(cfg)

    def test_per_protocol_note(self):
        res = run_scenario(validate_config_dict(minimal(analyses=["PerProtocol"])))
        assert any("ace_received" in n for n in res.notes)


class TestPresets:
    def test_catalogue(self):
        assert preset_names() == ["tilt", "rectal_boost", "honey", "umbrella_fit", "medocc_create", "sponge", "vertical"]
        for name, cfg in preset_catalog().items():
            assert cfg.name == name
            assert cfg.population.outcome.treatment_effect == 0.0
            assert any("placeholder" in w for w in cfg.warnings)

    def test_vertical(self):
        cfg = preset("vertical")
        assert cfg.design.target_n == 110 and cfg.design.sampling.approach == "on_entry"
        assert cfg.population.acceptance.refusal_rate == 0.27
        assert cfg.planning.planned_refusal == 0.10

    def test_umbrella(self):
        cfg = preset("umbrella_fit")
        assert cfg.design.sampling.approach == "multiple_batch"
        assert cfg.planning.planned_refusal == 0.30 and cfg.planning.actual_refusal == 0.45

    def test_medocc(self):
        cfg = preset("medocc_create")
        assert cfg.design.variant == "biomarker_gated" and cfg.design.target_n == 1320
        assert cfg.population.biomarker.prevalence == pytest.approx(MEDOCC_PREVALENCE)

    def test_unknown(self):
        with pytest.raises(KeyError):
            preset("nope")


def test_main_design_may_exclude_prior_trial():
    cfg = validate_config_dict(minimal(
        prior_designs=[{"trial_id": "first", "target_n": 20}],
        design={"target_n": 20, "eligibility": {"exclude_prior_trials": ["first"]}},
    ))
    assert cfg.design.eligibility.exclude_prior_trials == ["first"]
    with pytest.raises(ConfigValidationError):
        validate_config_dict(minimal(design={"target_n": 20, "eligibility": {"exclude_prior_trials": ["ghost"]}}))
