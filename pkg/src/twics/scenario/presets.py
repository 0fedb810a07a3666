"""Design-level presets for seven oncology trials run inside cohorts.

Presets fix what the trials reported: planned size, sampling approach,
variant and, where known, planned versus observed refusal. The simulated
population uses the observed refusal rate, and the planned one is kept
under ``planning``. No trial published an outcome model, so every preset
ships with a zero treatment effect that the user is expected to replace.
"""

from __future__ import annotations

import copy

from .config import ScenarioConfig, validate_config_dict

EFFECT_PLACEHOLDER = (
    "population.outcome.treatment_effect is a placeholder (0.0); set it to the effect you want to study"
)
REFUSAL_UNREPORTED = "refusal rate was not reported; population.acceptance defaults to full acceptance"

# MEDOCC-CrEATE: about 60 marker-positive patients among 1320 randomised.
# Only the offered half is tested, so 60 detected positives need a
# prevalence of 60 / (1320 / 2) among tested patients.
MEDOCC_TOTAL = 1320
MEDOCC_POSITIVES = 60
MEDOCC_PREVALENCE = MEDOCC_POSITIVES / (MEDOCC_TOTAL / 2)

_STANDARD_ANALYSES = ["ACE_Offered", "PerProtocol", "CACE_Wald", "CACE_2SPS"]


def _base(name: str, description: str, target_n: int, sampling: dict, refusal: float | None, **extra) -> dict:
    cfg = {
        "schema_version": 1,
        "name": name,
        "description": description,
        "population": {
            "outcome": {"kind": "continuous", "treatment_effect": 0.0, "noise_sd": 1.0},
            "acceptance": {"refusal_rate": refusal if refusal is not None else 0.0},
        },
        "cohort": {"broad_consent_rate": 0.9},
        "design": {"trial_id": name, "target_n": target_n, "sampling": sampling},
        "analyses": list(_STANDARD_ANALYSES),
        "replications": 200,
        "master_seed": 20240101,
        "outputs": f"results/{name}",
        "bootstrap_reps": 200,
        "warnings": [EFFECT_PLACEHOLDER] + ([] if refusal is not None else [REFUSAL_UNREPORTED]),
    }
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def _rectal_boost_design() -> dict:
    return {"trial_id": "rectal_boost", "target_n": 120, "sampling": {"approach": "on_entry"}}


def _raw_presets() -> dict[str, dict]:
    return {
        "tilt": _base(
            "tilt",
            "Feasibility trial of an investigational product in mesothelioma; one randomisation of a closed cohort.",
            45,
            {"approach": "single_batch"},
            None,
        ),
        "rectal_boost": _base(
            "rectal_boost",
            "Pre-operative boost in rectal cancer; patients randomised right after cohort entry.",
            120,
            {"approach": "on_entry"},
            0.27,
            cohort={"enrollment_per_tick": 2},
            planning={"planned_refusal": 0.20, "actual_refusal": 0.27},
        ),
        "honey": _base(
            "honey",
            "Hyperbaric oxygen for late radiation toxicity in breast cancer; repeated randomisation rounds.",
            120,
            {"approach": "multiple_batch", "batch_ticks": [6, 12, 18, 24], "per_batch_cap": 40},
            None,
            cohort={"enrollment_per_tick": 6},
        ),
        "umbrella_fit": _base(
            "umbrella_fit",
            "Exercise programme for breast cancer survivors; repeated randomisation rounds.",
            192,
            {"approach": "multiple_batch", "batch_ticks": [6, 12, 18, 24, 30], "per_batch_cap": 50},
            0.45,
            cohort={"enrollment_per_tick": 8},
            planning={"planned_refusal": 0.30, "actual_refusal": 0.45},
        ),
        "medocc_create": _base(
            "medocc_create",
            "Marker-guided adjuvant chemotherapy in colon cancer; only the offered arm is tested and "
            "only marker-positive patients are offered treatment.",
            MEDOCC_TOTAL,
            {"approach": "on_entry"},
            None,
            population={"biomarker": {"prevalence": MEDOCC_PREVALENCE}},
            cohort={"broad_consent_rate": 1.0, "enrollment_per_tick": 20},
            design={"variant": "biomarker_gated", "testing_consent_prob": 1.0},
            analyses=["ACE_Offered", "CACE_Wald"],
            planning={"planned_positives": MEDOCC_POSITIVES},
        ),
        "sponge": _base(
            "sponge",
            "Retractor sponge in laparoscopic colorectal surgery; run in the same cohort after the rectal "
            "boost trial, whose participants stay eligible.",
            196,
            {"approach": "single_batch"},
            None,
            prior_designs=[_rectal_boost_design()],
            cohort={"enrollment_per_tick": 4},
        ),
        "vertical": _base(
            "vertical",
            "Stereotactic versus conventional radiotherapy for spinal metastases; randomised at cohort entry.",
            110,
            {"approach": "on_entry"},
            0.27,
            cohort={"enrollment_per_tick": 2},
            planning={"planned_refusal": 0.10, "actual_refusal": 0.27},
        ),
    }


def preset_names() -> list[str]:
    return list(_raw_presets())


def preset_catalog() -> dict[str, ScenarioConfig]:
    """All presets as validated configs, in catalogue order."""
    return {name: validate_config_dict(raw) for name, raw in _raw_presets().items()}


def preset(name: str) -> ScenarioConfig:
    raw = _raw_presets()
    if name not in raw:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(raw)}")
    return validate_config_dict(copy.deepcopy(raw[name]))
