"""
Running the trial presets
=========================

Each preset mirrors the structure of a published trial within a cohort:
its size, how patients were sampled from the cohort and, where known, the
refusal rate. Effects are placeholders, so set one before reading bias.
"""

import tempfile

from twics.scenario import emit_reports, preset, preset_names, run_scenario, validate_config_dict

for name in preset_names():
    cfg = preset(name).model_dump(mode="json")
    cfg["population"]["outcome"]["treatment_effect"] = 0.4
    cfg.update(replications=20, bootstrap_reps=100)
    result = run_scenario(validate_config_dict(cfg))
    wald = result.estimate("CACE_Wald")
    rec = result.recruitment
    print(f"{name:13s} randomised {rec['mean_randomized']:7.1f}  complete {rec['fraction_complete']:.2f}  "
          f"refusal {result.refusal_summary.get('mean', float('nan')):.2f}  "
          f"Wald mean {wald.mean_point:+.3f} (truth {wald.truth:+.3f})")

with tempfile.TemporaryDirectory() as out:
    for path in emit_reports(result, out):
        print("wrote", path.name)
