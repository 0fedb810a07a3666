"""
Testing only the offered arm
============================

In the biomarker-gated variant, only patients randomised to the offered
pathway are tested, and only marker-positive ones are offered treatment.
Controls are never tested, so their marker status stays unknown.
"""

import numpy as np

from twics import AcceptanceModel, BiomarkerModel, OutcomeModel, PopulationSpec, TrialDesign
from twics import EventKind, estimate_itt, estimate_wald_cace, simulate_replication

spec = PopulationSpec((), OutcomeModel(treatment_effect=1.0), AcceptanceModel.constant(0.8), BiomarkerModel(60 / 660))
design = TrialDesign(target_n=1320, variant="biomarker_gated", testing_consent_prob=0.95)
rep = simulate_replication(spec, design, seed=12)
d = rep.data

print("tested per arm:", int(d.tested[d.z == 1].sum()), int(d.tested[d.z == 0].sum()))
print("marker-positive among tested:", int((d.biomarker_pos == 1).sum()))
print("treated:", int(d.d.sum()), " refusals logged:", rep.log.count(EventKind.REFUSAL))

truth = rep.truths(design)
print(f"offer effect {estimate_itt(d).point:+.3f} (truth {truth.ace_offered:+.3f})")
print(f"complier effect {estimate_wald_cace(d).point:+.3f} (truth {truth.cace:+.3f})")
print("share of randomised who could ever be treated:", np.round(truth.acceptance_rate, 3))
