"""
Planning for refusal
====================

Sample size grows with 1 / acceptance**2. Underestimating refusal at the
design stage costs power; re-estimating n from the refusals seen at an
interim look recovers it, as long as the cohort is big enough.
"""

from twics import AcceptanceModel, AdaptivePlan, DesignAssumptions, OutcomeModel, PopulationSpec, TrialDesign
from twics import CapacityError, adaptive_sample_size_reestimation, mc_power, mc_power_adaptive, sample_size
from twics import simulate_replication

for q in (1.0, 0.9, 0.73, 0.55):
    n = sample_size(DesignAssumptions(effect=0.5, planned_acceptance=q))
    print(f"acceptance {q:.2f}: {n.n_per_arm} per arm (x{n.inflation_factor:.2f})")

binary = sample_size(DesignAssumptions(p0=0.3, p1=0.5, planned_acceptance=0.8))
print(f"binary 30% vs 50% at 80% acceptance: {binary.n_per_arm} per arm, diluted risk {binary.inputs['diluted_p1']:.2f}")

# planned 10% refusal, but 27% of patients actually decline
truth = PopulationSpec((), OutcomeModel(treatment_effect=0.5), AcceptanceModel.constant(0.73))
plan = AdaptivePlan(DesignAssumptions(effect=0.5, planned_acceptance=0.90))
n_plan = sample_size(plan.assumptions).n_per_arm
naive = mc_power(TrialDesign(), truth, n_plan, replications=500, seed=4)
adaptive = mc_power_adaptive(plan, TrialDesign(), truth, replications=500, seed=4)
print(f"planned n={n_plan}: power {naive.power:.3f}; with re-estimation: {adaptive.power:.3f} "
      f"(mean n {adaptive.n_per_arm:.0f})")

# a closed cohort of 110 cannot absorb the larger trial
interim = simulate_replication(truth, TrialDesign(target_n=60), seed=2).data
try:
    adaptive_sample_size_reestimation(AdaptivePlan(plan.assumptions, cohort_capacity=110), interim)
except CapacityError as exc:
    print("capacity check:", exc)
