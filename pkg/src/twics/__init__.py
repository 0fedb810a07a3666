"""Simulation and analysis of randomised trials embedded in cohorts.

Patients in an observational cohort give broad consent to future
randomisation. Those randomised to the alternative treatment are then asked
for trial consent and may refuse; controls are never told about the trial.
The package simulates this design end to end and provides the estimators
and sample-size tools needed to plan and analyse it.
"""

from .cohort import (
    Aligned,
    CohortRegistry,
    ConsentState,
    EligibilityCriteria,
    MeasurementSchedule,
    Mismatch,
    Predicate,
    Stage3,
    check_schedule_alignment,
    enroll_patient,
    enroll_population,
    screen_eligible,
)
from .design import (
    AdaptivePlan,
    DesignAssumptions,
    NonInferiorityResult,
    PowerResult,
    SampleSize,
    adaptive_sample_size_reestimation,
    mc_power,
    mc_power_adaptive,
    noninferiority_decision,
    sample_size,
    sample_size_binary,
    sample_size_continuous,
)
from .errors import (
    CalibrationError,
    CapacityError,
    ConfigurationError,
    ConsentViolationError,
    CriteriaValidationError,
    DuplicateCandidateError,
    EnrollmentConflictError,
    EstimationError,
    InfeasibleDesignError,
    InstabilityError,
    ModelMisspecificationError,
    RecruitmentShortfallError,
    ScenarioFailure,
    SeparationError,
    SingularMatrixError,
    TwicsError,
    UndefinedEstimateError,
)
from .estimators import (
    ESTIMATORS,
    EstimateResult,
    Estimand,
    bootstrap_ci,
    estimate_as_treated,
    estimate_itt,
    estimate_iv_2sps,
    estimate_iv_2sri,
    estimate_per_protocol,
    estimate_wald_cace,
    propensity_accepter_analysis,
    run_estimator,
)
from .execution import (
    BIOMARKER_GATED,
    STANDARD,
    EventKind,
    IntercurrentEventLog,
    RefusalRate,
    TrialData,
    TrialDesign,
    TrialRow,
    execute_trial,
    observed_refusal_rate,
    record_consent,
)
from .population import (
    BINARY,
    CONTINUOUS,
    AcceptanceModel,
    Bernoulli,
    BiomarkerModel,
    CovariateSpec,
    Normal,
    OutcomeModel,
    PatientRecord,
    Population,
    TrueEstimands,
    Uniform,
    calibrate_acceptance_intercept,
    compute_true_estimands,
    generate_population,
)
from .randomization import (
    Arm,
    Assignment,
    Assignments,
    MultipleBatch,
    OnEntry,
    PermutedBlocks,
    SimpleBernoulli,
    SingleBatch,
    allocate,
    run_sampling_plan,
)
from .regression import RegressionFit, fit_logistic_irls, fit_ols
from .simulate import CohortSpec, PopulationSpec, Replicate, simulate_replication

__version__ = "0.1.0"
