"""Semi-supervised estimation and evaluation of binary prediction rules
under stratified labeling designs."""

__version__ = "0.1.0"

from .basis import BasisMatrix, BasisSpec, expand, pc_basis
from .cross_validation import CvConfig, cv_accuracy, ensemble, partition
from .data_model import (
    DatasetSchema,
    SamplingDesign,
    SemiSupervisedDataset,
    build_design,
    build_pooled_design,
    load_csv,
    relabel_strata,
    write_csv,
)
from .ee_solver import SolverConfig, SolveOutcome, default_ridge, real_data_ridge
from .estimators import (
    BRIER,
    OMR,
    AccuracyEstimate,
    AccuracyMetric,
    ImputationFit,
    ThetaFit,
    estimate_accuracy_dr,
    estimate_accuracy_intrinsic,
    estimate_accuracy_sl,
    estimate_accuracy_ssl,
    fit_imputation,
    fit_intrinsic_theta,
    fit_theta_dr,
    fit_theta_sl,
    fit_theta_ssl,
)
from .inference import (
    PerturbationConfig,
    perturb_once,
    resample_se,
    theta_ssl_covariance,
)
from .allocation import (
    AllocationInput,
    compare_designs,
    estimate_stratum_sds,
    neyman,
    pilot_allocation,
)
from .links import EXPIT, IDENTITY, PROBIT, LinkFunction, custom_link, get_link
from .simulation import (
    MonteCarloReport,
    ScenarioSpec,
    StudyConfig,
    generate,
    oracle_truth,
    run_study,
    scenario_basis_spec,
    summarize_study,
)
