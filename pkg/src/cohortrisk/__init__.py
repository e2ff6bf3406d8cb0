"""Case-control EMR risk prediction pipeline."""

from .cohort import Cohort, CohortSpec, build_cohort
from .design import DesignMatrix
from .emr import Dataset, load_dataset
from .evaluation import CvReport, coefficient_stability, cross_validate
from .features import FeatureDictionary, build_design_matrix, default_dictionary
from .glm import IRLSLogisticRegression, LogisticModel, fit_design, fit_logistic
from .metrics import chi_square_yates, roc_auc, sens_spec_intersection, threshold_sweep
from .stepwise import StepwiseAICSelector, backward_select, forward_select
from .synth import GeneratorConfig, analog_config, generate, generate_population

__all__ = [
    "Cohort",
    "CohortSpec",
    "CvReport",
    "Dataset",
    "DesignMatrix",
    "FeatureDictionary",
    "GeneratorConfig",
    "IRLSLogisticRegression",
    "LogisticModel",
    "StepwiseAICSelector",
    "analog_config",
    "backward_select",
    "build_cohort",
    "build_design_matrix",
    "chi_square_yates",
    "coefficient_stability",
    "cross_validate",
    "default_dictionary",
    "fit_design",
    "fit_logistic",
    "forward_select",
    "generate",
    "generate_population",
    "load_dataset",
    "roc_auc",
    "sens_spec_intersection",
    "threshold_sweep",
]
