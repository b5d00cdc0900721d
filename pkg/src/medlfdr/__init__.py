"""Large-scale mediator screening with joint local false discovery rates.

The pipeline: per-hypothesis regression coefficients from the structural
model, an empirical-Bayes mixture fitted by EM, posterior composite-null
scores, and a data-adaptive step-up selection that controls the FDR.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError
from .evaluate import (EvalReport, StudyReport, replicate_study, run_pipeline,
                       score, w_unbiasedness_check)
from .mixture import (EmConfig, EmTrace, GeneralMixtureModel, MixtureModel,
                      Responsibilities, amle_ratio, em_fit, em_fit_two_step,
                      em_step, fit_model, loglik, pi_matrix, responsibilities)
from .regression import (CoefStats, Dataset, FitFlag, fit_binary,
                         fit_interaction, fit_linear)
from .screening import (LfdrScores, ScreeningResult, compute_lfdr,
                        oracle_select, step_up_select)
from .simulate import (H00, H01, H10, H11, PI_DENSE, PI_SPARSE, LabeledDataset,
                       SimScenario, generate, natural_indirect_effect,
                       sample_stats)

__all__ = [
    "__version__",
    "ConfigError", "DataError", "NumericError",
    "Dataset", "CoefStats", "FitFlag",
    "fit_linear", "fit_binary", "fit_interaction",
    "MixtureModel", "GeneralMixtureModel", "Responsibilities",
    "EmConfig", "EmTrace", "em_fit", "em_fit_two_step", "em_step",
    "fit_model", "loglik", "amle_ratio", "responsibilities", "pi_matrix",
    "LfdrScores", "ScreeningResult", "compute_lfdr", "step_up_select",
    "oracle_select",
    "SimScenario", "LabeledDataset", "generate", "natural_indirect_effect",
    "sample_stats", "H00", "H10", "H01", "H11", "PI_DENSE", "PI_SPARSE",
    "EvalReport", "StudyReport", "score", "replicate_study", "run_pipeline",
    "w_unbiasedness_check",
]
