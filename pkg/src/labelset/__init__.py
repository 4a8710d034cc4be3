"""Set-valued classifiers with total or class-specific coverage control."""

from .calibration import (
    ScoreSample,
    calibrate,
    conformal_p_value,
    conformal_threshold,
    plugin_class_thresholds,
    plugin_total_threshold,
)
from .completion import (
    AccretiveTrace,
    accretive_complete,
    baseline_fill,
    empirical_ambiguity,
    total_coverage_complete,
)
from .core import (
    INCLUDE_ALL,
    CoverageSpec,
    LabeledDataset,
    PosteriorModel,
    PredictionSet,
    SplitPlan,
    ThresholdVector,
    is_admissible_sufficient,
    predict_set,
    predict_sets,
    read_csv,
    split,
)
from .errors import (
    ArtifactVersionError,
    DataError,
    InvalidArgumentError,
    LabelSetError,
    LeakageError,
)
from .estimators import (
    fit_kernel,
    fit_knn,
    fit_logistic,
    kernel_posterior,
    knn_posterior,
    logistic_posterior,
)
from .evaluation import EvaluationReport, evaluate, size_histogram

__version__ = "0.1.0"
