"""Wasserstein transfer learning for distribution-valued regression."""

from .errors import (
    DataError,
    DegenerateWindowError,
    InvalidArgument,
    NumericalError,
    SingularMatrixError,
    WatlError,
)
from .frechet import (
    KernelSpec,
    baseline_predict,
    global_weights,
    local_weights,
    weighted_quantile_estimate,
)
from .study import Study
from .transfer import (
    BatchFit,
    FitReport,
    TransferConfig,
    aux_estimate,
    awatl_predict,
    bias_correct,
    cross_validate,
    discrepancy_scores,
    predict_many,
    select_informative,
    watl_predict,
)
from .wasserstein import (
    GridFunction,
    ProbGrid,
    QuantileGrid,
    frechet_mean,
    make_grid,
    project_to_quantile,
    quantile_from_samples,
    wasserstein_distance,
)

__version__ = "0.1.0"
