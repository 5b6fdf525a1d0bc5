"""Hard, axis-aligned decision tree ensembles trained end-to-end by gradient descent."""

from .exceptions import ConfigError, DataError, GrandeError, ModelError, NumericalError
from .explain import WeightReport, explain_instance, prune_tree, weight_report
from .gradients import GradientSet, backward_batch, fd_check
from .io import Dataset, GrandeModel, load_csv, load_model, save_model
from .metrics import aggregate_rankings, balanced_accuracy, macro_f1, roc_auc
from .model import (
    EnsembleParameters,
    PathTable,
    build_path_table,
    ensemble_forward,
    hardmax_st,
    init_parameters,
    predict_proba,
    split_surrogate,
)
from .preprocess import Preprocessor
from .training import TrainConfig, fit

__version__ = "0.1.0"
