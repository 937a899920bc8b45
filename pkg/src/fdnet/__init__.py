"""Focal-decomposition time series forecasting toolkit.

A self-contained forecasting stack on float64 numpy arrays: a reverse-mode
autodiff engine sized to the models it serves, two focal-decomposition
forecasters (a length-preserving conv variant and an attention-plus-pooling
downsampling variant), a deterministic training recipe with binary
checkpoints, long-horizon and competition-style evaluation metrics, and a
two-sample Kolmogorov-Smirnov distribution-shift audit.
"""

from .data import SplitSpec, Standardizer, TimeSeriesFrame, load_csv, make_windows, split
from .errors import ForecastError
from .focal import FocalPlan, make_focal_plan, slice_input
from .kstest import KSResult, ShiftReport, ks_test, shift_report
from .metrics import MetricsReport, evaluate_run, mae, mase, mse, owa, seasonal_naive, smape
from .models import FDNetModel, FUNetModel, build_model
from .tensor import Tensor, grad_check, no_grad
from .training import (
    Adam,
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Checkpoint",
    "FDNetModel",
    "FUNetModel",
    "FocalPlan",
    "ForecastError",
    "KSResult",
    "MetricsReport",
    "ShiftReport",
    "SplitSpec",
    "Standardizer",
    "Tensor",
    "TimeSeriesFrame",
    "TrainConfig",
    "build_model",
    "evaluate_run",
    "grad_check",
    "ks_test",
    "load_checkpoint",
    "load_csv",
    "mae",
    "make_focal_plan",
    "make_windows",
    "mase",
    "mse",
    "mse_loss",
    "no_grad",
    "owa",
    "save_checkpoint",
    "seasonal_naive",
    "shift_report",
    "slice_input",
    "smape",
    "split",
    "train",
]
