"""Forecast evaluation: MSE, MAE, SMAPE, MASE, OWA and the seasonal-naive
reference forecaster.

Two evaluation regimes coexist: MSE/MAE are reported on standardized values
(the long-horizon benchmark convention) while SMAPE/MASE/OWA are computed in
the original scale after inverse standardization (the M4 convention). The
OWA reference is seasonal-naive (repeat the value one period back) rather
than a seasonally-adjusted naive2, so OWA values are internally consistent
but not directly comparable to published M4 leaderboards.

Pure functions over immutable arrays; aggregation order is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Standardizer, WindowSampler
from .errors import (
    InsufficientDataError,
    InvalidParameterError,
    ShapeError,
    UndefinedOwaError,
    UndefinedScaleError,
)
from .tensor import Tensor


def _check_equal_length(pred, truth, op: str):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.size < 1:
        raise ShapeError(f"{op}: shapes {pred.shape} and {truth.shape} unusable")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _check_equal_length(pred, truth, "mse")
    return float(((pred - truth) ** 2).mean())


def mae(pred, truth) -> float:
    pred, truth = _check_equal_length(pred, truth, "mae")
    return float(np.abs(pred - truth).mean())


def smape(pred, truth) -> float:
    """Symmetric mean absolute percentage error, in [0, 200].

    (200/n) * sum |x - xhat| / (|x| + |xhat|); terms where both values are
    exactly zero contribute 0 (standard competition-tooling convention).
    """
    pred, truth = _check_equal_length(pred, truth, "smape")
    # every term is <= 200 exactly; the mean can creep above by summation
    # rounding, so pin the documented upper bound
    return float(min(200.0, _smape_terms(pred, truth).mean()))


def _smape_terms(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    denom = np.abs(truth) + np.abs(pred)
    safe = np.where(denom == 0.0, 1.0, denom)
    return 200.0 * np.abs(truth - pred) / safe


def seasonal_scale(insample, m: int) -> float:
    """MASE denominator: mean |x_j - x_{j-m}| over the in-sample series."""
    insample = np.asarray(insample, dtype=float)
    if insample.ndim != 1 or insample.size <= m:
        raise InsufficientDataError(
            f"in-sample length {insample.size} must exceed periodicity {m}"
        )
    return float(np.abs(insample[m:] - insample[:-m]).mean())


def mase(pred, truth, insample, m: int) -> float:
    """Mean absolute error scaled by the in-sample seasonal difference."""
    pred, truth = _check_equal_length(pred, truth, "mase")
    if m < 1:
        raise InvalidParameterError(f"periodicity must be >= 1, got {m}")
    scale = seasonal_scale(insample, m)
    if scale == 0.0:
        raise UndefinedScaleError("constant seasonal in-sample series gives zero scale")
    return float(np.abs(truth - pred).mean() / scale)


def seasonal_naive(insample, m: int, horizon: int) -> np.ndarray:
    """Repeat the last observed season: forecast[i] = x[T - m + (i mod m)]."""
    insample = np.asarray(insample, dtype=float)
    if m < 1 or horizon < 1:
        raise InvalidParameterError("periodicity and horizon must be >= 1")
    if insample.ndim != 1 or insample.size < m:
        raise InsufficientDataError(
            f"in-sample length {insample.size} shorter than periodicity {m}"
        )
    last_season = insample[insample.size - m:]
    return last_season[np.arange(horizon) % m]


def owa(model_smape: float, model_mase: float, ref_smape: float, ref_mase: float) -> float:
    """Average of metric ratios against the reference forecaster."""
    if ref_smape <= 0.0 or ref_mase <= 0.0:
        raise UndefinedOwaError(
            f"reference metrics must be positive, got smape={ref_smape}, mase={ref_mase}"
        )
    return 0.5 * (model_smape / ref_smape + model_mase / ref_mase)


@dataclass
class MetricsReport:
    """Aggregate and per-horizon forecast errors for one evaluation run."""

    mse: float
    mae: float
    smape: float
    mase: float
    owa: float
    per_horizon: dict[str, list[float]] = field(default_factory=dict)
    periodicity: int = 1
    window_count: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "aggregate": {"mse": self.mse, "mae": self.mae, "smape": self.smape,
                          "mase": self.mase, "owa": self.owa},
            "per_horizon": self.per_horizon,
            "periodicity": self.periodicity,
            "window_count": self.window_count,
        }, indent=2)

    def to_csv(self) -> str:
        lines = ["horizon,mse,mae,smape,mase,owa"]
        horizons = len(self.per_horizon.get("mse", []))
        for h in range(horizons):
            cells = [str(h + 1)] + [
                repr(self.per_horizon[key][h]) for key in ("mse", "mae", "smape", "mase", "owa")
            ]
            lines.append(",".join(cells))
        lines.append(",".join(["all", repr(self.mse), repr(self.mae), repr(self.smape),
                               repr(self.mase), repr(self.owa)]))
        return "\n".join(lines) + "\n"


def evaluate_run(model, windows: WindowSampler, standardizer: Standardizer,
                 m: int = 1, batch_size: int = 64) -> MetricsReport:
    """Evaluate a trained model over every window of a standardized frame.

    MSE/MAE come from standardized predictions and targets; SMAPE/MASE/OWA
    from inverse-standardized ones, with each window's input serving as the
    in-sample history for the seasonal scale and reference forecast.
    Aggregates are unweighted means over windows.
    """
    if len(windows) < 1:
        raise InsufficientDataError("no evaluation windows")
    l_out = windows.l_out
    sq_sum = np.zeros(l_out)
    abs_sum = np.zeros(l_out)
    smape_sum = np.zeros(l_out)
    mase_sum = np.zeros(l_out)
    ref_smape_sum = np.zeros(l_out)
    ref_mase_sum = np.zeros(l_out)
    n_seen = 0

    with T.no_grad():
        for start in range(0, len(windows), batch_size):
            idx = range(start, min(start + batch_size, len(windows)))
            xb, yb = windows.batch(idx)
            pred = model.forward(Tensor(xb), "eval")[0].data

            err = pred - yb
            sq_sum += (err ** 2).mean(axis=(0, 2)) * len(xb)
            abs_sum += np.abs(err).mean(axis=(0, 2)) * len(xb)

            pred_o = standardizer.inverse_values(pred)
            truth_o = standardizer.inverse_values(yb)
            insample_o = standardizer.inverse_values(xb[:, 0])
            for w in range(len(xb)):
                smape_w = np.zeros(l_out)
                mase_w = np.zeros(l_out)
                ref_smape_w = np.zeros(l_out)
                ref_mase_w = np.zeros(l_out)
                variates = insample_o.shape[2]
                for v in range(variates):
                    history = insample_o[w, :, v]
                    scale = seasonal_scale(history, m)
                    if scale == 0.0:
                        raise UndefinedScaleError(
                            f"window {start + w}, variate {v}: constant seasonal history"
                        )
                    ref = seasonal_naive(history, m, l_out)
                    smape_w += _smape_terms(pred_o[w, :, v], truth_o[w, :, v])
                    mase_w += np.abs(truth_o[w, :, v] - pred_o[w, :, v]) / scale
                    ref_smape_w += _smape_terms(ref, truth_o[w, :, v])
                    ref_mase_w += np.abs(truth_o[w, :, v] - ref) / scale
                smape_sum += smape_w / variates
                mase_sum += mase_w / variates
                ref_smape_sum += ref_smape_w / variates
                ref_mase_sum += ref_mase_w / variates
            n_seen += len(xb)

    per_h_mse = sq_sum / n_seen
    per_h_mae = abs_sum / n_seen
    per_h_smape = smape_sum / n_seen
    per_h_mase = mase_sum / n_seen
    ref_h_smape = ref_smape_sum / n_seen
    ref_h_mase = ref_mase_sum / n_seen

    agg_smape = float(per_h_smape.mean())
    agg_mase = float(per_h_mase.mean())
    ref_smape = float(ref_h_smape.mean())
    ref_mase = float(ref_h_mase.mean())
    if agg_smape == 0.0 and agg_mase == 0.0:
        agg_owa = 0.0
        per_h_owa = np.zeros(l_out)
    else:
        agg_owa = owa(agg_smape, agg_mase, ref_smape, ref_mase)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_h_owa = 0.5 * (np.where(ref_h_smape > 0, per_h_smape / ref_h_smape, 0.0)
                               + np.where(ref_h_mase > 0, per_h_mase / ref_h_mase, 0.0))

    return MetricsReport(
        mse=float(per_h_mse.mean()),
        mae=float(per_h_mae.mean()),
        smape=agg_smape,
        mase=agg_mase,
        owa=agg_owa,
        per_horizon={
            "mse": per_h_mse.tolist(),
            "mae": per_h_mae.tolist(),
            "smape": per_h_smape.tolist(),
            "mase": per_h_mase.tolist(),
            "owa": per_h_owa.tolist(),
        },
        periodicity=m,
        window_count=len(windows),
    )
