"""Mean absolute percentage error and the derived accuracy figure.

MAPE = (1/n) * sum(|p_i - o_i| / |o_i|) * 100, accuracy = 100 - MAPE. Both are
computed on original (inverse-scaled) traffic units; accuracy is deliberately
not clamped, so a terrible model can score below zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MetricError, ShapeError
from .models import predict_batch
from .validation import as_float_vector


@dataclass
class EvalResult:
    mape_percent: float
    accuracy_percent: float
    n_test: int
    n_skipped: int = 0

    CSV_HEADER = "dataset,model,mode,epochs,run,accuracy,mape,wall_time_s"

    def csv_row(self, dataset="", model="", mode="", epochs="", run="", wall_time_s=""):
        return (f"{dataset},{model},{mode},{epochs},{run},"
                f"{self.accuracy_percent!r},{self.mape_percent!r},{wall_time_s}")


def mape(pred, actual, epsilon=None):
    """Average absolute percentage deviation of pred from actual, in percent.

    Zero actuals are an error unless `epsilon` is given, in which case terms
    with |actual| < epsilon are skipped (the skipped count is reported by
    evaluate()).
    """
    pred = as_float_vector(pred, "pred")
    actual = as_float_vector(actual, "actual")
    if pred.shape != actual.shape:
        raise ShapeError(f"mape: length mismatch {pred.shape} vs {actual.shape}")
    if pred.size == 0:
        raise MetricError("mape: empty inputs")
    if epsilon is None:
        zero_idx = np.flatnonzero(actual == 0.0)
        if zero_idx.size:
            raise MetricError(
                f"mape: zero actual values at indices {zero_idx.tolist()[:20]}; "
                f"enable epsilon-skip mode to ignore them")
        keep = slice(None)
        n_skipped = 0
    else:
        mask = np.abs(actual) >= epsilon
        n_skipped = int((~mask).sum())
        if not mask.any():
            raise MetricError("mape: every actual value fell below epsilon")
        keep = mask
    terms = np.abs(pred[keep] - actual[keep]) / np.abs(actual[keep])
    return float(terms.mean() * 100.0), n_skipped


def mape_percent(pred, actual, epsilon=None):
    """MAPE value alone, without the skipped-term count."""
    return mape(pred, actual, epsilon=epsilon)[0]


def accuracy(mape_value):
    """100 - MAPE, unclamped."""
    if mape_value < 0:
        raise MetricError(f"mape cannot be negative, got {mape_value}")
    return 100.0 - mape_value


def evaluate(model, test_ds, scaler, epsilon=None):
    """Score a model on a raw (unscaled) windowed test set.

    Windows are scaled for the model, predictions are inverse-scaled, and the
    percentage error is taken against the original units.
    """
    if test_ds.n_rows == 0:
        raise MetricError("evaluate: empty test set")
    X_scaled = scaler.transform(test_ds.X)
    preds_scaled = predict_batch(model, X_scaled).data.reshape(-1)
    preds = scaler.inverse_transform(preds_scaled)
    value, n_skipped = mape(preds, test_ds.y, epsilon=epsilon)
    return EvalResult(mape_percent=value, accuracy_percent=accuracy(value),
                      n_test=test_ds.n_rows, n_skipped=n_skipped)
