"""Traffic forecasting with deep sequence models and freeze/unfreeze transfer."""

__version__ = "0.1.0"

from .autodiff import (CheckReport, NumArray, Parameter, ParamSet, Tape,
                       backward, finite_diff_check)
from .errors import TrafficastError
from .estimator import SequenceForecaster
from .harness import (ComparisonReport, SourceReport, emit_report,
                      run_source_experiment, run_target_comparison)
from .metrics import EvalResult, accuracy, evaluate, mape, mape_percent
from .models import (ARCHS, ModelSpec, ModelState, init_model, predict_batch,
                     predict_one)
from .pipeline import (MinMaxScaler, TimeSeries, WindowedDataset,
                       chronological_split, fit_scaler, load_csv,
                       make_windows, save_csv)
from .synth import SynthConfig, generate, make_family
from .training import AdamState, TrainConfig, TrainHistory, adam_step, mse_loss, train
from .transfer import (Checkpoint, ReusePolicy, init_from_checkpoint,
                       load_checkpoint, save_checkpoint, transfer_fit)

__all__ = [
    "ARCHS", "AdamState", "CheckReport", "Checkpoint", "ComparisonReport",
    "EvalResult", "MinMaxScaler", "ModelSpec", "ModelState", "NumArray",
    "ParamSet", "Parameter", "ReusePolicy", "SequenceForecaster",
    "SourceReport", "SynthConfig", "Tape", "TimeSeries", "TrafficastError",
    "TrainConfig", "TrainHistory", "WindowedDataset", "accuracy", "adam_step",
    "backward", "chronological_split", "emit_report", "evaluate",
    "finite_diff_check", "fit_scaler", "generate", "init_from_checkpoint",
    "init_model", "load_checkpoint", "load_csv", "make_family", "make_windows",
    "mape", "mape_percent", "mse_loss", "predict_batch", "predict_one",
    "run_source_experiment", "run_target_comparison", "save_checkpoint",
    "save_csv", "train", "transfer_fit",
]
