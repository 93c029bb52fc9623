"""Scikit-learn style regressor over the sequence models.

fit(X, y) takes raw (unscaled) sliding windows and targets, handles min-max
scaling internally, and predict(X) returns predictions in original units, so
the estimator drops into pipelines, cross-validation and clone() like any
other regressor. Passing source_checkpoint switches fit() from standard
training to the two-phase transfer protocol.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .errors import ManifestError
from .models import ModelSpec, init_model, predict_batch
from .pipeline import MinMaxScaler, WindowedDataset
from .training import single_stage_config, train
from .transfer import (DEFAULT_FREEZE_EPOCHS, PHASE2_LR, Checkpoint,
                       load_checkpoint, save_checkpoint, transfer_fit)
from .validation import (as_float_matrix, as_float_vector,
                         check_matching_rows, check_window_width)


class SequenceForecaster(RegressorMixin, BaseEstimator):
    """One-step-ahead forecaster with optional checkpoint-based transfer.

    Parameters mirror the training setup: `learning_rate` is the standard
    (and phase-1) rate, `finetune_rate` the phase-2 rate used only when a
    source checkpoint is given.
    """

    def __init__(self, arch="LSTM_EN_DE", window=12, hidden=64, epochs=100,
                 batch_size=16, learning_rate=1e-3, seed=0, clip_norm=5.0,
                 source_checkpoint=None, freeze_epochs=DEFAULT_FREEZE_EPOCHS,
                 finetune_rate=PHASE2_LR, reuse_policy=None):
        self.arch = arch
        self.window = window
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.clip_norm = clip_norm
        self.source_checkpoint = source_checkpoint
        self.freeze_epochs = freeze_epochs
        self.finetune_rate = finetune_rate
        self.reuse_policy = reuse_policy

    def _spec(self):
        return ModelSpec(arch=self.arch, window=self.window, hidden=self.hidden)

    def _resolve_checkpoint(self):
        if self.source_checkpoint is None:
            return None
        if isinstance(self.source_checkpoint, Checkpoint):
            return self.source_checkpoint
        return load_checkpoint(self.source_checkpoint)

    def fit(self, X, y, epoch_callback=None):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_matching_rows(X, y)
        check_window_width(X, self.window)

        scaler = MinMaxScaler().fit(np.concatenate([X.reshape(-1), y]))
        ds = WindowedDataset(X=scaler.transform(X), y=scaler.transform(y),
                             w=self.window)
        ckpt = self._resolve_checkpoint()
        if ckpt is None:
            model = init_model(self._spec(), self.seed)
            cfg = single_stage_config(self.epochs, lr=self.learning_rate,
                                      batch_size=self.batch_size, seed=self.seed,
                                      clip_norm=self.clip_norm)
            history = train(model, ds, cfg, epoch_callback=epoch_callback)
        else:
            if ckpt.spec != self._spec():
                raise ManifestError(
                    f"estimator spec {self._spec().descriptor()} does not match "
                    f"checkpoint spec {ckpt.spec.descriptor()}")
            model, history = transfer_fit(
                ds, ckpt, self.epochs, self.seed, policy=self.reuse_policy,
                batch_size=self.batch_size, freeze_epochs=self.freeze_epochs,
                lr_phase1=self.learning_rate, lr_phase2=self.finetune_rate,
                clip_norm=self.clip_norm, epoch_callback=epoch_callback)
        self.model_ = model
        self.scaler_ = scaler
        self.history_ = history
        self.n_features_in_ = self.window
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this SequenceForecaster is not fitted yet")

    def predict(self, X):
        self._check_fitted()
        X = as_float_matrix(X)
        check_window_width(X, self.window)
        preds = predict_batch(self.model_, self.scaler_.transform(X))
        return self.scaler_.inverse_transform(preds.data.reshape(-1))

    def to_checkpoint(self, path, source_domain_name="", train_epochs=None,
                      extra_meta=None):
        """Persist the fitted model, its scaler and provenance metadata."""
        self._check_fitted()
        meta = dict(extra_meta or {})
        meta.setdefault("source_domain_name", source_domain_name)
        meta.setdefault("train_epochs",
                        self.epochs if train_epochs is None else train_epochs)
        save_checkpoint(self.model_, self.scaler_, meta, path)
