"""Mini-batch gradient training: MSE loss on the tape, Adam updates that skip
frozen parameters, staged learning rates, and wall-time measurement around the
epoch loop only.

Anything with a `params` ParamSet and a `forward_batch(X) -> NumArray` method
can be trained; the five sequence models satisfy that protocol.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumArray, Tape, backward
from .errors import ConfigError, NumericError, ShapeError, TrainingAbort

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_CLIP_NORM = 5.0


def _check_partition(ranges, epochs, what):
    spans = sorted(r for r, _ in ranges)
    if not spans or spans[0][0] != 0 or spans[-1][1] != epochs:
        raise ConfigError(f"{what} must cover [0, {epochs}) exactly, got {spans}")
    for (s0, e0), (s1, _) in zip(spans, spans[1:]):
        if e0 != s1:
            raise ConfigError(f"{what} ranges are not contiguous at epoch {e0}")
    for start, end in spans:
        if start >= end:
            raise ConfigError(f"{what} contains empty range ({start}, {end})")


@dataclass
class TrainConfig:
    """Epoch budget, batch size, staged learning rates and freeze schedule.

    lr_schedule and freeze_policy map half-open epoch ranges to a rate /
    frozen-name set; the ranges must partition [0, epochs). Minibatches run in
    original row order (no shuffling), so a (model seed, cfg seed) pair fixes
    every number except wall time.
    """

    epochs: int
    batch_size: int = 16
    lr_schedule: list = None           # [((start, end), lr)]
    seed: int = 0
    freeze_policy: list = None         # [((start, end), set of names)]
    clip_norm: float = DEFAULT_CLIP_NORM

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_schedule is None:
            self.lr_schedule = [((0, self.epochs), 1e-3)]
        if self.freeze_policy is None:
            self.freeze_policy = [((0, self.epochs), frozenset())]
        _check_partition(self.lr_schedule, self.epochs, "lr_schedule")
        _check_partition(self.freeze_policy, self.epochs, "freeze_policy")
        for _, lr in self.lr_schedule:
            if lr <= 0:
                raise ConfigError(f"learning rate must be positive, got {lr}")

    def lr_at(self, epoch):
        for (start, end), lr in self.lr_schedule:
            if start <= epoch < end:
                return lr
        raise ConfigError(f"epoch {epoch} outside lr_schedule")

    def frozen_at(self, epoch):
        for (start, end), names in self.freeze_policy:
            if start <= epoch < end:
                return frozenset(names)
        raise ConfigError(f"epoch {epoch} outside freeze_policy")


@dataclass
class TrainHistory:
    """Per-epoch training record plus the wall time of the epoch loop."""

    per_epoch_loss: list = field(default_factory=list)
    per_epoch_lr: list = field(default_factory=list)
    wall_time_seconds: float = 0.0
    final_params: object = None
    clipped_steps: int = 0
    stopped_early: bool = False

    def save_loss_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,loss\n")
            for e, loss in enumerate(self.per_epoch_loss):
                fh.write(f"{e},{loss!r}\n")


def mse_loss(pred, target):
    """Mean squared error as a scalar tape node; the target is a constant."""
    target = target.data if isinstance(target, NumArray) else np.asarray(target, np.float64)
    pv = pred.data
    if pv.size == 0:
        raise ConfigError("mse_loss: empty batch")
    if pv.size != target.size:
        raise ShapeError(f"mse_loss: {pv.shape} vs {target.shape}")
    diff = pv.reshape(-1) - target.reshape(-1)
    out_v = np.asarray(np.mean(diff * diff))
    ad.check_finite(out_v, "mse_loss")
    out = NumArray(out_v)
    tape = ad.active_tape()
    if tape is not None:
        n = diff.size
        shape = pv.shape

        def bwd(g):
            return ((2.0 * float(g) / n) * diff).reshape(shape),

        tape.record(out, (pred,), bwd, "mse_loss")
    return out


class AdamState:
    """First/second-moment buffers with per-parameter step counts.

    Frozen parameters are skipped entirely, counters included, so a parameter
    unfrozen later takes its first update with step-1 bias correction.
    """

    def __init__(self, params, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {p.name: np.zeros_like(p.grad) for p in params}
        self.v = {p.name: np.zeros_like(p.grad) for p in params}
        self.t = {p.name: 0 for p in params}


def adam_step(params, lr, state):
    """One Adam update from the gradients currently in Parameter.grad."""
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for p in params:
        if p.frozen:
            continue
        t = state.t[p.name] + 1
        state.t[p.name] = t
        m = state.m[p.name]
        v = state.v[p.name]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _clip_gradients(params, max_norm):
    total = 0.0
    live = [p for p in params if not p.frozen]
    for p in live:
        total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in live:
            p.grad *= scale
        return True
    return False


def train(model, train_ds, cfg, epoch_callback=None):
    """Run the full epoch loop on a scaled dataset and return its history.

    epoch_callback(epoch, model, epoch_loss), when given, runs after each
    epoch; a truthy return stops training early (history is then shorter than
    cfg.epochs and flagged stopped_early).
    """
    X = np.ascontiguousarray(train_ds.X, dtype=np.float64)
    y = np.ascontiguousarray(train_ds.y, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ConfigError("train: empty dataset")
    bounds = [(s, min(s + cfg.batch_size, n)) for s in range(0, n, cfg.batch_size)]
    params = model.params
    opt = AdamState(params)
    history = TrainHistory(final_params=params)

    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        params.set_frozen(cfg.frozen_at(epoch))
        sq_sum = 0.0
        for step, (lo, hi) in enumerate(bounds):
            try:
                with Tape() as tape:
                    pred = model.forward_batch(X[lo:hi])
                    loss = mse_loss(pred, y[lo:hi])
            except TrainingAbort:
                raise
            except NumericError as exc:
                raise TrainingAbort(
                    f"epoch {epoch}, step {step}: {exc}") from exc
            params.zero_grads()
            backward(tape, loss)
            if _clip_gradients(params, cfg.clip_norm):
                history.clipped_steps += 1
            adam_step(params, lr, opt)
            sq_sum += loss.item() * (hi - lo)
        epoch_loss = sq_sum / n
        history.per_epoch_loss.append(epoch_loss)
        history.per_epoch_lr.append(lr)
        if epoch_callback is not None and epoch_callback(epoch, model, epoch_loss):
            history.stopped_early = True
            break
    history.wall_time_seconds = time.perf_counter() - t0
    return history


def single_stage_config(epochs, lr=1e-3, batch_size=16, seed=0,
                        clip_norm=DEFAULT_CLIP_NORM):
    """Standard-learning config: one rate, nothing frozen."""
    return TrainConfig(epochs=epochs, batch_size=batch_size, seed=seed,
                       lr_schedule=[((0, epochs), lr)], clip_norm=clip_norm)
