"""The five forecaster architectures: RNN, LSTM, GRU, LSTM encoder-decoder,
and LSTM encoder-decoder with a dot-product attention layer.

Each model maps a scaled input window of length w to a one-step-ahead scaled
prediction. Internals are batched: a forward pass processes a (batch, window)
matrix with hidden states laid out (batch, hidden), so an epoch costs a fixed
number of tape operations per minibatch regardless of batch size. The
per-sample step functions below are thin wrappers over the batched cells.

Parameter layout is input-major: a gate computes sigmoid([x, h] @ W + b) with
W of shape (1 + hidden, hidden).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumArray, ParamSet, Parameter
from .errors import ConfigError, ShapeError

ARCHS = ("RNN", "LSTM", "GRU", "LSTM_EN_DE", "LSTM_EN_DE_ATN")

_LSTM_GATES = ("f", "i", "o", "g")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture + sizes; fully determines every parameter name and shape."""

    arch: str
    window: int = 12
    hidden: int = 64
    input_dim: int = 1
    output_dim: int = 1

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if self.input_dim != 1 or self.output_dim != 1:
            raise ConfigError("only scalar-in/scalar-out models are supported")

    def descriptor(self):
        return f"{self.arch},{self.window},{self.hidden},{self.input_dim},{self.output_dim}"

    @classmethod
    def from_descriptor(cls, line):
        parts = line.strip().split(",")
        if len(parts) != 5:
            raise ConfigError(f"bad spec descriptor {line!r}")
        arch = parts[0]
        try:
            window, hidden, input_dim, output_dim = (int(p) for p in parts[1:])
        except ValueError as exc:
            raise ConfigError(f"bad spec descriptor {line!r}") from exc
        return cls(arch=arch, window=window, hidden=hidden,
                   input_dim=input_dim, output_dim=output_dim)


def _lstm_manifest(h, prefix=""):
    names = []
    for gate in _LSTM_GATES:
        names.append((f"{prefix}W_{gate}", (1 + h, h), "weight"))
        names.append((f"{prefix}b_{gate}", (h,), "bias"))
    return names


def param_manifest(spec):
    """Ordered (name, shape, kind) triples; a pure function of the spec."""
    h = spec.hidden
    head_in = 2 * h if spec.arch == "LSTM_EN_DE_ATN" else h
    head = [("W_out", (head_in, 1), "weight"), ("b_out", (1,), "bias")]
    if spec.arch == "RNN":
        body = [("W_x", (1, h), "weight"), ("W_h", (h, h), "weight"), ("b", (h,), "bias")]
    elif spec.arch == "GRU":
        body = [("W_z", (1 + h, h), "weight"), ("b_z", (h,), "bias"),
                ("W_r", (1 + h, h), "weight"), ("b_r", (h,), "bias"),
                ("W_h", (1 + h, h), "weight"), ("b_h", (h,), "bias")]
    elif spec.arch == "LSTM":
        body = _lstm_manifest(h)
    else:  # LSTM_EN_DE and LSTM_EN_DE_ATN
        body = _lstm_manifest(h, "enc_") + _lstm_manifest(h, "dec_")
    return body + head


@dataclass
class ModelState:
    """A spec plus its concrete parameters."""

    spec: ModelSpec
    params: ParamSet

    def forward_batch(self, X):
        return predict_batch(self, X)

    def predict_one(self, window):
        return predict_one(self, window)


def init_model(spec, seed):
    """Fresh model: weights uniform in (-1/sqrt(hidden), +1/sqrt(hidden)), biases zero.

    Deterministic given (spec, seed); the manifest order fixes the draw order.
    """
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(spec.hidden)
    params = []
    for name, shape, kind in param_manifest(spec):
        if kind == "weight":
            value = rng.uniform(-bound, bound, size=shape)
        else:
            value = np.zeros(shape)
        params.append(Parameter(name, value))
    return ModelState(spec=spec, params=ParamSet(params))


# ---------------------------------------------------------------------------
# batched cells (rows = batch)
#
# Each step records one fused tape node instead of a chain of primitives; the
# hand-derived backward rules below are covered by the finite-difference
# gradient checks in the test suite. Per-gate weights are hstacked once per
# forward pass so a step costs a single wide matmul.


def _sigmoid_np(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


class _RnnCell:
    def __init__(self, params):
        self.W_x = params["W_x"]
        self.W_h = params["W_h"]
        self.b = params["b"]

    def step(self, x_t, h):
        W_x, W_h, b = self.W_x.value.data, self.W_h.value.data, self.b.value.data
        xv, hv = x_t.data, h.data
        pre = xv @ W_x + hv @ W_h + b
        ad.check_finite(pre, "rnn_step")
        out_v = np.tanh(pre)
        out = NumArray(out_v)
        tape = ad.active_tape()
        if tape is not None:
            def bwd(g):
                dpre = g * (1.0 - out_v * out_v)
                return (dpre @ W_x.T, dpre @ W_h.T,
                        xv.T @ dpre, hv.T @ dpre, dpre.sum(axis=0))

            tape.record(out, (x_t, h, self.W_x.value, self.W_h.value, self.b.value),
                        bwd, "rnn_step")
        return out


class _GruCell:
    def __init__(self, params):
        self.p_Wz, self.p_bz = params["W_z"], params["b_z"]
        self.p_Wr, self.p_br = params["W_r"], params["b_r"]
        self.p_Wh, self.p_bh = params["W_h"], params["b_h"]
        self.hidden = self.p_Wz.value.data.shape[1]
        self.W_zr = np.hstack([self.p_Wz.value.data, self.p_Wr.value.data])
        self.b_zr = np.concatenate([self.p_bz.value.data, self.p_br.value.data])

    def step(self, x_t, h):
        hd = self.hidden
        W_zr, W_h, b_h = self.W_zr, self.p_Wh.value.data, self.p_bh.value.data
        xv, hv = x_t.data, h.data
        xh = np.hstack([xv, hv])
        zr = xh @ W_zr + self.b_zr
        ad.check_finite(zr, "gru_step")
        z = _sigmoid_np(zr[:, :hd])
        r = _sigmoid_np(zr[:, hd:])
        xrh = np.hstack([xv, r * hv])
        pre = xrh @ W_h + b_h
        ad.check_finite(pre, "gru_step")
        h_bar = np.tanh(pre)
        out_v = (1.0 - z) * hv + z * h_bar
        out = NumArray(out_v)
        tape = ad.active_tape()
        if tape is not None:
            def bwd(g):
                dzz = (g * (h_bar - hv)) * z * (1.0 - z)
                dzh = (g * z) * (1.0 - h_bar * h_bar)
                dxrh = dzh @ W_h.T
                drh = dxrh[:, 1:]
                dzr = (drh * hv) * r * (1.0 - r)
                dZR = np.hstack([dzz, dzr])
                dxh = dZR @ W_zr.T
                dW = xh.T @ dZR
                return (dxrh[:, :1] + dxh[:, :1],
                        g * (1.0 - z) + drh * r + dxh[:, 1:],
                        dW[:, :hd], dzz.sum(axis=0),
                        dW[:, hd:], dzr.sum(axis=0),
                        xrh.T @ dzh, dzh.sum(axis=0))

            tape.record(out, (x_t, h, self.p_Wz.value, self.p_bz.value,
                              self.p_Wr.value, self.p_br.value,
                              self.p_Wh.value, self.p_bh.value),
                        bwd, "gru_step")
        return out


class _LstmCell:
    """Fused LSTM step; emits a packed [h, c] output split by two slice nodes."""

    def __init__(self, params, prefix=""):
        self.params = [params[f"{prefix}{n}_{gate}"]
                       for gate in _LSTM_GATES for n in ("W", "b")]
        weights = self.params[0::2]
        biases = self.params[1::2]
        self.hidden = weights[0].value.data.shape[1]
        self.W_all = np.hstack([p.value.data for p in weights])
        self.b_all = np.concatenate([p.value.data for p in biases])
        self.op = f"{prefix or 'lstm_'}step"

    def step(self, x_t, h, c):
        hd = self.hidden
        W_all = self.W_all
        xv, hv, cv = x_t.data, h.data, c.data
        xh = np.hstack([xv, hv])
        z = xh @ W_all + self.b_all
        ad.check_finite(z, self.op)
        f = _sigmoid_np(z[:, :hd])
        i = _sigmoid_np(z[:, hd:2 * hd])
        o = _sigmoid_np(z[:, 2 * hd:3 * hd])
        g_t = np.tanh(z[:, 3 * hd:])
        c_v = f * cv + i * g_t
        tc = np.tanh(c_v)
        h_v = o * tc
        packed = NumArray(np.hstack([h_v, c_v]))
        tape = ad.active_tape()
        if tape is None:
            return (NumArray(h_v), NumArray(c_v))

        def bwd(ghc):
            gh, gc = ghc[:, :hd], ghc[:, hd:]
            do = gh * tc
            dc = gh * (o * (1.0 - tc * tc)) + gc
            dzf = (dc * cv) * (f * (1.0 - f))
            dzi = (dc * g_t) * (i * (1.0 - i))
            dzo = do * (o * (1.0 - o))
            dzg = (dc * i) * (1.0 - g_t * g_t)
            dZ = np.hstack([dzf, dzi, dzo, dzg])
            dxh = dZ @ W_all.T
            dW = xh.T @ dZ
            return (dxh[:, :1], dxh[:, 1:], dc * f,
                    dW[:, :hd], dzf.sum(axis=0),
                    dW[:, hd:2 * hd], dzi.sum(axis=0),
                    dW[:, 2 * hd:3 * hd], dzo.sum(axis=0),
                    dW[:, 3 * hd:], dzg.sum(axis=0))

        tape.record(packed, (x_t, h, c, *(p.value for p in self.params)),
                    bwd, self.op)
        h_out = NumArray(h_v)
        c_out = NumArray(c_v)
        width = 2 * hd

        def bwd_h(g):
            out = np.zeros((g.shape[0], width))
            out[:, :hd] = g
            return (out,)

        def bwd_c(g):
            out = np.zeros((g.shape[0], width))
            out[:, hd:] = g
            return (out,)

        tape.record(h_out, (packed,), bwd_h, "slice_h")
        tape.record(c_out, (packed,), bwd_c, "slice_c")
        return h_out, c_out


def _rnn_step_batch(x_t, h, params):
    return _RnnCell(params).step(x_t, h)


def _gru_step_batch(x_t, h, params):
    return _GruCell(params).step(x_t, h)


def _lstm_step_batch(x_t, h, c, params, prefix=""):
    return _LstmCell(params, prefix).step(x_t, h, c)


def _attn_scores(h_dec, enc_steps):
    """scores[:, t] = rowwise dot(h_dec, enc_steps[t]); one fused tape node."""
    hv = h_dec.data
    stacked = np.stack([e.data for e in enc_steps], axis=1)  # (b, w, h)
    out_v = np.einsum("bh,bwh->bw", hv, stacked)
    ad.check_finite(out_v, "attn_scores")
    out = NumArray(out_v)
    tape = ad.active_tape()
    if tape is not None:
        def bwd(g):
            gh = np.einsum("bw,bwh->bh", g, stacked)
            return (gh, *(g[:, t, None] * hv for t in range(len(enc_steps))))

        tape.record(out, (h_dec, *enc_steps), bwd, "attn_scores")
    return out


def _attn_mix(weights, enc_steps):
    """context = sum_t weights[:, t] * enc_steps[t]; one fused tape node."""
    wv = weights.data
    stacked = np.stack([e.data for e in enc_steps], axis=1)  # (b, w, h)
    out_v = np.einsum("bw,bwh->bh", wv, stacked)
    ad.check_finite(out_v, "attn_mix")
    out = NumArray(out_v)
    tape = ad.active_tape()
    if tape is not None:
        def bwd(g):
            gw = np.einsum("bh,bwh->bw", g, stacked)
            return (gw, *(wv[:, t, None] * g for t in range(len(enc_steps))))

        tape.record(out, (weights, *enc_steps), bwd, "attn_mix")
    return out


def _encode_batch(cols, params, b, hidden):
    cell = _LstmCell(params, "enc_")
    h = NumArray(np.zeros((b, hidden)))
    c = NumArray(np.zeros((b, hidden)))
    steps = []
    for x_t in cols:
        h, c = cell.step(x_t, h, c)
        steps.append(h)
    return h, c, steps


def _head(h, params):
    return ad.add(ad.matmul(h, params["W_out"].value), params["b_out"].value)


def predict_batch(model, X):
    """Forward a (batch, window) matrix of scaled inputs to (batch, 1) predictions."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.window:
        raise ShapeError(
            f"predict_batch: expected (batch, {model.spec.window}) input, got {X.shape}")
    spec, params = model.spec, model.params
    b, w = X.shape
    cols = [NumArray(X[:, t, None]) for t in range(w)]
    hidden = spec.hidden
    if spec.arch == "RNN":
        cell = _RnnCell(params)
        h = NumArray(np.zeros((b, hidden)))
        for x_t in cols:
            h = cell.step(x_t, h)
        return _head(h, params)
    if spec.arch == "GRU":
        cell = _GruCell(params)
        h = NumArray(np.zeros((b, hidden)))
        for x_t in cols:
            h = cell.step(x_t, h)
        return _head(h, params)
    if spec.arch == "LSTM":
        cell = _LstmCell(params)
        h = NumArray(np.zeros((b, hidden)))
        c = NumArray(np.zeros((b, hidden)))
        for x_t in cols:
            h, c = cell.step(x_t, h, c)
        return _head(h, params)
    if spec.arch == "LSTM_EN_DE":
        h_enc, c_enc, _ = _encode_batch(cols, params, b, hidden)
        h_dec, _ = _lstm_step_batch(cols[-1], h_enc, c_enc, params, "dec_")
        return _head(h_dec, params)
    # LSTM_EN_DE_ATN
    h_enc, c_enc, steps = _encode_batch(cols, params, b, hidden)
    h_dec, _ = _lstm_step_batch(cols[-1], h_enc, c_enc, params, "dec_")
    weights = ad.softmax(_attn_scores(h_dec, steps))
    context = _attn_mix(weights, steps)
    return _head(ad.concat([h_dec, context], axis=1), params)


def predict_one(model, window):
    """One scaled window (length w) to a one-element scaled prediction."""
    window = window.data if isinstance(window, NumArray) else np.asarray(window, np.float64)
    if window.ndim != 1 or window.shape[0] != model.spec.window:
        raise ShapeError(
            f"predict_one: expected window of length {model.spec.window}, got {window.shape}")
    out = predict_batch(model, window[None, :])
    return ad.reshape(out, (1,))


# ---------------------------------------------------------------------------
# per-sample step functions (vector in, vector out)


def _lift(vec, cols):
    vec = vec if isinstance(vec, NumArray) else NumArray(vec)
    if vec.data.ndim != 1 or vec.data.shape[0] != cols:
        raise ShapeError(f"expected vector of length {cols}, got shape {vec.data.shape}")
    return ad.reshape(vec, (1, cols))


def rnn_step(x, h_prev, params):
    """h = tanh(x @ W_x + h_prev @ W_h + b) for a single sample."""
    hidden = params["W_h"].value.data.shape[0]
    out = _rnn_step_batch(_lift(x, 1), _lift(h_prev, hidden), params)
    return ad.reshape(out, (hidden,))


def gru_step(x, h_prev, params):
    """Gated update: z/r gates on [x, h_prev], candidate on [x, r*h_prev]."""
    hidden = params["W_z"].value.data.shape[1]
    out = _gru_step_batch(_lift(x, 1), _lift(h_prev, hidden), params)
    return ad.reshape(out, (hidden,))


def lstm_step(x, h_prev, c_prev, params, prefix=""):
    """One LSTM cell update; returns (h, c)."""
    hidden = params[f"{prefix}W_f"].value.data.shape[1]
    h, c = _lstm_step_batch(_lift(x, 1), _lift(h_prev, hidden),
                            _lift(c_prev, hidden), params, prefix)
    return ad.reshape(h, (hidden,)), ad.reshape(c, (hidden,))


def encode(window, params):
    """Unroll the encoder LSTM over a window from zero state.

    Returns (context, encoder_outputs): the final hidden state and the
    (w, hidden) matrix of all per-step hidden states.
    """
    window = window.data if isinstance(window, NumArray) else np.asarray(window, np.float64)
    if window.ndim != 1:
        raise ShapeError(f"encode: expected 1-D window, got shape {window.shape}")
    hidden = params["enc_W_f"].value.data.shape[1]
    cols = [NumArray(window[t:t + 1, None]) for t in range(window.shape[0])]
    h, _, steps = _encode_batch(cols, params, 1, hidden)
    outputs = ad.concat(steps, axis=0)  # (w, hidden)
    return ad.reshape(h, (hidden,)), outputs


def attention_weights(decoder_state, encoder_outputs):
    """Dot-product alignment scores over encoder steps, softmax-normalized."""
    dec = decoder_state if isinstance(decoder_state, NumArray) else NumArray(decoder_state)
    enc = encoder_outputs if isinstance(encoder_outputs, NumArray) else NumArray(encoder_outputs)
    if dec.data.ndim != 1 or enc.data.ndim != 2 or enc.data.shape[1] != dec.data.shape[0]:
        raise ShapeError(
            f"attention_weights: shapes do not conform {dec.data.shape} vs {enc.data.shape}")
    scores = ad.matmul(enc, dec)  # (w,)
    return ad.softmax(scores)
