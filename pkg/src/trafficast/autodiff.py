"""Dense float64 arrays with a recorded-operation tape for reverse-mode gradients.

The tape is rebuilt on every forward pass (define-by-run). Operations compute
with numpy, validate that results are finite, and record a backward rule on
the active tape when one is open:

    with Tape() as tape:
        out = matmul(w.value, x)
        ...
    backward(tape, loss)   # fills Parameter.grad

Without an open tape the same functions run as plain numpy math, which is how
inference avoids recording overhead.
"""

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GradCheckError, NumericError, ShapeError, TapeError

_TLS = threading.local()


def _tape_stack():
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape():
    """The innermost open Tape, or None when recording is off."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class NumArray:
    """A dense float64 array, row-major. The unit all tape ops consume and produce."""

    __slots__ = ("data", "_param")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self._param = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"NumArray(shape={self.data.shape})"


class _Node:
    __slots__ = ("out_id", "in_ids", "bwd", "op")

    def __init__(self, out_id, in_ids, bwd, op):
        self.out_id = out_id
        self.in_ids = in_ids
        self.bwd = bwd
        self.op = op


class Tape:
    """Ordered record of operations; topological by construction."""

    __slots__ = ("_nodes", "_ids", "_hold", "_params", "_produced", "_next")

    def __init__(self):
        self._nodes = []
        self._ids = {}       # id(NumArray) -> node id
        self._hold = []      # keep arrays alive so id() stays unique
        self._params = {}    # node id -> Parameter (leaves owned by parameters)
        self._produced = set()
        self._next = 0

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._nodes)

    @property
    def nodes(self):
        return tuple(self._nodes)

    def _id_of(self, arr):
        nid = self._ids.get(id(arr))
        if nid is None:
            nid = self._next
            self._next += 1
            self._ids[id(arr)] = nid
            self._hold.append(arr)
            if arr._param is not None:
                self._params[nid] = arr._param
        return nid

    def record(self, out, inputs, bwd, op):
        """Register `out = op(inputs)` with gradient rule `bwd(g) -> input grads`.

        Exposed so other modules can define fused operations; `bwd` receives the
        output gradient and must return one array (or None) per input.
        """
        id_of = self._id_of
        in_ids = tuple(id_of(a) for a in inputs)
        out_id = id_of(out)
        self._produced.add(out_id)
        self._nodes.append(_Node(out_id, in_ids, bwd, op))


_INF = float("inf")
_NINF = float("-inf")


def check_finite(values, op):
    """Abort the step when an op result contains NaN/Inf, naming the op."""
    # summing is one cheap pass; only a non-finite sum forces the exact check
    # (a finite array can only sum to inf at magnitudes ~1e300)
    s = values.sum()
    if s != s or s == _INF or s == _NINF:
        if not np.isfinite(values).all():
            raise NumericError(f"{op}: result contains NaN or Inf")


def record_unary(out_value, x, bwd, op):
    check_finite(out_value, op)
    out = NumArray(out_value)
    t = active_tape()
    if t is not None:
        t.record(out, (x,), lambda g: (bwd(g),), op)
    return out


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a, b):
    """Matrix product. Supports (m,k)@(k,n), (m,k)@(k,) and (k,)@(k,n)."""
    av, bv = a.data, b.data
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise ShapeError(f"matmul: unsupported ranks {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree {av.shape} @ {bv.shape}")
    out_v = av @ bv
    check_finite(out_v, "matmul")
    out = NumArray(out_v)
    t = active_tape()
    if t is not None:
        if av.ndim == 2 and bv.ndim == 2:
            def bwd(g):
                return g @ bv.T, av.T @ g
        elif av.ndim == 2:  # (m,k) @ (k,)
            def bwd(g):
                return np.outer(g, bv), av.T @ g
        else:  # (k,) @ (k,n)
            def bwd(g):
                return bv @ g, np.outer(av, g)
        t.record(out, (a, b), bwd, "matmul")
    return out


def _binary_elementwise(a, b, op, fwd, da, db, db_rowbias, db_colbcast, db_scalar):
    """Shared shape dispatch for add/sub/mul."""
    av, bv = a.data, b.data
    if av.shape == bv.shape:
        mode = "same"
    elif av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        mode = "rowbias"      # (m,n) op (n,): bias broadcast over rows
    elif av.ndim == 2 and bv.ndim == 2 and bv.shape == (av.shape[0], 1):
        mode = "colbcast"     # (m,n) op (m,1): per-row scalar broadcast
    elif bv.ndim == 0:
        mode = "scalar"
    else:
        raise ShapeError(f"{op}: shapes do not conform {av.shape} vs {bv.shape}")
    out_v = fwd(av, bv)
    check_finite(out_v, op)
    out = NumArray(out_v)
    t = active_tape()
    if t is not None:
        reduce_b = {"same": db, "rowbias": db_rowbias,
                    "colbcast": db_colbcast, "scalar": db_scalar}[mode]
        t.record(out, (a, b), lambda g: (da(g, av, bv), reduce_b(g, av, bv)), op)
    return out


def add(a, b):
    """Elementwise sum; also broadcasts (m,n)+(n,), (m,n)+(m,1) and array+scalar."""
    return _binary_elementwise(
        a, b, "add", np.add,
        da=lambda g, av, bv: g,
        db=lambda g, av, bv: g,
        db_rowbias=lambda g, av, bv: g.sum(axis=0),
        db_colbcast=lambda g, av, bv: g.sum(axis=1, keepdims=True),
        db_scalar=lambda g, av, bv: np.asarray(g.sum()),
    )


def sub(a, b):
    """Elementwise difference, same broadcasting rules as add."""
    return _binary_elementwise(
        a, b, "sub", np.subtract,
        da=lambda g, av, bv: g,
        db=lambda g, av, bv: -g,
        db_rowbias=lambda g, av, bv: -g.sum(axis=0),
        db_colbcast=lambda g, av, bv: -g.sum(axis=1, keepdims=True),
        db_scalar=lambda g, av, bv: np.asarray(-g.sum()),
    )


def mul(a, b):
    """Elementwise (Hadamard) product, same broadcasting rules as add."""
    return _binary_elementwise(
        a, b, "mul", np.multiply,
        da=lambda g, av, bv: g * bv,
        db=lambda g, av, bv: g * av,
        db_rowbias=lambda g, av, bv: (g * av).sum(axis=0),
        db_colbcast=lambda g, av, bv: (g * av).sum(axis=1, keepdims=True),
        db_scalar=lambda g, av, bv: np.asarray((g * av).sum()),
    )


def sigmoid(x):
    # tanh form is overflow-free for large |x|
    s = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return record_unary(s, x, lambda g: g * s * (1.0 - s), "sigmoid")


def tanh(x):
    tv = np.tanh(x.data)
    return record_unary(tv, x, lambda g: g * (1.0 - tv * tv), "tanh")


def softmax(x):
    """Softmax over the last axis."""
    xv = x.data
    if xv.shape[-1] == 0:
        raise ShapeError("softmax: empty last axis")
    shifted = xv - xv.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return s * (g - (g * s).sum(axis=-1, keepdims=True))

    return record_unary(s, x, bwd, "softmax")


def concat(parts, axis=0):
    """Concatenate along `axis`; gradient splits back to each input."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: no inputs")
    values = [p.data for p in parts]
    ndim = values[0].ndim
    if any(v.ndim != ndim for v in values):
        raise ShapeError(
            f"concat: mixed ranks {[v.shape for v in values]}")
    if not 0 <= axis < max(ndim, 1):
        raise ShapeError(f"concat: axis {axis} out of range for rank {ndim}")
    out_v = np.concatenate(values, axis=axis)
    check_finite(out_v, "concat")
    out = NumArray(out_v)
    t = active_tape()
    if t is not None:
        sizes = [v.shape[axis] for v in values]
        offsets = np.cumsum(sizes)[:-1]

        def bwd(g):
            return tuple(np.split(g, offsets, axis=axis))

        t.record(out, tuple(parts), bwd, "concat")
    return out


def reshape(x, shape):
    out_v = x.data.reshape(shape)
    out = NumArray(out_v)
    t = active_tape()
    if t is not None:
        orig = x.data.shape
        t.record(out, (x,), lambda g: (g.reshape(orig),), "reshape")
    return out


# ---------------------------------------------------------------------------
# parameters


class Parameter:
    """A named weight array with a gradient buffer and a freeze flag.

    Frozen parameters still receive gradients from backward(); freezing only
    suppresses optimizer updates.
    """

    __slots__ = ("name", "value", "grad", "frozen")

    def __init__(self, name, value):
        self.name = name
        self.value = NumArray(np.array(value, dtype=np.float64))
        self.value._param = self
        self.grad = np.zeros_like(self.value.data)
        self.frozen = False

    def zero_grad(self):
        self.grad[...] = 0.0

    def assign(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.value.data.shape:
            raise ShapeError(
                f"parameter {self.name}: cannot assign {values.shape} "
                f"over {self.value.data.shape}")
        self.value.data[...] = values

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.data.shape}, frozen={self.frozen})"


class ParamSet:
    """Ordered collection of uniquely named Parameters."""

    def __init__(self, params):
        self._by_name = {}
        for p in params:
            if p.name in self._by_name:
                raise ConfigError(f"duplicate parameter name {p.name!r}")
            self._by_name[p.name] = p

    def __iter__(self):
        return iter(self._by_name.values())

    def __len__(self):
        return len(self._by_name)

    def __contains__(self, name):
        return name in self._by_name

    def __getitem__(self, name):
        return self._by_name[name]

    def names(self):
        return list(self._by_name)

    def zero_grads(self):
        for p in self:
            p.zero_grad()

    def set_frozen(self, names):
        """Freeze exactly `names`, thaw everything else."""
        unknown = set(names) - set(self._by_name)
        if unknown:
            raise ConfigError(f"freeze set names unknown parameters: {sorted(unknown)}")
        for p in self:
            p.frozen = p.name in names

    def values_copy(self):
        return {p.name: p.value.data.copy() for p in self}

    def n_entries(self):
        return sum(p.value.data.size for p in self)


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape, loss):
    """Accumulate d(loss)/d(parameter) into Parameter.grad for every parameter
    the tape touched. The seed gradient at the loss is 1; callers are expected
    to zero grads first."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    lid = tape._ids.get(id(loss))
    if lid is None or lid not in tape._produced:
        raise TapeError("backward: loss node was not produced on this tape")
    grads = {lid: np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        g = grads.pop(node.out_id, None)
        if g is None:
            continue
        in_grads = node.bwd(g)
        for iid, gi in zip(node.in_ids, in_grads):
            if gi is None:
                continue
            acc = grads.get(iid)
            grads[iid] = gi if acc is None else acc + gi
    for nid, param in tape._params.items():
        g = grads.get(nid)
        if g is not None:
            param.grad += np.asarray(g).reshape(param.grad.shape)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class CheckReport:
    """Outcome of comparing tape gradients against central finite differences."""

    h: float
    tol: float
    per_param: dict = field(default_factory=dict)
    max_rel_err: float = 0.0
    worst_param: str = ""

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def finite_diff_check(model_forward, params, h=1e-5, tol=1e-4, rel_floor=1e-3):
    """Compare tape gradients of a scalar forward against central differences.

    `model_forward` takes no arguments, reads the current parameter values and
    returns a scalar NumArray. It must be deterministic; two baseline
    evaluations are compared bitwise to detect otherwise. Relative error uses
    denominator max(|fd|, |ad|, rel_floor) so near-zero gradients are judged
    on an absolute scale. Frozen parameters are checked like any other.
    """
    if h <= 0:
        raise ConfigError("finite_diff_check: h must be positive")
    base1 = model_forward().item()
    base2 = model_forward().item()
    if base1 != base2:
        raise GradCheckError(
            f"non-deterministic forward: {base1!r} != {base2!r}")

    params.zero_grads()
    with Tape() as tape:
        loss = model_forward()
    backward(tape, loss)
    ad_grads = {p.name: p.grad.copy() for p in params}

    report = CheckReport(h=h, tol=tol)
    for p in params:
        flat = p.value.data.reshape(-1)
        ad_flat = ad_grads[p.name].reshape(-1)
        worst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = model_forward().item()
            flat[k] = orig - h
            f_minus = model_forward().item()
            flat[k] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            ad = ad_flat[k]
            rel = abs(fd - ad) / max(abs(fd), abs(ad), rel_floor)
            if rel > worst:
                worst = rel
        report.per_param[p.name] = worst
        if worst > report.max_rel_err:
            report.max_rel_err = worst
            report.worst_param = p.name
    return report
