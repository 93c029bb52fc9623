import numpy as np
import pytest

from trafficast import autodiff as ad
from trafficast.autodiff import (NumArray, Parameter, ParamSet, Tape, backward,
                                 finite_diff_check)
from trafficast.errors import (ConfigError, GradCheckError, NumericError,
                               ShapeError, TapeError)
from trafficast.training import mse_loss


def test_matmul_identity():
    out = ad.matmul(NumArray(np.eye(2)), NumArray([[5.0], [7.0]]))
    np.testing.assert_array_equal(out.data, [[5.0], [7.0]])


def test_matmul_hand_product():
    out = ad.matmul(NumArray([[1.0, 2.0], [3.0, 4.0]]), NumArray([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_zero_annihilates():
    rng = np.random.default_rng(0)
    A = NumArray(rng.normal(size=(3, 4)))
    out = ad.matmul(A, NumArray(np.zeros((4, 2))))
    np.testing.assert_array_equal(out.data, np.zeros((3, 2)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(NumArray(np.zeros((2, 3))), NumArray(np.zeros((2, 2))))


def test_sigmoid_tanh_softmax_analytic():
    assert ad.sigmoid(NumArray([0.0])).data[0] == 0.5
    assert ad.tanh(NumArray([0.0])).data[0] == 0.0
    out = ad.softmax(NumArray([3.3, 3.3, 3.3]))
    np.testing.assert_allclose(out.data, np.full(3, 1.0 / 3.0), rtol=0, atol=1e-15)


def test_softmax_empty_axis_rejected():
    with pytest.raises(ShapeError):
        ad.softmax(NumArray(np.zeros((2, 0))))


def test_add_shape_error():
    with pytest.raises(ShapeError):
        ad.add(NumArray(np.zeros((2, 3))), NumArray(np.zeros((3, 2))))


def test_backward_product_rule():
    x, y = Parameter("x", 2.0), Parameter("y", 3.0)
    ps = ParamSet([x, y])
    ps.zero_grads()
    with Tape() as tape:
        loss = ad.mul(x.value, y.value)
    backward(tape, loss)
    assert x.grad == 3.0
    assert y.grad == 2.0


def test_backward_square():
    x = Parameter("x", 3.0)
    ParamSet([x]).zero_grads()
    with Tape() as tape:
        loss = ad.mul(x.value, x.value)
    backward(tape, loss)
    assert x.grad == 6.0


def test_backward_sigmoid_quarter():
    x = Parameter("x", np.array(0.0))
    with Tape() as tape:
        loss = ad.sigmoid(x.value)
    backward(tape, loss)
    assert x.grad == 0.25


def test_backward_rejects_non_scalar_loss():
    x = Parameter("x", [1.0, 2.0])
    with Tape() as tape:
        out = ad.tanh(x.value)
    with pytest.raises(ShapeError):
        backward(tape, out)


def test_backward_rejects_foreign_node():
    x = Parameter("x", 1.0)
    with Tape() as tape:
        ad.tanh(x.value)
    with pytest.raises(TapeError):
        backward(tape, NumArray(1.0))


def test_backward_idempotent_given_cleared_grads():
    rng = np.random.default_rng(3)
    w = Parameter("w", rng.normal(size=(4, 4)))
    x = NumArray(rng.normal(size=(4, 2)))

    def run():
        w.zero_grad()
        with Tape() as tape:
            loss = mse_loss(ad.tanh(ad.matmul(w.value, x)), np.zeros(8))
        backward(tape, loss)
        return w.grad.copy()

    first, second = run(), run()
    np.testing.assert_array_equal(first, second)


def test_batch_gradient_linearity_bitwise():
    # sum-of-losses gradient == per-sample gradients accumulated in the same
    # (reverse) order the tape uses
    rng = np.random.default_rng(7)
    w = Parameter("w", rng.normal(size=(3, 1)))
    samples = [rng.normal(size=(1, 3)) for _ in range(4)]
    targets = [rng.normal(size=(1, 1)) for _ in range(4)]

    per_sample = []
    for xv, tv in zip(samples, targets):
        w.zero_grad()
        with Tape() as tape:
            loss = mse_loss(ad.matmul(NumArray(xv), w.value), tv)
        backward(tape, loss)
        per_sample.append(w.grad.copy())

    w.zero_grad()
    with Tape() as tape:
        total = None
        for xv, tv in zip(samples, targets):
            loss = mse_loss(ad.matmul(NumArray(xv), w.value), tv)
            total = loss if total is None else ad.add(total, loss)
    backward(tape, total)

    expected = np.zeros_like(w.grad)
    for g in reversed(per_sample):
        expected = expected + g
    np.testing.assert_array_equal(w.grad, expected)


def test_numeric_error_names_op():
    big = NumArray(np.full((2, 2), 1e300))
    with np.errstate(over="ignore"), pytest.raises(NumericError, match="matmul"):
        ad.matmul(big, big)


def test_paramset_rejects_duplicate_names():
    with pytest.raises(ConfigError):
        ParamSet([Parameter("a", 1.0), Parameter("a", 2.0)])


def test_set_frozen_rejects_unknown_names():
    ps = ParamSet([Parameter("a", 1.0)])
    with pytest.raises(ConfigError):
        ps.set_frozen({"nope"})


def test_ops_without_tape_do_not_record():
    out = ad.sigmoid(NumArray([1.0]))
    assert isinstance(out, NumArray)
    assert ad.active_tape() is None


# ---------------------------------------------------------------------------
# finite differences against every operation kind


def _gradcheck_params(build, param_shapes, seed):
    """Wrap op inputs as parameters and check tape grads vs central diffs."""
    rng = np.random.default_rng(seed)
    params = ParamSet([Parameter(name, rng.normal(size=shape))
                       for name, shape in param_shapes])
    target = rng.normal(size=build(params).data.shape)

    def forward():
        return mse_loss(build(params), target)

    return finite_diff_check(forward, params, h=1e-5, tol=1e-4)


OP_CASES = [
    ("matmul_2d", [("a", (3, 4)), ("b", (4, 2))],
     lambda p: ad.matmul(p["a"].value, p["b"].value)),
    ("matmul_vec_right", [("a", (3, 4)), ("b", (4,))],
     lambda p: ad.matmul(p["a"].value, p["b"].value)),
    ("matmul_vec_left", [("a", (4,)), ("b", (4, 3))],
     lambda p: ad.matmul(p["a"].value, p["b"].value)),
    ("add_same", [("a", (3, 4)), ("b", (3, 4))],
     lambda p: ad.add(p["a"].value, p["b"].value)),
    ("add_rowbias", [("a", (3, 4)), ("b", (4,))],
     lambda p: ad.add(p["a"].value, p["b"].value)),
    ("add_colbcast", [("a", (3, 4)), ("b", (3, 1))],
     lambda p: ad.add(p["a"].value, p["b"].value)),
    ("sub_same", [("a", (2, 5)), ("b", (2, 5))],
     lambda p: ad.sub(p["a"].value, p["b"].value)),
    ("mul_same", [("a", (3, 4)), ("b", (3, 4))],
     lambda p: ad.mul(p["a"].value, p["b"].value)),
    ("mul_colbcast", [("a", (3, 4)), ("b", (3, 1))],
     lambda p: ad.mul(p["a"].value, p["b"].value)),
    ("mul_scalar", [("a", (3, 4)), ("b", ())],
     lambda p: ad.mul(p["a"].value, p["b"].value)),
    ("sigmoid", [("a", (4, 3))], lambda p: ad.sigmoid(p["a"].value)),
    ("tanh", [("a", (4, 3))], lambda p: ad.tanh(p["a"].value)),
    ("softmax_rows", [("a", (4, 5))], lambda p: ad.softmax(p["a"].value)),
    ("softmax_vec", [("a", (6,))], lambda p: ad.softmax(p["a"].value)),
    ("concat_axis0", [("a", (2, 3)), ("b", (4, 3))],
     lambda p: ad.concat([p["a"].value, p["b"].value], axis=0)),
    ("concat_axis1", [("a", (3, 2)), ("b", (3, 4))],
     lambda p: ad.concat([p["a"].value, p["b"].value], axis=1)),
    ("reshape", [("a", (2, 6))], lambda p: ad.reshape(p["a"].value, (3, 4))),
]


@pytest.mark.parametrize("name,shapes,build", OP_CASES, ids=[c[0] for c in OP_CASES])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradients_match_finite_differences(name, shapes, build, seed):
    report = _gradcheck_params(build, shapes, seed)
    assert report.passed, (name, seed, report.max_rel_err, report.worst_param)


def test_finite_diff_exact_for_linear_model():
    w = Parameter("w", [[2.0]])
    params = ParamSet([w])
    x = NumArray([[3.0]])
    report = finite_diff_check(lambda: ad.matmul(x, w.value), params)
    # derivative of w*x is exactly x; central difference is exact for linears
    assert report.max_rel_err < 1e-9


def test_finite_diff_checks_frozen_parameters_too():
    rng = np.random.default_rng(5)
    w = Parameter("w", rng.normal(size=(2, 2)))
    w.frozen = True
    params = ParamSet([w])
    target = rng.normal(size=(2, 2))
    report = finite_diff_check(
        lambda: mse_loss(ad.tanh(w.value), target), params)
    assert "w" in report.per_param
    assert report.passed


def test_finite_diff_detects_nondeterministic_forward():
    state = {"calls": 0}
    w = Parameter("w", 1.0)

    def unstable():
        state["calls"] += 1
        return ad.mul(w.value, NumArray(float(state["calls"])))

    with pytest.raises(GradCheckError):
        finite_diff_check(unstable, ParamSet([w]))


def test_finite_diff_rejects_bad_h():
    w = Parameter("w", 1.0)
    with pytest.raises(ConfigError):
        finite_diff_check(lambda: ad.tanh(w.value), ParamSet([w]), h=0.0)
