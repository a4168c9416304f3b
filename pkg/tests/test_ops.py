"""Numerics primitives: spec'd values, invariants, and backward rules."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtrack import ops
from memtrack.gradcheck import finite_diff_grad, relative_error
from memtrack.params import DimensionError, NumericError, ParamTensor
from memtrack.rng import make_rng


# ------------------------------------------------------------------ matmul

def test_matmul_identity():
    m = make_rng(0, "mm").normal(size=(3, 3))
    assert np.allclose(ops.matmul(np.eye(3), m), m)


def test_matmul_hand_case():
    out = ops.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]]))
    assert np.array_equal(out, np.array([[2.0], [4.0]]))


def test_matmul_zero_annihilator():
    anything = make_rng(1, "mm").normal(size=(3, 4))
    assert np.array_equal(ops.matmul(np.zeros((2, 3)), anything), np.zeros((2, 4)))


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        ops.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_matmul_associative_chains():
    rng = make_rng(2, "assoc")
    for _ in range(4):
        a, b, c, d = (rng.normal(size=(4, 4)) for _ in range(4))
        left = ops.matmul(ops.matmul(ops.matmul(a, b), c), d)
        right = ops.matmul(a, ops.matmul(b, ops.matmul(c, d)))
        assert np.max(np.abs(left - right)) <= 1e-9 * max(1.0, np.max(np.abs(left)))


def test_matmul_deterministic_repeat():
    rng = make_rng(3, "det")
    a, b = rng.normal(size=(17, 9)), rng.normal(size=(9, 13))
    assert np.array_equal(ops.matmul(a, b), ops.matmul(a, b))


# ----------------------------------------------------------------- softmax

def test_softmax_uniform_row():
    out = ops.softmax_rows(np.array([[0.0, 0.0, 0.0]]))
    assert np.allclose(out, 1 / 3)


def test_softmax_single_column():
    for x in (-40.0, 0.0, 55.0):
        assert np.allclose(ops.softmax_rows(np.array([[x]])), 1.0)


def test_softmax_closed_form():
    out = ops.softmax_rows(np.array([[np.log(1.0), np.log(3.0)]]))
    assert np.allclose(out, [0.25, 0.75], atol=1e-14)


def test_softmax_nan_rejected():
    with pytest.raises(NumericError):
        ops.softmax_rows(np.array([[0.0, np.nan]]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=8))
def test_softmax_rows_sum_to_one(row):
    out = ops.softmax_rows(np.array([row]))
    assert abs(out.sum() - 1.0) <= 1e-12
    assert np.all(out >= 0)


# ----------------------------------------------------------------- rmsnorm

def test_rms_norm_constant_row_gives_sign():
    for c in (3.7, -0.2):
        y, _ = ops.rms_norm(np.full((1, 5), c), np.ones(5), 0.0)
        assert np.allclose(y, np.sign(c), atol=1e-14)


def test_rms_norm_zeros():
    y, _ = ops.rms_norm(np.zeros((2, 4)), np.ones(4), 1e-6)
    assert np.array_equal(y, np.zeros((2, 4)))


def test_rms_norm_zero_gain():
    x = make_rng(4, "rms").normal(size=(3, 4))
    y, _ = ops.rms_norm(x, np.zeros(4), 1e-6)
    assert np.array_equal(y, np.zeros((3, 4)))


# ------------------------------------------------------------- activations

def test_silu_zero():
    assert ops.silu(np.array([0.0]))[0] == 0.0


def test_softplus_zero_is_ln2():
    assert abs(ops.softplus(np.array([0.0]))[0] - np.log(2.0)) < 1e-12


def test_softplus_overflow_guard():
    assert ops.softplus(np.array([40.0]))[0] == 40.0


def test_conv_identity_kernel():
    x = make_rng(5, "conv").normal(size=(6, 3))
    kernel = np.zeros((4, 3))
    kernel[-1] = 1.0
    assert np.allclose(ops.depthwise_conv1d(x, kernel), x)


def test_conv_causal_padding():
    # a pure one-step-back kernel delays the signal by one position
    x = make_rng(6, "conv").normal(size=(5, 2))
    kernel = np.zeros((3, 2))
    kernel[1] = 1.0
    y = ops.depthwise_conv1d(x, kernel)
    assert np.allclose(y[1:], x[:-1])
    assert np.allclose(y[0], 0.0)


# ------------------------------------------------------ finite differences

def test_fd_quadratic():
    p = ParamTensor("theta", np.array([3.0]))
    grads = finite_diff_grad(lambda: float(p.value[0] ** 2), [p])
    assert abs(grads["theta"][0] - 6.0) <= 1e-8


def test_fd_constant():
    p = ParamTensor("theta", np.array([1.0, -2.0]))
    grads = finite_diff_grad(lambda: 42.0, [p])
    assert np.array_equal(grads["theta"], np.zeros(2))


def test_fd_linear_sum():
    p = ParamTensor("theta", make_rng(7, "fd").normal(size=(2, 3)))
    grads = finite_diff_grad(lambda: float(p.value.sum()), [p])
    assert np.allclose(grads["theta"], 1.0, atol=1e-9)


def test_fd_restores_values():
    vals = make_rng(8, "fd").normal(size=4)
    p = ParamTensor("theta", vals.copy())
    finite_diff_grad(lambda: float((p.value ** 3).sum()), [p])
    assert np.array_equal(p.value, vals)


# ------------------------------------------------- primitive backward rules

def _check_primitive(forward, backward, shapes, seed):
    """Backward vs the finite-difference oracle, with a random cotangent."""
    rng = make_rng(seed, "prim")
    xs = [ParamTensor(f"x{i}", rng.normal(size=s)) for i, s in enumerate(shapes)]
    w = rng.normal(size=forward(*[p.value for p in xs]).shape)

    def objective():
        return float((forward(*[p.value for p in xs]) * w).sum())

    numeric = finite_diff_grad(objective, xs)
    analytic = backward(w, *[p.value for p in xs])
    for p, a in zip(xs, analytic):
        assert relative_error(a, numeric[p.name]) <= 1e-6, p.name


def test_matmul_backward():
    _check_primitive(
        ops.matmul,
        lambda g, a, b: ops.matmul_backward(g, a, b),
        [(3, 4), (4, 2)], seed=10,
    )


def test_softmax_backward():
    _check_primitive(
        ops.softmax_rows,
        lambda g, x: (ops.softmax_rows_backward(g, ops.softmax_rows(x)),),
        [(3, 5)], seed=11,
    )


def test_rms_norm_backward():
    def fwd(x, gain):
        return ops.rms_norm(x, gain, 1e-6)[0]

    def bwd(g, x, gain):
        _, cache = ops.rms_norm(x, gain, 1e-6)
        return ops.rms_norm_backward(g, cache)

    _check_primitive(fwd, bwd, [(4, 6), (6,)], seed=12)


def test_silu_backward():
    _check_primitive(ops.silu, lambda g, x: (ops.silu_backward(g, x),), [(4, 3)], seed=13)


def test_softplus_backward():
    _check_primitive(ops.softplus, lambda g, x: (ops.softplus_backward(g, x),),
                     [(5,)], seed=14)


def test_sigmoid_backward():
    _check_primitive(
        ops.sigmoid,
        lambda g, x: (ops.sigmoid_backward(g, ops.sigmoid(x)),),
        [(6,)], seed=15,
    )


def test_conv_backward():
    _check_primitive(
        ops.depthwise_conv1d,
        lambda g, x, k: ops.depthwise_conv1d_backward(g, x, k),
        [(6, 3), (4, 3)], seed=16,
    )


def test_linear_backward():
    def fwd(x, w, b):
        return ops.linear(x, w, b)

    def bwd(g, x, w, b):
        return ops.linear_backward(g, x, w)

    _check_primitive(fwd, bwd, [(5, 3), (3, 4), (4,)], seed=17)
