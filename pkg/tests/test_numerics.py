import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advloss.errors import ArityError, InvalidValueError, ShapeError
from advloss.numerics import (ALL_OPS, GAMMA, OpKind, apply_op, as_batch, finite_diff_grad,
                              is_valid, vjp)

G = GAMMA


def _sign(v):
    return (v > 0) - (v < 0)


# element-wise reference formulas written out with the math module
SCALAR = {
    OpKind.NEG: lambda a: -a,
    OpKind.ABS: abs,
    OpKind.INV: lambda a: _sign(a) / (abs(a) + G),
    OpKind.SQRT: lambda a: _sign(a) * math.sqrt(abs(a) + G),
    OpKind.SQUARE: lambda a: a * a,
    OpKind.EXP: math.exp,
    OpKind.LOG: lambda a: _sign(a) * math.log(abs(a) + G),
}


def _ref_unary(kind, a):
    if kind in SCALAR:
        return np.array([[SCALAR[kind](float(v)) for v in row] for row in a])
    if kind is OpKind.MAX:
        return np.array([[max(row)] for row in a])
    if kind is OpKind.SUM:
        return np.array([[math.fsum(row)] for row in a])
    if kind is OpKind.SOFTMAX:
        out = []
        for row in a:
            m = max(row)
            e = [math.exp(v - m) for v in row]
            s = math.fsum(e)
            out.append([v / s for v in e])
        return np.array(out)
    raise AssertionError(kind)


def test_arity_table():
    assert {k for k in ALL_OPS if k.arity == 2} == {OpKind.ADD, OpKind.MUL}
    assert len(ALL_OPS) == 12


def test_spec_examples():
    np.testing.assert_allclose(apply_op(OpKind.SOFTMAX, [[0.0, 0.0]]), [[0.5, 0.5]], rtol=0, atol=1e-15)
    assert apply_op(OpKind.INV, [[2.0]])[0, 0] == pytest.approx(0.49999975, abs=1e-12)
    assert apply_op(OpKind.SQRT, [[-4.0]])[0, 0] == pytest.approx(-2.0, abs=1e-6)
    np.testing.assert_array_equal(apply_op(OpKind.MAX, [[1, 5, 2], [0, 0, 0]]), [[5], [0]])


def test_guarded_values_at_zero():
    z = np.zeros((1, 2))
    for kind in (OpKind.INV, OpKind.SQRT, OpKind.LOG):
        np.testing.assert_array_equal(apply_op(kind, z), z)


@pytest.mark.parametrize("kind", [k for k in ALL_OPS if k.arity == 1])
def test_unary_matches_reference(kind):
    a = np.array([[0.3, -1.7, 2.2], [4.0, -0.05, 0.9]])
    np.testing.assert_allclose(apply_op(kind, a), _ref_unary(kind, a), rtol=1e-13, atol=1e-15)


def test_binary_broadcast():
    a = np.arange(6.0).reshape(2, 3)
    b = np.array([[10.0], [20.0]])
    np.testing.assert_array_equal(apply_op(OpKind.ADD, a, b), a + np.array([[10], [20]]))
    np.testing.assert_array_equal(apply_op(OpKind.MUL, b, a), a * np.array([[10], [20]]))


def test_shape_and_arity_errors():
    with pytest.raises(ShapeError):
        apply_op(OpKind.ADD, np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        apply_op(OpKind.ADD, np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(ArityError):
        apply_op(OpKind.NEG, np.ones((1, 1)), np.ones((1, 1)))
    with pytest.raises(ArityError):
        apply_op(OpKind.ADD, np.ones((1, 1)))


def test_vjp_spec_examples():
    (g,) = vjp(OpKind.NEG, [np.array([[3.0, -2.0]])], np.array([[1.0, 1.0]]))
    np.testing.assert_array_equal(g, [[-1, -1]])
    (g,) = vjp(OpKind.SOFTMAX, [np.zeros((1, 2))], np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(g, [[0.25, -0.25]], atol=1e-15)
    x, up = 0.7, 1.3
    (g,) = vjp(OpKind.EXP, [np.array([[x]])], np.array([[up]]))
    fd = finite_diff_grad(lambda v: float(up * np.exp(v[0, 0])), np.array([[x]]))
    assert abs(g[0, 0] - fd[0, 0]) / abs(fd[0, 0]) <= 1e-6
    assert g[0, 0] == pytest.approx(up * math.exp(x), rel=1e-15)


def test_subgradient_conventions():
    (g,) = vjp(OpKind.ABS, [np.array([[0.0, -2.0, 3.0]])], np.ones((1, 3)))
    np.testing.assert_array_equal(g, [[0, -1, 1]])
    (g,) = vjp(OpKind.MAX, [np.array([[2.0, 5.0, 5.0]])], np.array([[4.0]]))
    np.testing.assert_array_equal(g, [[0, 4, 0]])
    # sign held fixed: gradient of the guarded ops at 0 is 0
    for kind in (OpKind.INV, OpKind.SQRT, OpKind.LOG):
        (g,) = vjp(kind, [np.zeros((1, 1))], np.ones((1, 1)))
        assert g[0, 0] == 0.0


def test_broadcast_gradient_is_row_sum():
    up = np.array([[1.0, 2.0, 3.0], [0.5, 0.25, 4.0]])
    ga, gb = vjp(OpKind.ADD, [np.zeros((2, 3)), np.zeros((2, 1))], up)
    np.testing.assert_array_equal(ga, up)
    np.testing.assert_array_equal(gb, up.sum(axis=1, keepdims=True))


def test_finite_diff_examples():
    np.testing.assert_allclose(finite_diff_grad(lambda v: float(np.sum(v * v)), np.array([[1.0, 2.0]])),
                               [[2, 4]], atol=1e-8)
    np.testing.assert_array_equal(finite_diff_grad(lambda v: 0.0, np.ones((2, 2))), np.zeros((2, 2)))
    with pytest.raises(InvalidValueError):
        finite_diff_grad(lambda v: float("inf"), np.ones((1, 1)))
    with pytest.raises(ValueError):
        finite_diff_grad(lambda v: 0.0, np.ones((1, 1)), h=0.0)


def test_validity_predicate_reports_overflow():
    big = np.array([[1000.0]])
    assert not is_valid(apply_op(OpKind.EXP, big))
    assert not is_valid(apply_op(OpKind.SQUARE, np.array([[1e200]])))
    assert is_valid(apply_op(OpKind.EXP, np.array([[1.0]])))
    assert as_batch([[1.0, 2.0]]).shape == (1, 2)
    with pytest.raises(ShapeError):
        as_batch([1.0, 2.0])


def test_random_vjp_sweep():
    # 1000 (kind, input) pairs away from kinks
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(1000):
        kind = ALL_OPS[i % len(ALL_OPS)]
        ins = []
        for _ in range(kind.arity):
            a = rng.uniform(-2, 2, size=(2, 3))
            a = np.where(np.abs(a) < 1e-3, 0.5, a)
            ins.append(a)
        if kind is OpKind.MAX:
            srt = np.sort(ins[0], axis=1)
            if np.any(srt[:, -1] - srt[:, -2] < 1e-3):
                continue
        out = apply_op(kind, *ins)
        up = rng.uniform(0.5, 1.5, size=out.shape)
        grads = vjp(kind, ins, up)
        for j in range(kind.arity):
            def f(v, j=j):
                args = list(ins)
                args[j] = v
                return float(np.sum(up * apply_op(kind, *args)))
            fd = finite_diff_grad(f, ins[j], h=1e-6)
            worst = max(worst, np.linalg.norm(grads[j] - fd) / max(np.linalg.norm(fd), 1e-12))
    assert worst <= 1e-4


finite_rows = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
                     elements=st.floats(-50, 50, allow_nan=False))


@given(finite_rows)
@settings(max_examples=200, deadline=None)
def test_softmax_rows_sum_to_one(a):
    s = apply_op(OpKind.SOFTMAX, a)
    assert np.all(np.abs(s.sum(axis=1) - 1.0) <= 1e-9)
    assert np.all(s >= 0) and np.all(s <= 1)


@given(finite_rows, st.sampled_from([k for k in ALL_OPS if k not in (OpKind.EXP, OpKind.SQUARE)]))
@settings(max_examples=300, deadline=None)
def test_non_overflowing_ops_stay_finite(a, kind):
    b = a if kind.arity == 2 else None
    assert is_valid(apply_op(kind, a, b))
