"""Batch-matrix primitives for the loss DSL.

Values are plain 2-D float64 numpy arrays of shape (N, C) or (N, 1). Nothing
here clamps or rejects non-finite numbers: they propagate, and callers decide
what to do with them via :func:`is_valid`.
"""
import enum

import numpy as np

from . import kernels
from .errors import ArityError, InvalidValueError, ShapeError

GAMMA = 1e-6


class OpKind(enum.Enum):
    ADD = "add"
    MUL = "mul"
    NEG = "neg"
    ABS = "abs"
    INV = "inv"
    SQRT = "sqrt"
    SQUARE = "square"
    EXP = "exp"
    LOG = "log"
    MAX = "max"
    SUM = "sum"
    SOFTMAX = "softmax"

    @property
    def arity(self):
        return 2 if self in (OpKind.ADD, OpKind.MUL) else 1

    @property
    def reduces(self):
        return self in (OpKind.MAX, OpKind.SUM)

    @classmethod
    def from_name(cls, name):
        return cls(name)


ALL_OPS = tuple(OpKind)

_GUARDED = {OpKind.INV: kernels.INV, OpKind.SQRT: kernels.SQRT, OpKind.LOG: kernels.LOG}

def quiet():
    """Silence numpy floating-point warnings; non-finite values are expected."""
    return np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore")


def as_batch(a):
    """Coerce ``a`` to a float64 (rows, cols) array, checking rows, cols >= 1."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D batch, got shape {arr.shape}")
    return arr


def is_valid(a):
    """True when every entry is finite."""
    return bool(np.all(np.isfinite(a)))


def broadcast_shape(a, b):
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row mismatch: {a.shape} vs {b.shape}")
    ca, cb = a.shape[1], b.shape[1]
    if ca == cb or cb == 1:
        return a.shape
    if ca == 1:
        return b.shape
    raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}")


def _check_arity(kind, b):
    if kind.arity == 2 and b is None:
        raise ArityError(f"{kind.value} takes 2 operands, got 1")
    if kind.arity == 1 and b is not None:
        raise ArityError(f"{kind.value} takes 1 operand, got 2")


def apply_op(kind, a, b=None, gamma=GAMMA):
    """Forward evaluation of one primitive."""
    _check_arity(kind, b)
    if kind.arity == 2:
        broadcast_shape(a, b)
    with quiet():
        if kind is OpKind.ADD:
            return a + b
        if kind is OpKind.MUL:
            return a * b
        if kind is OpKind.NEG:
            return -a
        if kind is OpKind.ABS:
            return np.abs(a)
        if kind is OpKind.SQUARE:
            return a * a
        if kind is OpKind.EXP:
            return np.exp(a)
        if kind in _GUARDED:
            return kernels.guarded_forward(_GUARDED[kind], a, gamma)
        if kind is OpKind.MAX:
            return np.max(a, axis=1, keepdims=True)
        if kind is OpKind.SUM:
            return np.sum(a, axis=1, keepdims=True)
        if kind is OpKind.SOFTMAX:
            return kernels.softmax_rows(a)
    raise ArityError(f"unknown operator {kind!r}")


def _reduce_to(grad, shape):
    # undo column broadcasting: an (N, 1) operand collects the row sums
    if grad.shape == shape:
        return grad
    return np.sum(grad, axis=1, keepdims=True)


def vjp(kind, inputs, upstream, gamma=GAMMA, output=None):
    """Vector-Jacobian product of one primitive.

    ``inputs`` is the tuple of forward operands and ``upstream`` has the shape
    of the forward output. Returns one gradient per operand, each shaped like
    that operand. ``output`` may carry the forward result to skip recomputing
    it (used by Exp and Softmax).

    Subgradients: sign is treated as locally constant, d|a| at 0 is 0, and Max
    sends the gradient to the first maximal column.
    """
    a = inputs[0]
    b = inputs[1] if len(inputs) > 1 else None
    _check_arity(kind, b)
    out_shape = broadcast_shape(a, b) if b is not None else None
    if kind.reduces:
        expect = (a.shape[0], 1)
    elif out_shape is not None:
        expect = out_shape
    else:
        expect = a.shape
    if upstream.shape != expect:
        raise ShapeError(f"upstream shape {upstream.shape} does not match output {expect}")
    with quiet():
        if kind is OpKind.ADD:
            return _reduce_to(upstream, a.shape), _reduce_to(upstream, b.shape)
        if kind is OpKind.MUL:
            return _reduce_to(upstream * b, a.shape), _reduce_to(upstream * a, b.shape)
        if kind is OpKind.NEG:
            return (-upstream,)
        if kind is OpKind.ABS:
            return (np.sign(a) * upstream,)
        if kind is OpKind.SQUARE:
            return (2.0 * a * upstream,)
        if kind is OpKind.EXP:
            e = np.exp(a) if output is None else output
            return (e * upstream,)
        if kind in _GUARDED:
            return (kernels.guarded_vjp(_GUARDED[kind], a, upstream, gamma),)
        if kind is OpKind.MAX:
            g = np.zeros_like(a)
            rows = np.arange(a.shape[0])
            g[rows, np.argmax(a, axis=1)] = upstream[:, 0]
            return (g,)
        if kind is OpKind.SUM:
            return (np.broadcast_to(upstream, a.shape).copy(),)
        if kind is OpKind.SOFTMAX:
            s = kernels.softmax_rows(a) if output is None else output
            return (kernels.softmax_vjp(s, upstream),)
    raise ArityError(f"unknown operator {kind!r}")


def finite_diff_grad(func, at, h=1e-5):
    """Central-difference gradient of a scalar function of a batch matrix."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(at, dtype=np.float64, copy=True)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = func(x)
        flat[i] = orig - h
        fm = func(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise InvalidValueError(f"non-finite function value near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
