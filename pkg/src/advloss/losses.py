"""Surrogate losses behind one interface.

Every loss maps an :class:`~advloss.expr.EvalContext` to a scalar that the
attacker *maximises*. Built-in baselines are closed-form; everything else is
an expression tree.
"""
import os

import numpy as np

from . import expr
from .errors import GradientUnsupportedError, LossNotFoundError, UnsupportedLossError
from .numerics import GAMMA, quiet

# Simplified searched losses, transcribed into the expression grammar.
DISTILLED = {
    "bs1": "(exp (div (mul 10 (softmax p)) (max (softmax p))))",
    "bs2": "(exp (neg (max (softmax (add p (mul 2 (softmax (mul 5 p))))))))",
    "bs3": "(mul (softmax (neg (softmax (mul (mul (exp p) 2) p)))) (add (softmax (mul 2 p)) (mul 2 q)))",
    "bs4": "(square (sub (softmax (sub (add (softmax (mul 2 p)) p) q)) q))",
    "bs5": "(exp (neg (max (add (softmax (add (exp (add (softmax (add (exp p) p)) 1)) p)) 1))))",
}

BASELINES = ("ce", "cw", "ml", "dlr", "zero_one")


def _labels(ctx):
    return np.argmax(ctx.q, axis=1)


def _scale(grad, n, reduction):
    return grad / n if reduction == "mean" else grad


def zero_one(ctx):
    """Fraction of rows whose arg-max logit is not the label."""
    return float(np.mean(np.argmax(ctx.p, axis=1) != _labels(ctx)))


def ce(ctx, reduction="mean"):
    p = ctx.p
    m = np.max(p, axis=1, keepdims=True)
    e = np.exp(p - m)
    z = np.sum(e, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(z[:, 0])
    rows = lse - np.sum(ctx.q * p, axis=1)
    grad = e / z - ctx.q
    return float(np.mean(rows)), _scale(grad, p.shape[0], reduction)


def _best_other(p, y):
    masked = p.copy()
    masked[np.arange(p.shape[0]), y] = -np.inf
    j = np.argmax(masked, axis=1)
    return j, masked[np.arange(p.shape[0]), j]


def cw(ctx, reduction="mean"):
    """Margin ``max_{i != y} p_i - p_y`` (the hinge-free CW form)."""
    p = ctx.p
    n = p.shape[0]
    y = _labels(ctx)
    rows = np.arange(n)
    j, other = _best_other(p, y)
    grad = np.zeros_like(p)
    grad[rows, j] += 1.0
    grad[rows, y] -= 1.0
    return float(np.mean(other - p[rows, y])), _scale(grad, n, reduction)


def dlr(ctx, reduction="mean", gamma=GAMMA):
    """Difference of logits ratio, ``-(p_y - max_{i!=y} p_i) / (p_(1) - p_(3) + gamma)``."""
    p = ctx.p
    n, c = p.shape
    if c < 3:
        raise UnsupportedLossError(f"dlr needs at least 3 classes, got {c}")
    y = _labels(ctx)
    rows = np.arange(n)
    j, other = _best_other(p, y)
    order = np.argsort(-p, axis=1, kind="stable")
    top, third = order[:, 0], order[:, 2]
    num = p[rows, y] - other
    den = p[rows, top] - p[rows, third] + gamma
    grad = np.zeros_like(p)
    # d(-num/den) = -dnum/den + num*dden/den^2
    inv = 1.0 / den
    grad[rows, y] -= inv
    grad[rows, j] += inv
    coef = num * inv * inv
    grad[rows, top] += coef
    grad[rows, third] -= coef
    return float(np.mean(-num / den)), _scale(grad, n, reduction)


_BUILTIN_FNS = {"ce": ce, "cw": cw, "ml": cw, "dlr": dlr}


class SurrogateLoss:
    """A named loss, either closed-form (``builtin``) or an expression ``tree``."""

    def __init__(self, name, builtin=None, tree=None):
        if (builtin is None) == (tree is None):
            raise ValueError("give exactly one of builtin or tree")
        if builtin is not None and builtin not in BASELINES:
            raise ValueError(f"unknown builtin loss {builtin!r}")
        self.name = name
        self.builtin = builtin
        self.tree = tree

    @classmethod
    def from_text(cls, name, source):
        return cls(name, tree=expr.parse(source))

    @property
    def differentiable(self):
        return self.builtin != "zero_one"

    @property
    def text(self):
        return expr.to_text(self.tree) if self.tree is not None else self.builtin

    def value(self, ctx):
        if self.builtin == "zero_one":
            return zero_one(ctx)
        if self.tree is not None:
            return expr.scalarize(expr.eval_tree(self.tree, ctx))
        return self.value_and_grad(ctx)[0]

    def value_and_grad(self, ctx, reduction="mean"):
        if self.builtin == "zero_one":
            raise GradientUnsupportedError("the 0-1 loss has no gradient")
        if self.tree is not None:
            return expr.value_and_grad(self.tree, ctx, reduction=reduction)
        with quiet():
            return _BUILTIN_FNS[self.builtin](ctx, reduction=reduction)

    def grad_p(self, ctx, reduction="mean"):
        return self.value_and_grad(ctx, reduction)[1]

    def __repr__(self):
        return f"SurrogateLoss({self.name!r}, {self.text!r})"


def builtin_catalog():
    """All named losses: the baselines followed by the distilled trees."""
    cat = {name: SurrogateLoss(name, builtin=name) for name in BASELINES}
    for name, source in DISTILLED.items():
        cat[name] = SurrogateLoss.from_text(name, source)
    return cat


_CATALOG = builtin_catalog()


def get_loss(name):
    try:
        return _CATALOG[name.lower()]
    except KeyError:
        raise LossNotFoundError(f"no loss named {name!r}; known: {', '.join(_CATALOG)}") from None


def resolve_loss(spec):
    """Catalog name, or a path to a file holding one expression."""
    if spec.lower() in _CATALOG:
        return _CATALOG[spec.lower()]
    if os.path.isfile(spec):
        name = os.path.splitext(os.path.basename(spec))[0]
        return SurrogateLoss(name, tree=expr.load_expr(spec))
    raise LossNotFoundError(f"{spec!r} is neither a known loss nor an expression file")
