"""Analytic vs. central-difference gradient checks.

A point counts as kink-adjacent when the finite difference itself is
unstable (two step sizes disagree); such points are redrawn rather than
scored, so a reported failure is a real disagreement.
"""
from dataclasses import dataclass

import numpy as np

from . import expr
from .errors import InvalidValueError
from .losses import get_loss
from .model import init_model, loss_and_input_grad
from .numerics import ALL_OPS, apply_op, finite_diff_grad, quiet, vjp

TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    checked: int
    skipped: int

    @property
    def ok(self):
        return self.checked > 0 and self.max_rel_err <= TOL


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def _stable_fd(func, at, h=1e-5):
    """Central difference, or None if it is not trustworthy at ``at``."""
    try:
        with quiet():
            g1 = finite_diff_grad(func, at, h)
            g2 = finite_diff_grad(func, at, h / 4)
    except InvalidValueError:
        return None
    if not (np.all(np.isfinite(g1)) and np.max(np.abs(g1)) < 1e6):
        return None
    if rel_err(g1, g2) > 1e-5:
        return None
    return g1


def _check(name, draw, analytic, func, rng, count, max_tries, wrt=0):
    worst, done, skipped = 0.0, 0, 0
    for _ in range(max_tries):
        if done == count:
            break
        at = draw(rng)
        fd = _stable_fd(lambda v: func(v, at), at[wrt])
        if fd is None:
            skipped += 1
            continue
        with quiet():
            g = analytic(at)
        if not np.all(np.isfinite(g)):
            skipped += 1
            continue
        worst = max(worst, rel_err(g, fd))
        done += 1
    return CheckResult(name, worst, done, skipped)


def check_ops(rng, points=20, shape=(4, 3)):
    """Every primitive against each operand, scalarised by a random weighting."""
    results = []
    for kind in ALL_OPS:
        for arg in range(kind.arity):
            def draw(r):
                ins = [r.uniform(-3, 3, size=shape) for _ in range(kind.arity)]
                out_shape = apply_op(kind, *ins).shape
                return ins + [r.uniform(0.5, 1.5, size=out_shape)]

            def func(v, at, kind=kind, arg=arg):
                ins = list(at[:-1])
                ins[arg] = v
                return float(np.sum(at[-1] * apply_op(kind, *ins)))

            def analytic(at, kind=kind, arg=arg):
                ins = at[:-1]
                return vjp(kind, ins, at[-1], output=apply_op(kind, *ins))[arg]

            results.append(_check(f"op:{kind.value}[{arg}]", draw, analytic, func, rng,
                                  points, 50 * points, wrt=arg))
    return results


def check_trees(rng, n_trees=100, max_depth=6, num_classes=3, batch=4):
    """Random trees (with a P leaf) at random logits, gradient w.r.t. P."""
    worst, done, skipped = 0.0, 0, 0
    while done < n_trees:
        method = "full" if rng.random() < 0.5 else "grow"
        tree = expr.random_tree(rng, 1, int(rng.integers(1, max_depth + 1)), method)
        if not tree.has_p:
            continue
        labels = rng.integers(0, num_classes, size=batch)

        def func(v):
            return expr.value_and_grad(tree, expr.make_context(v, labels))[0]

        res = None
        for _ in range(20):
            p0 = rng.uniform(-3, 3, size=(batch, num_classes))
            fd = _stable_fd(func, p0)
            if fd is None:
                continue
            with quiet():
                _, g = expr.value_and_grad(tree, expr.make_context(p0, labels))
            if np.all(np.isfinite(g)):
                res = rel_err(g, fd)
                break
        if res is None:
            skipped += 1
            if skipped > 10 * n_trees:
                break
            continue
        worst = max(worst, res)
        done += 1
    return CheckResult("trees", worst, done, skipped)


def check_model(rng, points=50, dims=(2, 16, 3), losses=("ce", "cw", "dlr", "bs1", "bs5")):
    """Loss-through-model input gradients on a random two-layer net."""
    model = init_model(list(dims), rng)
    results = []
    for name in losses:
        loss = get_loss(name)

        def draw(r):
            return [r.uniform(0, 1, size=(1, dims[0])), r.integers(0, dims[-1], size=1)]

        def func(v, at, loss=loss):
            return loss_and_input_grad(model, loss, v, at[1])[0]

        def analytic(at, loss=loss):
            return loss_and_input_grad(model, loss, at[0], at[1])[1]

        results.append(_check(f"model:{name}", draw, analytic, func, rng, points, 50 * points))
    return results


def run_all(seed=0, n_trees=100, points=50):
    rng = np.random.default_rng(seed)
    return check_ops(rng) + [check_trees(rng, n_trees)] + check_model(rng, points)
