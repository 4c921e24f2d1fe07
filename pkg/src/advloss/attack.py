"""Projected gradient descent under L-inf and L2 budgets."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import forward, loss_and_input_grad
from .numerics import quiet

NORMS = ("linf", "l2")


@dataclass(frozen=True)
class AttackSpec:
    """PGD settings. ``step_size=None`` means ``2.5 * epsilon / steps``."""

    norm: str = "linf"
    epsilon: float = 0.1
    steps: int = 10
    step_size: float = None
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.step_size is not None and self.steps > 0 and not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")

    @property
    def l2(self):
        return self.norm == "l2"

    @property
    def alpha(self):
        """The step size actually used."""
        if self.step_size is not None:
            return float(self.step_size)
        return 2.5 * self.epsilon / self.steps if self.steps else 0.0

    def replace(self, **changes):
        fields = dict(norm=self.norm, epsilon=self.epsilon, steps=self.steps,
                      step_size=self.step_size, random_start=self.random_start, seed=self.seed)
        fields.update(changes)
        return AttackSpec(**fields)


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success_mask: np.ndarray
    loss_trace: list = field(default_factory=list)
    frozen_mask: np.ndarray = None


def project(delta, norm, epsilon):
    """Project each row of ``delta`` onto the ``norm`` ball of radius ``epsilon``."""
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
    return kernels.project_delta(np.atleast_2d(delta), epsilon, norm == "l2")


def random_start_noise(spec, n, d, rng=None):
    """Uniform samples from the eps-ball, one row per sample."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if spec.l2:
        z = rng.standard_normal((n, d))
        norms = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
        radius = spec.epsilon * rng.random((n, 1)) ** (1.0 / d)
        return z / np.where(norms > 0, norms, 1.0) * radius
    return rng.uniform(-spec.epsilon, spec.epsilon, size=(n, d))


def _l2_direction(g):
    # scale by the max entry first so huge gradients do not overflow the norm
    scale = np.max(np.abs(g), axis=1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    gs = g / safe
    norms = np.sqrt(np.sum(gs * gs, axis=1, keepdims=True))
    return np.where(scale > 0, gs / np.where(norms > 0, norms, 1.0), 0.0)


def pgd(model, loss, x, y, spec, start=None):
    """Run PGD and return the final iterate.

    ``start`` optionally supplies the random-start offsets (rows of the
    eps-ball); otherwise they are drawn from ``spec.seed``. A sample whose
    gradient turns non-finite is frozen at its last iterate and flagged in
    ``frozen_mask``.
    """
    x0 = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = x0.shape
    l2 = spec.l2
    if spec.random_start and spec.epsilon > 0:
        noise = random_start_noise(spec, n, d) if start is None else np.asarray(start, dtype=np.float64)
        cur = kernels.project_clamp(x0, x0 + noise, spec.epsilon, l2)
    else:
        cur = x0.copy()
    frozen = np.zeros(n, dtype=bool)
    trace = []
    alpha = spec.alpha
    with quiet():
        for _ in range(spec.steps):
            value, g = loss_and_input_grad(model, loss, cur, y, reduction="sum")
            trace.append(value)
            frozen |= ~np.all(np.isfinite(g), axis=1)
            if l2:
                step = alpha * _l2_direction(g)
            else:
                step = alpha * np.sign(g)
            nxt = kernels.project_clamp(x0, cur + step, spec.epsilon, l2)
            cur = np.where(frozen[:, None], cur, nxt)
    success = np.argmax(forward(model, cur), axis=1) != y
    return AttackResult(cur, success, trace, frozen)
