"""Adversarial risk estimates.

``approx_risk`` scores the 0-1 loss at the final PGD iterate. Random-start
offsets for the whole dataset are drawn once from the attack seed, and every
kernel works row by row, so the result does not depend on batch size or on
how many worker processes share the batches.
"""
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .attack import pgd, random_start_noise
from .errors import DimensionTooLargeError, EmptyDatasetError
from .expr import make_context
from .model import forward

REPORT_FIELDS = (
    "loss_name", "norm", "epsilon", "steps", "step_size", "random_start", "seed",
    "n_samples", "clean_accuracy", "adversarial_accuracy", "r_double_prime",
)


@dataclass(frozen=True)
class RiskReport:
    clean_accuracy: float
    adversarial_accuracy: float
    r_double_prime: float
    n_samples: int
    loss_name: str
    norm: str
    epsilon: float
    steps: int
    step_size: float
    random_start: bool
    seed: int
    n_frozen: int = 0

    def row(self):
        d = asdict(self)
        out = {}
        for key in REPORT_FIELDS:
            v = d[key]
            if isinstance(v, bool):
                out[key] = str(int(v))
            elif isinstance(v, float):
                out[key] = f"{v:.6f}"
            else:
                out[key] = str(v)
        return out


def write_reports(reports, dest):
    """Write report rows as CSV to a path or an open text stream."""
    if hasattr(dest, "write"):
        _write_reports(reports, dest)
        return
    with open(dest, "w", newline="") as fh:
        _write_reports(reports, fh)


def _write_reports(reports, fh):
    w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())


def read_reports(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({
            "loss_name": r["loss_name"], "norm": r["norm"], "epsilon": float(r["epsilon"]),
            "steps": int(r["steps"]), "step_size": float(r["step_size"]),
            "random_start": bool(int(r["random_start"])), "seed": int(r["seed"]),
            "n_samples": int(r["n_samples"]), "clean_accuracy": float(r["clean_accuracy"]),
            "adversarial_accuracy": float(r["adversarial_accuracy"]),
            "r_double_prime": float(r["r_double_prime"]),
        })
    return out


def _attack_block(model, loss, x, y, spec, start):
    res = pgd(model, loss, x, y, spec, start=start)
    return int(np.sum(res.success_mask)), int(np.sum(res.frozen_mask))


def _attack_block_args(args):
    return _attack_block(*args)


def approx_risk(model, loss, dataset, spec, batch_size=256, workers=1):
    """R'' of ``loss`` driven PGD on ``dataset``, with clean accuracy alongside."""
    n = len(dataset)
    if n == 0:
        raise EmptyDatasetError("cannot evaluate risk on an empty dataset")
    x, y = dataset.features, dataset.labels
    clean_err = int(np.sum(np.argmax(forward(model, x), axis=1) != y)) / n
    start = None
    if spec.random_start and spec.epsilon > 0:
        start = random_start_noise(spec, n, x.shape[1])
    blocks = []
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        blocks.append((model, loss, x[lo:hi], y[lo:hi], spec, None if start is None else start[lo:hi]))
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_attack_block_args, blocks))
    else:
        results = [_attack_block(*b) for b in blocks]
    errors = sum(r[0] for r in results)
    frozen = sum(r[1] for r in results)
    r2 = errors / n
    return RiskReport(
        clean_accuracy=1.0 - clean_err,
        adversarial_accuracy=1.0 - r2,
        r_double_prime=r2,
        n_samples=n,
        loss_name=loss.name,
        norm=spec.norm,
        epsilon=float(spec.epsilon),
        steps=spec.steps,
        step_size=spec.alpha,
        random_start=spec.random_start,
        seed=spec.seed,
        n_frozen=frozen,
    )


def grid_oracle_errors(model, dataset, epsilon, grid_steps):
    """Per-sample flags from exhaustive search over the L-inf lattice."""
    if dataset.input_dim > 3:
        raise DimensionTooLargeError(f"lattice search needs input_dim <= 3, got {dataset.input_dim}")
    if grid_steps < 3:
        raise ValueError(f"grid_steps must be >= 3, got {grid_steps}")
    if not epsilon >= 0:
        raise ValueError("epsilon must be >= 0")
    return kernels.grid_oracle(model.weights, model.biases, dataset.features, dataset.labels,
                               epsilon, grid_steps).astype(bool)


def grid_oracle_risk(model, dataset, epsilon, grid_steps=20):
    """Fraction of samples misclassified somewhere on the clamped lattice.

    The lattice has offsets ``epsilon * k / grid_steps`` for
    ``k = -grid_steps..grid_steps`` in each coordinate. This is a lower bound
    on the true L-inf risk that tightens as ``grid_steps`` grows.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate risk on an empty dataset")
    return float(np.mean(grid_oracle_errors(model, dataset, epsilon, grid_steps)))


def approximation_error(oracle_risk, r_double_prime):
    """Signed gap between the (near-)true risk and the attack estimate."""
    return oracle_risk - r_double_prime


def landscape_grid(model, losses, x, y, x_adv_hc, x_adv_bs, resolution=21):
    """Loss values on ``clamp(x + a*(x_hc - x) + b*(x_bs - x))`` for a, b in [0, 1].

    Returns ``(alphas, betas, {loss name: array[alpha index, beta index]})``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    hc = np.atleast_2d(np.asarray(x_adv_hc, dtype=np.float64))
    bs = np.atleast_2d(np.asarray(x_adv_bs, dtype=np.float64))
    if hc.shape != x.shape or bs.shape != x.shape:
        raise ValueError(f"anchor shapes {hc.shape}, {bs.shape} do not match x {x.shape}")
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    grid = np.linspace(0.0, 1.0, resolution)
    d_hc, d_bs = hc - x, bs - x
    out = {loss.name: np.empty((resolution, resolution)) for loss in losses}
    for i, a in enumerate(grid):
        for j, b in enumerate(grid):
            pt = np.clip(x + a * d_hc + b * d_bs, 0.0, 1.0)
            ctx = make_context(forward(model, pt), y)
            for loss in losses:
                out[loss.name][i, j] = loss.value(ctx)
    return grid, grid.copy(), out


def find_landscape_anchors(model, hc_loss, bs_loss, dataset, spec, limit=None):
    """First sample where the handcrafted attack fails and the other succeeds.

    Returns ``(index, x_adv_hc, x_adv_bs)`` or ``None``.
    """
    n = len(dataset) if limit is None else min(limit, len(dataset))
    sub = dataset.head(n)
    start = random_start_noise(spec, n, sub.input_dim) if spec.random_start and spec.epsilon > 0 else None
    r_hc = pgd(model, hc_loss, sub.features, sub.labels, spec, start=start)
    r_bs = pgd(model, bs_loss, sub.features, sub.labels, spec, start=start)
    ok = (~r_hc.success_mask) & r_bs.success_mask
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return None
    i = int(hits[0])
    return i, r_hc.x_adv[i:i + 1], r_bs.x_adv[i:i + 1]


def write_landscape_csv(alphas, betas, values, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha\\beta"] + [f"{b:.6f}" for b in betas])
        for a, row in zip(alphas, values):
            w.writerow([f"{a:.6f}"] + [f"{v:.6f}" for v in row])


def read_landscape_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    betas = np.array([float(v) for v in rows[0][1:]])
    alphas = np.array([float(r[0]) for r in rows[1:]])
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return alphas, betas, values
