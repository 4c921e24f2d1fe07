"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row also reports the largest absolute difference between the two
backends' outputs.
"""
import argparse
import timeit

import numpy as np

from advloss import _pykernels
from advloss.model import init_model

try:
    from advloss import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    model = init_model([2, 32, 32, 3], rng)
    w = [np.ascontiguousarray(a) for a in model.weights]
    b = [np.ascontiguousarray(a) for a in model.biases]
    x = rng.uniform(0, 1, size=(1024, 2))
    a = rng.uniform(-5, 5, size=(1024, 10))
    up = rng.standard_normal((1024, 10))
    delta = rng.standard_normal((1024, 2)) * 0.3
    labels = rng.integers(0, 3, 200)
    xs = x[:200].copy()
    return [
        ("softmax_rows", lambda k: k.softmax_rows(a)),
        ("softmax_vjp", lambda k: k.softmax_vjp(_pykernels.softmax_rows(a), up)),
        ("guarded log", lambda k: k.guarded_forward(_pykernels.LOG, a, 1e-6)),
        ("guarded log vjp", lambda k: k.guarded_vjp(_pykernels.LOG, a, up, 1e-6)),
        ("mlp_forward", lambda k: k.mlp_forward(w, b, x)[0]),
        ("project linf", lambda k: k.project_clamp(x, x + delta, 0.1, False)),
        ("project l2", lambda k: k.project_clamp(x, x + delta, 0.1, True)),
        ("grid_oracle g=20", lambda k: k.grid_oracle(w, b, xs, labels, 0.09, 20)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}{'max diff':>11}")
    for name, fn in cases(rng):
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.max(np.abs(np.asarray(fn(_pykernels), dtype=float) - np.asarray(fn(_kernels), dtype=float))))
        print(f"{name:<18}{t_py:>10.3f}{t_cy:>11.3f}{t_py / t_cy:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
