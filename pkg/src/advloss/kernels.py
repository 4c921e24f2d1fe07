"""Hot-loop kernels, backed by the compiled extension when it is available.

Set ``ADVLOSS_BACKEND=python`` to force the numpy implementation, or
``ADVLOSS_BACKEND=cython`` to fail loudly when the extension is missing.
``BACKEND`` names the implementation actually in use.
"""
import os

import numpy as np

from . import _pykernels

_choice = os.environ.get("ADVLOSS_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "cython"):
    raise ImportError(f"ADVLOSS_BACKEND must be auto, python or cython, got {_choice!r}")

_impl = _pykernels
BACKEND = "python"
if _choice != "python":
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise

INV, SQRT, LOG = _pykernels.INV, _pykernels.SQRT, _pykernels.LOG


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _params(weights, biases):
    return [_c(w) for w in weights], [_c(b) for b in biases]


def softmax_rows(a):
    return _impl.softmax_rows(_c(a))


def softmax_vjp(s, upstream):
    return _impl.softmax_vjp(_c(s), _c(upstream))


def guarded_forward(code, a, gamma):
    return _impl.guarded_forward(code, _c(a), float(gamma))


def guarded_vjp(code, a, upstream, gamma):
    return _impl.guarded_vjp(code, _c(a), _c(upstream), float(gamma))


def mlp_forward(weights, biases, x):
    ws, bs = _params(weights, biases)
    return _impl.mlp_forward(ws, bs, _c(x))


def mlp_input_grad(weights, hidden, grad_logits):
    return _impl.mlp_input_grad([_c(w) for w in weights], [_c(h) for h in hidden], _c(grad_logits))


def project_delta(delta, eps, l2):
    return _impl.project_delta(_c(delta), float(eps), bool(l2))


def project_clamp(x, x_new, eps, l2):
    return _impl.project_clamp(_c(x), _c(x_new), float(eps), bool(l2))


def grid_oracle(weights, biases, x, labels, eps, grid_steps):
    ws, bs = _params(weights, biases)
    return _impl.grid_oracle(ws, bs, _c(x), np.asarray(labels, dtype=np.int64), float(eps), int(grid_steps))
