"""Pure-numpy implementations of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_kernels`` extension. Dense products use ``einsum`` rather than ``@``: BLAS
results for a given row change with the batch size, which would break
partition invariance of attack results.
"""
import numpy as np

INV, SQRT, LOG = 0, 1, 2
_SHRINK = 1.0 - 2.0 ** -52


def softmax_rows(a):
    m = np.max(a, axis=1, keepdims=True)
    e = np.exp(a - m)
    return e / np.sum(e, axis=1, keepdims=True)


def softmax_vjp(s, upstream):
    dot = np.sum(upstream * s, axis=1, keepdims=True)
    return s * (upstream - dot)


def guarded_forward(code, a, gamma):
    sgn = np.sign(a)
    mag = np.abs(a) + gamma
    if code == INV:
        return sgn / mag
    if code == SQRT:
        return sgn * np.sqrt(mag)
    if code == LOG:
        return sgn * np.log(mag)
    raise ValueError(f"unknown guarded op code {code}")


def guarded_vjp(code, a, upstream, gamma):
    # sign is held fixed, so d/da sign(a) f(|a|) = sign(a)^2 f'(|a|)
    sgn = np.sign(a)
    s2 = sgn * sgn
    mag = np.abs(a) + gamma
    if code == INV:
        return -s2 / (mag * mag) * upstream
    if code == SQRT:
        return s2 * 0.5 / np.sqrt(mag) * upstream
    if code == LOG:
        return s2 / mag * upstream
    raise ValueError(f"unknown guarded op code {code}")


def _dense(x, w, b):
    return np.einsum("nd,hd->nh", x, w) + b


def mlp_forward(weights, biases, x):
    """Return ``(logits, hidden)`` where ``hidden`` holds post-ReLU activations."""
    hidden = []
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = _dense(h, w, b)
        if i < last:
            z = np.maximum(z, 0.0)
            hidden.append(z)
        h = z
    return h, hidden


def mlp_input_grad(weights, hidden, grad_logits):
    g = grad_logits
    for i in range(len(weights) - 1, -1, -1):
        g = np.einsum("nh,hd->nd", g, weights[i])
        if i > 0:
            g = g * (hidden[i - 1] > 0.0)
    return g


def _row_norms(delta):
    return np.sqrt(np.sum(delta * delta, axis=1))


def project_delta(delta, eps, l2):
    """Project each row of ``delta`` onto the eps-ball (L2 or L-inf)."""
    if not l2:
        return np.clip(delta, -eps, eps)
    out = np.array(delta, dtype=np.float64, copy=True)
    norms = _row_norms(out)
    for i in np.flatnonzero(norms > eps):
        row = out[i] * (eps / norms[i])
        # rounding can leave the norm a hair above eps; shrink until the
        # check passes so a second projection is a no-op
        while _row_norms(row[None, :])[0] > eps:
            row = row * _SHRINK
        out[i] = row
    return out


def project_clamp(x, x_new, eps, l2):
    """Project ``x_new`` onto the eps-ball around ``x`` then clamp to [0, 1]."""
    delta = project_delta(x_new - x, eps, l2)
    return np.clip(x + delta, 0.0, 1.0)


def _first_argmax(z):
    return np.argmax(z, axis=1)


def grid_oracle(weights, biases, x, labels, eps, grid_steps):
    """Per-sample flag: does any clamped L-inf lattice point misclassify?"""
    n, d = x.shape
    ticks = eps * (np.arange(-grid_steps, grid_steps + 1) / grid_steps)
    mesh = np.meshgrid(*([ticks] * d), indexing="ij")
    offsets = np.stack([m.ravel() for m in mesh], axis=1)
    out = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        pts = np.clip(x[i] + offsets, 0.0, 1.0)
        logits, _ = mlp_forward(weights, biases, pts)
        out[i] = np.any(_first_argmax(logits) != labels[i])
    return out
