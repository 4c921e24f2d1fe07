"""A small ReLU MLP classifier, its input gradient, and a fixture trainer."""
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .datasets import Dataset
from .errors import (DivergenceError, GradientUnsupportedError, InconsistencyError,
                     InvalidValueError, MalformedFileError, ShapeError)
from .expr import make_context
from .losses import get_loss
from .numerics import quiet

log = logging.getLogger(__name__)

FORMAT_TAG = "advloss-mlp"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class MlpModel:
    """Affine layers with ReLU in between and a linear output layer.

    ``weights[i]`` has shape (out, in) and ``biases[i]`` shape (out,).
    """

    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        ws = tuple(np.ascontiguousarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in self.biases)
        if not ws or len(ws) != len(bs):
            raise InconsistencyError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InconsistencyError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise InconsistencyError(f"layer {i} expects {w.shape[1]} inputs, previous gives {ws[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidValueError(f"layer {i} has non-finite parameters")
        if ws[-1].shape[0] < 2:
            raise InconsistencyError("need at least 2 output classes")
        if self.activation != "relu":
            raise InconsistencyError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def num_classes(self):
        return self.weights[-1].shape[0]

    @property
    def dims(self):
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def __call__(self, x):
        return forward(self, x)

    def predict(self, x):
        return np.argmax(forward(self, x), axis=1)


def init_model(dims, rng):
    """He-initialised weights, zero biases. ``dims`` = [input, hidden..., classes]."""
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        ws.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        bs.append(np.zeros(fan_out))
    return MlpModel(tuple(ws), tuple(bs))


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"model expects (N, {model.input_dim}) inputs, got {x.shape}")
    return x


def forward(model, x):
    """Logits (N, C) for a batch of inputs."""
    x = _check_input(model, x)
    with quiet():
        return kernels.mlp_forward(model.weights, model.biases, x)[0]


def loss_and_input_grad(model, loss, x, y, reduction="mean"):
    """Loss value at ``model(x)`` and its gradient with respect to ``x``."""
    if not loss.differentiable:
        raise GradientUnsupportedError(f"loss {loss.name!r} has no gradient")
    x = _check_input(model, x)
    with quiet():
        logits, hidden = kernels.mlp_forward(model.weights, model.biases, x)
        value, grad_p = loss.value_and_grad(make_context(logits, y), reduction=reduction)
        return value, kernels.mlp_input_grad(model.weights, hidden, grad_p)


def input_grad(model, loss, x, y):
    return loss_and_input_grad(model, loss, x, y)[1]


# --------------------------------------------------------------------------
# training

def _ce_param_grads(model, x, y):
    """Mean CE over the batch and gradients for every weight and bias."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    logits = acts[-1]
    n = x.shape[0]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(np.log(e.sum(axis=1)) + m[:, 0] - logits[rows, y]))
    g = s
    g[rows, y] -= 1.0
    g /= n
    gw, gb = [None] * (last + 1), [None] * (last + 1)
    for i in range(last, -1, -1):
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        if i:
            g = (g @ model.weights[i]) * (acts[i] > 0.0)
    return loss, gw, gb, float(np.mean(np.argmax(logits, axis=1) == y))


def fgsm_batch(model, x, y, epsilon):
    """One signed-gradient CE step of size epsilon, clamped to the unit box."""
    g = input_grad(model, get_loss("ce"), x, y)
    return np.clip(x + epsilon * np.sign(g), 0.0, 1.0)


def train(dataset, hidden=(32, 32), epochs=30, lr=0.1, batch_size=64, at_mode="none",
          epsilon=0.0, seed=0, history=None):
    """Minibatch SGD on cross-entropy; ``at_mode="fgsm"`` trains on FGSM inputs.

    Returns the final-epoch model. Per-epoch ``(epoch, loss, accuracy)`` tuples
    are appended to ``history`` when a list is given.
    """
    if at_mode not in ("none", "fgsm"):
        raise ValueError(f"at_mode must be 'none' or 'fgsm', got {at_mode!r}")
    if at_mode == "fgsm" and not epsilon >= 0:
        raise ValueError("fgsm training needs epsilon >= 0")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    model = init_model([dataset.input_dim, *hidden, dataset.num_classes], rng)
    ws = [w.copy() for w in model.weights]
    bs = [b.copy() for b in model.biases]
    x_all, y_all = dataset.features, dataset.labels
    n = len(dataset)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, correct = 0.0, 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = x_all[idx], y_all[idx]
            current = MlpModel(tuple(ws), tuple(bs))
            with quiet():
                if at_mode == "fgsm":
                    xb = fgsm_batch(current, xb, yb, epsilon)
                loss, gw, gb, acc = _ce_param_grads(current, xb, yb)
                for i in range(len(ws)):
                    ws[i] -= lr * gw[i]
                    bs[i] -= lr * gb[i]
            if not all(np.all(np.isfinite(w)) for w in ws + bs):
                raise DivergenceError(f"parameters became non-finite in epoch {epoch} (lr={lr})")
            total += loss * len(idx)
            correct += acc * len(idx)
        if history is not None:
            history.append((epoch, total / n, correct / n))
        log.info("epoch %d loss %.6f acc %.6f", epoch, total / n, correct / n)
    return MlpModel(tuple(ws), tuple(bs))


def accuracy(model, dataset):
    return float(np.mean(model.predict(dataset.features) == dataset.labels))


# --------------------------------------------------------------------------
# persistence
#
# text header lines, terminated by "end\n", then little-endian float64
# parameters layer by layer: weights row-major, then bias.

def save_model(model, path):
    header = (
        f"{FORMAT_TAG} {FORMAT_VERSION}\n"
        f"dims {' '.join(map(str, model.dims))}\n"
        f"num_classes {model.num_classes}\n"
        f"activation {model.activation}\n"
        "end\n"
    )
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.astype("<f8").tobytes())
        parts.append(b.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(b"".join(parts))


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end\n")
    if end < 0:
        raise MalformedFileError(f"{path}: missing header terminator")
    try:
        lines = raw[:end].decode("ascii").splitlines()
    except UnicodeDecodeError:
        raise MalformedFileError(f"{path}: header is not ASCII") from None
    fields = {}
    for line in lines:
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()
    if fields.get(FORMAT_TAG) != [str(FORMAT_VERSION)]:
        raise MalformedFileError(f"{path}: not a version-{FORMAT_VERSION} model file")
    try:
        dims = [int(v) for v in fields["dims"]]
        num_classes = int(fields["num_classes"][0])
        activation = fields["activation"][0]
    except (KeyError, IndexError, ValueError):
        raise MalformedFileError(f"{path}: incomplete header") from None
    if len(dims) < 2 or min(dims) < 1:
        raise InconsistencyError(f"{path}: bad layer dims {dims}")
    if num_classes != dims[-1]:
        raise InconsistencyError(f"{path}: num_classes {num_classes} != last layer width {dims[-1]}")
    body = raw[end + 4:]
    count = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    if len(body) != 8 * count:
        raise MalformedFileError(f"{path}: expected {8 * count} parameter bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    ws, bs, off = [], [], 0
    for i, o in zip(dims[:-1], dims[1:]):
        ws.append(flat[off:off + o * i].reshape(o, i))
        off += o * i
        bs.append(flat[off:off + o])
        off += o
    return MlpModel(tuple(ws), tuple(bs), activation)
