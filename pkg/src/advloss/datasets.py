"""Datasets: the in-memory type, the ``ALDS`` binary format and generators.

File layout (little-endian)::

    b"ALDS"  u32 n  u32 d  u32 c
    n*d float32 features in [0, 1]
    n   uint32 labels

Generated features are rounded to float32 on creation so that a dataset and
its saved copy are bit-identical after loading.
"""
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedFileError

MAGIC = b"ALDS"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"features {x.shape} and labels {y.shape} do not line up")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if x.size and (not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
            raise ValueError("features must lie in [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("labels out of range")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def input_dim(self):
        return self.features.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.num_classes)

    def head(self, n):
        return self.subset(np.arange(min(n, len(self))))


def save_dataset(ds, path):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, len(ds), ds.input_dim, ds.num_classes))
        fh.write(ds.features.astype("<f4").tobytes())
        fh.write(ds.labels.astype("<u4").tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise MalformedFileError(f"{path}: truncated header")
    magic, n, d, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedFileError(f"{path}: bad magic {magic!r}")
    expect = _HEADER.size + 4 * n * d + 4 * n
    if len(raw) != expect:
        raise MalformedFileError(f"{path}: expected {expect} bytes, found {len(raw)}")
    off = _HEADER.size
    x = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d).astype(np.float64)
    y = np.frombuffer(raw, dtype="<u4", count=n, offset=off + 4 * n * d).astype(np.int64)
    try:
        return Dataset(x, y, c)
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from None


def _finish(x, labels, classes):
    x = np.clip(x, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return Dataset(x, labels, classes)


def _balanced_labels(n, classes, rng):
    return rng.permutation(np.arange(n) % classes)


def _check_counts(n, dims, classes):
    if n < 1 or dims < 1 or classes < 2:
        raise ValueError(f"invalid counts n={n}, dims={dims}, classes={classes} (need n, dims >= 1 and classes >= 2)")


def make_blobs(n, dims=2, classes=3, seed=0, spread=0.1, radius=0.25):
    """Gaussian blobs with centres evenly spaced on a circle in the first two dims."""
    _check_counts(n, dims, classes)
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, classes, rng)
    angles = 2 * np.pi * np.arange(classes) / classes
    centres = np.full((classes, dims), 0.5)
    centres[:, 0] += radius * np.cos(angles)
    if dims > 1:
        centres[:, 1] += radius * np.sin(angles)
    x = centres[labels] + spread * rng.standard_normal((n, dims))
    return _finish(x, labels, classes)


def make_rings(n, dims=2, classes=3, seed=0, spread=0.03):
    """Concentric rings around the centre of the unit square, one per class."""
    _check_counts(n, dims, classes)
    if dims < 2:
        raise ValueError("rings need dims >= 2")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, classes, rng)
    radii = 0.45 * (labels + 1) / classes
    theta = rng.uniform(0, 2 * np.pi, n)
    x = np.full((n, dims), 0.5) + spread * rng.standard_normal((n, dims))
    x[:, 0] += radii * np.cos(theta)
    x[:, 1] += radii * np.sin(theta)
    return _finish(x, labels, classes)


def _read_idx(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise MalformedFileError(f"{path}: not an IDX file")
    dtype_code, ndim = raw[2], raw[3]
    if dtype_code != 0x08:
        raise MalformedFileError(f"{path}: only unsigned-byte IDX files are supported")
    shape = struct.unpack_from(f">{ndim}I", raw, 4)
    off = 4 + 4 * ndim
    count = int(np.prod(shape))
    if len(raw) < off + count:
        raise MalformedFileError(f"{path}: truncated")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=off).reshape(shape)


def load_idx_subset(images_path, labels_path, n, classes=10, dims=784, seed=0):
    """Take ``n`` random samples of the first ``classes`` digits from IDX files.

    Images are block-averaged down to ``dims`` pixels (a square whose side
    divides the source side) and scaled to [0, 1].
    """
    _check_counts(n, dims, classes)
    images = _read_idx(images_path)
    labels = _read_idx(labels_path).astype(np.int64)
    if images.ndim != 3 or labels.shape[0] != images.shape[0]:
        raise MalformedFileError("image and label files do not match")
    side = int(round(np.sqrt(dims)))
    src = images.shape[1]
    if side * side != dims or src % side:
        raise ValueError(f"dims={dims} must be a square whose side divides {src}")
    keep = np.flatnonzero(labels < classes)
    if keep.size < n:
        raise ValueError(f"only {keep.size} samples with label < {classes}")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(keep, size=n, replace=False))
    f = src // side
    x = images[pick].astype(np.float64).reshape(n, side, f, side, f).mean(axis=(2, 4)) / 255.0
    return _finish(x.reshape(n, dims), labels[pick], classes)
