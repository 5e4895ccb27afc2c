"""Datasets: MNIST IDX files, seeded splits and synthetic Gaussian blobs."""

from __future__ import annotations

import gzip
import logging
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagicError, CountMismatchError, TruncatedFileError, ValidationError
from .masks import RngStream

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# stream ids under a dataset seed
_SPLIT_STREAM = 1
_BLOB_STREAM = 2


@dataclass(frozen=True)
class Dataset:
    """Inputs (``N x d``), integer labels (``N``) and the number of classes."""

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] == 0:
            raise ValidationError(f"inputs must be a non-empty N x d matrix, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ValidationError(f"{labels.shape[0]} labels for {inputs.shape[0]} inputs")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValidationError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(inputs)):
            raise ValidationError("inputs must be finite")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index) -> Dataset:
        return Dataset(self.inputs[index], self.labels[index], self.n_classes)


def _open(path: str):
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_header(data: bytes, path: str, magic: int, n_dims: int) -> tuple[int, ...]:
    size = 4 * (1 + n_dims)
    if len(data) < size:
        raise TruncatedFileError(f"{path}: header needs {size} bytes, file has {len(data)}")
    found, *dims = struct.unpack(f">{1 + n_dims}I", data[:size])
    if found != magic:
        raise BadMagicError(f"{path}: magic number 0x{found:08x}, expected 0x{magic:08x}")
    expected = size + math.prod(dims)
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: payload needs {expected} bytes, file has {len(data)}")
    return tuple(dims)


def load_idx(images_path: str, labels_path: str, n_classes: int = 10) -> Dataset:
    """Parse an IDX image/label pair; pixels are scaled by 1/255 into ``[0, 1]``."""
    with _open(images_path) as f:
        image_bytes = f.read()
    with _open(labels_path) as f:
        label_bytes = f.read()
    count, rows, cols = _read_header(image_bytes, images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,) = _read_header(label_bytes, labels_path, IDX_LABELS_MAGIC, 1)
    if count != n_labels:
        raise CountMismatchError(f"{count} images but {n_labels} labels")
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=n_labels, offset=8)
    logger.info(f"Loaded {count} images of {rows}x{cols} from {images_path}")
    return Dataset(pixels.reshape(count, rows * cols) / 255.0, labels.astype(np.int64), n_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str, labels_path: str) -> None:
    """Write ``uint8`` images (``N x rows x cols``) and labels as IDX files."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8 or images.ndim != 3:
        raise ValidationError("write_idx expects uint8 images of shape N x rows x cols and uint8 labels")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes(order="C"))
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_mnist(mnist_dir: str, subset: str = "train") -> Dataset:
    """Load the official MNIST files (plain or ``.gz``) from ``mnist_dir``."""
    if subset not in MNIST_FILES:
        raise ValidationError(f"unknown MNIST subset {subset!r}")
    paths = []
    for name in MNIST_FILES[subset]:
        candidates = [os.path.join(mnist_dir, name + suffix) for suffix in ("", ".gz")]
        candidates += [os.path.join(mnist_dir, name.replace("-idx", ".idx") + suffix) for suffix in ("", ".gz")]
        found = next((p for p in candidates if os.path.exists(p)), None)
        if found is None:
            raise ValidationError(f"cannot find {name} in {mnist_dir}")
        paths.append(found)
    return load_idx(*paths)


def split(ds: Dataset, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``n_train`` examples train and the rest validate."""
    if not 0 < n_train < len(ds):
        raise ValidationError(f"n_train must lie in (0, {len(ds)}), got {n_train}")
    order = RngStream(seed, _SPLIT_STREAM).generator().permutation(len(ds))
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


def synthetic_gaussian_blobs(
    n_per_class: int, n_classes: int, d: int, separation: float, seed: int
) -> Dataset:
    """Isotropic unit-variance clusters around well separated class means.

    Class ``k`` is centred on ``+-separation * e_{k // 2}`` while ``2 d``
    signed axes are available; beyond that centres are random directions
    of length ``separation``.
    """
    if n_per_class < 1 or n_classes < 1 or d < 1:
        raise ValidationError("sizes must be positive")
    gen = RngStream(seed, _BLOB_STREAM).generator()
    centres = np.zeros((n_classes, d))
    for k in range(n_classes):
        if k < 2 * d:
            centres[k, k // 2] = separation if k % 2 == 0 else -separation
        else:
            direction = gen.standard_normal(d)
            centres[k] = separation * direction / np.linalg.norm(direction)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    inputs = centres[labels] + gen.standard_normal((labels.size, d))
    return Dataset(inputs, labels, n_classes)
