"""Datasets: synthetic mixtures, on-disk loaders, imbalancing, batching.

A Dataset is rows of float64 features plus int64 labels. Loaders exist
for three external formats:

  * the classic big-endian IDX tensor format (images + labels as two
    files),
  * raw CIFAR-style binary batches (3073-byte records: one label byte
    followed by 3072 pixel bytes),
  * this package's own JSON container with base64-encoded float64
    buffers, which round-trips byte-identically.

`longtail_subsample` imposes an exponential class-size profile on a
balanced set, and `make_batches` produces the per-epoch shuffled index
batches every trainer run consumes.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError, ShapeError
from .numkit import RngStream, require_finite
from .serial import check_envelope, decode_array, encode_array, read_json, write_json

DATASET_FORMAT = "exitweave-dataset"
DATASET_VERSION = 1


@dataclass
class Dataset:
    """Feature rows with integer labels; validated on construction."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ShapeError(f"features must be a nonempty 2-D array, got shape {self.features.shape}")
        require_finite(self.features, "features")
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ShapeError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} rows"
            )
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ShapeError("labels must be integers")
        self.labels = self.labels.astype(np.int64)
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ShapeError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: np.ndarray, split: str | None = None) -> "Dataset":
        return Dataset(
            self.features[indices], self.labels[indices], self.num_classes,
            self.split if split is None else split,
        )


def gen_synthetic_gaussians(
    num_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    rng: RngStream,
    split: str = "train",
    radius: float = 3.0,
) -> Dataset:
    """Isotropic Gaussian blobs with class means spread on a circle.

    Means live in the first two feature dimensions (on a line when
    dim == 1); the remaining dimensions carry pure noise, so they make
    the problem harder without adding signal. Deterministic in rng.
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if dim < 1 or per_class < 1:
        raise ConfigError("dim and per_class must be >= 1")
    if spread <= 0:
        raise DomainError(f"spread must be positive, got {spread}")
    means = np.zeros((num_classes, dim))
    if dim == 1:
        means[:, 0] = np.linspace(-radius, radius, num_classes)
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    features = means[labels] + spread * rng.standard_normal((labels.shape[0], dim))
    return Dataset(features, labels, num_classes, split)


# ---------------------------------------------------------------------------
# IDX format (big-endian magic: 0x00 0x00 <dtype> <ndim>, then int32 dims)
# ---------------------------------------------------------------------------

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path) -> np.ndarray:
    """Parse one IDX tensor file into a native-endian ndarray."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header at byte {len(raw)}")
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"{path}: bad IDX magic at byte 0: {raw[:2].hex()}")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise FormatError(f"{path}: unknown IDX dtype code 0x{code:02x} at byte 2")
    if ndim < 1:
        raise FormatError(f"{path}: IDX ndim must be >= 1, got {ndim}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated IDX dims at byte {len(raw)}")
    shape = struct.unpack(f">{ndim}i", raw[4:header_end])
    if any(d < 0 for d in shape):
        raise FormatError(f"{path}: negative IDX dimension {shape}")
    dtype = _IDX_DTYPES[code]
    expected = header_end + int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{path}: IDX payload length mismatch at byte {min(len(raw), expected)}: "
            f"have {len(raw)} bytes, header promises {expected}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=header_end)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Pair an IDX image tensor with an IDX label vector.

    Image tensors are flattened to one row per sample; integer pixel
    types are scaled to [0, 1] by 255.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim < 2:
        raise FormatError(f"{images_path}: image tensor must have >= 2 dims, got {images.ndim}")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: label tensor must be 1-D, got {labels.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]} "
            f"({images_path} vs {labels_path})"
        )
    feats = images.reshape(images.shape[0], -1).astype(np.float64)
    if np.issubdtype(images.dtype, np.integer):
        feats /= 255.0
    if not np.issubdtype(labels.dtype, np.integer):
        raise FormatError(f"{labels_path}: labels must be an integer IDX tensor")
    labels = labels.astype(np.int64)
    return Dataset(feats, labels, int(labels.max()) + 1, split)


# ---------------------------------------------------------------------------
# CIFAR-style raw binary batches
# ---------------------------------------------------------------------------

_CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixel bytes


def load_cifar_bin(paths, num_classes: int = 10, split: str = "train") -> Dataset:
    """Concatenate one or more raw binary batch files into a Dataset.

    Each record is one label byte followed by 3072 pixel bytes; pixels
    are scaled to [0, 1]. A file whose size is not a whole number of
    records is rejected with the offending byte offset.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    if not paths:
        raise ConfigError("at least one batch file is required")
    feats, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % _CIFAR_RECORD != 0:
            raise FormatError(
                f"{path}: size {len(raw)} is not a multiple of the {_CIFAR_RECORD}-byte "
                f"record; trailing fragment starts at byte {len(raw) - len(raw) % _CIFAR_RECORD}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        feats.append(records[:, 1:].astype(np.float64) / 255.0)
    labels = np.concatenate(labels)
    if labels.max() >= num_classes:
        raise FormatError(f"label {int(labels.max())} out of range for num_classes={num_classes}")
    return Dataset(np.concatenate(feats), labels, num_classes, split)


# ---------------------------------------------------------------------------
# Native JSON container
# ---------------------------------------------------------------------------

def save_dataset(path, dataset: Dataset) -> None:
    doc = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "split": dataset.split,
        "num_classes": dataset.num_classes,
        "features": encode_array(dataset.features),
        "labels": [int(v) for v in dataset.labels],
    }
    write_json(path, doc)


def load_dataset(path) -> Dataset:
    doc = read_json(path)
    check_envelope(doc, path, DATASET_FORMAT, DATASET_VERSION)
    features = decode_array(doc["features"], "features")
    labels = np.asarray(doc["labels"], dtype=np.int64)
    return Dataset(features, labels, int(doc["num_classes"]), str(doc.get("split", "train")))


# ---------------------------------------------------------------------------
# Imbalancing and batching
# ---------------------------------------------------------------------------

def longtail_subsample(dataset: Dataset, factor: float, rng: RngStream) -> Dataset:
    """Impose an exponential head-to-tail class-size profile.

    Class c keeps round(N_c * mu**c) samples with mu = factor**(-1/(C-1)),
    so class 0 is untouched and the last class is factor times smaller.
    Selection within a class is a seeded draw without replacement; kept
    rows stay in their original order. A class never drops to zero: it
    is clamped to one sample with a warning.
    """
    if factor < 1.0:
        raise DomainError(f"imbalance factor must be >= 1, got {factor}")
    if factor == 1.0:
        return dataset
    c = dataset.num_classes
    mu = factor ** (-1.0 / (c - 1))
    keep: list[np.ndarray] = []
    for cls in range(c):
        idx = np.flatnonzero(dataset.labels == cls)
        if idx.size == 0:
            continue
        target = int(round(idx.size * mu**cls))
        if target < 1:
            warnings.warn(
                f"class {cls} would keep 0 of {idx.size} samples at factor {factor}; clamping to 1",
                stacklevel=2,
            )
            target = 1
        chosen = rng.child(f"longtail-{cls}").permutation(idx.size)[:target]
        keep.append(idx[chosen])
    kept = np.sort(np.concatenate(keep))
    return dataset.subset(kept)


def make_batches(
    dataset: Dataset, batch_size: int, epoch: int, seed: int, drop_last: bool = True
) -> list[np.ndarray]:
    """Shuffled index batches for one epoch, keyed by (seed, epoch).

    The shuffle comes from a child stream of the run seed labeled with
    the epoch, so epoch e always sees the same order no matter what was
    drawn before. With drop_last, a trailing partial batch is discarded.
    """
    n = len(dataset)
    if batch_size < 1 or batch_size > n:
        raise ConfigError(f"batch_size must lie in [1, {n}], got {batch_size}")
    perm = RngStream(seed).child(f"shuffle-{epoch}").permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if drop_last and batches and batches[-1].shape[0] < batch_size:
        batches.pop()
    return batches
