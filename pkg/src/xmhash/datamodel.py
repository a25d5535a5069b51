"""Multi-label paired datasets: container, synthesis, similarity, file I/O.

An instance couples an image feature vector, a non-negative text feature
vector (bag-of-words style counts or weights), and a multi-hot label
vector with at least one active class.  Two instances are similar when
they share at least one label.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, FormatError, ShapeError

DATASET_MAGIC = b"XMHD"
DATASET_VERSION = 1


class Instance(NamedTuple):
    image_feature: np.ndarray
    text_feature: np.ndarray
    labels: np.ndarray


@dataclass
class Dataset:
    """Aligned image features, text features, and labels; one row per instance."""

    images: np.ndarray
    texts: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.images = np.ascontiguousarray(np.asarray(self.images, dtype=np.float64))
        self.texts = np.ascontiguousarray(np.asarray(self.texts, dtype=np.float64))
        self.labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.uint8))
        for name, arr in (("images", self.images), ("texts", self.texts), ("labels", self.labels)):
            if arr.ndim != 2:
                raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
        n = self.images.shape[0]
        if self.texts.shape[0] != n or self.labels.shape[0] != n:
            raise ShapeError(
                "row counts differ: "
                f"images {self.images.shape[0]}, texts {self.texts.shape[0]}, "
                f"labels {self.labels.shape[0]}"
            )
        if n < 2:
            raise ContractError(f"a dataset needs at least 2 instances, got {n}")
        if not np.all(np.isfinite(self.images)):
            raise ContractError("image features must be finite")
        if not np.all(np.isfinite(self.texts)):
            raise ContractError("text features must be finite")
        if np.any(self.texts < 0.0):
            raise ContractError("text features must be non-negative")
        if not np.isin(self.labels, (0, 1)).all():
            raise ContractError("labels must contain only 0 and 1")
        if np.any(self.labels.sum(axis=1) == 0):
            raise ContractError("every instance needs at least one active label")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def d_v(self) -> int:
        return self.images.shape[1]

    @property
    def d_t(self) -> int:
        return self.texts.shape[1]

    @property
    def c(self) -> int:
        return self.labels.shape[1]

    def instance(self, i: int) -> Instance:
        return Instance(self.images[i], self.texts[i], self.labels[i])


def build_similarity(labels_a: np.ndarray, labels_b: np.ndarray) -> np.ndarray:
    """Binary similarity: S[i, j] = 1 iff rows i and j share an active label."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("label matrices must be 2-D")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"label widths differ: {a.shape[1]} vs {b.shape[1]}")
    if not np.isin(a, (0, 1)).all() or not np.isin(b, (0, 1)).all():
        raise ContractError("labels must contain only 0 and 1")
    overlap = a.astype(np.int64) @ b.astype(np.int64).T
    return (overlap > 0).astype(np.uint8)


def synth_dataset(
    n: int, c: int, d_v: int, d_t: int, noise: float, seed: int
) -> Dataset:
    """Draw a synthetic paired dataset from per-class feature prototypes.

    Each class owns a Gaussian image prototype and a sparse non-negative
    text bump pattern.  An instance activates one to three classes; its
    features are the summed prototypes of the active classes plus
    Gaussian noise (text clamped at zero).  Identical seeds reproduce the
    dataset bit for bit.
    """
    if n < 2:
        raise ContractError(f"n must be at least 2, got {n}")
    if c < 2:
        raise ContractError(f"c must be at least 2, got {c}")
    if d_v < 1 or d_t < 1:
        raise ContractError(f"feature dims must be positive, got d_v={d_v}, d_t={d_t}")
    if noise < 0.0:
        raise ContractError(f"noise must be non-negative, got {noise}")

    rng = np.random.default_rng(seed)
    img_proto = rng.normal(0.0, 1.0, (c, d_v))
    txt_proto = rng.uniform(0.5, 1.5, (c, d_t)) * (rng.random((c, d_t)) < 0.25)

    labels = np.zeros((n, c), dtype=np.uint8)
    max_active = min(3, c)
    for i in range(n):
        k = int(rng.integers(1, max_active + 1))
        active = rng.choice(c, size=k, replace=False)
        labels[i, active] = 1

    mask = labels.astype(np.float64)
    images = mask @ img_proto + noise * rng.normal(0.0, 1.0, (n, d_v))
    texts = np.maximum(0.0, mask @ txt_proto + noise * rng.normal(0.0, 1.0, (n, d_t)))
    return Dataset(images=images, texts=texts, labels=labels)


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise FormatError(f"dataset file truncated while reading {what}")
    return data


def save_dataset(dataset: Dataset, path) -> None:
    """Write the dataset in the little-endian XMHD binary layout."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", DATASET_MAGIC, DATASET_VERSION))
        f.write(struct.pack("<4I", dataset.n, dataset.d_v, dataset.d_t, dataset.c))
        f.write(dataset.images.astype("<f8").tobytes(order="C"))
        f.write(dataset.texts.astype("<f8").tobytes(order="C"))
        f.write(dataset.labels.astype(np.uint8).tobytes(order="C"))


def load_dataset(path) -> Dataset:
    """Read an XMHD file back into a validated Dataset."""
    with open(path, "rb") as f:
        magic, version = struct.unpack("<4sI", _read_exact(f, 8, "header"))
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}")
        if version != DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        n, d_v, d_t, c = struct.unpack("<4I", _read_exact(f, 16, "dimensions"))
        if n < 2 or d_v < 1 or d_t < 1 or c < 1:
            raise FormatError(f"invalid dimensions n={n}, d_v={d_v}, d_t={d_t}, c={c}")
        images = np.frombuffer(
            _read_exact(f, 8 * n * d_v, "image features"), dtype="<f8"
        ).reshape(n, d_v)
        texts = np.frombuffer(
            _read_exact(f, 8 * n * d_t, "text features"), dtype="<f8"
        ).reshape(n, d_t)
        labels = np.frombuffer(
            _read_exact(f, n * c, "labels"), dtype=np.uint8
        ).reshape(n, c)
        if f.read(1):
            raise FormatError("trailing bytes after label section")
    try:
        return Dataset(images=images, texts=texts, labels=labels)
    except (ContractError, ShapeError) as exc:
        raise FormatError(f"dataset file content invalid: {exc}") from exc
