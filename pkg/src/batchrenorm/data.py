"""Datasets and minibatch construction.

Covers the synthetic Gaussian-mixture generator, an IDX (MNIST-format)
loader, a raw binary dataset cache, i.i.d. and label-clustered batch
sampling, and microbatch splitting (contiguous runs or label-disjoint
halves). Datasets are immutable after construction; samplers own their Rng.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base for malformed IDX input."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # (n, input_width) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int
    class_indices: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on example count")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range for the declared class count")
        if not self.class_indices:
            self.class_indices = [
                np.flatnonzero(self.labels == c) for c in range(self.num_classes)
            ]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def input_width(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SamplerSpec:
    mode: str  # "iid" | "label_clustered"
    batch_size: int
    labels_per_batch: int = 0  # clustered only
    per_label: int = 0  # clustered only
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("iid", "label_clustered"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode == "label_clustered":
            if self.per_label < 1:
                raise ValueError("per_label must be >= 1 in clustered mode")
            if self.labels_per_batch * self.per_label != self.batch_size:
                raise ValueError(
                    "clustered mode requires labels_per_batch * per_label "
                    "== batch_size"
                )


@dataclass(frozen=True)
class Microbatching:
    size: int
    split: str = "contiguous"  # "contiguous" | "label_disjoint_halves"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("microbatch size must be >= 1")
        if self.split not in ("contiguous", "label_disjoint_halves"):
            raise ValueError(f"unknown split rule {self.split!r}")


def make_gaussian_mixture(
    classes: int, per_class: int, input_width: int, class_sep: float, seed: int
) -> Dataset:
    """Mixture of `classes` unit-covariance Gaussians in `input_width` dims.

    Class means are seeded random unit vectors scaled by class_sep. Examples
    are laid out class-interleaved (0,1,...,C-1,0,1,...) so that any prefix
    split stays balanced.
    """
    if classes < 1 or per_class < 1 or input_width < 1:
        raise ValueError("classes, per_class, and input_width must be positive")
    if class_sep < 0:
        raise ValueError("class_sep must be >= 0")
    rng = Rng(seed)
    means = np.zeros((classes, input_width))
    for c in range(classes):
        direction = rng.normal((input_width,))
        norm_ = np.linalg.norm(direction)
        if norm_ > 0:
            direction = direction / norm_
        means[c] = class_sep * direction
    n = classes * per_class
    noise = rng.normal((n, input_width))
    labels = np.tile(np.arange(classes, dtype=np.int64), per_class)
    features = noise + means[labels]
    return Dataset(features=features, labels=labels, num_classes=classes)


def split_train_val(ds: Dataset, train_frac: float = 0.8) -> tuple[Dataset, Dataset]:
    """Fixed 80/20 split by index, before any shuffling, so every method
    sees identical splits."""
    cut = int(round(ds.n * train_frac))
    train = Dataset(ds.features[:cut].copy(), ds.labels[:cut].copy(), ds.num_classes)
    val = Dataset(ds.features[cut:].copy(), ds.labels[cut:].copy(), ds.num_classes)
    return train, val


def _read_exact(f, count: int, path: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxTruncatedError(f"{path}: expected {count} more bytes, got {len(data)}")
    return data


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair (big-endian, MNIST layout).

    Pixels are scaled to [0, 1] and images flattened to one row per example.
    """
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxMagicError(
                f"{images_path}: bad magic 0x{magic:08x}, expected "
                f"0x{IDX_IMAGES_MAGIC:08x}"
            )
        pixels = np.frombuffer(
            _read_exact(f, count * rows * cols, images_path), dtype=np.uint8
        )
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">ii", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected "
                f"0x{IDX_LABELS_MAGIC:08x}"
            )
        raw_labels = np.frombuffer(
            _read_exact(f, label_count, labels_path), dtype=np.uint8
        )
    if count != label_count:
        raise IdxCountMismatchError(
            f"{count} images but {label_count} labels"
        )
    features = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    labels = raw_labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features=features, labels=labels, num_classes=num_classes)


CACHE_FEATURE_DTYPE = "<f8"
CACHE_LABEL_DTYPE = "<i8"


def save_dataset_cache(ds: Dataset, path: str) -> None:
    """Single-file cache: one JSON header line, then raw little-endian
    features followed by raw little-endian labels."""
    header = {
        "n": ds.n,
        "input_width": ds.input_width,
        "num_classes": ds.num_classes,
        "feature_dtype": CACHE_FEATURE_DTYPE,
        "label_dtype": CACHE_LABEL_DTYPE,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(ds.features.astype(CACHE_FEATURE_DTYPE).tobytes(order="C"))
        f.write(ds.labels.astype(CACHE_LABEL_DTYPE).tobytes(order="C"))


def load_dataset_cache(path: str) -> Dataset:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        n, width = header["n"], header["input_width"]
        feats = np.frombuffer(
            _read_exact(f, n * width * 8, path), dtype=header["feature_dtype"]
        ).reshape(n, width)
        labels = np.frombuffer(_read_exact(f, n * 8, path), dtype=header["label_dtype"])
    return Dataset(
        features=feats.astype(np.float64),
        labels=labels.astype(np.int64),
        num_classes=header["num_classes"],
    )


def sample_batch(
    ds: Dataset, spec: SamplerSpec, rng: Rng
) -> tuple[np.ndarray, np.ndarray]:
    """Draw one minibatch.

    iid: batch_size uniform draws without replacement. label_clustered:
    labels_per_batch label draws with replacement, then per_label example
    draws without replacement within each label instance; output keeps
    same-label examples adjacent in label-draw order.
    """
    if spec.mode == "iid":
        if spec.batch_size > ds.n:
            raise ValueError("batch_size exceeds dataset size for iid sampling")
        idx = rng.permutation(ds.n)[: spec.batch_size]
    else:
        drawn = rng.integers(0, ds.num_classes, size=spec.labels_per_batch)
        chosen = []
        for label in drawn:
            pool = ds.class_indices[int(label)]
            if pool.size < spec.per_label:
                raise ValueError(
                    f"class {int(label)} has {pool.size} examples, "
                    f"needs >= {spec.per_label}"
                )
            take = rng.permutation(pool.size)[: spec.per_label]
            chosen.append(pool[take])
        idx = np.concatenate(chosen)
    return ds.features[idx], ds.labels[idx]


def split_microbatches(
    features: np.ndarray, labels: np.ndarray, micro: Microbatching
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a batch into normalization groups.

    contiguous: consecutive runs of `size`, order preserved.
    label_disjoint_halves: for a pair-structured batch (labels[2i] ==
    labels[2i+1]) the even positions form one half and the odd positions the
    other, so the two members of every same-label pair land in different
    halves; requires size == m/2.
    """
    m = features.shape[0]
    if m % micro.size != 0:
        raise ValueError(f"batch of {m} not divisible by microbatch size {micro.size}")
    if micro.split == "contiguous":
        k = m // micro.size
        return [
            (features[i * micro.size:(i + 1) * micro.size],
             labels[i * micro.size:(i + 1) * micro.size])
            for i in range(k)
        ]
    if micro.size * 2 != m:
        raise ValueError("label_disjoint_halves requires microbatch size == m/2")
    if m % 2 != 0 or not np.array_equal(labels[0::2], labels[1::2]):
        raise ValueError(
            "label_disjoint_halves requires a pair-structured batch "
            "(labels[2i] == labels[2i+1])"
        )
    return [
        (features[0::2], labels[0::2]),
        (features[1::2], labels[1::2]),
    ]
