"""Synthetic and IDX-backed datasets plus the label/pixel corruption transforms.

Corruptions only ever touch the train split and never touch example ids, so
the ground-truth corruption mask stays recoverable for diagnostics after the
fact.  All randomness flows through seeded generators; the same seed always
reproduces the same dataset byte for byte.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError

_IMAGES_MAGIC = 2051
_LABELS_MAGIC = 2049


class CorruptionKind(Enum):
    NONE = "none"
    RANDOM_LABEL = "random_label"
    SHUFFLED_PIXELS = "shuffled_pixels"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True, eq=False)
class Example:
    """One labelled feature vector with its corruption bookkeeping."""

    id: int
    features: np.ndarray
    label: int
    corrupted: bool = False
    corruption_kind: CorruptionKind = CorruptionKind.NONE

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.corrupted != (self.corruption_kind is not CorruptionKind.NONE):
            raise ConfigurationError(
                f"example {self.id}: corrupted flag {self.corrupted} inconsistent "
                f"with kind {self.corruption_kind.value}"
            )


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable collection of examples with a fixed class count and width."""

    examples: tuple[Example, ...]
    num_classes: int
    feature_dim: int
    split: str

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.split not in ("train", "test"):
            raise ConfigurationError(f"unknown split {self.split!r}")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be positive")
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise ConfigurationError(f"duplicate example id {ex.id}")
            seen.add(ex.id)
            if ex.features.shape != (self.feature_dim,):
                raise ConfigurationError(
                    f"example {ex.id}: feature shape {ex.features.shape} != ({self.feature_dim},)"
                )
            if not 0 <= ex.label < self.num_classes:
                raise ConfigurationError(
                    f"example {ex.id}: label {ex.label} outside [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.examples)

    @cached_property
    def _stacked(self) -> tuple[np.ndarray, np.ndarray]:
        feats = np.stack([ex.features for ex in self.examples])
        labels = np.array([ex.label for ex in self.examples], dtype=np.int64)
        feats.setflags(write=False)
        labels.setflags(write=False)
        return feats, labels

    def stack(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (features, labels) as read-only (N, D) and (N,) arrays."""
        return self._stacked

    @cached_property
    def ids(self) -> np.ndarray:
        out = np.array([ex.id for ex in self.examples], dtype=np.int64)
        out.setflags(write=False)
        return out

    @cached_property
    def corrupted_mask(self) -> np.ndarray:
        out = np.array([ex.corrupted for ex in self.examples], dtype=bool)
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class CorruptionSpec:
    """What to corrupt: a kind, a train fraction, and the seed that drives it."""

    kind: CorruptionKind = CorruptionKind.NONE
    fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        kind = self.kind
        if isinstance(kind, str):
            try:
                kind = CorruptionKind(kind)
            except ValueError:
                raise ConfigurationError(f"unknown corruption kind {self.kind!r}") from None
            object.__setattr__(self, "kind", kind)
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigurationError(f"corruption fraction {self.fraction} outside [0, 1]")
        if kind is CorruptionKind.NONE and self.fraction > 0.0:
            raise ConfigurationError("corruption kind 'none' requires fraction 0")


def dataset_from_arrays(features, labels, num_classes: int, split: str = "train") -> Dataset:
    """Build a clean Dataset from an (N, D) feature array and N labels."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ConfigurationError(
            f"feature array {features.shape} does not match {labels.shape[0]} labels"
        )
    examples = tuple(
        Example(id=i, features=features[i].copy(), label=int(labels[i]))
        for i in range(features.shape[0])
    )
    return Dataset(examples, num_classes=num_classes, feature_dim=features.shape[1], split=split)


def generate_synthetic(
    num_examples: int,
    num_classes: int,
    feature_dim: int,
    seed: int,
    cluster_spread: float = 2.0,
    split: str = "train",
) -> Dataset:
    """Gaussian class clusters: separable but not trivially so.

    Class means are drawn once from the seed, labels are assigned round-robin
    (so counts are balanced within one), and each example is its class mean
    plus isotropic noise of scale cluster_spread.
    """
    if num_classes < 2:
        raise ConfigurationError("need at least 2 classes")
    if feature_dim < 2:
        raise ConfigurationError("need at least 2 feature dimensions")
    if num_examples < num_classes:
        raise ConfigurationError("need at least one example per class")
    feats, labels = _synthetic_arrays(
        num_examples, num_classes, feature_dim, seed, cluster_spread
    )
    return dataset_from_arrays(feats, labels, num_classes, split=split)


def generate_synthetic_pair(
    num_train: int,
    num_test: int,
    num_classes: int,
    feature_dim: int,
    seed: int,
    cluster_spread: float = 2.0,
) -> tuple[Dataset, Dataset]:
    """Train and test splits drawn from the same class means and noise scale."""
    if num_train < num_classes or num_test < num_classes:
        raise ConfigurationError("need at least one example per class in each split")
    feats, labels = _synthetic_arrays(
        num_train + num_test, num_classes, feature_dim, seed, cluster_spread
    )
    train = dataset_from_arrays(feats[:num_train], labels[:num_train], num_classes, split="train")
    test = dataset_from_arrays(feats[num_train:], labels[num_train:], num_classes, split="test")
    return train, test


def _synthetic_arrays(num_examples, num_classes, feature_dim, seed, cluster_spread):
    if cluster_spread <= 0:
        raise ConfigurationError("cluster_spread must be positive")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, feature_dim))
    labels = np.arange(num_examples, dtype=np.int64) % num_classes
    feats = means[labels] + cluster_spread * rng.standard_normal((num_examples, feature_dim))
    return feats, labels


def load_idx_images(
    images_path,
    labels_path=None,
    limit: int | None = None,
    split: str = "train",
) -> Dataset:
    """Read a big-endian IDX image file (with its companion label file).

    When labels_path is omitted it is derived from images_path by the usual
    naming convention (``images`` -> ``labels``, ``idx3`` -> ``idx1``).
    Pixel values are scaled to [0, 1].
    """
    images_path = Path(images_path)
    if labels_path is None:
        name = images_path.name
        if "images" not in name:
            raise IngestionError(
                f"cannot derive a label file name from {images_path.name!r}; "
                "pass labels_path explicitly",
                path=images_path,
                offset=0,
            )
        labels_path = images_path.with_name(
            name.replace("images", "labels").replace("idx3", "idx1")
        )
    labels_path = Path(labels_path)
    if limit is not None and limit < 1:
        raise ConfigurationError("limit must be a positive integer")

    raw = images_path.read_bytes()
    if len(raw) < 16:
        raise IngestionError(
            f"image header needs 16 bytes, file has {len(raw)}",
            path=images_path,
            offset=len(raw),
        )
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != _IMAGES_MAGIC:
        raise IngestionError(
            f"bad image magic 0x{magic:08x}, expected 0x{_IMAGES_MAGIC:08x}",
            path=images_path,
            offset=0,
        )
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise IngestionError(
            f"image payload truncated: file ends at byte {len(raw)}, expected {expected}",
            path=images_path,
            offset=len(raw),
        )

    raw_labels = labels_path.read_bytes()
    if len(raw_labels) < 8:
        raise IngestionError(
            f"label header needs 8 bytes, file has {len(raw_labels)}",
            path=labels_path,
            offset=len(raw_labels),
        )
    lmagic, lcount = struct.unpack(">II", raw_labels[:8])
    if lmagic != _LABELS_MAGIC:
        raise IngestionError(
            f"bad label magic 0x{lmagic:08x}, expected 0x{_LABELS_MAGIC:08x}",
            path=labels_path,
            offset=0,
        )
    if lcount != count:
        raise IngestionError(
            f"label count {lcount} does not match image count {count}",
            path=labels_path,
            offset=4,
        )
    if len(raw_labels) < 8 + count:
        raise IngestionError(
            f"label payload truncated: file ends at byte {len(raw_labels)}, expected {8 + count}",
            path=labels_path,
            offset=len(raw_labels),
        )

    take = count if limit is None else min(limit, count)
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    feats = pixels.reshape(count, rows * cols)[:take].astype(np.float64) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=count, offset=8)[:take]
    num_classes = int(labels.max()) + 1 if take else 1
    return dataset_from_arrays(feats, labels, num_classes=max(num_classes, 2), split=split)


def corrupt_random_label(example: Example, num_classes: int, rng: np.random.Generator) -> Example:
    """Replace the label with a uniform draw over all classes, original included."""
    new_label = int(rng.integers(num_classes))
    return replace(
        example,
        label=new_label,
        corrupted=True,
        corruption_kind=CorruptionKind.RANDOM_LABEL,
    )


def make_task_permutation(feature_dim: int, seed: int) -> np.ndarray:
    """The single feature permutation shared by every shuffled example in a task."""
    if feature_dim < 1:
        raise ConfigurationError("feature_dim must be positive")
    return np.random.default_rng(seed).permutation(feature_dim)


def corrupt_shuffle_pixels(example: Example, permutation: np.ndarray) -> Example:
    """Reorder features by a fixed permutation: out[j] = features[perm[j]]."""
    permutation = np.asarray(permutation)
    if permutation.shape != example.features.shape:
        raise ConfigurationError(
            f"permutation length {permutation.shape} does not match "
            f"feature length {example.features.shape}"
        )
    return replace(
        example,
        features=example.features[permutation],
        corrupted=True,
        corruption_kind=CorruptionKind.SHUFFLED_PIXELS,
    )


def corrupt_gaussian(example: Example, rng: np.random.Generator) -> Example:
    """Replace features with i.i.d. normal noise matching their mean and variance.

    The parameters are the sample mean and population variance of the source
    example's own features; a constant input therefore maps to itself.
    """
    mu = float(np.mean(example.features))
    sigma = math.sqrt(float(np.var(example.features)))
    noise = rng.normal(mu, sigma, size=example.features.shape[0])
    return replace(
        example,
        features=noise,
        corrupted=True,
        corruption_kind=CorruptionKind.GAUSSIAN,
    )


def apply_corruption(dataset: Dataset, spec: CorruptionSpec) -> Dataset:
    """Corrupt floor(fraction * N) train examples chosen uniformly by the seed.

    The chosen index set depends only on the seed and N, so different kinds at
    the same seed hit the same examples.  Ids never change.
    """
    if dataset.split != "train":
        raise ConfigurationError("corruption is only defined for the train split")
    n_corrupt = math.floor(spec.fraction * len(dataset))
    if spec.kind is CorruptionKind.NONE or n_corrupt == 0:
        return dataset

    rng = np.random.default_rng(spec.seed)
    chosen = set(int(i) for i in rng.choice(len(dataset), size=n_corrupt, replace=False))
    perm = None
    if spec.kind is CorruptionKind.SHUFFLED_PIXELS:
        perm = make_task_permutation(dataset.feature_dim, spec.seed)

    out = []
    for pos, ex in enumerate(dataset.examples):
        if pos not in chosen:
            out.append(ex)
        elif spec.kind is CorruptionKind.RANDOM_LABEL:
            out.append(corrupt_random_label(ex, dataset.num_classes, rng))
        elif spec.kind is CorruptionKind.SHUFFLED_PIXELS:
            out.append(corrupt_shuffle_pixels(ex, perm))
        else:
            out.append(corrupt_gaussian(ex, rng))
    return Dataset(
        tuple(out),
        num_classes=dataset.num_classes,
        feature_dim=dataset.feature_dim,
        split=dataset.split,
    )


def write_snapshot_csv(dataset: Dataset, path) -> None:
    """One row per example: id, label, corrupted flag, corruption kind."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label", "corrupted", "kind"])
        for ex in dataset.examples:
            writer.writerow([ex.id, ex.label, int(ex.corrupted), ex.corruption_kind.value])
