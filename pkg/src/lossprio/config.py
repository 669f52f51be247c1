"""Experiment configuration: JSON files in, validated dataclasses out.

A config file fully determines a run; the resolved form (defaults filled
in) is copied next to the outputs so any result directory can be rerun.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .datasets import (
    CorruptionSpec,
    Dataset,
    apply_corruption,
    generate_synthetic_pair,
    load_idx_images,
)
from .errors import ConfigurationError
from .model import TrainerConfig
from .prioritizers import PrioritizerConfig


@dataclass
class DatasetConfig:
    type: str = "synthetic"
    num_train: int = 5000
    num_test: int = 1000
    num_classes: int = 10
    feature_dim: int = 32
    seed: int = 1
    cluster_spread: float = 2.0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    limit: int | None = None

    def __post_init__(self):
        if self.type not in ("synthetic", "idx"):
            raise ConfigurationError(f"unknown dataset type {self.type!r}")
        if self.type == "idx" and (self.train_images is None or self.test_images is None):
            raise ConfigurationError("idx datasets need train_images and test_images paths")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    prioritizer: PrioritizerConfig = field(default_factory=PrioritizerConfig)
    seeds: tuple[int, ...] = (1,)
    eval_every: int = 512
    output_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be positive")


@dataclass
class BenchmarkConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    corruption_grid: tuple[tuple[str, float], ...] = (
        ("none", 0.0),
        ("random_label", 0.5),
    )
    corruption_seed: int = 7
    variants: tuple[PrioritizerConfig, ...] = ()
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seeds: tuple[int, ...] = (1, 2, 3)
    eval_every: int = 512
    output_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        grid = tuple((str(k), float(f)) for k, f in self.corruption_grid)
        object.__setattr__(self, "corruption_grid", grid)
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        if not grid:
            raise ConfigurationError("corruption_grid must not be empty")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be positive")
        if not self.variants:
            object.__setattr__(
                self,
                "variants",
                (
                    PrioritizerConfig(kind="uniform"),
                    PrioritizerConfig(kind="sb_loss", beta=1.0),
                    PrioritizerConfig(kind="sb_entropy", beta=1.0),
                    PrioritizerConfig(kind="vr"),
                ),
            )
        for kind, fraction in grid:
            CorruptionSpec(kind=kind, fraction=fraction, seed=self.corruption_seed)


def _build(cls, raw: dict, context: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{context}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigurationError(f"{context}: unknown keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{context}: {exc}") from None
    except TypeError as exc:
        raise ConfigurationError(f"{context}: {exc}") from None


def _parse_json(path) -> dict:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return raw


def experiment_config_from_dict(raw: dict, context: str = "config") -> ExperimentConfig:
    raw = dict(raw)
    parts = {}
    if "dataset" in raw:
        parts["dataset"] = _build(DatasetConfig, raw.pop("dataset"), f"{context}.dataset")
    if "corruption" in raw:
        parts["corruption"] = _build(
            CorruptionSpec, raw.pop("corruption"), f"{context}.corruption"
        )
    if "trainer" in raw:
        parts["trainer"] = _build(TrainerConfig, raw.pop("trainer"), f"{context}.trainer")
    if "prioritizer" in raw:
        parts["prioritizer"] = _build(
            PrioritizerConfig, raw.pop("prioritizer"), f"{context}.prioritizer"
        )
    parts.update(raw)
    return _build(ExperimentConfig, parts, context)


def benchmark_config_from_dict(raw: dict, context: str = "config") -> BenchmarkConfig:
    raw = dict(raw)
    parts = {}
    if "dataset" in raw:
        parts["dataset"] = _build(DatasetConfig, raw.pop("dataset"), f"{context}.dataset")
    if "trainer" in raw:
        parts["trainer"] = _build(TrainerConfig, raw.pop("trainer"), f"{context}.trainer")
    if "variants" in raw:
        variants = raw.pop("variants")
        if not isinstance(variants, list):
            raise ConfigurationError(f"{context}.variants: expected a list")
        parts["variants"] = tuple(
            _build(PrioritizerConfig, v, f"{context}.variants[{i}]")
            for i, v in enumerate(variants)
        )
    if "corruption_grid" in raw:
        grid = raw.pop("corruption_grid")
        if not isinstance(grid, list):
            raise ConfigurationError(f"{context}.corruption_grid: expected a list")
        parts["corruption_grid"] = tuple(
            (cell.get("kind", "none"), cell.get("fraction", 0.0))
            if isinstance(cell, dict)
            else tuple(cell)
            for cell in grid
        )
    parts.update(raw)
    return _build(BenchmarkConfig, parts, context)


def load_experiment_config(path) -> ExperimentConfig:
    return experiment_config_from_dict(_parse_json(path), context=str(path))


def load_benchmark_config(path) -> BenchmarkConfig:
    return benchmark_config_from_dict(_parse_json(path), context=str(path))


def config_to_dict(cfg) -> dict:
    """Dataclass tree to plain JSON-ready values (enums by value)."""
    out = dataclasses.asdict(cfg)

    def scrub(value):
        if isinstance(value, dict):
            return {k: scrub(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [scrub(v) for v in value]
        if isinstance(value, Enum):
            return value.value
        return value

    return scrub(out)


def resolved_config_json(cfg) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def build_datasets(cfg: ExperimentConfig | BenchmarkConfig,
                   corruption: CorruptionSpec | None = None) -> tuple[Dataset, Dataset]:
    """Materialize the train/test pair, applying corruption to train only."""
    ds = cfg.dataset
    if ds.type == "synthetic":
        train, test = generate_synthetic_pair(
            ds.num_train,
            ds.num_test,
            ds.num_classes,
            ds.feature_dim,
            ds.seed,
            ds.cluster_spread,
        )
    else:
        train = load_idx_images(
            ds.train_images, ds.train_labels, limit=ds.limit, split="train"
        )
        test = load_idx_images(
            ds.test_images, ds.test_labels, limit=ds.limit, split="test"
        )
        classes = max(train.num_classes, test.num_classes)
        train = replace(train, num_classes=classes)
        test = replace(test, num_classes=classes)
    if corruption is None:
        corruption = getattr(cfg, "corruption", CorruptionSpec())
    return apply_corruption(train, corruption), test
