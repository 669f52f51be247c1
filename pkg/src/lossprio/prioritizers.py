"""Batch selection strategies that decide which examples earn an update.

All strategies share one contract: feed a candidate mini-batch of
(id, loss, prediction distribution) triples, get back zero or more
training batches of ids, each exactly batch_size long.  Strategies own a
seeded generator, so a run is reproducible from its config alone.

Four kinds exist:

* ``uniform`` passes candidate batches straight through (plain SGD).
* ``sb_loss`` keeps a sliding window of recent losses and admits each
  example with probability cdf(loss) ** beta, so hard examples are kept
  and easy ones are mostly skipped.  Admitted ids queue up until a full
  batch exists.
* ``sb_entropy`` is the same machinery scored by the entropy of the
  prediction distribution instead of the loss.
* ``vr`` accumulates candidates in a pool; once full it draws a batch
  without replacement, proportional to loss when the losses are spread
  out enough (a squared-distance-to-uniform gate), uniformly otherwise.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .model import prediction_entropy

PRIORITIZER_KINDS = ("uniform", "sb_loss", "sb_entropy", "vr")

DEFAULT_HISTOGRAM_CAPACITY = 1024


class EmptyHistogramError(RuntimeError):
    """Raised when a probability is requested before any score was recorded.

    Callers still warming up must select unconditionally instead."""


@dataclass
class PrioritizerConfig:
    kind: str = "uniform"
    beta: float = 1.0
    histogram_capacity: int = DEFAULT_HISTOGRAM_CAPACITY
    pool_capacity: int | None = None
    gate_threshold: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PRIORITIZER_KINDS:
            raise ConfigurationError(
                f"unknown prioritizer kind {self.kind!r}; expected one of {PRIORITIZER_KINDS}"
            )
        if self.beta < 0:
            raise ConfigurationError("beta must be nonnegative")
        if self.histogram_capacity < 1:
            raise ConfigurationError("histogram_capacity must be positive")
        if self.pool_capacity is not None and self.pool_capacity < 1:
            raise ConfigurationError("pool_capacity must be positive")
        if self.gate_threshold < 0:
            raise ConfigurationError("gate_threshold must be nonnegative")

    def label(self) -> str:
        """Short name used in benchmark summaries."""
        if self.kind in ("sb_loss", "sb_entropy"):
            return f"{self.kind}_b{self.beta:g}"
        if self.kind == "vr":
            cap = self.pool_capacity if self.pool_capacity is not None else "auto"
            return f"vr_p{cap}"
        return self.kind


class ScoreHistogram:
    """Sliding window over the last ``capacity`` raw scores.

    The cdf of a score is the fraction of window entries less than or equal
    to it (ties inclusive), computed against the exact window contents rather
    than a binned summary.
    """

    def __init__(self, capacity: int = DEFAULT_HISTOGRAM_CAPACITY):
        if capacity < 1:
            raise ConfigurationError("histogram capacity must be positive")
        self.capacity = capacity
        self._buf = np.empty(capacity, dtype=np.float64)
        self._size = 0
        self._next = 0

    def __len__(self) -> int:
        return self._size

    def insert(self, score: float) -> None:
        self._buf[self._next] = score
        self._next = (self._next + 1) % self.capacity
        if self._size < self.capacity:
            self._size += 1

    def cdf(self, score: float) -> float:
        if self._size == 0:
            raise EmptyHistogramError("no scores recorded yet")
        window = self._buf if self._size == self.capacity else self._buf[: self._size]
        return np.count_nonzero(window <= score) / self._size

    def values(self) -> list[float]:
        """Window contents, oldest first."""
        if self._size < self.capacity:
            return self._buf[: self._size].tolist()
        return np.roll(self._buf, -self._next).tolist()


def selection_probability(score: float, histogram: ScoreHistogram, beta: float) -> float:
    """cdf(score) raised to beta; beta 0 admits everything."""
    if beta < 0:
        raise ConfigurationError("beta must be nonnegative")
    return histogram.cdf(score) ** beta


def expected_selection_fraction(beta: float) -> float:
    """Long-run admitted fraction for rank-power selection: 1 / (beta + 1)."""
    if beta < 0:
        raise ConfigurationError("beta must be nonnegative")
    return 1.0 / (beta + 1.0)


class CandidateBuffer:
    """FIFO queue of admitted ids that releases exact-size batches."""

    def __init__(self, batch_size: int):
        if batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        self.batch_size = batch_size
        self._queue: deque[int] = deque()

    def __len__(self) -> int:
        return len(self._queue)

    def push(self, example_id: int) -> None:
        self._queue.append(example_id)

    def drain(self) -> list[list[int]]:
        """Pop as many full batches as the queue currently holds."""
        batches = []
        while len(self._queue) >= self.batch_size:
            batches.append([self._queue.popleft() for _ in range(self.batch_size)])
        return batches

    def snapshot(self) -> list[int]:
        return list(self._queue)


class SamplingPool:
    """Pool of (id, loss) candidates drawn down by weighted sampling.

    The gate statistic is the squared L2 distance between the normalized
    loss distribution and uniform, scaled by the pool size; above the
    threshold the draw is loss-proportional, otherwise uniform.  All-zero
    losses always fall back to uniform.
    """

    def __init__(self, capacity: int, gate_threshold: float = 0.0):
        if capacity < 1:
            raise ConfigurationError("pool capacity must be positive")
        if gate_threshold < 0:
            raise ConfigurationError("gate threshold must be nonnegative")
        self.capacity = capacity
        self.gate_threshold = gate_threshold
        self.entries: list[tuple[int, float]] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    def push(self, example_id: int, loss: float) -> None:
        if not np.isfinite(loss) or loss < 0:
            raise ConfigurationError(f"loss must be finite and nonnegative, got {loss}")
        self.entries.append((int(example_id), float(loss)))

    def gate_statistic(self) -> float:
        losses = np.array([loss for _, loss in self.entries], dtype=np.float64)
        total = losses.sum()
        if total <= 0:
            return 0.0
        q = losses / total
        return float(len(q) * np.square(q - 1.0 / len(q)).sum())

    def draw(self, batch_size: int, rng: np.random.Generator) -> tuple[list[int], bool]:
        """Remove and return batch_size distinct ids, plus the gate decision.

        Weighted draws are sequential: pick one id proportional to loss,
        remove it, renormalize, repeat.
        """
        if batch_size > len(self.entries):
            raise ConfigurationError(
                f"cannot draw {batch_size} from a pool of {len(self.entries)}"
            )
        losses = np.array([loss for _, loss in self.entries], dtype=np.float64)
        gate_on = self.gate_statistic() > self.gate_threshold and losses.sum() > 0

        remaining = np.arange(len(self.entries))
        picked = []
        for _ in range(batch_size):
            if gate_on:
                weights = losses[remaining]
                probs = weights / weights.sum()
                j = int(rng.choice(len(remaining), p=probs))
            else:
                j = int(rng.integers(len(remaining)))
            picked.append(int(remaining[j]))
            remaining = np.delete(remaining, j)
        ids = [self.entries[i][0] for i in picked]
        keep = set(picked)
        self.entries = [e for i, e in enumerate(self.entries) if i not in keep]
        return ids, gate_on

    def clear(self) -> None:
        self.entries = []

    def snapshot(self) -> list[list]:
        return [[i, loss] for i, loss in self.entries]


class Prioritizer:
    """Common interface: feed candidates, collect full training batches."""

    kind = "base"

    def __init__(self, batch_size: int, seed: int):
        if batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        self.batch_size = batch_size
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.ingested = 0
        self.selected = 0

    def feed(self, ids, losses=None, probabilities=None) -> list[list[int]]:
        raise NotImplementedError

    def consume_gate_flags(self) -> list[bool]:
        """Gate decisions for batches emitted since the last call (vr only)."""
        return []

    def state_snapshot(self) -> str:
        return json.dumps(self._state(), sort_keys=True)

    def _state(self) -> dict:
        return {
            "kind": self.kind,
            "batch_size": self.batch_size,
            "ingested": self.ingested,
            "selected": self.selected,
        }

    @staticmethod
    def _check_scores(scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ConfigurationError("scores must be a 1-d batch")
        if not np.isfinite(scores).all() or (scores < 0).any():
            raise ConfigurationError("scores must be finite and nonnegative")
        return scores


class UniformPrioritizer(Prioritizer):
    """Plain SGD: every candidate batch passes through untouched."""

    kind = "uniform"

    def feed(self, ids, losses=None, probabilities=None) -> list[list[int]]:
        batch = [int(i) for i in ids]
        self.ingested += len(batch)
        self.selected += len(batch)
        return [batch]


class SelectiveBackpropPrioritizer(Prioritizer):
    """Admit each example with probability cdf(score) ** beta.

    Scores are losses (``sb_loss``) or prediction entropies (``sb_entropy``).
    Each score is inserted into the window before its own probability is
    computed, and until the window holds one full batch of scores every
    example is admitted unconditionally (warm-up).
    """

    def __init__(
        self,
        batch_size: int,
        seed: int,
        beta: float,
        histogram_capacity: int = DEFAULT_HISTOGRAM_CAPACITY,
        score: str = "loss",
    ):
        super().__init__(batch_size, seed)
        if beta < 0:
            raise ConfigurationError("beta must be nonnegative")
        if score not in ("loss", "entropy"):
            raise ConfigurationError(f"unknown score source {score!r}")
        self.beta = beta
        self.score_source = score
        self.kind = "sb_loss" if score == "loss" else "sb_entropy"
        self.histogram = ScoreHistogram(histogram_capacity)
        self.buffer = CandidateBuffer(batch_size)

    def feed(self, ids, losses=None, probabilities=None) -> list[list[int]]:
        if self.score_source == "loss":
            if losses is None:
                raise ConfigurationError("sb_loss needs per-example losses")
            scores = self._check_scores(losses)
        else:
            if probabilities is None:
                raise ConfigurationError("sb_entropy needs prediction distributions")
            scores = self._check_scores(prediction_entropy(np.atleast_2d(probabilities)))
        if len(scores) != len(ids):
            raise ConfigurationError("ids and scores must have equal length")

        for example_id, score in zip(ids, scores):
            self.ingested += 1
            self.histogram.insert(float(score))
            if len(self.histogram) < self.batch_size:
                admitted = True  # warm-up: too few scores to rank against
            else:
                p = selection_probability(float(score), self.histogram, self.beta)
                admitted = p >= 1.0 or self.rng.random() < p
            if admitted:
                self.selected += 1
                self.buffer.push(int(example_id))
        return self.buffer.drain()

    def _state(self) -> dict:
        state = super()._state()
        state.update(
            beta=self.beta,
            score=self.score_source,
            window=self.histogram.values(),
            buffer=self.buffer.snapshot(),
        )
        return state


class PoolImportancePrioritizer(Prioritizer):
    """Collect candidates in a pool; when full, draw one batch and discard
    the rest of the pool.

    With capacity c * batch_size this trains at most 1/c of the candidate
    stream.  The draw is loss-proportional only when the gate statistic
    clears the threshold; there is no warm-up and no loss re-weighting.
    """

    kind = "vr"

    def __init__(
        self,
        batch_size: int,
        seed: int,
        pool_capacity: int | None = None,
        gate_threshold: float = 0.0,
    ):
        super().__init__(batch_size, seed)
        capacity = 3 * batch_size if pool_capacity is None else pool_capacity
        if capacity < batch_size:
            raise ConfigurationError(
                f"pool capacity {capacity} smaller than batch size {batch_size}"
            )
        self.pool = SamplingPool(capacity, gate_threshold)
        self._pending_gates: list[bool] = []

    def feed(self, ids, losses=None, probabilities=None) -> list[list[int]]:
        if losses is None:
            raise ConfigurationError("vr needs per-example losses")
        losses = self._check_scores(losses)
        if len(losses) != len(ids):
            raise ConfigurationError("ids and losses must have equal length")
        batches = []
        for example_id, loss in zip(ids, losses):
            self.ingested += 1
            self.pool.push(int(example_id), float(loss))
            if self.pool.is_full:
                ids_drawn, gate_on = self.pool.draw(self.batch_size, self.rng)
                self.pool.clear()  # undrawn candidates are dropped, not recycled
                self.selected += len(ids_drawn)
                self._pending_gates.append(gate_on)
                batches.append(ids_drawn)
        return batches

    def consume_gate_flags(self) -> list[bool]:
        flags = self._pending_gates
        self._pending_gates = []
        return flags

    def _state(self) -> dict:
        state = super()._state()
        state.update(
            pool=self.pool.snapshot(),
            pool_capacity=self.pool.capacity,
            gate_threshold=self.pool.gate_threshold,
        )
        return state


def make_prioritizer(cfg: PrioritizerConfig, batch_size: int) -> Prioritizer:
    """Build the strategy named by cfg.kind for the given training batch size."""
    if cfg.kind == "uniform":
        return UniformPrioritizer(batch_size, cfg.seed)
    if cfg.kind == "sb_loss":
        return SelectiveBackpropPrioritizer(
            batch_size, cfg.seed, cfg.beta, cfg.histogram_capacity, score="loss"
        )
    if cfg.kind == "sb_entropy":
        return SelectiveBackpropPrioritizer(
            batch_size, cfg.seed, cfg.beta, cfg.histogram_capacity, score="entropy"
        )
    if cfg.kind == "vr":
        return PoolImportancePrioritizer(
            batch_size, cfg.seed, cfg.pool_capacity, cfg.gate_threshold
        )
    raise ConfigurationError(f"unknown prioritizer kind {cfg.kind!r}")
