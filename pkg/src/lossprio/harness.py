"""Training loop, speedup measurement, and metrics serialization.

A run walks the shuffled train split in candidate batches, forward-scores
each batch, lets the prioritizer decide what actually gets an update, and
evaluates clean test error on a fixed back-propagation budget cadence.
Budgets are counted in examples back-propagated, which is the comparison
axis for every speedup number.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset
from .errors import AggregationError, ConfigurationError, TrainingDivergedError
from .model import (
    TrainerConfig,
    forward,
    init_params,
    init_sgd_state,
    learning_rate_at,
    save_checkpoint,
    sgd_step,
)
from .prioritizers import PrioritizerConfig, make_prioritizer

METRICS_HEADER = ["iteration", "backprops", "test_error", "corrupted_frac_batch", "gate_on"]


@dataclass
class RunMetrics:
    """Everything one training run produced, keyed by emitted-batch index."""

    seed: int
    backprops_series: list[int] = field(default_factory=list)
    corrupted_frac_series: list[float] = field(default_factory=list)
    gate_on_series: list[int] | None = None
    eval_iterations: list[int] = field(default_factory=list)
    eval_errors: list[float] = field(default_factory=list)
    pick_counts: dict[int, int] = field(default_factory=dict)
    diverged: bool = False

    @property
    def num_iterations(self) -> int:
        return len(self.backprops_series)

    @property
    def total_backprops(self) -> int:
        return self.backprops_series[-1] if self.backprops_series else 0

    @property
    def eval_points(self) -> list[tuple[int, float]]:
        """(cumulative backprops, test error) at each evaluation."""
        return [
            (self.backprops_series[it], err)
            for it, err in zip(self.eval_iterations, self.eval_errors)
        ]

    @property
    def corrupted_fraction_series(self) -> list[tuple[int, float]]:
        return list(enumerate(self.corrupted_frac_series))

    @property
    def best_test_error(self) -> float:
        if not self.eval_errors:
            raise ConfigurationError("run has no evaluation points")
        return min(self.eval_errors)

    @property
    def gate_on_fraction(self) -> float | None:
        if self.gate_on_series is None:
            return None
        if not self.gate_on_series:
            return 0.0
        return sum(self.gate_on_series) / len(self.gate_on_series)


def evaluate_error(params, features, labels, chunk_size: int = 4096) -> float:
    """Fraction of examples misclassified."""
    n = len(labels)
    if n == 0:
        raise ConfigurationError("cannot evaluate on an empty split")
    wrong = 0
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        result = forward(params, features[start:stop], labels[start:stop])
        wrong += int((result.predictions != labels[start:stop]).sum())
    return wrong / n


def run_training(
    train: Dataset,
    test: Dataset,
    trainer_cfg: TrainerConfig,
    prio_cfg: PrioritizerConfig,
    eval_every: int = 512,
    *,
    batch_log: list | None = None,
    checkpoint_path=None,
) -> RunMetrics:
    """Train for trainer_cfg.total_epochs passes over the candidate stream.

    Candidate batches all have exactly batch_size examples; the trailing
    remainder of each shuffled epoch is skipped so prioritizers never see a
    partial batch.  On divergence the partial metrics are returned with
    the diverged flag set instead of raising.
    """
    if train.num_classes != test.num_classes or train.feature_dim != test.feature_dim:
        raise ConfigurationError("train and test splits disagree on classes or width")
    if eval_every < 1:
        raise ConfigurationError("eval_every must be positive")
    batch = trainer_cfg.batch_size
    if len(train) < batch:
        raise ConfigurationError(
            f"train split of {len(train)} cannot fill a batch of {batch}"
        )

    feats, labels = train.stack()
    test_feats, test_labels = test.stack()
    mask = train.corrupted_mask
    ids = train.ids
    row_of = {int(i): row for row, i in enumerate(ids)}

    rng = np.random.default_rng(trainer_cfg.seed)
    arch = [train.feature_dim, *trainer_cfg.hidden_layers, train.num_classes]
    params = init_params(arch, rng)
    state = init_sgd_state(params)
    prio = make_prioritizer(prio_cfg, batch)

    metrics = RunMetrics(
        seed=trainer_cfg.seed,
        gate_on_series=[] if prio_cfg.kind == "vr" else None,
        pick_counts={int(i): 0 for i in ids},
    )
    next_eval = eval_every
    batches_per_epoch = len(train) // batch

    try:
        for epoch in range(trainer_cfg.total_epochs):
            lr = learning_rate_at(epoch / trainer_cfg.total_epochs, trainer_cfg)
            order = rng.permutation(len(train))
            for k in range(batches_per_epoch):
                rows = order[k * batch : (k + 1) * batch]
                scored = forward(params, feats[rows], labels[rows])
                if not np.isfinite(scored.losses).all():
                    raise TrainingDivergedError(
                        "non-finite loss while scoring", iteration=state.updates
                    )
                emitted = prio.feed(
                    [int(i) for i in ids[rows]], scored.losses, scored.probabilities
                )
                gate_flags = prio.consume_gate_flags()
                for pos, chosen_ids in enumerate(emitted):
                    chosen_rows = np.array([row_of[i] for i in chosen_ids])
                    sgd_step(params, feats[chosen_rows], labels[chosen_rows],
                             trainer_cfg, state, lr)
                    for i in chosen_ids:
                        metrics.pick_counts[i] += 1
                    metrics.backprops_series.append(state.backprops)
                    metrics.corrupted_frac_series.append(float(mask[chosen_rows].mean()))
                    if metrics.gate_on_series is not None:
                        metrics.gate_on_series.append(int(gate_flags[pos]))
                    if batch_log is not None:
                        batch_log.append(list(chosen_ids))
                    if state.backprops >= next_eval:
                        err = evaluate_error(params, test_feats, test_labels)
                        metrics.eval_iterations.append(metrics.num_iterations - 1)
                        metrics.eval_errors.append(err)
                        while next_eval <= state.backprops:
                            next_eval += eval_every
    except TrainingDivergedError:
        metrics.diverged = True

    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
    return metrics


@dataclass
class SpeedupReport:
    """How much sooner a method hit the baseline-derived error threshold."""

    threshold_error: float
    baseline_backprops: int
    method_backprops: int | None
    speedup: float | None
    best_error: float

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "threshold_error": self.threshold_error,
                "baseline_backprops": self.baseline_backprops,
                "method_backprops": self.method_backprops,
                "speedup": self.speedup,
                "best_error": self.best_error,
            },
            sort_keys=True,
        )


def speedup_report_from_json(line: str) -> SpeedupReport:
    raw = json.loads(line)
    return SpeedupReport(
        threshold_error=raw["threshold_error"],
        baseline_backprops=raw["baseline_backprops"],
        method_backprops=raw["method_backprops"],
        speedup=raw["speedup"],
        best_error=raw["best_error"],
    )


def _first_crossing(eval_points, threshold: float) -> int | None:
    for backprops, err in eval_points:
        if err <= threshold:
            return backprops
    return None


def compute_speedup(baseline, method, slack: float = 1.2) -> SpeedupReport:
    """Backprops the baseline needed to reach slack * its own best error,
    divided by the backprops the method needed to reach the same level.

    A method that never reaches the threshold gets no speedup value (the
    benchmark renders that as a dash).  Both arguments just need eval_points
    and best_test_error, so per-seed runs and seed averages both work.
    """
    if slack < 1.0:
        raise ConfigurationError("slack multiplier must be at least 1")
    threshold = slack * baseline.best_test_error
    base_cross = _first_crossing(baseline.eval_points, threshold)
    if base_cross is None:
        raise ConfigurationError("baseline never reaches its own threshold")
    method_cross = _first_crossing(method.eval_points, threshold)
    return SpeedupReport(
        threshold_error=threshold,
        baseline_backprops=base_cross,
        method_backprops=method_cross,
        speedup=None if method_cross is None else base_cross / method_cross,
        best_error=method.best_test_error,
    )


def rank_pick_frequencies(metrics: RunMetrics, population_ids, top_n: int):
    """Most- and least-picked ids within a population, ties broken by id."""
    population = [int(i) for i in population_ids]
    if top_n < 1 or top_n > len(population):
        raise ConfigurationError(
            f"top_n {top_n} outside [1, {len(population)}]"
        )
    counts = [(i, metrics.pick_counts.get(i, 0)) for i in population]
    most = sorted(counts, key=lambda item: (-item[1], item[0]))[:top_n]
    least = sorted(counts, key=lambda item: (item[1], item[0]))[:top_n]
    return most, least


@dataclass
class SeedAggregate:
    """Pointwise mean and sample standard deviation across runs."""

    num_runs: int
    backprops: list[int]
    test_error_mean: list[float]
    test_error_std: list[float]
    corrupted_fraction_mean: list[float]
    corrupted_fraction_std: list[float]
    best_errors: list[float]

    @property
    def eval_points(self) -> list[tuple[int, float]]:
        return list(zip(self.backprops, self.test_error_mean))

    @property
    def best_test_error(self) -> float:
        if not self.test_error_mean:
            raise AggregationError("aggregate has no evaluation points")
        return min(self.test_error_mean)


def _column_stats(rows: list[list[float]]) -> tuple[list[float], list[float]]:
    arr = np.array(rows, dtype=np.float64)
    mean = arr.mean(axis=0)
    if arr.shape[0] < 2:
        std = np.zeros(arr.shape[1])
    else:
        std = arr.std(axis=0, ddof=1)
    return mean.tolist(), std.tolist()


def aggregate_seeds(runs: list[RunMetrics]) -> SeedAggregate:
    """Average runs of one method pointwise over their shared eval schedule.

    Selection is stochastic, so runs may end a few evaluations apart; the
    shared prefix is aggregated.  Runs whose schedules genuinely disagree
    (different eval cadence or batch size) raise an aggregation error.
    """
    if not runs:
        raise AggregationError("no runs to aggregate")
    n_eval = min(len(r.eval_iterations) for r in runs)
    if n_eval == 0:
        raise AggregationError("a run has no evaluation points")
    grids = [[bp for bp, _ in r.eval_points[:n_eval]] for r in runs]
    for other in grids[1:]:
        if other != grids[0]:
            raise AggregationError(
                f"eval schedules disagree: {grids[0][:5]}... vs {other[:5]}..."
            )
    err_mean, err_std = _column_stats([r.eval_errors[:n_eval] for r in runs])
    n_iter = min(r.num_iterations for r in runs)
    frac_mean, frac_std = _column_stats([r.corrupted_frac_series[:n_iter] for r in runs])
    return SeedAggregate(
        num_runs=len(runs),
        backprops=grids[0],
        test_error_mean=err_mean,
        test_error_std=err_std,
        corrupted_fraction_mean=frac_mean,
        corrupted_fraction_std=frac_std,
        best_errors=[r.best_test_error for r in runs],
    )


def write_metrics_csv(metrics: RunMetrics, path) -> None:
    """One row per emitted batch; test_error is only present on eval rows."""
    eval_at = dict(zip(metrics.eval_iterations, metrics.eval_errors))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for it in range(metrics.num_iterations):
            gate = "" if metrics.gate_on_series is None else metrics.gate_on_series[it]
            err = eval_at.get(it, "")
            writer.writerow(
                [
                    it,
                    metrics.backprops_series[it],
                    repr(err) if isinstance(err, float) else err,
                    repr(metrics.corrupted_frac_series[it]),
                    gate,
                ]
            )


def read_metrics_csv(path, seed: int = 0, diverged: bool = False) -> RunMetrics:
    metrics = RunMetrics(seed=seed, diverged=diverged)
    gate_series: list[int] = []
    saw_gate = False
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRICS_HEADER:
            raise ConfigurationError(f"unexpected metrics header {header}")
        for row in reader:
            it = int(row[0])
            metrics.backprops_series.append(int(row[1]))
            if row[2] != "":
                metrics.eval_iterations.append(it)
                metrics.eval_errors.append(float(row[2]))
            metrics.corrupted_frac_series.append(float(row[3]))
            if row[4] != "":
                saw_gate = True
                gate_series.append(int(row[4]))
    metrics.gate_on_series = gate_series if saw_gate else None
    return metrics


def write_picks_csv(metrics: RunMetrics, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "picks"])
        for example_id in sorted(metrics.pick_counts):
            writer.writerow([example_id, metrics.pick_counts[example_id]])


def read_picks_csv(path) -> dict[int, int]:
    counts: dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["id", "picks"]:
            raise ConfigurationError(f"unexpected picks header {header}")
        for row in reader:
            counts[int(row[0])] = int(row[1])
    return counts


def save_run(metrics: RunMetrics, run_dir) -> None:
    """Write metrics.csv, picks.csv, and a small run.json with scalars."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(metrics, run_dir / "metrics.csv")
    write_picks_csv(metrics, run_dir / "picks.csv")
    meta = {"seed": metrics.seed, "diverged": metrics.diverged}
    (run_dir / "run.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_run(run_dir) -> RunMetrics:
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "run.json").read_text())
    metrics = read_metrics_csv(
        run_dir / "metrics.csv", seed=meta["seed"], diverged=meta["diverged"]
    )
    metrics.pick_counts = read_picks_csv(run_dir / "picks.csv")
    return metrics
