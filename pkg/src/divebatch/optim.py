"""Epoch-partitioned mini-batch SGD with diversity-driven batch sizing.

The training loop shuffles the training set each epoch, partitions it into
ceil(n/m) contiguous batches, and takes mean-gradient steps.  While stepping
it accumulates the sum of per-sample squared gradient norms and the sum of
gradient vectors; their ratio at the end of the epoch is the estimated
gradient diversity that drives the divebatch / oracle schedulers.  Batch-size
and learning-rate updates happen at epoch boundaries: resize first (with
optional proportional LR rescaling), then periodic LR decay.

Epoch indices are 0-based everywhere, so a decay period of 20 means epochs
0..19 run at the initial rate and the rate first drops entering epoch 20.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import batch_grad_stats, evaluate
from .streams import SHUFFLE, stream

FIXED = "fixed"
ADABATCH = "adabatch"
DIVEBATCH = "divebatch"
ORACLE = "oracle"
SCHEDULER_KINDS = (FIXED, ADABATCH, DIVEBATCH, ORACLE)

METRICS_COLUMNS = (
    "epoch",
    "batch_size",
    "learning_rate",
    "train_loss",
    "val_loss",
    "val_acc",
    "grad_div_est",
    "grad_div_exact",
    "wall_time_s",
)

_DEGENERATE_FLOOR = 1e-300


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss or gradient at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class DegenerateGradientError(RuntimeError):
    """The aggregate gradient vanished; the diversity ratio is undefined."""


@dataclass
class TrainConfig:
    initial_lr: float
    initial_batch: int
    max_batch: int
    epochs: int
    lr_decay_factor: float = 0.75
    lr_decay_period: int = 20
    rescale_lr: bool = True
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        # zero is allowed: frozen-parameter runs compare the diversity
        # estimator against the exact value at fixed parameters
        if self.initial_lr < 0:
            raise ValueError(f"initial_lr must be nonnegative, got {self.initial_lr}")
        if self.initial_batch < 1:
            raise ValueError(f"initial_batch must be >= 1, got {self.initial_batch}")
        if self.max_batch < self.initial_batch:
            raise ValueError(
                f"max_batch ({self.max_batch}) must be >= initial_batch ({self.initial_batch})"
            )
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValueError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if self.lr_decay_period < 1:
            raise ValueError(f"lr_decay_period must be >= 1, got {self.lr_decay_period}")


@dataclass
class SchedulerState:
    """Batch-size policy plus the batch size currently in force."""

    kind: str
    current_batch: int
    delta: float = 1.0
    resize_factor: int = 2
    resize_freq: int = 1
    monotone: bool = False

    def __post_init__(self):
        if self.kind not in SCHEDULER_KINDS:
            raise ValueError(f"unknown scheduler kind {self.kind!r}, expected one of {SCHEDULER_KINDS}")
        if self.current_batch < 1:
            raise ValueError(f"current_batch must be >= 1, got {self.current_batch}")
        if self.resize_freq < 1:
            raise ValueError(f"resize_freq must be >= 1, got {self.resize_freq}")
        if self.kind in (DIVEBATCH, ORACLE) and self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @classmethod
    def fixed(cls, batch: int) -> "SchedulerState":
        return cls(FIXED, batch)

    @classmethod
    def adabatch(cls, batch: int, factor: int = 2, freq: int = 20) -> "SchedulerState":
        return cls(ADABATCH, batch, resize_factor=factor, resize_freq=freq)

    @classmethod
    def divebatch(cls, batch: int, delta: float, freq: int = 1, monotone: bool = False):
        return cls(DIVEBATCH, batch, delta=delta, resize_freq=freq, monotone=monotone)

    @classmethod
    def oracle(cls, batch: int, delta: float, freq: int = 1, monotone: bool = False):
        return cls(ORACLE, batch, delta=delta, resize_freq=freq, monotone=monotone)


@dataclass
class DiversityAccumulator:
    """Running totals over one epoch of mini-batch gradient statistics."""

    sq_norm_total: float
    grad_total: np.ndarray
    samples_seen: int

    @classmethod
    def zeros(cls, n_params: int) -> "DiversityAccumulator":
        return cls(0.0, np.zeros(n_params), 0)

    def add(self, stats) -> None:
        self.sq_norm_total += stats.sq_norm_sum
        self.grad_total += stats.grad_sum
        self.samples_seen += stats.count


@dataclass
class EpochRecord:
    epoch: int
    batch_size: int
    learning_rate: float
    train_loss: float
    val_loss: float
    val_acc: float
    grad_div_est: float
    grad_div_exact: float | None
    wall_time_s: float


@dataclass
class TrainResult:
    """Per-epoch records plus termination flags.

    ``stopped_early`` marks convergence to a point where the epoch-aggregate
    gradient vanished (a success); ``diverged`` marks a non-finite failure,
    in which case the records cover only the completed epochs.
    """

    records: list[EpochRecord]
    model: object
    diverged: bool = False
    failure_epoch: int | None = None
    failure_batch: int | None = None
    stopped_early: bool = False

    @property
    def ok(self) -> bool:
        return not self.diverged


def run_epoch(model, dataset, batch_size: int, lr: float, rng: np.random.Generator, *, epoch: int = 0):
    """One full pass over the training split.

    Shuffles the training indices, partitions them into ceil(n/m) contiguous
    batches (last one possibly smaller), and for each batch evaluates the
    per-sample gradients at the current parameters before applying
    theta <- theta - (lr / |B|) * sum of gradients.  Returns the updated
    model, the epoch's diversity accumulator, and the mean training loss
    (each sample's loss taken at its batch's pre-update parameters).
    """
    train_idx = dataset.train_indices
    n = train_idx.size
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    order = train_idx[rng.permutation(n)]
    acc = DiversityAccumulator.zeros(model.n_params)
    loss_total = 0.0
    num_batches = math.ceil(n / batch_size)
    for j in range(num_batches):
        batch = np.sort(order[j * batch_size : (j + 1) * batch_size])
        X = dataset.features[batch]
        y = dataset.labels[batch].astype(np.float64)
        stats = model.grad_stats(X, y)
        batch_loss = float(model.loss_per_sample(X, y).sum())
        if not (math.isfinite(batch_loss) and math.isfinite(stats.sq_norm_sum)
                and np.isfinite(stats.grad_sum).all()):
            raise DivergenceError(epoch, j)
        acc.add(stats)
        loss_total += batch_loss
        model = model.from_flat(model.to_flat() - (lr / stats.count) * stats.grad_sum)
    return model, acc, loss_total / n


def estimated_gradient_diversity(acc: DiversityAccumulator) -> float:
    """Epoch estimate: sum of squared gradient norms over squared norm of the gradient sum."""
    denom = float(np.dot(acc.grad_total, acc.grad_total))
    if denom < _DEGENERATE_FLOOR:
        raise DegenerateGradientError(
            "aggregate gradient vanished over the epoch; parameters are stationary"
        )
    return acc.sq_norm_total / denom


def exact_gradient_diversity(model, dataset, indices) -> float:
    """Diversity of the given rows at the model's current parameters."""
    stats = batch_grad_stats(model, dataset, indices)
    denom = float(np.dot(stats.grad_sum, stats.grad_sum))
    if denom < _DEGENERATE_FLOOR:
        raise DegenerateGradientError("aggregate gradient is zero; diversity undefined")
    return stats.sq_norm_sum / denom


def next_batch_size(scheduler: SchedulerState, diversity: float, n: int, config: TrainConfig, epoch: int) -> int:
    """Batch size for the given (0-based) upcoming epoch.

    Resizes fire when ``epoch`` is a positive multiple of the resize
    frequency; other epochs keep the current size.  Divebatch and oracle use
    round(delta * n * diversity) clamped to [1, max_batch], never decreasing
    when the monotone flag is set.
    """
    m = scheduler.current_batch
    if scheduler.kind == FIXED:
        return m
    if epoch % scheduler.resize_freq != 0:
        return m
    if scheduler.kind == ADABATCH:
        return min(m * scheduler.resize_factor, config.max_batch)
    if not diversity > 0:
        raise ValueError(f"diversity must be positive for {scheduler.kind}, got {diversity}")
    candidate = int(round(scheduler.delta * n * diversity))
    candidate = max(1, min(candidate, config.max_batch))
    if scheduler.monotone:
        candidate = max(candidate, m)
    return candidate


def rescale_learning_rate(lr: float, m_old: int, m_new: int, enabled: bool = True) -> float:
    """Scale the rate by the batch-size ratio so lr/m stays constant."""
    if m_old < 1 or m_new < 1:
        raise ValueError("batch sizes must be >= 1")
    if not enabled or m_new == m_old:
        return lr
    return lr * m_new / m_old


def apply_lr_decay(lr: float, epoch: int, config: TrainConfig) -> float:
    """Multiply by the decay factor at positive multiples of the decay period."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if epoch % config.lr_decay_period == 0:
        return lr * config.lr_decay_factor
    return lr


def train(model, dataset, config: TrainConfig, scheduler: SchedulerState, *,
          record_exact_diversity: bool = False) -> TrainResult:
    """Run the full epoch loop, returning one record per completed epoch.

    The oracle scheduler recomputes the exact full-set diversity at the
    post-epoch parameters and uses it in place of the epoch estimate; both
    values land in the record.  Wall time covers gradient work and scheduler
    diversity computation, not validation.  With ``deterministic`` (always the
    case here: the loop is sequential and numpy reductions use a fixed order)
    and a fixed seed, two runs produce bitwise-identical records.
    """
    n_train = dataset.train_indices.size
    if not scheduler.current_batch <= config.max_batch:
        raise ValueError("scheduler batch exceeds max_batch")
    if config.max_batch > n_train:
        raise ValueError(f"max_batch ({config.max_batch}) exceeds training-set size ({n_train})")
    rng = stream(config.seed, SHUFFLE)
    lr = config.initial_lr
    records: list[EpochRecord] = []
    elapsed = 0.0
    has_val = dataset.val_indices.size > 0
    for k in range(config.epochs):
        m_k = scheduler.current_batch
        start = time.perf_counter()
        try:
            model, acc, train_loss = run_epoch(model, dataset, m_k, lr, rng, epoch=k)
        except DivergenceError as err:
            return TrainResult(records, model, diverged=True,
                               failure_epoch=err.epoch, failure_batch=err.batch)
        stopped = False
        div_exact = None
        try:
            div_est = estimated_gradient_diversity(acc)
            if scheduler.kind == ORACLE or record_exact_diversity:
                div_exact = exact_gradient_diversity(model, dataset, dataset.train_indices)
        except DegenerateGradientError:
            div_est = float("nan")
            stopped = True
        elapsed += time.perf_counter() - start
        if has_val:
            val_loss, val_acc = evaluate(model, dataset, dataset.val_indices)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        records.append(EpochRecord(k, m_k, lr, train_loss, val_loss, val_acc,
                                   div_est, div_exact, elapsed))
        if stopped:
            return TrainResult(records, model, stopped_early=True)
        drive = div_exact if scheduler.kind == ORACLE else div_est
        m_next = next_batch_size(scheduler, drive, n_train, config, k + 1)
        lr = rescale_learning_rate(lr, m_k, m_next, config.rescale_lr)
        lr = apply_lr_decay(lr, k + 1, config)
        scheduler.current_batch = m_next
    return TrainResult(records, model)


def _fmt(value) -> str:
    return repr(float(value))


def format_metrics_csv(records, mask_time: bool = False) -> str:
    """Render records with the fixed column order; exact diversity may be empty."""
    lines = [",".join(METRICS_COLUMNS)]
    for r in records:
        lines.append(",".join([
            str(r.epoch),
            str(r.batch_size),
            _fmt(r.learning_rate),
            _fmt(r.train_loss),
            _fmt(r.val_loss),
            _fmt(r.val_acc),
            _fmt(r.grad_div_est),
            "" if r.grad_div_exact is None else _fmt(r.grad_div_exact),
            "0" if mask_time else _fmt(r.wall_time_s),
        ]))
    return "\n".join(lines) + "\n"


def write_metrics_csv(records, path, mask_time: bool = False) -> None:
    Path(path).write_text(format_metrics_csv(records, mask_time=mask_time))


def read_metrics_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        records = []
        for row in reader:
            records.append(EpochRecord(
                epoch=int(row["epoch"]),
                batch_size=int(row["batch_size"]),
                learning_rate=float(row["learning_rate"]),
                train_loss=float(row["train_loss"]),
                val_loss=float(row["val_loss"]),
                val_acc=float(row["val_acc"]),
                grad_div_est=float(row["grad_div_est"]),
                grad_div_exact=None if row["grad_div_exact"] == "" else float(row["grad_div_exact"]),
                wall_time_s=float(row["wall_time_s"]),
            ))
    return records
