"""Experiment orchestration: configs, presets, multi-trial runs, comparisons.

Configs are flat ``key = value`` text files with dotted section names; the
full key table lives in the README.  A run executes ``trials`` independent
training runs (trial i uses seed ``train.seed + i``) on one shared dataset,
writes one metrics CSV per trial plus an aggregate CSV with ``_mean`` and
``_stderr`` columns, and reports the epochs/seconds needed to come within one
percentage point of final validation accuracy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, SyntheticSpec, generate_synthetic, load_csv
from .models import LogisticModel, MlpModel, QuadraticModel
from .optim import (
    ADABATCH,
    FIXED,
    SCHEDULER_KINDS,
    EpochRecord,
    SchedulerState,
    TrainConfig,
    TrainResult,
    train,
    write_metrics_csv,
)
from .streams import MODEL_INIT, stream

logger = logging.getLogger(__name__)

MODEL_FAMILIES = ("logistic", "mlp", "quadratic")


class ConfigError(ValueError):
    """A config file or preset is malformed or inconsistent."""


@dataclass(frozen=True)
class CsvSource:
    path: str
    label_column: str = "label"
    split_fraction: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class ModelSpec:
    family: str = "logistic"
    hidden: int = 16
    activation: str = "relu"

    def build(self, d: int, seed: int):
        if self.family == "logistic":
            return LogisticModel.zeros(d)
        if self.family == "mlp":
            model = MlpModel.init_random(d, self.hidden, stream(seed, MODEL_INIT), self.activation)
            logger.debug("mlp(h=%d) has %d parameters vs %d for logistic at d=%d",
                         self.hidden, model.n_params, d + 1, d)
            return model
        if self.family == "quadratic":
            return QuadraticModel.zeros(d)
        raise ConfigError(f"unknown model family {self.family!r}")


@dataclass(frozen=True)
class SchedulerSpec:
    kind: str = FIXED
    delta: float = 1.0
    resize_factor: int = 2
    resize_freq: int | None = None
    monotone: bool = False

    def default_freq(self) -> int:
        # adabatch conventionally resizes every 20 epochs; the diversity
        # schedulers re-evaluate every epoch unless told otherwise
        return 20 if self.kind == ADABATCH else 1

    def make(self, initial_batch: int) -> SchedulerState:
        freq = self.resize_freq if self.resize_freq is not None else self.default_freq()
        return SchedulerState(self.kind, initial_batch, delta=self.delta,
                              resize_factor=self.resize_factor, resize_freq=freq,
                              monotone=self.monotone)


@dataclass
class ExperimentConfig:
    data: SyntheticSpec | CsvSource
    model: ModelSpec
    train: TrainConfig
    scheduler: SchedulerSpec
    trials: int = 1
    out_dir: str = "out"
    label: str = ""
    provenance: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not self.label:
            self.label = f"{self.scheduler.kind}-{self.train.initial_batch}"


def build_dataset(source) -> Dataset:
    if isinstance(source, SyntheticSpec):
        return generate_synthetic(source)
    if isinstance(source, CsvSource):
        return load_csv(source.path, source.label_column, source.split_fraction, source.seed)
    raise ConfigError(f"unsupported dataset source {type(source).__name__}")


# --- config schema -----------------------------------------------------------

def _to_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(raw)


_REQUIRED = object()

# key -> (caster, default); _REQUIRED defaults must come from a preset or file
_SCHEMA: dict = {
    "data.kind": (str, "synthetic"),
    "data.n": (int, 20000),
    "data.d": (int, 512),
    "data.noise": (float, 0.1),
    "data.split": (float, 0.8),
    "data.seed": (int, 1234),
    "data.path": (str, ""),
    "data.label_column": (str, "label"),
    "model.family": (str, "logistic"),
    "model.hidden": (int, 16),
    "model.activation": (str, "relu"),
    "train.lr": (float, _REQUIRED),
    "train.batch": (int, _REQUIRED),
    "train.max_batch": (int, _REQUIRED),
    "train.epochs": (int, _REQUIRED),
    "train.decay_factor": (float, 0.75),
    "train.decay_period": (int, 20),
    "train.rescale_lr": (_to_bool, True),
    "train.seed": (int, 0),
    "train.deterministic": (_to_bool, True),
    "sched.kind": (str, _REQUIRED),
    "sched.delta": (float, 1.0),
    "sched.resize_factor": (int, 2),
    "sched.resize_freq": (int, None),
    "sched.monotone": (_to_bool, False),
    "run.trials": (int, 1),
    "run.out": (str, "out"),
    "run.label": (str, ""),
}

_TYPE_NAMES = {int: "int", float: "float", str: "str", _to_bool: "bool"}

# Shipped presets.  The cifar/tiny-imagenet entries reproduce published
# image-training settings for reference only; there is no image pipeline
# here, so they cannot be trained (documentation_only).
PRESETS: dict[str, dict] = {
    "synthetic-convex": {
        "data.kind": "synthetic", "data.n": "20000", "data.d": "512",
        "data.noise": "0.1", "data.split": "0.8", "data.seed": "1234",
        "model.family": "logistic",
        "train.lr": "16", "train.batch": "128", "train.max_batch": "4096",
        "train.epochs": "100", "train.decay_factor": "0.75", "train.decay_period": "20",
        "train.rescale_lr": "true", "train.seed": "7",
        "sched.kind": "divebatch", "sched.delta": "1", "sched.resize_freq": "1",
        "run.trials": "3", "run.label": "divebatch-convex",
    },
    "synthetic-nonconvex": {
        "data.kind": "synthetic", "data.n": "20000", "data.d": "512",
        "data.noise": "0.1", "data.split": "0.8", "data.seed": "1234",
        "model.family": "mlp", "model.hidden": "16", "model.activation": "relu",
        "train.lr": "1", "train.batch": "512", "train.max_batch": "8192",
        "train.epochs": "100", "train.decay_factor": "0.75", "train.decay_period": "20",
        "train.rescale_lr": "true", "train.seed": "7",
        "sched.kind": "divebatch", "sched.delta": "0.1", "sched.resize_freq": "1",
        "run.trials": "3", "run.label": "divebatch-nonconvex",
    },
    "cifar10": {
        "documentation_only": "resnet-20 on cifar-10; no image pipeline ships here",
        "train.lr": "0.1", "train.batch": "128", "train.max_batch": "2048",
        "sched.kind": "divebatch", "sched.delta": "0.1", "sched.resize_freq": "20",
    },
    "cifar100": {
        "documentation_only": "resnet-20 on cifar-100; no image pipeline ships here",
        "train.lr": "0.1", "train.batch": "128", "train.max_batch": "2048",
        "sched.kind": "divebatch", "sched.delta": "0.01", "sched.resize_freq": "20",
    },
    "tiny-imagenet": {
        "documentation_only": "resnet on tiny-imagenet; no image pipeline ships here",
        "train.lr": "0.01", "train.batch": "256", "train.max_batch": "2048",
        "sched.kind": "divebatch", "sched.delta": "0.01", "sched.resize_freq": "20",
    },
}


def list_presets() -> list[str]:
    return sorted(PRESETS)


def preset_parameters(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return dict(PRESETS[name])


def parse_kv_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; later keys win."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Resolve a config from defaults, an optional preset, a file, and overrides.

    Precedence: schema defaults < preset < file < overrides.  Every resolved
    key records where its value came from; defaults are logged.
    """
    values: dict[str, str] = {}
    provenance: dict[str, str] = {}

    def absorb(entries: dict, source: str):
        for key, raw in entries.items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown key {key!r} (from {source})")
            values[key] = str(raw)
            provenance[key] = source

    if preset is not None:
        table = preset_parameters(preset)
        if "documentation_only" in table:
            raise ConfigError(
                f"preset {preset!r} is documentation-only ({table['documentation_only']}); "
                "it records published hyperparameters and cannot be trained here"
            )
        absorb(table, f"preset:{preset}")
    if path is not None:
        absorb(parse_kv_file(path), str(path))
    if overrides:
        absorb({k: v for k, v in overrides.items() if v is not None}, "override")

    resolved: dict = {}
    for key, (caster, default) in _SCHEMA.items():
        if key in values:
            try:
                resolved[key] = caster(values[key])
            except (TypeError, ValueError):
                raise ConfigError(
                    f"type mismatch for key {key!r}: expected {_TYPE_NAMES[caster]}, "
                    f"got {values[key]!r}"
                ) from None
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            resolved[key] = default
            provenance[key] = "default"
            logger.debug("config %s = %r (default)", key, default)

    if resolved["data.kind"] == "synthetic":
        source = SyntheticSpec(resolved["data.n"], resolved["data.d"], resolved["data.noise"],
                               resolved["data.split"], resolved["data.seed"])
    elif resolved["data.kind"] == "csv":
        if not resolved["data.path"]:
            raise ConfigError("missing required key 'data.path' for data.kind = csv")
        source = CsvSource(resolved["data.path"], resolved["data.label_column"],
                           resolved["data.split"], resolved["data.seed"])
    else:
        raise ConfigError(f"type mismatch for key 'data.kind': expected synthetic or csv, "
                          f"got {resolved['data.kind']!r}")

    if resolved["model.family"] not in MODEL_FAMILIES:
        raise ConfigError(f"type mismatch for key 'model.family': expected one of "
                          f"{MODEL_FAMILIES}, got {resolved['model.family']!r}")
    if resolved["sched.kind"] not in SCHEDULER_KINDS:
        raise ConfigError(f"type mismatch for key 'sched.kind': expected one of "
                          f"{SCHEDULER_KINDS}, got {resolved['sched.kind']!r}")

    try:
        train_cfg = TrainConfig(
            initial_lr=resolved["train.lr"], initial_batch=resolved["train.batch"],
            max_batch=resolved["train.max_batch"], epochs=resolved["train.epochs"],
            lr_decay_factor=resolved["train.decay_factor"],
            lr_decay_period=resolved["train.decay_period"],
            rescale_lr=resolved["train.rescale_lr"], seed=resolved["train.seed"],
            deterministic=resolved["train.deterministic"],
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None

    return ExperimentConfig(
        data=source,
        model=ModelSpec(resolved["model.family"], resolved["model.hidden"],
                        resolved["model.activation"]),
        train=train_cfg,
        scheduler=SchedulerSpec(resolved["sched.kind"], resolved["sched.delta"],
                                resolved["sched.resize_factor"], resolved["sched.resize_freq"],
                                resolved["sched.monotone"]),
        trials=resolved["run.trials"],
        out_dir=resolved["run.out"],
        label=resolved["run.label"],
        provenance=provenance,
    )


# --- running and aggregating -------------------------------------------------

_AGG_METRICS = ("batch_size", "learning_rate", "train_loss", "val_loss", "val_acc",
                "grad_div_est", "wall_time_s")


@dataclass
class ThresholdMetric:
    """First epoch (1-based count) whose validation accuracy reaches final minus one point."""

    threshold_accuracy: float
    epochs_to_threshold: int
    seconds_to_threshold: float


@dataclass
class AggregateResult:
    label: str
    epochs: np.ndarray
    means: dict[str, np.ndarray]
    stderrs: dict[str, np.ndarray] | None
    trial_records: list[list[EpochRecord]]
    trial_results: list[TrainResult]
    failed_trials: int

    @property
    def final_records(self) -> list[EpochRecord]:
        return [records[-1] for records in self.trial_records]


def time_to_within(records: list[EpochRecord]) -> ThresholdMetric:
    """First crossing of (final accuracy - 1 percentage point), counting epochs from 1.

    Accuracies are fractions, so one percentage point is 0.01.  The first
    crossing counts even if accuracy later dips below the threshold; the
    final record always satisfies it.
    """
    if not records:
        raise ValueError("empty record list")
    final = records[-1].val_acc
    if not math.isfinite(final):
        raise ValueError("final validation accuracy is undefined")
    threshold = final - 0.01
    for position, record in enumerate(records, start=1):
        if record.val_acc >= threshold:
            return ThresholdMetric(threshold, position, record.wall_time_s)
    raise AssertionError("unreachable: final epoch satisfies its own threshold")


def _aggregate(label: str, trial_records: list[list[EpochRecord]], results, failed: int) -> AggregateResult:
    epochs = np.asarray([r.epoch for r in trial_records[0]])
    stacked = {
        name: np.asarray([[getattr(r, name) for r in records] for records in trial_records],
                         dtype=np.float64)
        for name in _AGG_METRICS
    }
    if all(r.grad_div_exact is not None for records in trial_records for r in records):
        stacked["grad_div_exact"] = np.asarray(
            [[r.grad_div_exact for r in records] for records in trial_records], dtype=np.float64)
    means = {name: arr.mean(axis=0) for name, arr in stacked.items()}
    trials = len(trial_records)
    stderrs = None
    if trials > 1:
        stderrs = {name: arr.std(axis=0, ddof=1) / math.sqrt(trials) for name, arr in stacked.items()}
    return AggregateResult(label, epochs, means, stderrs, trial_records, results, failed)


def format_aggregate_csv(agg: AggregateResult, mask_time: bool = False) -> str:
    columns = ["epoch"]
    names = list(agg.means)
    for name in names:
        columns.append(f"{name}_mean")
        if agg.stderrs is not None:
            columns.append(f"{name}_stderr")
    lines = [",".join(columns)]
    for i, epoch in enumerate(agg.epochs):
        row = [str(int(epoch))]
        for name in names:
            masked = mask_time and name == "wall_time_s"
            row.append("0" if masked else repr(float(agg.means[name][i])))
            if agg.stderrs is not None:
                row.append("0" if masked else repr(float(agg.stderrs[name][i])))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, *, dataset: Dataset | None = None,
                   mask_time: bool = False) -> AggregateResult:
    """Train ``config.trials`` runs, write per-trial and aggregate CSVs, aggregate.

    Trial i runs with seed ``train.seed + i`` on one shared dataset.  Diverged
    or early-stopped trials keep their partial CSV but are excluded from the
    aggregate; their count is reported and logged.
    """
    if dataset is None:
        dataset = build_dataset(config.data)
    out = Path(config.out_dir) / config.label
    out.mkdir(parents=True, exist_ok=True)
    results: list[TrainResult] = []
    for t in range(config.trials):
        trial_cfg = replace(config.train, seed=config.train.seed + t)
        model = config.model.build(dataset.d, trial_cfg.seed)
        scheduler = config.scheduler.make(trial_cfg.initial_batch)
        result = train(model, dataset, trial_cfg, scheduler)
        write_metrics_csv(result.records, out / f"trial_{t}.csv", mask_time=mask_time)
        results.append(result)
    completed = [r.records for r in results
                 if not r.diverged and len(r.records) == config.train.epochs]
    failed = len(results) - len(completed)
    if failed:
        logger.warning("%s: %d of %d trials did not complete", config.label, failed, config.trials)
    if not completed:
        raise RuntimeError(f"{config.label}: no trial completed all {config.train.epochs} epochs")
    agg = _aggregate(config.label, completed, results, failed)
    (out / "aggregate.csv").write_text(format_aggregate_csv(agg, mask_time=mask_time))
    return agg


def checkpoint_epochs(total_epochs: int, fractions=(0.25, 0.5, 0.75, 1.0)) -> list[int]:
    """Epoch counts (1-based) at the given fractions of training: ceil(f * K)."""
    return [max(1, math.ceil(f * total_epochs)) for f in fractions]


def compare(configs: list[ExperimentConfig], *, mask_time: bool = False) -> list[dict]:
    """Run several configs on the same dataset and tabulate accuracy milestones.

    All configs must share the dataset seed (and epoch count, so milestone
    columns align).  Returns one row per config with validation accuracy at
    25/50/75/100% of training (mean and stderr across trials) and the mean
    epochs/seconds to reach within one point of final accuracy.
    """
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    seeds = {cfg.data.seed for cfg in configs}
    if len(seeds) != 1:
        raise ConfigError(f"configs must share a dataset seed, got {sorted(seeds)}")
    epochs = {cfg.train.epochs for cfg in configs}
    if len(epochs) != 1:
        raise ConfigError(f"configs must share an epoch count, got {sorted(epochs)}")
    total = epochs.pop()
    marks = checkpoint_epochs(total)
    rows = []
    for cfg in configs:
        agg = run_experiment(cfg, mask_time=mask_time)
        metrics = [time_to_within(records) for records in agg.trial_records]
        row = {"label": agg.label}
        for frac, mark in zip((25, 50, 75, 100), marks):
            row[f"acc_at_{frac}pct_mean"] = float(agg.means["val_acc"][mark - 1])
            row[f"acc_at_{frac}pct_stderr"] = (
                float(agg.stderrs["val_acc"][mark - 1]) if agg.stderrs is not None else float("nan")
            )
        row["epochs_to_threshold"] = float(np.mean([m.epochs_to_threshold for m in metrics]))
        row["seconds_to_threshold"] = float(np.mean([m.seconds_to_threshold for m in metrics]))
        rows.append(row)
    return rows


def summary_to_csv(rows: list[dict]) -> str:
    columns = list(rows[0])
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            value = row[col]
            cells.append(value if isinstance(value, str) else repr(float(value)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def summary_to_text(rows: list[dict]) -> str:
    columns = list(rows[0])
    table = [columns] + [
        [row[c] if isinstance(row[c], str) else f"{row[c]:.4f}" for c in columns] for row in rows
    ]
    widths = [max(len(line[i]) for line in table) for i in range(len(columns))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()
                     for line in table) + "\n"
