"""Adaptive-batch-size SGD driven by gradient diversity."""

from .data import Dataset, IngestionError, SyntheticSpec, generate_synthetic, load_csv, save_csv
from .diagnostics import (
    BoundCheckReport,
    ConvergenceConstants,
    FiniteDiffReport,
    OneStepBoundReport,
    RobbinsMonroError,
    diminishing_step_check,
    finite_diff_check,
    fixed_step_bound_check,
    one_step_bound_check,
    quadratic_constants,
)
from .harness import (
    AggregateResult,
    ConfigError,
    ExperimentConfig,
    ThresholdMetric,
    compare,
    list_presets,
    load_config,
    run_experiment,
    time_to_within,
)
from .models import (
    GradStats,
    LogisticModel,
    MlpModel,
    QuadraticModel,
    batch_grad_stats,
    evaluate,
    load_checkpoint,
    per_sample_grad,
    per_sample_loss,
    save_checkpoint,
)
from .optim import (
    DegenerateGradientError,
    DivergenceError,
    DiversityAccumulator,
    EpochRecord,
    SchedulerState,
    TrainConfig,
    TrainResult,
    apply_lr_decay,
    estimated_gradient_diversity,
    exact_gradient_diversity,
    next_batch_size,
    rescale_learning_rate,
    run_epoch,
    train,
    write_metrics_csv,
)
