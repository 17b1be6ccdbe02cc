"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The synthetic-experiment criteria (7, 8) run the shipped presets at
full scale with 3 trials and take a few minutes total on a desktop CPU.
"""

import subprocess
import sys
import time

import numpy as np

from divebatch.data import Dataset, SyntheticSpec, generate_synthetic
from divebatch.diagnostics import (
    diminishing_step_check,
    finite_diff_check,
    fixed_step_bound_check,
    one_step_bound_check,
)
from divebatch.harness import build_dataset, load_config, run_experiment, time_to_within
from divebatch.models import LogisticModel, QuadraticModel, per_sample_grad
from divebatch.optim import (
    DegenerateGradientError,
    EpochRecord,
    SchedulerState,
    TrainConfig,
    estimated_gradient_diversity,
    exact_gradient_diversity,
    run_epoch,
    train,
)
from divebatch.streams import DIAGNOSTICS, stream


def _report(criterion: str, ok: bool, detail: str):
    print(f"\n{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def _all_train(features):
    features = np.asarray(features, dtype=float)
    n = len(features)
    return Dataset(features, np.zeros(n, dtype=int), np.arange(n), np.array([], dtype=int))


def test_criterion_1_gradient_correctness():
    start = time.time()
    worst = {}
    for family in ("logistic", "mlp", "quadratic"):
        report = finite_diff_check(family, trials=100, step=1e-5, tol=1e-5, seed=20)
        worst[family] = report.max_rel_error
        if not report.passed:
            _report("criterion 1 (gradient correctness)", False,
                    f"{family} exceeded tol: max rel err {report.max_rel_error:.2e}")
    elapsed = time.time() - start
    ok = elapsed < 60.0
    _report("criterion 1 (gradient correctness)", ok,
            f"100 trials/family at tol 1e-5; max rel errs "
            + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
            + f"; {elapsed:.1f}s (< 60s)")


def test_criterion_2_diversity_identities():
    # identical gradients: n copies of one sample
    n = 1000
    row = np.array([0.4, -0.7, 0.2])
    dup = Dataset(np.tile(row, (n, 1)), np.ones(n, dtype=int), np.arange(n),
                  np.array([], dtype=int))
    model = LogisticModel(np.array([0.3, 0.2, -0.5]), 0.1)
    delta_dup = exact_gradient_diversity(model, dup, np.arange(n))
    ok_dup = abs(delta_dup - 1.0 / n) <= 1e-12 * (1.0 / n)

    # orthogonal equal-norm gradients: quadratic at 0 with scaled basis anchors
    k = 64
    ortho = _all_train(-2.5 * np.eye(k))
    delta_ortho = exact_gradient_diversity(QuadraticModel.zeros(k), ortho, np.arange(k))
    ok_ortho = abs(delta_ortho - 1.0) <= 1e-12

    # lower bound 1/n over 1000 random batches
    rng = np.random.default_rng(2)
    pool = Dataset(rng.uniform(-1, 1, (400, 5)), rng.integers(0, 2, 400),
                   np.arange(400), np.array([], dtype=int))
    ok_bound = True
    for _ in range(1000):
        size = int(rng.integers(2, 40))
        idx = rng.choice(400, size=size, replace=False)
        probe = LogisticModel(rng.standard_normal(5), float(rng.standard_normal()))
        try:
            value = exact_gradient_diversity(probe, pool, idx)
        except DegenerateGradientError:
            continue
        if value < 1.0 / size - 1e-9:
            ok_bound = False
            break

    # n * diversity equals (mean squared norm) / (squared norm of mean gradient)
    m = 50
    sample_idx = np.arange(m)
    probe = LogisticModel(rng.standard_normal(5), 0.2)
    delta = exact_gradient_diversity(probe, pool, sample_idx)
    grads = [per_sample_grad(probe, pool.features[i], float(pool.labels[i])) for i in sample_idx]
    mean_sq = float(np.mean([g @ g for g in grads]))
    mean_grad = np.mean(grads, axis=0)
    ratio = mean_sq / float(mean_grad @ mean_grad)
    ok_identity = abs(m * delta - ratio) <= 1e-12 * abs(ratio)

    ok = ok_dup and ok_ortho and ok_bound and ok_identity
    _report("criterion 2 (diversity identities)", ok,
            f"identical->1/n rel err {abs(delta_dup - 1/n) * n:.1e}, "
            f"orthogonal->1 err {abs(delta_ortho - 1):.1e}, "
            f"lower bound on 1000 batches {'held' if ok_bound else 'violated'}, "
            f"n*D vs M^2/G rel err {abs(m * delta - ratio) / ratio:.1e}")


def test_criterion_3_frozen_parameter_exactness():
    ds = generate_synthetic(SyntheticSpec(n=1024, d=24, split_fraction=1.0, seed=33))
    model = LogisticModel(stream(9, DIAGNOSTICS).standard_normal(24) * 0.5, 0.2)
    _, acc, _ = run_epoch(model, ds, 37, 0.0, np.random.default_rng(4))
    est = estimated_gradient_diversity(acc)
    exact = exact_gradient_diversity(model, ds, ds.train_indices)
    rel = abs(est - exact) / abs(exact)
    _report("criterion 3 (frozen-parameter estimator exactness)", rel <= 1e-10,
            f"eta=0 epoch on n=1024 logistic: |est-exact|/exact = {rel:.2e} (<= 1e-10)")


def test_criterion_4_one_step_bound_grid():
    start = time.time()
    rng = stream(2024, DIAGNOSTICS, 10)
    anchors = rng.standard_normal((256, 8))
    cells = []
    for delta in (0.1, 0.5, 1.0):
        for i in range(5):
            theta = rng.standard_normal(8)
            rep = one_step_bound_check(anchors, theta, eta=0.01, delta=delta,
                                       num_samples=100_000, seed=100 + i)
            cells.append(rep)
    elapsed = time.time() - start
    failed = [rep for rep in cells if not rep.passed]
    ok = not failed and elapsed < 120.0
    margins = [rep.bound_rhs + rep.ci_halfwidth - rep.empirical_lhs for rep in cells]
    _report("criterion 4 (one-step contraction bound)", ok,
            f"15/15 cells within 95% CI, min margin {min(margins):.2e}, "
            f"{elapsed:.1f}s (< 120s)")


def test_criterion_5_fixed_stepsize_bound():
    start = time.time()
    anchors = stream(2024, DIAGNOSTICS, 11).standard_normal((512, 256))
    violations = {}
    for alpha in (0.1, 0.5, 1.0):
        rep = fixed_step_bound_check(anchors, alpha, T=2000, seeds=64)
        violations[alpha] = rep.violations
    elapsed = time.time() - start
    ok = all(v == 0 for v in violations.values()) and elapsed < 120.0
    _report("criterion 5 (fixed-stepsize bound)", ok,
            f"prefix violations {violations} over T=2000, 64 seeds; {elapsed:.1f}s (< 120s)")


def test_criterion_6_diminishing_stepsize():
    start = time.time()
    anchors = 0.02 * stream(2024, DIAGNOSTICS, 12).standard_normal((128, 4))
    center = anchors.mean(axis=0)
    rep = diminishing_step_check(anchors, alpha0=0.5, c=0.01, T=5000, seeds=64,
                                 threshold=1e-3,
                                 theta_init=center + 0.05 * np.ones(4))
    elapsed = time.time() - start
    at_T = rep.details["weighted_avg_at_T"]
    at_tenth = rep.details["weighted_avg_at_T_tenth"]
    ok = rep.passed and at_T < 1e-3 and at_T < at_tenth and elapsed < 120.0
    _report("criterion 6 (diminishing stepsizes)", ok,
            f"weighted avg {at_T:.2e} at T=5000 < {at_tenth:.2e} at T/10 and < 1e-3; "
            f"{elapsed:.1f}s (< 120s)")


def test_criterion_7_synthetic_convex(tmp_path):
    start = time.time()
    dive_cfg = load_config(preset="synthetic-convex",
                           overrides={"run.out": str(tmp_path), "run.trials": "3"})
    dataset = build_dataset(dive_cfg.data)
    agg_dive = run_experiment(dive_cfg, dataset=dataset)
    sgd_cfg = load_config(preset="synthetic-convex", overrides={
        "run.out": str(tmp_path), "run.trials": "3", "sched.kind": "fixed",
        "train.max_batch": "128", "run.label": "sgd-128"})
    agg_sgd = run_experiment(sgd_cfg, dataset=dataset)
    elapsed = time.time() - start

    acc_dive = float(agg_dive.means["val_acc"][-1])
    acc_sgd = float(agg_sgd.means["val_acc"][-1])
    ok_acc = acc_dive >= acc_sgd - 0.015

    first_max = []
    for records in agg_dive.trial_records:
        sizes = [r.batch_size for r in records]
        hit = next((k for k, m in enumerate(sizes) if m == 4096), None)
        first_max.append(hit)
    ok_ramp = all(hit is not None and hit <= 14 for hit in first_max)

    dive_epochs = float(np.mean([time_to_within(r).epochs_to_threshold
                                 for r in agg_dive.trial_records]))
    sgd_epochs = float(np.mean([time_to_within(r).epochs_to_threshold
                                for r in agg_sgd.trial_records]))
    ok_speed = dive_epochs <= sgd_epochs
    ok_time = elapsed < 900.0

    ok = ok_acc and ok_ramp and ok_speed and ok_time
    _report("criterion 7 (synthetic convex reproduction)", ok,
            f"final acc divebatch {acc_dive:.4f} vs sgd(128) {acc_sgd:.4f} "
            f"(gap {acc_sgd - acc_dive:+.4f} <= 0.015); m_max reached at epochs "
            f"{first_max} (all <= 14); epochs-to-threshold {dive_epochs:.1f} <= "
            f"{sgd_epochs:.1f}; {elapsed:.0f}s (< 900s)")


def test_criterion_8_synthetic_nonconvex(tmp_path):
    start = time.time()
    dive_cfg = load_config(preset="synthetic-nonconvex",
                           overrides={"run.out": str(tmp_path), "run.trials": "3"})
    dataset = build_dataset(dive_cfg.data)
    agg_dive = run_experiment(dive_cfg, dataset=dataset)
    sgd_cfg = load_config(preset="synthetic-nonconvex", overrides={
        "run.out": str(tmp_path), "run.trials": "3", "sched.kind": "fixed",
        "train.max_batch": "512", "run.label": "sgd-512"})
    agg_sgd = run_experiment(sgd_cfg, dataset=dataset)
    elapsed = time.time() - start

    acc_dive = float(agg_dive.means["val_acc"][-1])
    acc_sgd = float(agg_sgd.means["val_acc"][-1])
    ok_acc = acc_dive >= acc_sgd - 0.025

    traces = [[r.batch_size for r in records] for records in agg_dive.trial_records]
    ok_trace = (len(traces) == 3 and all(len(t) == 100 for t in traces)
                and all(1 <= m <= 8192 for t in traces for m in t))

    ok = ok_acc and ok_trace and elapsed < 900.0
    _report("criterion 8 (synthetic nonconvex)", ok,
            f"final acc divebatch {acc_dive:.4f} vs sgd(512) {acc_sgd:.4f} "
            f"(gap {acc_sgd - acc_dive:+.4f} <= 0.025); batch traces reported, "
            f"max {max(max(t) for t in traces)} <= 8192; {elapsed:.0f}s")


def test_criterion_9_adabatch_schedule():
    ds = generate_synthetic(SyntheticSpec(n=256, d=4, split_fraction=0.8, seed=12))
    cfg = TrainConfig(initial_lr=0.5, initial_batch=8, max_batch=64, epochs=100,
                      lr_decay_period=1000, seed=3)
    result = train(LogisticModel.zeros(4), ds, cfg,
                   SchedulerState.adabatch(8, factor=2, freq=20))
    sizes = [r.batch_size for r in result.records]
    expected = [min(64, 8 * 2 ** (k // 20)) for k in range(100)]
    ok = sizes == expected
    _report("criterion 9 (adabatch schedule)", ok,
            f"trace doubles at epochs 20/40/60 and clamps at m_max=64 from epoch 60: "
            f"sizes at [0,19,20,39,40,60,80,99] = "
            f"{[sizes[i] for i in (0, 19, 20, 39, 40, 60, 80, 99)]}")


CONFIG_TEXT = """
data.kind = synthetic
data.n = 400
data.d = 6
data.seed = 21
train.lr = 2.0
train.batch = 8
train.max_batch = 64
train.epochs = 6
train.seed = 5
sched.kind = divebatch
sched.delta = 0.5
run.trials = 2
run.label = repro
"""


def test_criterion_10_reproducibility(tmp_path):
    cfg_path = tmp_path / "repro.cfg"
    cfg_path.write_text(CONFIG_TEXT)
    for name in ("run1", "run2"):
        proc = subprocess.run(
            [sys.executable, "-m", "divebatch", "train", "--config", str(cfg_path),
             "--deterministic", "--mask-time", "--out", str(tmp_path / name)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    identical = all(
        (tmp_path / "run1" / "repro" / rel).read_bytes()
        == (tmp_path / "run2" / "repro" / rel).read_bytes()
        for rel in ("trial_0.csv", "trial_1.csv", "aggregate.csv")
    )

    # frozen parameters: the epoch estimate equals the exact value, so the
    # oracle and divebatch schedulers must choose identical batch sizes
    ds = generate_synthetic(SyntheticSpec(n=400, d=8, split_fraction=0.9, seed=44))
    schedules = []
    for maker in (SchedulerState.divebatch, SchedulerState.oracle):
        cfg = TrainConfig(initial_lr=0.0, initial_batch=16, max_batch=128, epochs=8, seed=9)
        result = train(LogisticModel(np.full(8, 0.3), -0.2), ds, cfg, maker(16, delta=0.5))
        schedules.append([r.batch_size for r in result.records])
    ok = identical and schedules[0] == schedules[1]
    _report("criterion 10 (reproducibility)", ok,
            f"deterministic CLI runs byte-identical (time masked): {identical}; "
            f"oracle vs divebatch schedules at eta=0: {schedules[0]} == {schedules[1]}")


def test_criterion_11_threshold_metric_examples():
    def records(accuracies):
        return [EpochRecord(epoch=i, batch_size=1, learning_rate=0.1, train_loss=0.0,
                            val_loss=0.0, val_acc=a, grad_div_est=0.1,
                            grad_div_exact=None, wall_time_s=float(i + 1))
                for i, a in enumerate(accuracies)]

    m1 = time_to_within(records([0.50, 0.942, 0.949, 0.950]))
    ok1 = m1.epochs_to_threshold == 2 and abs(m1.threshold_accuracy - 0.940) < 1e-12
    m2 = time_to_within(records([0.931, 0.935, 0.938, 0.94]))
    ok2 = m2.epochs_to_threshold == 1
    m3 = time_to_within(records([0.90, 0.95, 0.89, 0.94]))
    ok3 = m3.epochs_to_threshold == 2 and abs(m3.threshold_accuracy - 0.93) < 1e-12
    _report("criterion 11 (threshold metric examples)", ok1 and ok2 and ok3,
            f"first-crossing epochs {m1.epochs_to_threshold}, {m2.epochs_to_threshold}, "
            f"{m3.epochs_to_threshold} (expected 2, 1, 2)")
