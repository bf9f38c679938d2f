"""Set metrics, the repeated random-split harness and the noise-level sweep.

Each split is an independent task: it partitions the pool, corrupts the
calibration half, calibrates every requested method and scores the test
half.  All randomness is keyed by (master_seed, split, stream), and results
are gathered by split index, so reports are bit-identical for any worker
count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from conformal import seeding
from conformal.calibrator import (
    ALL_METHODS,
    MethodKind,
    PredictionSet,
    calibrate,
    parse_method,
    predict_masks,
)
from conformal.noise_model import LabeledPool, NoiseModel, as_labels, corrupt_labels
from conformal.score_kernels import ScoreSpec
from system.errors import ConfigError, InputError
from system.logger import get_logger
from system.workers import WorkerPool

LOGGER = get_logger("evaluation")

METRICS = ("mean_size", "std_size", "mean_coverage", "std_coverage", "mean_q", "std_q", "empty_rate")


class SetMetrics(NamedTuple):
    size: float
    coverage: float
    empty_rate: float


@dataclass(frozen=True)
class SplitConfig:
    """Protocol of one repeated-split experiment."""

    n_splits: int = 1000
    calib_fraction: float = 0.5
    alpha: float = 0.1
    epsilon: float = 0.2
    score_spec: ScoreSpec = field(default_factory=ScoreSpec)
    methods: Tuple[MethodKind, ...] = ALL_METHODS
    master_seed: int = 0
    # corrupt the calibration half per split from clean labels; otherwise use the pool's observed labels
    resample_noise: bool = True
    # score test sets against noisy test labels instead of clean ones
    noisy_test: bool = False
    force_nonempty: bool = False
    keep_splits: bool = False
    threads: Optional[int] = None

    def __post_init__(self) -> None:
        if int(self.n_splits) != self.n_splits or self.n_splits < 1:
            raise ConfigError(f"n_splits must be a positive integer, got {self.n_splits}")
        if not 0.0 < self.calib_fraction < 1.0:
            raise ConfigError(f"calib_fraction must lie in (0, 1), got {self.calib_fraction}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        methods = tuple(parse_method(m) for m in self.methods)
        if not methods:
            raise ConfigError("at least one method is required")
        if len(set(methods)) != len(methods):
            raise ConfigError("methods must not repeat")
        object.__setattr__(self, "methods", methods)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_splits": self.n_splits,
            "calib_fraction": self.calib_fraction,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "score": self.score_spec.to_dict(),
            "methods": [m.value for m in self.methods],
            "master_seed": self.master_seed,
            "resample_noise": self.resample_noise,
            "noisy_test": self.noisy_test,
            "force_nonempty": self.force_nonempty,
        }


@dataclass(frozen=True)
class SplitRecord:
    split: int
    method: MethodKind
    size: float
    coverage: float
    empty_rate: float
    q: float


@dataclass(frozen=True)
class MethodSummary:
    method: MethodKind
    mean_size: float
    std_size: float
    mean_coverage: float
    std_coverage: float
    mean_q: float
    std_q: float
    empty_rate: float

    @property
    def mean_q_percent(self) -> float:
        return 100.0 * self.mean_q

    @property
    def std_q_percent(self) -> float:
        return 100.0 * self.std_q

    def metric(self, name: str) -> float:
        return float(getattr(self, name))


@dataclass
class ExperimentReport:
    config: SplitConfig
    n_pool: int
    n_calib: int
    n_test: int
    k: int
    summaries: Dict[MethodKind, MethodSummary]
    splits: List[SplitRecord] = field(default_factory=list)

    def __getitem__(self, method: MethodKind) -> MethodSummary:
        return self.summaries[parse_method(method)]

    def long_form(self) -> List[Tuple[str, str, float, float]]:
        """Rows (method, metric, mean, std) for size, coverage, q and empty rate."""
        rows: List[Tuple[str, str, float, float]] = []
        for method, summary in self.summaries.items():
            rows.append((method.value, "size", summary.mean_size, summary.std_size))
            rows.append((method.value, "coverage", summary.mean_coverage, summary.std_coverage))
            rows.append((method.value, "q", summary.mean_q, summary.std_q))
            rows.append((method.value, "empty_rate", summary.empty_rate, 0.0))
        return rows


@dataclass
class SweepReport:
    eps_grid: List[float]
    reports: List[ExperimentReport]

    def long_form(self) -> List[Tuple[float, str, str, float]]:
        """Rows (epsilon, method, metric, value), plot-ready."""
        rows: List[Tuple[float, str, str, float]] = []
        for epsilon, report in zip(self.eps_grid, self.reports):
            for method, summary in report.summaries.items():
                for metric in METRICS:
                    rows.append((epsilon, method.value, metric, summary.metric(metric)))
        return rows


# ── Metrics ───────────────────────────────────────────────────────────────────

def evaluate_masks(masks: np.ndarray, labels: np.ndarray) -> SetMetrics:
    masks = np.asarray(masks, dtype=bool)
    labels = as_labels(labels, masks.shape[1])
    if masks.shape[0] != labels.shape[0]:
        raise InputError(f"{masks.shape[0]} sets but {labels.shape[0]} labels")
    if masks.shape[0] == 0:
        raise InputError("cannot evaluate an empty test set")
    sizes = masks.sum(axis=1)
    covered = masks[np.arange(labels.shape[0]), labels]
    return SetMetrics(
        size=float(sizes.mean()),
        coverage=float(covered.mean()),
        empty_rate=float((sizes == 0).mean()),
    )


def evaluate_sets(sets: Sequence[PredictionSet], labels: Sequence[int]) -> SetMetrics:
    """size = mean |C(x_i)|, coverage = mean 1{y_i in C(x_i)}, empty_rate = mean 1{|C| = 0}."""
    if len(sets) != len(labels):
        raise InputError(f"{len(sets)} sets but {len(labels)} labels")
    if not sets:
        raise InputError("cannot evaluate an empty test set")
    sizes = np.array([len(s) for s in sets], dtype=np.float64)
    covered = np.array([int(y) in s for s, y in zip(sets, labels)], dtype=np.float64)
    return SetMetrics(
        size=float(sizes.mean()),
        coverage=float(covered.mean()),
        empty_rate=float((sizes == 0).mean()),
    )


# ── Harness ───────────────────────────────────────────────────────────────────

def calibration_size(n: int, fraction: float) -> int:
    return min(max(int(math.floor(fraction * n)), 1), n - 1)


def _check_pool(pool: LabeledPool, config: SplitConfig) -> None:
    if pool.n < 2:
        raise ConfigError(f"need at least 2 samples to split, got {pool.n}")
    needs_clean = (
        config.resample_noise
        or not config.noisy_test
        or MethodKind.ORACLE_CP in config.methods
    )
    if needs_clean and pool.clean_labels is None:
        raise ConfigError(
            "pool has no clean labels; use resample_noise=false with noisy_test=true "
            "and drop ORACLE_CP"
        )


def _run_split(pool: LabeledPool, config: SplitConfig, split: int, n_calib: int) -> List[SplitRecord]:
    seed = config.master_seed
    order = seeding.rng_for(seed, split, seeding.PARTITION).permutation(pool.n)
    calib_idx, test_idx = order[:n_calib], order[n_calib:]
    noise = NoiseModel(config.epsilon, pool.k)

    calib_pool = pool.subset(calib_idx)
    if config.resample_noise:
        calib_pool.observed_labels = corrupt_labels(
            calib_pool.clean_labels, noise, seeding.derive_seed(seed, split, seeding.CALIBRATION_NOISE)
        )
    calib_pool.noise = noise

    test_probs = pool.probs[test_idx]
    if not config.noisy_test:
        test_labels = pool.clean_labels[test_idx]
    elif config.resample_noise:
        test_labels = corrupt_labels(
            pool.clean_labels[test_idx], noise, seeding.derive_seed(seed, split, seeding.TEST_NOISE)
        )
    else:
        test_labels = pool.observed_labels[test_idx]

    spec = config.score_spec
    test_u = (
        seeding.rng_for(seed, split, seeding.TEST_U).random(test_idx.shape[0])
        if spec.randomized
        else None
    )
    calib_seed = seeding.derive_seed(seed, split, seeding.CALIBRATION_U)

    records: List[SplitRecord] = []
    for method in config.methods:
        calib = calibrate(calib_pool, method, spec, config.alpha, calib_seed)
        masks = predict_masks(test_probs, calib, test_u, config.force_nonempty)
        metrics = evaluate_masks(masks, test_labels)
        records.append(
            SplitRecord(
                split=split,
                method=method,
                size=metrics.size,
                coverage=metrics.coverage,
                empty_rate=metrics.empty_rate,
                q=calib.q,
            )
        )
    return records


def _spread(values: np.ndarray) -> Tuple[float, float]:
    """Mean and across-split std (ddof=0); +inf thresholds propagate as +inf."""
    if np.isinf(values).any():
        return math.inf, (0.0 if np.isinf(values).all() else math.inf)
    return float(values.mean()), float(values.std())


def _summarize(method: MethodKind, records: Sequence[SplitRecord]) -> MethodSummary:
    sizes = np.array([r.size for r in records])
    coverages = np.array([r.coverage for r in records])
    qs = np.array([r.q for r in records])
    empties = np.array([r.empty_rate for r in records])
    mean_q, std_q = _spread(qs)
    return MethodSummary(
        method=method,
        mean_size=float(sizes.mean()),
        std_size=float(sizes.std()),
        mean_coverage=float(coverages.mean()),
        std_coverage=float(coverages.std()),
        mean_q=mean_q,
        std_q=std_q,
        empty_rate=float(empties.mean()),
    )


def run_repeated_splits(pool: LabeledPool, config: SplitConfig) -> ExperimentReport:
    _check_pool(pool, config)
    n_calib = calibration_size(pool.n, config.calib_fraction)
    workers = WorkerPool(config.threads)
    LOGGER.info(
        "run_repeated_splits: n=%d k=%d splits=%d calib=%d alpha=%s eps=%s score=%s workers=%d",
        pool.n, pool.k, config.n_splits, n_calib, config.alpha, config.epsilon,
        config.score_spec.label, workers.threads,
    )

    per_split = workers.map(
        "split", lambda split: _run_split(pool, config, split, n_calib), config.n_splits
    )

    summaries: Dict[MethodKind, MethodSummary] = {}
    for position, method in enumerate(config.methods):
        summaries[method] = _summarize(method, [records[position] for records in per_split])
        LOGGER.info(
            "%-9s size=%.3f±%.3f coverage=%.4f±%.4f q=%.4f empty=%.4f",
            method.value,
            summaries[method].mean_size, summaries[method].std_size,
            summaries[method].mean_coverage, summaries[method].std_coverage,
            summaries[method].mean_q, summaries[method].empty_rate,
        )

    return ExperimentReport(
        config=config,
        n_pool=pool.n,
        n_calib=n_calib,
        n_test=pool.n - n_calib,
        k=pool.k,
        summaries=summaries,
        splits=[r for records in per_split for r in records] if config.keep_splits else [],
    )


def noise_sweep(pool: LabeledPool, eps_grid: Sequence[float], config: SplitConfig) -> SweepReport:
    grid = [float(e) for e in eps_grid]
    if not grid:
        raise ConfigError("eps_grid must not be empty")
    for epsilon in grid:
        if not 0.0 <= epsilon < 1.0:
            raise ConfigError(f"eps_grid values must lie in [0, 1), got {epsilon}")
    reports = [run_repeated_splits(pool, replace(config, epsilon=epsilon)) for epsilon in grid]
    return SweepReport(eps_grid=grid, reports=reports)
