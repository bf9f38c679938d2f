"""Unit tests for experiments.evaluation (metrics, split harness, sweep)."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from conformal.calibrator import MethodKind, PredictionSet
from conformal.noise_model import LabeledPool
from conformal.score_kernels import ScoreKind, ScoreSpec
from conformal.seeding import derive_seed, rng_for
from experiments.evaluation import (
    SplitConfig,
    calibration_size,
    evaluate_masks,
    evaluate_sets,
    noise_sweep,
    run_repeated_splits,
)
from experiments.synthetic import SynthConfig, generate
from system.errors import ConfigError, InputError


@pytest.fixture(scope="module")
def pool():
    return generate(SynthConfig(n=400, k=5, seed=3))


def _config(**overrides):
    base = SplitConfig(n_splits=12, alpha=0.1, epsilon=0.2, score_spec=ScoreSpec(ScoreKind.APS), threads=1)
    return replace(base, **overrides)


# ── Metrics ───────────────────────────────────────────────────────────────────

class TestEvaluateSets:
    def test_full_sets(self):
        sets = [PredictionSet((0, 1, 2))] * 4
        metrics = evaluate_sets(sets, [0, 1, 2, 1])
        assert (metrics.size, metrics.coverage, metrics.empty_rate) == (3.0, 1.0, 0.0)

    def test_empty_sets(self):
        metrics = evaluate_sets([PredictionSet(())] * 3, [0, 1, 2])
        assert (metrics.size, metrics.coverage, metrics.empty_rate) == (0.0, 0.0, 1.0)

    def test_hand_count(self):
        metrics = evaluate_sets([PredictionSet((0,)), PredictionSet((1,))], [0, 2])
        assert metrics.size == 1.0
        assert metrics.coverage == 0.5

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            evaluate_sets([PredictionSet((0,))], [0, 1])

    def test_masks_agree_with_sets(self):
        masks = np.array([[True, False, True], [False, False, False], [False, True, False]])
        labels = [2, 0, 1]
        sets = [PredictionSet.from_mask(row) for row in masks]
        assert evaluate_masks(masks, labels) == evaluate_sets(sets, labels)


# ── Config ────────────────────────────────────────────────────────────────────

class TestSplitConfig:
    @pytest.mark.parametrize(
        "field, value",
        [("n_splits", 0), ("calib_fraction", 1.0), ("alpha", 0.0), ("epsilon", 1.0), ("methods", ())],
    )
    def test_rejects_bad_values(self, field, value):
        with pytest.raises(ConfigError):
            _config(**{field: value})

    def test_rejects_repeated_methods(self):
        with pytest.raises(ConfigError):
            _config(methods=("NR_CP", "nr-cp"))

    def test_methods_parsed(self):
        assert _config(methods=("noisy_cp",)).methods == (MethodKind.NOISY_CP,)

    def test_dict_leaves_out_threads(self):
        assert "threads" not in _config(threads=4).to_dict()

    def test_calibration_size_clamped(self):
        assert calibration_size(10, 0.5) == 5
        assert calibration_size(2, 0.01) == 1
        assert calibration_size(2, 0.99) == 1


class TestSeeding:
    def test_streams_are_distinct_and_stable(self):
        assert derive_seed(0, 1, 0) == derive_seed(0, 1, 0)
        assert derive_seed(0, 1, 0) != derive_seed(0, 1, 1)
        assert derive_seed(0, 1, 0) != derive_seed(1, 1, 0)

    def test_generator_reproducible(self):
        assert rng_for(5, 2).random() == rng_for(5, 2).random()

    def test_negative_seed_rejected(self):
        with pytest.raises(ConfigError):
            derive_seed(-1)


# ── Harness ───────────────────────────────────────────────────────────────────

class TestRunRepeatedSplits:
    def test_zero_noise_methods_coincide_per_split(self, pool):
        report = run_repeated_splits(
            pool,
            _config(epsilon=0.0, methods=("ORACLE_CP", "NOISY_CP", "NR_CP"), keep_splits=True),
        )
        by_split = {}
        for record in report.splits:
            by_split.setdefault(record.split, []).append((record.size, record.coverage, record.q))
        assert len(by_split) == 12
        for rows in by_split.values():
            assert rows[0] == rows[1] == rows[2]

    def test_aggregates_match_split_table(self, pool):
        report = run_repeated_splits(pool, _config(keep_splits=True))
        for method, summary in report.summaries.items():
            rows = [r for r in report.splits if r.method is method]
            assert len(rows) == 12
            coverages = np.array([r.coverage for r in rows])
            sizes = np.array([r.size for r in rows])
            assert summary.mean_coverage == pytest.approx(coverages.mean(), abs=1e-12)
            assert summary.std_size == pytest.approx(sizes.std(), abs=1e-12)
            assert 0.0 <= summary.mean_coverage <= 1.0
            assert 0.0 <= summary.mean_size <= pool.k
            assert summary.std_coverage >= 0.0

    def test_bit_identical_across_thread_counts(self, pool):
        serial = run_repeated_splits(pool, _config(threads=1, keep_splits=True))
        parallel = run_repeated_splits(pool, _config(threads=4, keep_splits=True))
        assert serial.summaries == parallel.summaries
        assert serial.splits == parallel.splits

    def test_report_shape(self, pool):
        report = run_repeated_splits(pool, _config())
        assert (report.n_pool, report.n_calib, report.n_test, report.k) == (400, 200, 200, 5)
        assert report.splits == []
        assert list(report.summaries) == list(MethodKind)
        assert report["nr-cp"].method is MethodKind.NR_CP
        rows = report.long_form()
        assert len(rows) == 4 * 4
        assert rows[0][:2] == ("ORACLE_CP", "size")

    def test_tiny_calibration_set_reports_infinite_threshold(self, pool):
        small = pool.subset(np.arange(12))
        report = run_repeated_splits(small, _config(calib_fraction=0.25, methods=("NOISY_CP",)))
        summary = report["NOISY_CP"]
        assert summary.mean_q == math.inf
        assert summary.std_q == 0.0
        assert summary.mean_coverage == 1.0

    def test_pool_without_clean_labels(self):
        bare = LabeledPool(probs=np.full((10, 2), 0.5), observed_labels=[0, 1] * 5)
        with pytest.raises(ConfigError):
            run_repeated_splits(bare, _config())
        report = run_repeated_splits(
            bare,
            _config(resample_noise=False, noisy_test=True, methods=("NOISY_CP", "NR_CP")),
        )
        assert set(report.summaries) == {MethodKind.NOISY_CP, MethodKind.NR_CP}

    def test_pool_too_small(self):
        single = LabeledPool(probs=[[0.5, 0.5]], observed_labels=[0], clean_labels=[0])
        with pytest.raises(ConfigError):
            run_repeated_splits(single, _config())

    def test_randomized_scores_run(self, pool):
        report = run_repeated_splits(
            pool, _config(score_spec=ScoreSpec(ScoreKind.RAPS, raps_a=0.1, raps_b=2, randomized=True))
        )
        assert set(report.summaries) == set(MethodKind)


class TestNoiseSweep:
    def test_single_zero_level_matches_direct_run(self, pool):
        config = _config(epsilon=0.3)
        sweep = noise_sweep(pool, [0.0], config)
        direct = run_repeated_splits(pool, replace(config, epsilon=0.0))
        assert sweep.eps_grid == [0.0]
        assert sweep.reports[0].summaries == direct.summaries

    def test_one_report_per_level(self, pool):
        sweep = noise_sweep(pool, [0.0, 0.1, 0.3], _config(n_splits=3))
        assert [r.config.epsilon for r in sweep.reports] == [0.0, 0.1, 0.3]
        rows = sweep.long_form()
        assert len(rows) == 3 * 4 * 7
        assert {row[0] for row in rows} == {0.0, 0.1, 0.3}

    @pytest.mark.parametrize("grid", [[], [1.0], [-0.1]])
    def test_bad_grid(self, pool, grid):
        with pytest.raises(ConfigError):
            noise_sweep(pool, grid, _config())
