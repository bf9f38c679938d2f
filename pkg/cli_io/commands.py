"""Subcommand implementations behind the typer app in ``main.py``.

Each ``cmd_*`` takes resolved inputs, does the work and writes its artifact;
argument parsing and exit-code mapping stay in ``main.py``.
"""
from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Union

from cli_io import reports
from cli_io.dataset_file import read_dataset, write_dataset
from cli_io.run_config import RunConfig
from conformal import seeding
from conformal.calibrator import (
    CalibrationResult,
    MethodKind,
    calibrate,
    parse_method,
    prediction_sets,
)
from conformal.noise_model import LabeledPool, NoiseModel
from experiments.evaluation import ExperimentReport, SweepReport, noise_sweep, run_repeated_splits
from experiments.synthetic import generate
from system.errors import ConfigError, InputError
from system.logger import get_logger

LOGGER = get_logger("commands")

DEFAULT_CALIBRATION_METHOD = MethodKind.NR_CP


def load_pool(config: RunConfig, noisy: bool = False) -> LabeledPool:
    """Dataset file when ``config.dataset`` is set, otherwise the synth block.

    With ``noisy`` a synthetic pool comes back with labels already corrupted
    at ``config.epsilon``.
    """
    if config.dataset:
        return read_dataset(config.dataset, apply_softmax=config.softmax)
    synth = config.synth
    if noisy:
        synth = replace(synth, epsilon=config.epsilon)
    return generate(synth)


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        reports.atomic_write_text(output, text)
    else:
        sys.stdout.write(text)


# ── calibrate ─────────────────────────────────────────────────────────────────

def cmd_calibrate(config: RunConfig, method: Optional[str] = None) -> CalibrationResult:
    """Calibrate one method on the whole pool; its observed labels are the noisy ones."""
    chosen = DEFAULT_CALIBRATION_METHOD if method is None else parse_method(method)
    pool = load_pool(config, noisy=True)
    pool.noise = NoiseModel(config.epsilon, pool.k)
    calib = calibrate(pool, chosen, config.score, config.alpha, config.master_seed)
    LOGGER.info(
        "calibrated %s %s on n=%d: q=%r", chosen.value, config.score.label, calib.n, calib.q
    )
    if config.output:
        reports.write_calibration(config.output, calib, config.to_dict())
    else:
        _emit(reports.dumps_json(reports.calibration_document(calib, config.to_dict())), None)
    return calib


# ── predict ───────────────────────────────────────────────────────────────────

def cmd_predict(
    calibration_path: Union[str, Path],
    dataset_path: Union[str, Path],
    test_seed: int = 0,
    output: Optional[str] = None,
    apply_softmax: bool = False,
    force_nonempty: bool = False,
) -> int:
    """Write one prediction-set row per sample; returns the number of rows."""
    calib = reports.read_calibration(calibration_path)
    pool = read_dataset(dataset_path, apply_softmax=apply_softmax)
    if pool.k != calib.k:
        raise InputError(f"calibration is for k={calib.k}, dataset has k={pool.k}")
    u = None
    if calib.score_spec.randomized:
        u = seeding.rng_for(calib.seed, seeding.PREDICT_U, test_seed).random(pool.n)
    sets = prediction_sets(pool.probs, calib, u, force_nonempty)
    _emit(reports.dumps_prediction_sets(sets), output)
    LOGGER.info("predicted %d sets with %s (q=%r)", len(sets), calib.method.value, calib.q)
    return len(sets)


# ── experiment / sweep ────────────────────────────────────────────────────────

def cmd_experiment(config: RunConfig) -> ExperimentReport:
    pool = load_pool(config)
    report = run_repeated_splits(pool, config.split_config())
    _emit(reports.dumps_json(reports.experiment_document(report, config.to_dict())), config.output)
    if config.csv_output:
        reports.write_long_form(config.csv_output, report)
    if config.splits_output:
        reports.write_split_table(config.splits_output, report)
    return report


def cmd_sweep(config: RunConfig) -> SweepReport:
    if not config.eps_grid:
        raise ConfigError("sweep needs sweep.eps_grid (or --eps-grid)")
    if config.splits_output:
        raise ConfigError("splits_output is only available for a single experiment")
    pool = load_pool(config)
    sweep = noise_sweep(pool, config.eps_grid, config.split_config())
    _emit(reports.dumps_json(reports.sweep_document(sweep, config.to_dict())), config.output)
    if config.csv_output:
        reports.write_sweep_long_form(config.csv_output, sweep)
    return sweep


# ── synth ─────────────────────────────────────────────────────────────────────

def cmd_synth(config: RunConfig, epsilon: Optional[float] = None) -> LabeledPool:
    """Generate a synthetic pool and persist it in the dataset format.

    ``epsilon`` pre-corrupts the written ``label`` column; ``clean_label`` is
    always written.
    """
    if not config.output:
        raise ConfigError("synth needs an output path")
    pool = generate(replace(config.synth, epsilon=epsilon))
    write_dataset(config.output, pool)
    LOGGER.info("wrote synthetic pool n=%d k=%d to %s", pool.n, pool.k, config.output)
    return pool
