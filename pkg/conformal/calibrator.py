"""Split-conformal calibration and prediction sets for the four noisy-label methods.

    method     calibration score   ->  threshold   test-time set
    ORACLE_CP  S(x, y)   clean     ->  q           {y | S(x,y) <= q}
    NOISY_CP   S(x, ỹ)   noisy     ->  q_noise     {y | S(x,y) <= q_noise}
    NRES_CP    Ŝ(x, ỹ, ε)          ->  q_ε         {y | Ŝ(x,y,ε) <= q_ε}
    NR_CP      Ŝ(x, ỹ, ε)          ->  q_ε         {y | S(x,y) <= q_ε}

The comparator is <= everywhere.  A quantile index past n yields q = +inf
and therefore full prediction sets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterator, Optional, Sequence

import numpy as np

from conformal.noise_model import LabeledPool, NoiseModel, robust_score_matrix, robust_scores
from conformal.score_kernels import (
    ArrayLike,
    ScoreKind,
    ScoreSpec,
    class_means,
    score_matrix,
    validate_probs,
)
from system.errors import ConfigError, InputError
from system.logger import get_logger

LOGGER = get_logger("calibrator")


class MethodKind(str, Enum):
    ORACLE_CP = "ORACLE_CP"
    NOISY_CP = "NOISY_CP"
    NRES_CP = "NRES_CP"
    NR_CP = "NR_CP"

    @property
    def needs_noise_model(self) -> bool:
        return self in (MethodKind.NRES_CP, MethodKind.NR_CP)


ALL_METHODS = tuple(MethodKind)


def parse_method(value: Any) -> MethodKind:
    try:
        return MethodKind(str(getattr(value, "value", value)).upper().replace("-", "_"))
    except ValueError as exc:
        raise ConfigError(f"unknown method: {value!r}") from exc


def _threshold_literal(value: Optional[float]) -> Any:
    if value is None:
        return None
    return "+inf" if math.isinf(value) else value


def _parse_threshold(raw: Any) -> float:
    return math.inf if raw == "+inf" else float(raw)


@dataclass(frozen=True)
class CalibrationResult:
    method: MethodKind
    q: float
    alpha: float
    n: int
    k: int
    score_spec: ScoreSpec
    epsilon: Optional[float]
    seed: int
    # NRES_CP with HPS only: the raw-score order statistic behind q (q_noise)
    q_raw: Optional[float] = None

    @property
    def is_overflow(self) -> bool:
        return math.isinf(self.q)

    @property
    def q_percent(self) -> float:
        """Threshold as a percentage, for display next to size/coverage."""
        return 100.0 * self.q

    def noise_model(self) -> NoiseModel:
        if self.epsilon is None:
            raise ConfigError(f"{self.method.value} calibration carries no noise level")
        return NoiseModel(self.epsilon, self.k)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method.value,
            "q": _threshold_literal(self.q),
            "alpha": self.alpha,
            "n": self.n,
            "k": self.k,
            "epsilon": self.epsilon,
            "score_spec": self.score_spec.to_dict(),
            "seed": self.seed,
            "q_raw": _threshold_literal(self.q_raw),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CalibrationResult":
        try:
            q = _parse_threshold(data["q"])
            epsilon = data.get("epsilon")
            q_raw = data.get("q_raw")
            return cls(
                method=parse_method(data["method"]),
                q=q,
                alpha=float(data["alpha"]),
                n=int(data["n"]),
                k=int(data["k"]),
                score_spec=ScoreSpec.from_dict(data["score_spec"]),
                epsilon=None if epsilon is None else float(epsilon),
                seed=int(data["seed"]),
                q_raw=None if q_raw is None else _parse_threshold(q_raw),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed calibration record: {exc}") from exc


@dataclass(frozen=True)
class PredictionSet:
    """Sorted, duplicate-free class indices; may be empty."""

    members: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(sorted({int(m) for m in self.members})))

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, label: object) -> bool:
        return label in self.members

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "PredictionSet":
        return cls(tuple(np.flatnonzero(mask).tolist()))


# ── Quantile ──────────────────────────────────────────────────────────────────

def quantile_index(n: int, alpha: float) -> int:
    """1-based order statistic m = ceil((n+1)(1-alpha))."""
    return math.ceil((n + 1) * (1.0 - alpha))


def conformal_quantile(scores: ArrayLike, alpha: float) -> float:
    values = np.asarray(scores, dtype=np.float64).reshape(-1)
    if values.shape[0] == 0:
        raise InputError("cannot calibrate on an empty score list")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    n = values.shape[0]
    m = quantile_index(n, alpha)
    if m > n:
        return math.inf
    return float(np.partition(values, m - 1)[m - 1])


# ── Calibration ───────────────────────────────────────────────────────────────

def calibration_scores(
    pool: LabeledPool,
    method: MethodKind,
    spec: ScoreSpec,
    u: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-sample learning-phase scores for ``method``."""
    if method is MethodKind.ORACLE_CP:
        if pool.clean_labels is None:
            raise ConfigError("ORACLE_CP needs clean labels")
        scores = score_matrix(pool.probs, spec, u)
        return scores[np.arange(pool.n), pool.clean_labels]
    if method is MethodKind.NOISY_CP:
        scores = score_matrix(pool.probs, spec, u)
        return scores[np.arange(pool.n), pool.observed_labels]
    if pool.noise is None:
        raise ConfigError(f"{method.value} needs a noise level (epsilon)")
    return robust_scores(pool.probs, pool.observed_labels, pool.noise, spec, u)


def calibrate(
    pool: LabeledPool,
    method: MethodKind,
    spec: ScoreSpec,
    alpha: float,
    seed: int,
) -> CalibrationResult:
    """Learning phase: score the calibration pool and take the conformal quantile.

    Randomized scores draw one u per sample from ``default_rng(seed)``, so
    methods calibrated with the same seed see the same draws.
    """
    method = parse_method(method)
    u = np.random.default_rng(seed).random(pool.n) if spec.randomized else None
    scores = calibration_scores(pool, method, spec, u)
    q = conformal_quantile(scores, alpha)
    q_raw = None
    if method is MethodKind.NRES_CP and spec.kind is ScoreKind.HPS:
        # the HPS robust score is a non-decreasing map of the raw score: the m-th
        # raw score is the preimage of q, and membership is tested against it
        raw = score_matrix(pool.probs, spec, u)[np.arange(pool.n), pool.observed_labels]
        q_raw = conformal_quantile(raw, alpha)
    epsilon = None if pool.noise is None else pool.noise.epsilon
    LOGGER.debug(
        "calibrate %s %s: n=%d alpha=%s eps=%s q=%r",
        method.value, spec.label, pool.n, alpha, epsilon, q,
    )
    return CalibrationResult(
        method=method,
        q=q,
        alpha=float(alpha),
        n=pool.n,
        k=pool.k,
        score_spec=spec,
        epsilon=epsilon,
        seed=int(seed),
        q_raw=q_raw,
    )


# ── Inference ─────────────────────────────────────────────────────────────────

def set_membership_threshold(calib: CalibrationResult, mean_score: float) -> float:
    """Effective raw-score threshold (q_ε - ε·S(x)) / (1-ε) of an NRES set.

    For HPS this is the stored raw order statistic ``q_raw``.
    """
    if calib.method is not MethodKind.NRES_CP:
        raise ConfigError(f"membership threshold is defined for NRES_CP, not {calib.method.value}")
    epsilon = calib.noise_model().epsilon
    if epsilon >= 1.0:
        raise ConfigError("membership threshold is undefined at epsilon = 1")
    if calib.is_overflow:
        return math.inf
    if calib.q_raw is not None:
        return calib.q_raw
    return (calib.q - epsilon * mean_score) / (1.0 - epsilon)


def _check_k(probs: np.ndarray, calib: CalibrationResult) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[np.newaxis, :]
    if probs.shape[1] != calib.k:
        raise InputError(f"calibrated for k={calib.k}, got k={probs.shape[1]}")
    return probs


def _force_nonempty(mask: np.ndarray, probs: np.ndarray) -> np.ndarray:
    empty = ~mask.any(axis=1)
    if empty.any():
        rows = np.flatnonzero(empty)
        mask[rows, np.argmax(probs[rows], axis=1)] = True
    return mask


def predict_masks(
    probs: np.ndarray,
    calib: CalibrationResult,
    u: Optional[ArrayLike] = None,
    force_nonempty: bool = False,
) -> np.ndarray:
    """n×k membership matrix; row i is the prediction set of sample i."""
    probs = _check_k(probs, calib)
    spec = calib.score_spec
    if calib.is_overflow:
        score_matrix(probs, spec, u)  # input checks only
        return np.ones(probs.shape, dtype=bool)
    if calib.method is MethodKind.NRES_CP and calib.q_raw is not None:
        mask = score_matrix(probs, spec, u) <= calib.q_raw
    elif calib.method is MethodKind.NRES_CP:
        mask = robust_score_matrix(probs, calib.noise_model(), spec, u) <= calib.q
    else:
        mask = score_matrix(probs, spec, u) <= calib.q
    if force_nonempty:
        mask = _force_nonempty(mask, probs)
    return mask


def nres_masks_via_threshold(
    probs: np.ndarray,
    calib: CalibrationResult,
    u: Optional[ArrayLike] = None,
) -> np.ndarray:
    """NRES sets through the raw-score rewrite {y | S(x,y) <= (q_ε - ε·S(x))/(1-ε)}.

    Falls back to the direct Ŝ form at ε = 1 where the rewrite divides by zero.
    """
    if calib.method is not MethodKind.NRES_CP:
        raise ConfigError(f"threshold rewrite applies to NRES_CP, not {calib.method.value}")
    probs = _check_k(probs, calib)
    if calib.is_overflow:
        return np.ones(probs.shape, dtype=bool)
    if calib.noise_model().epsilon >= 1.0:
        return predict_masks(probs, calib, u)
    scores = score_matrix(probs, calib.score_spec, u)
    means = class_means(scores, calib.score_spec)
    thresholds = np.array([set_membership_threshold(calib, m) for m in means])
    return scores <= thresholds[:, np.newaxis]


def prediction_set(
    p: ArrayLike,
    calib: CalibrationResult,
    u: Optional[float] = None,
    force_nonempty: bool = False,
) -> PredictionSet:
    row = validate_probs(np.asarray(p, dtype=np.float64))
    mask = predict_masks(row, calib, None if u is None else [u], force_nonempty)
    return PredictionSet.from_mask(mask[0])


def prediction_sets(
    probs: np.ndarray,
    calib: CalibrationResult,
    u: Optional[ArrayLike] = None,
    force_nonempty: bool = False,
) -> Sequence[PredictionSet]:
    masks = predict_masks(probs, calib, u, force_nonempty)
    return [PredictionSet.from_mask(row) for row in masks]
