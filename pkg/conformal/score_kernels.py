"""Conformal scores: HPS, APS, RAPS and their randomized variants.

Larger scores encode worse agreement between a sample and a class.  Every
function here is pure; randomness enters only through an explicit ``u``.

Public API
----------
ScoreKind, ScoreSpec
validate_probs(matrix)                    -> validated n×k float64 matrix
softmax(logits)                           -> row-stochastic matrix
hps_score / aps_score / raps_score / rand_score
                                          -> single sample, single class
score_all_classes(p, spec, u)             -> length-k scores
mean_class_score(p, spec, u)              -> S(x), the class-average score
score_matrix(probs, spec, u)              -> n×k scores (batched)
mean_class_scores(probs, spec, u)         -> length-n S(x) (batched)

The batched and single-sample forms share one code path, so a row of
``score_matrix`` is bit-identical to ``score_all_classes`` for that row.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from system.errors import ConfigError, InputError

PROB_TOLERANCE = 1e-6
RENORMALIZE_FLOOR = 1e-12
DEFAULT_RAPS_A = 0.1
DEFAULT_RAPS_B = 2.0

ArrayLike = Union[Sequence[float], np.ndarray]


class ScoreKind(str, Enum):
    HPS = "HPS"
    APS = "APS"
    RAPS = "RAPS"


@dataclass(frozen=True)
class ScoreSpec:
    """Which conformal score to use and whether it is randomized.

    ``raps_a`` / ``raps_b`` are only read when ``kind`` is RAPS.
    """

    kind: ScoreKind = ScoreKind.APS
    raps_a: float = DEFAULT_RAPS_A
    raps_b: float = DEFAULT_RAPS_B
    randomized: bool = False

    def __post_init__(self) -> None:
        try:
            kind = ScoreKind(str(getattr(self.kind, "value", self.kind)).upper())
        except ValueError as exc:
            raise ConfigError(f"unknown score kind: {self.kind!r}") from exc
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "raps_a", float(self.raps_a))
        object.__setattr__(self, "raps_b", float(self.raps_b))
        if kind is ScoreKind.RAPS and (self.raps_a < 0 or self.raps_b < 0):
            raise ConfigError(
                f"RAPS parameters must be >= 0, got a={self.raps_a} b={self.raps_b}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "a": self.raps_a,
            "b": self.raps_b,
            "randomized": self.randomized,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScoreSpec":
        return cls(
            kind=data.get("kind", ScoreKind.APS),
            raps_a=data.get("a", DEFAULT_RAPS_A),
            raps_b=data.get("b", DEFAULT_RAPS_B),
            randomized=bool(data.get("randomized", False)),
        )

    @property
    def label(self) -> str:
        prefix = "rand-" if self.randomized else ""
        return f"{prefix}{self.kind.value}"


# ── Ingestion ─────────────────────────────────────────────────────────────────

def validate_probs(matrix: ArrayLike, tolerance: float = PROB_TOLERANCE) -> np.ndarray:
    """Check a probability matrix and renormalize rows within tolerance.

    Raises:
        InputError: wrong shape, k < 2, non-finite or out-of-range entries,
            or a row whose sum is further than ``tolerance`` from 1.  The
            error carries the offending row index.
    """
    probs = np.array(matrix, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[np.newaxis, :]
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InputError(f"expected an n×k probability matrix, got shape {probs.shape}")
    if probs.shape[1] < 2:
        raise InputError(f"need at least 2 classes, got k={probs.shape[1]}")

    finite = np.isfinite(probs).all(axis=1)
    if not finite.all():
        row = int(np.argmin(finite))
        raise InputError(f"row {row} has a non-finite probability", row=row)
    in_range = ((probs >= 0.0) & (probs <= 1.0 + tolerance)).all(axis=1)
    if not in_range.all():
        row = int(np.argmin(in_range))
        raise InputError(f"row {row} has a probability outside [0, 1]", row=row)

    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > tolerance
    if bad.any():
        row = int(np.argmax(bad))
        raise InputError(
            f"row {row} sums to {sums[row]!r}, not 1 within {tolerance}", row=row
        )
    # rows already normalized to float precision are left bit-for-bit untouched
    drift = np.abs(sums - 1.0) > RENORMALIZE_FLOOR
    if drift.any():
        probs[drift] = probs[drift] / sums[drift, np.newaxis]
    return probs


def softmax(logits: ArrayLike) -> np.ndarray:
    """Row-wise softmax for raw classifier outputs."""
    values = np.array(logits, dtype=np.float64)
    if values.ndim == 1:
        values = values[np.newaxis, :]
    if not np.isfinite(values).all():
        raise InputError("logits must be finite")
    shifted = np.exp(values - values.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _as_row(p: ArrayLike) -> np.ndarray:
    row = np.asarray(p, dtype=np.float64)
    if row.ndim != 1:
        raise InputError(f"expected a probability vector, got shape {row.shape}")
    return validate_probs(row)


def _check_class(y: int, k: int) -> int:
    index = int(y)
    if index != y or not 0 <= index < k:
        raise InputError(f"class index {y!r} outside [0, {k})")
    return index


def _check_u(u: Optional[ArrayLike], n: int, spec: ScoreSpec) -> Optional[np.ndarray]:
    if not spec.randomized:
        if u is not None:
            raise InputError("u given for a deterministic score")
        return None
    if u is None:
        raise InputError("randomized score requires u")
    draws = np.asarray(u, dtype=np.float64).reshape(-1)
    if draws.shape[0] == 1 and n != 1:
        draws = np.full(n, draws[0])
    if draws.shape[0] != n:
        raise InputError(f"expected {n} u values, got {draws.shape[0]}")
    if not ((draws >= 0.0) & (draws <= 1.0)).all():
        raise InputError("u must lie in [0, 1]")
    return draws


# ── Batched kernels ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class _RankLayout:
    """Per-class cumulative mass, tie-aware, in original class order."""

    inclusive: np.ndarray  # Σ p_j over p_j ≥ p_i
    strict: np.ndarray     # Σ p_j over p_j > p_i
    rank: np.ndarray       # |{j : p_j ≥ p_i}|


def _rank_layout(probs: np.ndarray) -> _RankLayout:
    n, k = probs.shape
    order = np.argsort(-probs, axis=1, kind="stable")
    ordered = np.take_along_axis(probs, order, axis=1)

    cumsum = np.minimum(np.cumsum(ordered, axis=1), 1.0)
    # rows are normalized: the full mass is exactly 1
    cumsum[:, -1] = 1.0
    exclusive = np.zeros_like(cumsum)
    exclusive[:, 1:] = cumsum[:, :-1]

    cols = np.broadcast_to(np.arange(k), (n, k))
    is_start = np.ones((n, k), dtype=bool)
    is_start[:, 1:] = ordered[:, 1:] != ordered[:, :-1]
    is_end = np.ones((n, k), dtype=bool)
    is_end[:, :-1] = is_start[:, 1:]

    group_start = np.maximum.accumulate(np.where(is_start, cols, 0), axis=1)
    group_end = np.minimum.accumulate(
        np.where(is_end, cols, k)[:, ::-1], axis=1
    )[:, ::-1]

    inclusive = np.empty_like(probs)
    strict = np.empty_like(probs)
    rank = np.empty((n, k), dtype=np.int64)
    np.put_along_axis(inclusive, order, np.take_along_axis(cumsum, group_end, axis=1), axis=1)
    np.put_along_axis(strict, order, np.take_along_axis(exclusive, group_start, axis=1), axis=1)
    np.put_along_axis(rank, order, group_end + 1, axis=1)
    return _RankLayout(inclusive=inclusive, strict=strict, rank=rank)


def _raps_penalty(rank: np.ndarray, spec: ScoreSpec) -> np.ndarray:
    return spec.raps_a * np.maximum(0.0, rank - spec.raps_b)


def score_matrix(
    probs: np.ndarray,
    spec: ScoreSpec,
    u: Optional[ArrayLike] = None,
) -> np.ndarray:
    """Scores S(x_i, y) for every sample i and class y.

    Args:
        probs: n×k validated probability matrix.
        spec:  Score selection.
        u:     One uniform draw per sample, required iff ``spec.randomized``.
               The same draw is used for every class of that sample.
    """
    probs = np.asarray(probs, dtype=np.float64)
    draws = _check_u(u, probs.shape[0], spec)

    if spec.kind is ScoreKind.HPS:
        # no randomized HPS exists; u is accepted and ignored
        return 1.0 - probs

    layout = _rank_layout(probs)
    if draws is None:
        scores = layout.inclusive.copy()
    else:
        scores = np.minimum(layout.strict + draws[:, np.newaxis] * probs, 1.0)
    if spec.kind is ScoreKind.RAPS:
        scores = scores + _raps_penalty(layout.rank, spec)
    return scores


def class_means(scores: np.ndarray, spec: ScoreSpec) -> np.ndarray:
    """Row means of an n×k score matrix.

    For HPS the mean is exactly (k-1)/k for any probability vector and is
    returned as that constant so downstream thresholds stay exactly affine.
    """
    n, k = scores.shape
    if spec.kind is ScoreKind.HPS:
        return np.full(n, (k - 1) / k)
    return scores.mean(axis=1)


def mean_class_scores(
    probs: np.ndarray,
    spec: ScoreSpec,
    u: Optional[ArrayLike] = None,
) -> np.ndarray:
    """S(x) = (1/k) Σ_i S(x, i) for every row."""
    return class_means(score_matrix(probs, spec, u), spec)


# ── Single-sample API ─────────────────────────────────────────────────────────

def hps_score(p: ArrayLike, y: int) -> float:
    row = _as_row(p)
    index = _check_class(y, row.shape[1])
    return float(1.0 - row[0, index])


def aps_score(p: ArrayLike, y: int) -> float:
    row = _as_row(p)
    index = _check_class(y, row.shape[1])
    return float(_rank_layout(row).inclusive[0, index])


def raps_score(p: ArrayLike, y: int, spec: ScoreSpec) -> float:
    if spec.kind is not ScoreKind.RAPS:
        raise ConfigError(f"raps_score needs a RAPS spec, got {spec.kind.value}")
    row = _as_row(p)
    index = _check_class(y, row.shape[1])
    layout = _rank_layout(row)
    return float(layout.inclusive[0, index] + _raps_penalty(layout.rank, spec)[0, index])


def rand_score(p: ArrayLike, y: int, u: float, spec: ScoreSpec) -> float:
    """Randomized score: Σ_{p_i > p_y} p_i + u·p_y (plus the RAPS penalty)."""
    if not spec.randomized:
        raise ConfigError("rand_score needs a randomized spec")
    row = _as_row(p)
    index = _check_class(y, row.shape[1])
    return float(score_matrix(row, spec, [u])[0, index])


def score_all_classes(
    p: ArrayLike,
    spec: ScoreSpec,
    u: Optional[float] = None,
) -> np.ndarray:
    row = _as_row(p)
    return score_matrix(row, spec, None if u is None else [u])[0]


def mean_class_score(
    p: ArrayLike,
    spec: ScoreSpec,
    u: Optional[float] = None,
) -> float:
    row = _as_row(p)
    return float(mean_class_scores(row, spec, None if u is None else [u])[0])
