"""Uniform ("random flip") label noise and the noise-robust expected score.

With probability ``epsilon`` a label is replaced by a uniform draw over all
k classes (the draw may return the original class), otherwise it is kept.
Under a uniform prior the true-label posterior given an observed label is

    p(y=i | ỹ) = (1-ε)·1{ỹ=i} + ε/k

and the expected noise-free score collapses to the affine form

    Ŝ(x, ỹ, ε) = (1-ε)·S(x, ỹ) + ε·S(x),      S(x) = mean_i S(x, i).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from conformal.score_kernels import (
    ArrayLike,
    ScoreSpec,
    class_means,
    score_all_classes,
    score_matrix,
    validate_probs,
)
from system.errors import ConfigError, InputError
from system.logger import get_logger

LOGGER = get_logger("noise_model")

Labels = Union[Sequence[int], np.ndarray]


@dataclass(frozen=True)
class NoiseModel:
    """Noise level ``epsilon`` over ``k`` classes.

    ε = 1 (pure uniform relabelling) is accepted for simulation; operations
    that divide by 1-ε reject it where they are used.
    """

    epsilon: float
    k: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"noise level must lie in [0, 1], got {self.epsilon}")
        if int(self.k) != self.k or self.k < 2:
            raise ConfigError(f"noise model needs k >= 2, got {self.k}")
        object.__setattr__(self, "k", int(self.k))


def as_labels(labels: Labels, k: int, what: str = "labels") -> np.ndarray:
    values = np.asarray(labels)
    if values.ndim != 1:
        raise InputError(f"{what} must be a 1-d sequence, got shape {values.shape}")
    if values.size and not np.issubdtype(values.dtype, np.integer):
        as_int = values.astype(np.int64)
        if not np.array_equal(as_int, values):
            raise InputError(f"{what} must be integers")
        values = as_int
    values = values.astype(np.int64, copy=False)
    bad = (values < 0) | (values >= k)
    if bad.any():
        row = int(np.argmax(bad))
        raise InputError(f"{what}[{row}]={values[row]} outside [0, {k})", row=row)
    return values


@dataclass
class LabeledPool:
    """Probability matrix plus observed (possibly noisy) labels.

    ``probs`` goes through :func:`validate_probs` on construction; rows that
    are already normalized pass through bit-for-bit.
    """

    probs: np.ndarray
    observed_labels: np.ndarray
    clean_labels: Optional[np.ndarray] = None
    noise: Optional[NoiseModel] = None

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] < 1 or self.probs.shape[1] < 2:
            raise InputError(f"pool needs an n×k matrix with n >= 1, k >= 2, got {self.probs.shape}")
        self.probs = validate_probs(self.probs)
        n, k = self.probs.shape
        self.observed_labels = as_labels(self.observed_labels, k, "observed_labels")
        if self.observed_labels.shape[0] != n:
            raise InputError(f"{n} probability rows but {self.observed_labels.shape[0]} labels")
        if self.clean_labels is not None:
            self.clean_labels = as_labels(self.clean_labels, k, "clean_labels")
            if self.clean_labels.shape[0] != n:
                raise InputError(f"{n} probability rows but {self.clean_labels.shape[0]} clean labels")
        if self.noise is not None and self.noise.k != k:
            raise InputError(f"noise model is for k={self.noise.k}, pool has k={k}")

    @property
    def n(self) -> int:
        return int(self.probs.shape[0])

    @property
    def k(self) -> int:
        return int(self.probs.shape[1])

    def subset(self, index: np.ndarray) -> "LabeledPool":
        return replace(
            self,
            probs=self.probs[index],
            observed_labels=self.observed_labels[index],
            clean_labels=None if self.clean_labels is None else self.clean_labels[index],
        )


# ── Corruption ────────────────────────────────────────────────────────────────

def corrupt_labels(clean: Labels, model: NoiseModel, seed: int) -> np.ndarray:
    """Apply random flip noise independently to each label.

    Deterministic given ``seed``; ε = 0 returns the input unchanged.
    """
    labels = as_labels(clean, model.k, "clean")
    rng = np.random.default_rng(seed)
    flip = rng.random(labels.shape[0]) < model.epsilon
    draws = rng.integers(0, model.k, size=labels.shape[0])
    LOGGER.debug("corrupt_labels: eps=%s k=%d flipped=%d/%d", model.epsilon, model.k, int(flip.sum()), labels.shape[0])
    return np.where(flip, draws, labels)


def transition_matrix(model: NoiseModel) -> np.ndarray:
    """k×k matrix T[i, j] = p(ỹ=j | y=i)."""
    matrix = np.full((model.k, model.k), model.epsilon / model.k)
    matrix[np.diag_indices(model.k)] += 1.0 - model.epsilon
    return matrix


def posterior_true_label(observed: int, model: NoiseModel) -> np.ndarray:
    index = as_labels([observed], model.k, "observed")[0]
    posterior = np.full(model.k, model.epsilon / model.k)
    posterior[index] = (1.0 - model.epsilon) + model.epsilon / model.k
    return posterior


# ── Robust score ──────────────────────────────────────────────────────────────

def expected_noise_free(raw: np.ndarray, mean_score: np.ndarray, epsilon: float) -> np.ndarray:
    """(1-ε)·raw + ε·S(x); the single arithmetic used by calibration and NRES sets."""
    return (1.0 - epsilon) * raw + epsilon * mean_score


def robust_scores(
    probs: np.ndarray,
    observed: Labels,
    model: NoiseModel,
    spec: ScoreSpec,
    u: Optional[ArrayLike] = None,
) -> np.ndarray:
    """Ŝ(x_t, ỹ_t, ε) for every row of ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = as_labels(observed, probs.shape[1], "observed")
    if labels.shape[0] != probs.shape[0]:
        raise InputError(f"{probs.shape[0]} rows but {labels.shape[0]} observed labels")
    scores = score_matrix(probs, spec, u)
    raw = scores[np.arange(probs.shape[0]), labels]
    mean = class_means(scores, spec)
    return expected_noise_free(raw, mean, model.epsilon)


def robust_score_matrix(
    probs: np.ndarray,
    model: NoiseModel,
    spec: ScoreSpec,
    u: Optional[ArrayLike] = None,
) -> np.ndarray:
    """Ŝ(x, y, ε) for every sample and every candidate class y."""
    probs = np.asarray(probs, dtype=np.float64)
    scores = score_matrix(probs, spec, u)
    mean = class_means(scores, spec)
    return expected_noise_free(scores, mean[:, np.newaxis], model.epsilon)


def robust_score(
    p: ArrayLike,
    observed: int,
    model: NoiseModel,
    spec: ScoreSpec,
    u: Optional[float] = None,
) -> float:
    row = np.asarray(p, dtype=np.float64)
    if row.ndim != 1:
        raise InputError(f"expected a probability vector, got shape {row.shape}")
    return float(robust_scores(validate_probs(row), [observed], model, spec, None if u is None else [u])[0])


def expected_score_from_posterior(
    p: ArrayLike,
    observed: int,
    model: NoiseModel,
    spec: ScoreSpec,
    u: Optional[float] = None,
) -> float:
    """E[S(x, y) | ỹ] summed explicitly over the posterior; oracle for :func:`robust_score`."""
    posterior = posterior_true_label(observed, model)
    scores = score_all_classes(p, spec, u)
    return float(np.dot(posterior, scores))

