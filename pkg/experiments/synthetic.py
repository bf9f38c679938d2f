"""Synthetic exchangeable pools with a known generating distribution.

Each sample draws a true class distribution from a symmetric Dirichlet
(normalized ``Generator.standard_gamma`` variates), a clean label from that
distribution, and a model output equal to the true distribution tempered by
``temperature``.  Tempering is monotone, so the model never ranks a class above
one the truth prefers (at extreme temperatures small classes can collapse to a
shared 0); ``swap_top2_rate`` deliberately breaks that for negative-control runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from conformal import seeding
from conformal.noise_model import LabeledPool, NoiseModel, corrupt_labels
from system.errors import ConfigError
from system.logger import get_logger

LOGGER = get_logger("synthetic")


@dataclass(frozen=True)
class SynthConfig:
    n: int = 4000
    k: int = 8
    concentration: float = 0.1
    temperature: float = 1.0
    seed: int = 0
    swap_top2_rate: float = 0.0
    epsilon: Optional[float] = None

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"synth n must be a positive integer, got {self.n}")
        if int(self.k) != self.k or self.k < 2:
            raise ConfigError(f"synth k must be an integer >= 2, got {self.k}")
        if not self.concentration > 0:
            raise ConfigError(f"concentration must be > 0, got {self.concentration}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.swap_top2_rate <= 1.0:
            raise ConfigError(f"swap_top2_rate must lie in [0, 1], got {self.swap_top2_rate}")
        if self.epsilon is not None and not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "k": self.k,
            "concentration": self.concentration,
            "temperature": self.temperature,
            "seed": self.seed,
            "swap_top2_rate": self.swap_top2_rate,
        }


@dataclass
class SyntheticPool(LabeledPool):
    true_probs: Optional[np.ndarray] = None

    def subset(self, index: np.ndarray) -> "SyntheticPool":
        part = super().subset(index)
        if self.true_probs is not None:
            part.true_probs = self.true_probs[index]
        return part


def _dirichlet(rng: np.random.Generator, concentration: float, n: int, k: int) -> np.ndarray:
    gammas = rng.standard_gamma(concentration, size=(n, k))
    totals = gammas.sum(axis=1, keepdims=True)
    # every variate underflowed: fall back to uniform for that row
    gammas = np.where(totals > 0, gammas, 1.0)
    return gammas / gammas.sum(axis=1, keepdims=True)


def _temper(true_probs: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 1.0:
        return true_probs.copy()
    # log space: p ** (1/T) underflows to an all-zero row at small T
    with np.errstate(divide="ignore"):
        logits = np.log(true_probs) / temperature
    powered = np.exp(logits - logits.max(axis=1, keepdims=True))
    return powered / powered.sum(axis=1, keepdims=True)


def _swap_top_two(probs: np.ndarray, rows: np.ndarray) -> None:
    if rows.size == 0:
        return
    top = np.argsort(-probs[rows], axis=1, kind="stable")[:, :2]
    first = probs[rows, top[:, 0]].copy()
    probs[rows, top[:, 0]] = probs[rows, top[:, 1]]
    probs[rows, top[:, 1]] = first


def generate(config: SynthConfig) -> SyntheticPool:
    n, k = int(config.n), int(config.k)
    true_probs = _dirichlet(
        seeding.rng_for(config.seed, seeding.SYNTH_DISTRIBUTION), config.concentration, n, k
    )

    draws = seeding.rng_for(config.seed, seeding.SYNTH_LABELS).random(n)
    cdf = np.cumsum(true_probs, axis=1)
    clean = np.minimum((cdf <= draws[:, np.newaxis]).sum(axis=1), k - 1)

    model_probs = _temper(true_probs, config.temperature)
    if config.swap_top2_rate > 0.0:
        flips = seeding.rng_for(config.seed, seeding.SYNTH_SWAPS).random(n) < config.swap_top2_rate
        _swap_top_two(model_probs, np.flatnonzero(flips))

    noise = None
    observed = clean.copy()
    if config.epsilon is not None:
        noise = NoiseModel(config.epsilon, k)
        observed = corrupt_labels(clean, noise, seeding.derive_seed(config.seed, seeding.SYNTH_NOISE))

    LOGGER.info(
        "generate: n=%d k=%d concentration=%s temperature=%s swap_top2=%s eps=%s",
        n, k, config.concentration, config.temperature, config.swap_top2_rate, config.epsilon,
    )
    return SyntheticPool(
        probs=model_probs,
        observed_labels=observed,
        clean_labels=clean,
        noise=noise,
        true_probs=true_probs,
    )
