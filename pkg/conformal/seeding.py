"""Counter-based seed derivation.

Every random stream in a run is keyed by (master_seed, *counters), so a
split's draws depend only on its index and never on which worker ran it or
in what order.
"""
from __future__ import annotations

import numpy as np

from system.errors import ConfigError

# stream ids inside one split
PARTITION = 0
CALIBRATION_NOISE = 1
CALIBRATION_U = 2
TEST_U = 3
TEST_NOISE = 4
# stream ids for the synthetic generator
SYNTH_DISTRIBUTION = 10
SYNTH_LABELS = 11
SYNTH_SWAPS = 12
SYNTH_NOISE = 13
# stream id for CLI predictions
PREDICT_U = 20


def derive_seed(master_seed: int, *key: int) -> int:
    """64-bit seed for the stream identified by ``key`` under ``master_seed``."""
    if int(master_seed) != master_seed or master_seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {master_seed!r}")
    if any(int(part) < 0 for part in key):
        raise ConfigError(f"seed key parts must be non-negative, got {key!r}")
    sequence = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(int(part) for part in key)
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def rng_for(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *key))
