"""Seed handling shared by every stochastic operation."""

import numpy as np

from .errors import ConfigError

# Stream ids keep independent substreams from colliding when they hang off
# the same master seed.
STREAM_TRANSCRIPT = 1
STREAM_EMISSION = 2
STREAM_WAVE = 3
STREAM_MEANS = 4
STREAM_CS = 5
STREAM_CORRUPT = 6
STREAM_SPLIT = 7


def check_seed(seed):
    if not isinstance(seed, (int, np.integer)) or seed < 0 or seed > 2**64 - 1:
        raise ConfigError(f"seed must be a non-negative 64-bit integer, got {seed!r}")
    return int(seed)


def substream(seed, *key):
    """Independent Generator derived from a master seed and an integer key path.

    The same (seed, key) always yields the same stream, and distinct key
    paths are statistically independent, so per-utterance generation is
    order-independent.
    """
    entropy = [check_seed(seed)] + [int(k) for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))
