"""Seeded window generators shared by the detector tests."""

import numpy as np

from chartpat.patterns import PatternKind
from chartpat.synthgen import pattern_shape, sample_geometry

KINDS = (PatternKind.BEARISH_FLAG, PatternKind.DOUBLE_BOTTOM, PatternKind.DOUBLE_TOP)


def random_window(rng, max_len=64):
    """(low, high, close) of a random walk or of a noised pattern shape, length <= max_len."""
    n = int(rng.integers(15, max_len + 1))
    kind = int(rng.integers(0, 4))
    if kind == 3:
        close = 100 * np.exp(np.cumsum(rng.standard_normal(n) * 0.002))
    else:
        path, _ = pattern_shape(KINDS[kind], sample_geometry(KINDS[kind], rng))
        path = path[:n]
        before = int(rng.integers(0, max(1, n - len(path) + 1)))
        after = n - len(path) - before
        close = np.concatenate([np.full(before, path[0]), path, np.full(max(after, 0), path[-1])])[:n]
        close = 10 + close + rng.standard_normal(len(close)) * rng.choice([0.0, 0.01, 0.03, 0.08])
    n = len(close)
    spread = np.ptp(close) or 1.0
    high = close + np.abs(rng.standard_normal(n)) * 0.01 * spread
    low = close - np.abs(rng.standard_normal(n)) * 0.01 * spread
    return low, high, close
