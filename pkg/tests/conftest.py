import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from chartpat.market_data import BarSeries  # noqa: E402


def series_from_close(close, wick=0.0, start=0, symbol="T", volume=None):
    """Bars whose open is the previous close and whose wicks are ``wick`` wide."""
    c = np.asarray(close, dtype=float)
    o = np.concatenate([[c[0]], c[:-1]])
    h = np.maximum(o, c) + wick
    lo = np.minimum(o, c) - wick
    v = np.full(len(c), 100.0) if volume is None else np.asarray(volume, float)
    ts = start + np.arange(len(c), dtype=np.int64)
    return BarSeries(ts, o, h, lo, c, v, symbol=symbol)


def flat_series(close, symbol="T"):
    """O = H = L = C bars."""
    c = np.asarray(close, dtype=float)
    ts = np.arange(len(c), dtype=np.int64)
    return BarSeries(ts, c.copy(), c.copy(), c.copy(), c, np.full(len(c), 100.0), symbol=symbol)


@pytest.fixture
def make_series():
    return series_from_close


@pytest.fixture
def make_flat():
    return flat_series


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
