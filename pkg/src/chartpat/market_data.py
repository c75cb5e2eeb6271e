"""OHLCV bar series: CSV ingestion, sliding windows and per-window normalization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DegenerateLabels,
    EmptyChannelSet,
    EmptyFile,
    LengthExceedsSeries,
    MalformedRow,
    NonMonotonicTimestamp,
    ValidationError,
)

CHANNELS = ("O", "H", "L", "C", "V")
PRICE_ROWS = slice(0, 4)
MIN_WINDOW = 15
MAX_WINDOW = 180

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class OhlcvBar:
    timestamp: int  # minutes since epoch
    open: float
    high: float
    low: float
    close: float
    volume: float

    def check(self) -> str | None:
        """Return a description of the first violated invariant, or None."""
        prices = (self.open, self.high, self.low, self.close)
        if not all(np.isfinite(prices)) or not np.isfinite(self.volume):
            return "non-finite value"
        if min(prices) <= 0:
            return "non-positive price"
        if self.volume < 0:
            return "negative volume"
        if self.low > self.high:
            return "low > high"
        if self.low > min(self.open, self.close):
            return "low above open/close"
        if self.high < max(self.open, self.close):
            return "high below open/close"
        return None


@dataclass(frozen=True, eq=False)
class BarSeries:
    """Column-oriented, validated sequence of one-minute bars.

    ``timestamp_format`` remembers how timestamps were written in the source
    file ("iso" or "epoch") so that ``write_csv`` can round-trip it.
    """

    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    symbol: str = "SYNTH"
    timestamp_format: str = "epoch"
    _gap_after: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.timestamps)
        for name in ("open", "high", "low", "close", "volume"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise ValidationError(f"column {name} has {len(arr)} rows, expected {n}")
        ts = np.asarray(self.timestamps, dtype=np.int64)
        object.__setattr__(self, "timestamps", ts)
        for name in ("open", "high", "low", "close", "volume"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if n > 1 and np.any(np.diff(ts) <= 0):
            bad = int(np.nonzero(np.diff(ts) <= 0)[0][0]) + 1
            raise NonMonotonicTimestamp(bad)
        # gap_after[i] is True when bar i+1 does not follow bar i by exactly one minute
        object.__setattr__(self, "_gap_after", np.diff(ts) > 1)

    @classmethod
    def from_bars(cls, bars: Sequence[OhlcvBar], symbol: str = "SYNTH", timestamp_format: str = "epoch"):
        return cls(
            timestamps=np.array([b.timestamp for b in bars], dtype=np.int64),
            open=np.array([b.open for b in bars]),
            high=np.array([b.high for b in bars]),
            low=np.array([b.low for b in bars]),
            close=np.array([b.close for b in bars]),
            volume=np.array([b.volume for b in bars]),
            symbol=symbol,
            timestamp_format=timestamp_format,
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def bars(self) -> list[OhlcvBar]:
        return [self.bar(i) for i in range(len(self))]

    def bar(self, i: int) -> OhlcvBar:
        return OhlcvBar(int(self.timestamps[i]), float(self.open[i]), float(self.high[i]),
                        float(self.low[i]), float(self.close[i]), float(self.volume[i]))

    @property
    def gap_after(self) -> np.ndarray:
        return self._gap_after

    def matrix(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Raw 5 x n matrix in canonical O,H,L,C,V row order."""
        sl = slice(start, stop)
        return np.vstack([self.open[sl], self.high[sl], self.low[sl], self.close[sl], self.volume[sl]])

    def replace(self, **columns) -> "BarSeries":
        kw = dict(timestamps=self.timestamps, open=self.open, high=self.high, low=self.low,
                  close=self.close, volume=self.volume, symbol=self.symbol,
                  timestamp_format=self.timestamp_format)
        kw.update(columns)
        return BarSeries(**kw)

    def validate(self) -> None:
        for i in range(len(self)):
            reason = self.bar(i).check()
            if reason:
                raise MalformedRow(i + 2, reason)


@dataclass(frozen=True, eq=False)
class Window:
    source: BarSeries
    start_index: int
    length: int

    @property
    def stop(self) -> int:
        return self.start_index + self.length

    @property
    def start_timestamp(self) -> int:
        return int(self.source.timestamps[self.start_index])

    def matrix(self) -> np.ndarray:
        return self.source.matrix(self.start_index, self.stop)

    def column(self, name: str) -> np.ndarray:
        name = _COLUMN_NAMES.get(name, name)
        return getattr(self.source, name)[self.start_index:self.stop]


_COLUMN_NAMES = {"O": "open", "H": "high", "L": "low", "C": "close", "V": "volume"}


@dataclass(frozen=True)
class ColumnSpec:
    """Maps the canonical fields onto CSV header names."""

    timestamp: str = "timestamp"
    open: str = "open"
    high: str = "high"
    low: str = "low"
    close: str = "close"
    volume: str = "volume"

    def names(self) -> list[str]:
        return [self.timestamp, self.open, self.high, self.low, self.close, self.volume]


def parse_timestamp(text: str) -> tuple[int, str]:
    """Parse an epoch-minute integer or an ISO-8601 minute timestamp."""
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text), "epoch"
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    if dt.second or dt.microsecond:
        raise ValueError("timestamp below minute resolution")
    return int((dt - _EPOCH).total_seconds() // 60), "iso"


def format_timestamp(minutes: int, fmt: str = "iso") -> str:
    if fmt == "epoch":
        return str(int(minutes))
    dt = datetime.fromtimestamp(int(minutes) * 60, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M")


def format_number(x: float) -> str:
    """Canonical float text: at most 6 decimals, no trailing zeros."""
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def load_csv(path: str | Path, spec: ColumnSpec | None = None, symbol: str | None = None) -> BarSeries:
    spec = spec or ColumnSpec()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path} is empty")
        header = [h.strip() for h in header]
        missing = [n for n in spec.names() if n not in header]
        if missing:
            raise MalformedRow(1, f"header missing columns {missing}")
        idx = [header.index(n) for n in spec.names()]
        cols: list[list] = [[] for _ in range(6)]
        fmt = None
        prev_ts = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                ts, row_fmt = parse_timestamp(row[idx[0]])
                vals = [float(row[i]) for i in idx[1:]]
            except (ValueError, IndexError) as exc:
                raise MalformedRow(lineno, str(exc)) from None
            fmt = fmt or row_fmt
            bar = OhlcvBar(ts, *vals)
            reason = bar.check()
            if reason:
                raise MalformedRow(lineno, reason)
            if prev_ts is not None and ts <= prev_ts:
                raise NonMonotonicTimestamp(lineno)
            prev_ts = ts
            cols[0].append(ts)
            for k, v in enumerate(vals, start=1):
                cols[k].append(v)
    if not cols[0]:
        raise EmptyFile(f"{path} has no data rows")
    return BarSeries(*[np.array(c) for c in cols], symbol=symbol or path.stem,
                     timestamp_format=fmt or "epoch")


def write_csv(series: BarSeries, path: str | Path, timestamp_format: str | None = None) -> None:
    fmt = timestamp_format or series.timestamp_format
    lines = ["timestamp,open,high,low,close,volume"]
    for i in range(len(series)):
        lines.append(",".join([
            format_timestamp(series.timestamps[i], fmt),
            format_number(series.open[i]),
            format_number(series.high[i]),
            format_number(series.low[i]),
            format_number(series.close[i]),
            format_number(series.volume[i]),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def check_window_length(length: int) -> None:
    if not MIN_WINDOW <= length <= MAX_WINDOW:
        raise ValidationError(f"window length {length} outside [{MIN_WINDOW}, {MAX_WINDOW}]")


def window_starts(series: BarSeries, length: int, step: int = 1) -> np.ndarray:
    """Start indices of all gap-free windows, in order."""
    check_window_length(length)
    if step < 1:
        raise ValidationError("step must be >= 1")
    n = len(series)
    if length > n:
        raise LengthExceedsSeries(f"window length {length} exceeds series of {n} bars")
    starts = np.arange(0, n - length + 1, step)
    gaps = series.gap_after.astype(np.int64)
    if gaps.any():
        # number of gaps inside [s, s+length-1) must be zero
        csum = np.concatenate([[0], np.cumsum(gaps)])
        starts = starts[(csum[starts + length - 1] - csum[starts]) == 0]
    return starts


def sliding_windows(series: BarSeries, length: int, step: int = 1) -> list[Window]:
    return [Window(series, int(s), length) for s in window_starts(series, length, step)]


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full_like(values, 0.5, dtype=np.float64)
    return (values - lo) / (hi - lo)


def normalize_matrix(m: np.ndarray, scheme: str = "joint") -> np.ndarray:
    """Min-max scale a 5 x L (or 4 x L price-only) matrix into [0, 1].

    ``joint`` shares one min/max across the O,H,L,C rows so candle geometry is
    kept; ``per_channel`` scales every row on its own. Volume is always scaled
    independently. Constant inputs map to 0.5.
    """
    m = np.asarray(m, dtype=np.float64)
    out = np.empty_like(m)
    price = min(4, m.shape[0])
    if scheme == "joint":
        out[:price] = _minmax(m[:price])
    elif scheme == "per_channel":
        for r in range(price):
            out[r] = _minmax(m[r])
    else:
        raise ValidationError(f"unknown normalization scheme {scheme!r}")
    for r in range(price, m.shape[0]):
        out[r] = _minmax(m[r])
    return out


def normalize(window: Window, scheme: str = "joint") -> np.ndarray:
    return normalize_matrix(window.matrix(), scheme)


def parse_channels(channels: str | Iterable[str]) -> list[str]:
    if isinstance(channels, str):
        channels = [c for c in channels.replace(",", "").upper() if not c.isspace()]
    chans = set(c.upper() for c in channels)
    unknown = chans - set(CHANNELS)
    if unknown:
        raise ValidationError(f"unknown channels {sorted(unknown)}")
    if not chans:
        raise EmptyChannelSet("at least one channel is required")
    return [c for c in CHANNELS if c in chans]


def channel_rows(channels: str | Iterable[str]) -> list[int]:
    return [CHANNELS.index(c) for c in parse_channels(channels)]


def select_channels(normalized: np.ndarray, channels: str | Iterable[str]) -> np.ndarray:
    """Rows of ``normalized`` for ``channels``, always in O,H,L,C,V order."""
    rows = channel_rows(channels)
    if max(rows) >= normalized.shape[0]:
        raise ValidationError("requested channel not present in matrix")
    return normalized[rows]


def point_biserial(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def channel_label_correlation(series: BarSeries, labels: Sequence[bool], windows: Sequence[Window],
                              scheme: str = "joint") -> dict[str, float]:
    """Point-biserial correlation of each channel's window mean with the label."""
    labels = np.asarray(labels, dtype=bool)
    if len(labels) != len(windows):
        raise ValidationError(f"{len(labels)} labels for {len(windows)} windows")
    if labels.all() or not labels.any():
        raise DegenerateLabels("labels are all identical")
    means = np.array([normalize(w, scheme).mean(axis=1) for w in windows])
    return {ch: point_biserial(means[:, k], labels) for k, ch in enumerate(CHANNELS)}


def iter_window_matrices(series: BarSeries, length: int, step: int = 1) -> Iterator[tuple[int, np.ndarray]]:
    for s in window_starts(series, length, step):
        yield int(s), series.matrix(int(s), int(s) + length)
