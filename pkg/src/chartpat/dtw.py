"""Dynamic time warping distance and human-picked template matching as a non-learning baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySequence, ValidationError
from .market_data import BarSeries, Window, format_timestamp, window_starts


def _band_ok(i: int, j: int, n: int, m: int, band: int | None) -> bool:
    if band is None:
        return True
    # Sakoe-Chiba band around the stretched diagonal
    return abs(i * (m - 1) - j * (n - 1)) <= band * max(n - 1, m - 1, 1)


def dtw_distance(a: Sequence[float], b: Sequence[float], band: int | None = None) -> float:
    """Classic DTW: squared pointwise cost, steps (1,0), (0,1), (1,1)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySequence("dtw needs two non-empty sequences")
    if band is not None and band < 0:
        raise ValidationError("band must be >= 0")
    n, m = len(a), len(b)
    cost = (a[:, None] - b[None, :]) ** 2
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = D[i], D[i - 1]
        for j in range(1, m + 1):
            if not _band_ok(i - 1, j - 1, n, m, band):
                continue
            row[j] = cost[i - 1, j - 1] + min(prev[j], row[j - 1], prev[j - 1])
    return float(D[n, m])


def dtw_distance_many(rows: np.ndarray, b: Sequence[float]) -> np.ndarray:
    """DTW of every row of ``rows`` (k x n) against ``b``, vectorized over rows."""
    rows = np.asarray(rows, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    if rows.ndim != 2 or rows.shape[1] == 0 or b.size == 0:
        raise EmptySequence("dtw needs non-empty sequences")
    k, n = rows.shape
    m = len(b)
    prev = np.full((k, m + 1), np.inf)
    prev[:, 0] = 0.0
    for i in range(n):
        cost = (rows[:, i:i + 1] - b[None, :]) ** 2
        cur = np.full((k, m + 1), np.inf)
        for j in range(1, m + 1):
            best = np.minimum(np.minimum(prev[:, j], cur[:, j - 1]), prev[:, j - 1])
            cur[:, j] = cost[:, j - 1] + best
        prev = cur
    return prev[:, m].copy()


@dataclass(frozen=True)
class Template:
    name: str
    values: tuple[float, ...]
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or len(v) < 2:
            raise ValidationError("a template needs at least 2 values")
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
            raise ValidationError("template values must lie in [0, 1]")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values)

    def to_json(self) -> dict:
        return {"name": self.name, "values": list(self.values), "source": self.source}

    @classmethod
    def from_json(cls, d: dict) -> "Template":
        return cls(str(d["name"]), tuple(d["values"]), str(d.get("source", "")))


def save_template(t: Template, path: str | Path) -> None:
    Path(path).write_text(json.dumps(t.to_json(), sort_keys=True) + "\n")


def load_template(path: str | Path) -> Template:
    return Template.from_json(json.loads(Path(path).read_text()))


def unit_close(close: np.ndarray) -> np.ndarray:
    c = np.asarray(close, dtype=np.float64)
    lo, hi = c.min(), c.max()
    if hi - lo <= 0:
        return np.full_like(c, 0.5)
    return (c - lo) / (hi - lo)


def template_from_window(window: Window, name: str = "template") -> Template:
    src = f"{window.source.symbol}@{format_timestamp(window.start_timestamp)}+{window.length}"
    return Template(name, tuple(unit_close(window.column("C"))), src)


@dataclass(frozen=True, eq=False)
class DtwMatch:
    window: Window
    template: str
    distance: float

    @property
    def span(self) -> tuple[int, int]:
        return self.window.start_index, self.window.stop - 1

    def to_json(self) -> dict:
        series = self.window.source
        ts = series.timestamps
        lo, hi = self.span
        return {
            "symbol": series.symbol,
            "kind": f"dtw:{self.template}",
            "window_start": format_timestamp(ts[lo]),
            "window_length": self.window.length,
            "window_start_index": lo,
            "anchors": {"start": format_timestamp(ts[lo]), "end": format_timestamp(ts[hi])},
            "anchor_index": {"start": lo, "end": hi},
            "distance": self.distance,
        }


def merge_dtw(matches: Iterable[DtwMatch]) -> list[DtwMatch]:
    """Chains of overlapping windows collapse to their closest member (earliest on ties)."""
    out: list[DtwMatch] = []
    end = None
    for m in sorted(matches, key=lambda m: m.span[0]):
        lo, hi = m.span
        if out and lo <= end:
            if m.distance < out[-1].distance:
                out[-1] = m
            end = max(end, hi)
        else:
            out.append(m)
            end = hi
    return out


def match_template(series: BarSeries, template: Template, window_len: int | None = None,
                   threshold: float = 1.0, batch: int = 2048) -> list[DtwMatch]:
    """Windows whose normalized close is within ``threshold`` DTW cost of the template."""
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    window_len = window_len or len(template.values)
    starts = window_starts(series, window_len, 1)
    if len(starts) == 0:
        return []
    idx = starts[:, None] + np.arange(window_len)[None, :]
    found = []
    for k in range(0, len(starts), batch):
        block = series.close[idx[k:k + batch]]
        lo = block.min(axis=1, keepdims=True)
        rng = block.max(axis=1, keepdims=True) - lo
        flat = rng[:, 0] <= 0
        rng[flat] = 1.0
        unit = (block - lo) / rng
        unit[flat] = 0.5
        d = dtw_distance_many(unit, template.array)
        for s, dist in zip(starts[k:k + batch], d):
            if dist <= threshold:
                found.append(DtwMatch(Window(series, int(s), window_len), template.name, float(dist)))
    return merge_dtw(found)


def write_dtw_jsonl(matches: Iterable[DtwMatch], path: str | Path) -> None:
    with open(path, "w") as fh:
        for m in matches:
            fh.write(json.dumps(m.to_json(), sort_keys=True) + "\n")
