"""Hard-coded recognizers for the bearish flag and double top / double bottom.

All thresholds are expressed relative to the window's own price range, so the
detectors are invariant to positive affine rescaling of prices. These detectors
are the labeling oracle for every learning experiment.

Anchor indices on a ``PatternMatch`` are relative to its window; use
``absolute_anchors`` for series indices.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .market_data import BarSeries, Window, format_timestamp, window_starts


class PatternKind(str, enum.Enum):
    BEARISH_FLAG = "bearish-flag"
    DOUBLE_TOP = "double-top"
    DOUBLE_BOTTOM = "double-bottom"

    @classmethod
    def parse(cls, text: "str | PatternKind") -> "PatternKind":
        if isinstance(text, PatternKind):
            return text
        key = text.strip().lower().replace("_", "-")
        aliases = {"bearishflag": "bearish-flag", "doubletop": "double-top", "doublebottom": "double-bottom"}
        key = aliases.get(key.replace("-", ""), key)
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown pattern kind {text!r}") from None


FLAG_ANCHORS = ("pole1_start", "pole1_end", "flag_end", "pole2_end")
DOUBLE_ANCHORS = ("extremum1", "pullback", "extremum2", "completion")


@dataclass(frozen=True)
class FlagParams:
    """Bounds for the pole / flag / pole decomposition.

    Drops, rises and deviations are fractions of the window's close range;
    slopes are that fraction per bar.
    """

    min_pole_drop: float = 0.4
    max_flag_retrace: float = 0.5
    flag_slope_range: tuple[float, float] = (0.0, 0.05)
    pole_length_ratio_tol: float = 0.3
    max_pole_len: int = 12
    min_flag_len: int = 6
    max_pole_deviation: float = 0.1
    max_flag_deviation: float = 0.07
    # pole-1 start must be the highest close of the window up to pole-2 end,
    # and pole-2 end the lowest close from pole-1 start
    require_extrema: bool = True

    def __post_init__(self):
        lo, hi = self.flag_slope_range
        if not 0 < self.min_pole_drop <= 1:
            raise ValidationError("min_pole_drop must be in (0, 1]")
        if not 0 <= self.max_flag_retrace < 1:
            raise ValidationError("max_flag_retrace must be in [0, 1)")
        if lo > hi:
            raise ValidationError("flag_slope_range must satisfy lo <= hi")
        if not 0 < self.pole_length_ratio_tol <= 1:
            raise ValidationError("pole_length_ratio_tol must be in (0, 1]")
        if self.max_pole_len < 1 or self.min_flag_len < 1:
            raise ValidationError("max_pole_len and min_flag_len must be >= 1")
        if not (0 < self.max_pole_deviation <= 1 and 0 < self.max_flag_deviation <= 1):
            raise ValidationError("deviation tolerances must be in (0, 1]")


@dataclass(frozen=True)
class DoubleParams:
    extrema_equality_tol: float = 0.05
    min_pullback_depth: float = 0.1
    completion_required: bool = True
    min_separation: int = 5

    def __post_init__(self):
        if not 0 < self.extrema_equality_tol <= 1:
            raise ValidationError("extrema_equality_tol must be in (0, 1]")
        if not 0 < self.min_pullback_depth <= 1:
            raise ValidationError("min_pullback_depth must be in (0, 1]")
        if self.min_separation < 1:
            raise ValidationError("min_separation must be >= 1")


def default_params(kind: PatternKind):
    return FlagParams() if PatternKind.parse(kind) is PatternKind.BEARISH_FLAG else DoubleParams()


@dataclass(frozen=True, eq=False)
class PatternMatch:
    kind: PatternKind
    window: Window
    anchors: dict[str, int | None]
    pullback_value: float | None = None
    # price-unit size of the defining move: pole-1 drop, or pullback depth
    primary_move: float = 0.0

    def anchor_indices(self) -> list[int]:
        return [v for v in self.anchors.values() if v is not None]

    def absolute_anchors(self) -> dict[str, int | None]:
        s = self.window.start_index
        return {k: (None if v is None else s + v) for k, v in self.anchors.items()}

    @property
    def span(self) -> tuple[int, int]:
        """Inclusive absolute [first, last] anchor indices."""
        idx = self.anchor_indices()
        s = self.window.start_index
        return s + min(idx), s + max(idx)

    def to_json(self) -> dict:
        series = self.window.source
        fmt = "iso"
        ts = series.timestamps
        abs_anchors = self.absolute_anchors()
        return {
            "symbol": series.symbol,
            "kind": self.kind.value,
            "window_start": format_timestamp(ts[self.window.start_index], fmt),
            "window_length": self.window.length,
            "window_start_index": self.window.start_index,
            "anchors": {k: (None if v is None else format_timestamp(ts[v], fmt)) for k, v in abs_anchors.items()},
            "anchor_index": abs_anchors,
            "pullback_value": self.pullback_value,
            "primary_move": self.primary_move,
        }


# --------------------------------------------------------------------------
# bearish flag


def segment_deviation(u: np.ndarray) -> np.ndarray:
    """dev[i, j] = max |u[t] - chord(i, j)(t)| for i <= t <= j; inf where j <= i."""
    n = len(u)
    dev = np.full((n, n), np.inf)
    for span in range(1, n):
        seg = sliding_window_view(u, span + 1)
        frac = np.arange(span + 1) / span
        chord = seg[:, :1] + (seg[:, -1:] - seg[:, :1]) * frac
        rows = np.arange(n - span)
        dev[rows, rows + span] = np.abs(seg - chord).max(axis=1)
    return dev


def unit_range(values: np.ndarray) -> np.ndarray | None:
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return None
    return (values - lo) / (hi - lo)


def chord_deviation(u: np.ndarray, i: int, j: int) -> float:
    """max |u[t] - chord(i, j)(t)| over i <= t <= j."""
    span = j - i
    seg = u[i:j + 1]
    chord = seg[0] + (seg[-1] - seg[0]) * (np.arange(span + 1) / span)
    return float(np.abs(seg - chord).max())


def find_bearish_flag(close: np.ndarray, params: FlagParams = FlagParams()):
    """Best (pole1_start, pole1_end, flag_end, pole2_end) in a close array, or None.

    Ranking: largest pole-1 drop, then largest pole-2 drop, then earliest anchors.
    Chord deviations are evaluated lazily; they dominate the cost otherwise.
    """
    u = unit_range(np.asarray(close, dtype=np.float64))
    if u is None:
        return None
    n = len(u)
    p = params
    slope_lo, slope_hi = p.flag_slope_range
    drop = u[:, None] - u[None, :]
    idx = np.arange(n)
    span = idx[None, :] - idx[:, None]
    pole = (span >= 1) & (span <= p.max_pole_len) & (drop > 0)
    pole1 = pole & (drop >= p.min_pole_drop)
    prefix_max = np.maximum.accumulate(u)
    if p.require_extrema:
        pole1 &= u[:, None] >= prefix_max[None, :]
    if not pole1.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = -drop / span
    flag = (span >= p.min_flag_len) & (-drop >= 0) & (slope >= slope_lo) & (slope <= slope_hi)
    if not flag.any():
        return None
    seg_min = np.minimum.accumulate(np.where(span >= 0, u[None, :], np.inf), axis=1)

    dev_cache: dict[tuple[int, int], float] = {}

    def dev(i, j):
        key = (i, j)
        if key not in dev_cache:
            dev_cache[key] = chord_deviation(u, i, j)
        return dev_cache[key]

    a_idx, b_idx = np.nonzero(pole1)
    drops1 = drop[a_idx, b_idx]
    order = np.lexsort((b_idx, a_idx, -drops1))
    best = None
    best_key = None
    for k in order:
        a, b = int(a_idx[k]), int(b_idx[k])
        d1 = drops1[k]
        if best_key is not None and d1 < best_key[0]:
            break
        d_cands = np.nonzero(flag[b] & (-drop[b] <= p.max_flag_retrace * d1))[0]
        if len(d_cands) == 0 or dev(a, b) > p.max_pole_deviation:
            continue
        len1 = b - a
        for d in d_cands:
            d = int(d)
            e_cands = np.nonzero(pole[d])[0]
            if len(e_cands) == 0:
                continue
            d2 = drop[d, e_cands]
            ok = (np.abs(d2 - d1) <= p.pole_length_ratio_tol * d1) & \
                 (np.abs((e_cands - d) - len1) <= p.pole_length_ratio_tol * len1)
            if p.require_extrema:
                ok &= (u[a] >= prefix_max[e_cands]) & (u[e_cands] <= seg_min[a, e_cands])
            if not ok.any() or dev(b, d) > p.max_flag_deviation:
                continue
            for e, dd in zip(e_cands[ok], d2[ok]):
                e = int(e)
                key = (d1, dd, -a, -b, -d, -e)
                if best_key is not None and key <= best_key:
                    continue
                if dev(d, e) <= p.max_pole_deviation:
                    best_key = key
                    best = (a, b, d, e)
    return best


def detect_bearish_flag(window: Window, params: FlagParams = FlagParams()) -> PatternMatch | None:
    close = window.column("close")
    found = find_bearish_flag(close, params)
    if found is None:
        return None
    a, b, _, _ = found
    return PatternMatch(PatternKind.BEARISH_FLAG, window, dict(zip(FLAG_ANCHORS, found)),
                        primary_move=float(close[a] - close[b]))


# --------------------------------------------------------------------------
# double top / bottom


def _first_crossing(close: np.ndarray, start: int, level: float) -> int | None:
    above = np.nonzero(close[start:] > level)[0]
    return None if len(above) == 0 else start + int(above[0])


def find_double_bottom(low: np.ndarray, high: np.ndarray, close: np.ndarray,
                       params: DoubleParams = DoubleParams()):
    """Best (extremum1, pullback, extremum2, completion) for a double bottom, or None.

    The first trough is the lowest low from the window start up to the pullback;
    the pullback is the first highest high strictly between the troughs; the
    second trough is the lowest low from the pullback to the completion bar (the
    first close above the pullback high) or to the window end when completion is
    optional and absent. Ranking: deepest pullback, then earliest anchors.
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    close = np.asarray(close, dtype=np.float64)
    n = len(low)
    rng = high.max() - low.min()
    if rng <= 0:
        return None
    p = params
    prefix_min = np.minimum.accumulate(low)
    best = None
    best_key = None
    for x1 in range(n):
        if low[x1] > prefix_min[x1]:
            continue
        run_max = -np.inf
        piv = -1
        min_since_x1 = np.inf  # min of low over (x1, x2)
        for x2 in range(x1 + 1, n):
            # extend the interior (x1, x2) with bar x2-1
            if x2 - 1 > x1:
                t = x2 - 1
                if high[t] > run_max:
                    run_max, piv = high[t], t
                min_since_x1 = min(min_since_x1, low[t])
            if x2 - x1 < p.min_separation or piv < 0:
                continue
            if high[x1] >= run_max or high[x2] > run_max:
                continue  # the pullback must be the first strict maximum on [x1, x2]
            # trough1 must stay the lowest low up to the pullback
            if low[piv] < low[x1] or low[x1 + 1:piv + 1].min() < low[x1]:
                continue
            c = _first_crossing(close, x2 + 1, run_max)
            if c is None and p.completion_required:
                continue
            end = n - 1 if c is None else c
            if low[piv:end + 1].min() < low[x2]:
                continue
            if abs(low[x1] - low[x2]) > p.extrema_equality_tol * rng:
                continue
            depth = run_max - max(low[x1], low[x2])
            if depth < p.min_pullback_depth * rng:
                continue
            key = (depth, -x1, -piv, -x2)
            if best_key is None or key > best_key:
                best_key = key
                best = (x1, piv, x2, c)
    return best


def find_double(kind: PatternKind, low, high, close, params: DoubleParams = DoubleParams()):
    kind = PatternKind.parse(kind)
    if kind is PatternKind.DOUBLE_BOTTOM:
        return find_double_bottom(low, high, close, params)
    if kind is PatternKind.DOUBLE_TOP:
        # a double top is a double bottom of the negated price path
        return find_double_bottom(-np.asarray(high, float), -np.asarray(low, float),
                                  -np.asarray(close, float), params)
    raise ValidationError(f"{kind} is not a double pattern")


def detect_double(window: Window, kind: PatternKind, params: DoubleParams = DoubleParams()) -> PatternMatch | None:
    kind = PatternKind.parse(kind)
    low, high, close = window.column("low"), window.column("high"), window.column("close")
    found = find_double(kind, low, high, close, params)
    if found is None:
        return None
    x1, piv, x2, _ = found
    if kind is PatternKind.DOUBLE_BOTTOM:
        pullback = float(high[piv])
        move = pullback - max(low[x1], low[x2])
    else:
        pullback = float(low[piv])
        move = min(high[x1], high[x2]) - pullback
    return PatternMatch(kind, window, dict(zip(DOUBLE_ANCHORS, found)),
                        pullback_value=pullback, primary_move=float(move))


def detect(window: Window, kind: PatternKind, params=None) -> PatternMatch | None:
    kind = PatternKind.parse(kind)
    params = params or default_params(kind)
    if kind is PatternKind.BEARISH_FLAG:
        return detect_bearish_flag(window, params)
    return detect_double(window, kind, params)


# --------------------------------------------------------------------------
# series scan


def merge_matches(matches: Iterable[PatternMatch]) -> list[PatternMatch]:
    """Collapse chains of overlapping spans into their largest-move member.

    Ties on ``primary_move`` go to the earlier span (then the earlier window).
    """
    ms = sorted(matches, key=lambda m: (m.span[0], m.window.start_index))
    out: list[PatternMatch] = []
    cluster_end = None
    for m in ms:
        lo, hi = m.span
        if out and lo <= cluster_end:
            keep = out[-1]
            if m.primary_move > keep.primary_move:
                out[-1] = m
            cluster_end = max(cluster_end, hi)
        else:
            out.append(m)
            cluster_end = hi
    return out


def scan_windows(series: BarSeries, kind: PatternKind, params, window_len: int,
                 starts: Sequence[int] | None = None) -> list[PatternMatch]:
    """Unmerged detector output for every gap-free window (step 1)."""
    kind = PatternKind.parse(kind)
    params = params or default_params(kind)
    if starts is None:
        starts = window_starts(series, window_len, 1)
    found = []
    for s in starts:
        m = detect(Window(series, int(s), window_len), kind, params)
        if m is not None:
            found.append(m)
    return found


def scan_series(series: BarSeries, kind: PatternKind, params=None, window_len: int = 30,
                jobs: int = 1) -> list[PatternMatch]:
    kind = PatternKind.parse(kind)
    params = params or default_params(kind)
    starts = window_starts(series, window_len, 1)
    if jobs > 1 and len(starts) > 1000:
        from concurrent.futures import ProcessPoolExecutor

        chunks = np.array_split(starts, jobs)
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_scan_chunk, [(series, kind, params, window_len, c) for c in chunks]))
        raw = [m for part in parts for m in part]
    else:
        raw = scan_windows(series, kind, params, window_len, starts)
    return merge_matches(raw)


def _scan_chunk(args):
    series, kind, params, window_len, starts = args
    return scan_windows(series, kind, params, window_len, starts)


def check_match(m: PatternMatch, params=None) -> list[str]:
    """Type-invariant violations of ``m`` (empty when valid)."""
    problems = []
    idx = m.anchor_indices()
    if any(b <= a for a, b in zip(idx, idx[1:])):
        problems.append("anchors not strictly increasing")
    if min(idx) < 0 or max(idx) >= m.window.length:
        problems.append("anchor outside window")
    w = m.window
    if m.kind is PatternKind.BEARISH_FLAG:
        c = w.column("close")
        an = m.anchors
        if not c[an["pole1_end"]] < c[an["pole1_start"]]:
            problems.append("pole 1 does not drop")
        if not c[an["pole2_end"]] < c[an["flag_end"]]:
            problems.append("pole 2 does not drop")
    else:
        params = params or DoubleParams()
        hi, lo = w.column("high"), w.column("low")
        rng = hi.max() - lo.min()
        an = m.anchors
        if m.kind is PatternKind.DOUBLE_BOTTOM:
            e1, e2, pb = lo[an["extremum1"]], lo[an["extremum2"]], hi[an["pullback"]]
            depth = pb - max(e1, e2)
        else:
            e1, e2, pb = hi[an["extremum1"]], hi[an["extremum2"]], lo[an["pullback"]]
            depth = min(e1, e2) - pb
        if abs(e1 - e2) > params.extrema_equality_tol * rng:
            problems.append("extrema not within equality tolerance")
        if depth < params.min_pullback_depth * rng:
            problems.append("pullback too shallow")
    return problems


def write_matches_jsonl(matches: Iterable[PatternMatch], path) -> None:
    with open(path, "w") as fh:
        for m in matches:
            fh.write(json.dumps(m.to_json(), sort_keys=True) + "\n")


def read_matches_jsonl(path, series: BarSeries) -> list[PatternMatch]:
    """Re-attach JSONL matches to ``series`` by absolute anchor index."""
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = PatternKind.parse(rec["kind"])
            absolute = rec["anchor_index"]
            start = min(v for v in absolute.values() if v is not None)
            length = rec.get("window_length", 30)
            wstart = max(0, min(start, len(series) - length))
            if "window_start_index" in rec:
                wstart = rec["window_start_index"]
            window = Window(series, wstart, length)
            anchors = {k: (None if v is None else v - wstart) for k, v in absolute.items()}
            out.append(PatternMatch(kind, window, anchors, rec.get("pullback_value"),
                                    rec.get("primary_move", 0.0)))
    return out
