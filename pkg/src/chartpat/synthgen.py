"""Seeded synthetic minute bars with ground-truth pattern injection.

Stands in for the proprietary intraday dataset: random walks supply the
background, and ``inject`` overwrites spans with noised ideal pattern shapes
whose geometry sits inside the detectors' default envelope.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import OverlapWithExistingInjection, SpanOutOfRange, ValidationError
from .market_data import BarSeries, parse_timestamp
from .patterns import PatternKind

# 2017-01-03T14:30 UTC, the first regular-session minute of 2017
DEFAULT_START = parse_timestamp("2017-01-03T14:30")[0]


def random_walk(n: int, seed: int, volatility: float = 0.001, start_price: float = 100.0,
                symbol: str = "SYNTH", start_timestamp: int = DEFAULT_START,
                session_minutes: int | None = None) -> BarSeries:
    """Geometric random walk on the close with consistent O/H/L wicks.

    With ``session_minutes`` set, consecutive sessions are separated by a jump
    to the same time on the following day, i.e. a marked gap.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if volatility <= 0:
        raise ValidationError("volatility must be > 0")
    rng = np.random.default_rng(seed)
    steps = rng.standard_normal(n)
    steps[0] = 0.0
    close = start_price * np.exp(np.cumsum(volatility * steps))
    open_ = np.concatenate([[start_price], close[:-1]])
    wick_hi = np.abs(rng.standard_normal(n)) * volatility * 0.5 * close
    wick_lo = np.abs(rng.standard_normal(n)) * volatility * 0.5 * close
    high = np.maximum(open_, close) + wick_hi
    low = np.minimum(open_, close) - wick_lo
    volume = rng.poisson(1000, n).astype(np.float64)
    ts = start_timestamp + np.arange(n, dtype=np.int64)
    if session_minutes:
        day = np.arange(n) // session_minutes
        ts = start_timestamp + day * 1440 + np.arange(n) % session_minutes
    return BarSeries(ts, open_, high, low, close, volume, symbol=symbol)


@dataclass(frozen=True)
class InjectionRecord:
    kind: PatternKind
    start: int
    length: int
    scale: float
    params: dict = field(default_factory=dict)

    @property
    def stop(self) -> int:
        return self.start + self.length

    def to_json(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "InjectionRecord":
        return cls(PatternKind.parse(d["kind"]), int(d["start"]), int(d["length"]),
                   float(d["scale"]), dict(d.get("params", {})))


def sample_geometry(kind: PatternKind, rng: np.random.Generator) -> dict:
    """Geometry strictly inside the default detector envelope for window 30."""
    kind = PatternKind.parse(kind)
    if kind is PatternKind.BEARISH_FLAG:
        pole = int(rng.integers(6, 9))
        return {
            "pole_len": pole,
            "flag_len": int(rng.integers(7, 11)),
            "pole2_len": pole + int(rng.integers(-1, 2)),
            "retrace": float(rng.uniform(0.15, 0.35)),
            "pole2_ratio": float(rng.uniform(0.9, 1.1)),
        }
    return {
        "legs": [int(rng.integers(5, 8)), int(rng.integers(5, 8)), int(rng.integers(5, 8)), int(rng.integers(6, 9))],
        "peak": float(rng.uniform(0.45, 0.7)),
        "trough2": float(rng.uniform(-0.02, 0.02)),
        "overshoot": float(rng.uniform(0.15, 0.3)),
    }


def default_geometry(kind: PatternKind) -> dict:
    if PatternKind.parse(kind) is PatternKind.BEARISH_FLAG:
        return {"pole_len": 8, "flag_len": 9, "pole2_len": 8, "retrace": 0.25, "pole2_ratio": 1.0}
    return {"legs": [6, 6, 6, 7], "peak": 0.55, "trough2": 0.0, "overshoot": 0.2}


def _piecewise(points: list[tuple[int, float]]) -> np.ndarray:
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return np.interp(np.arange(xs[-1] + 1), xs, ys)


def pattern_shape(kind: PatternKind, geometry: dict) -> tuple[np.ndarray, list[int]]:
    """Ideal unit-amplitude path and its anchor offsets.

    Flags start at 0 and fall by 1 over the first pole; double bottoms start
    at 1 with the first trough at 0; double tops are the mirrored bottom.
    """
    kind = PatternKind.parse(kind)
    g = geometry
    if kind is PatternKind.BEARISH_FLAG:
        a = 0
        b = a + g["pole_len"]
        d = b + g["flag_len"]
        e = d + g["pole2_len"]
        top = -1.0 + g["retrace"]
        path = _piecewise([(a, 0.0), (b, -1.0), (d, top), (e, top - g["pole2_ratio"])])
        return path, [a, b, d, e]
    l1, l2, l3, l4 = g["legs"]
    x1, p, x2, end = l1, l1 + l2, l1 + l2 + l3, l1 + l2 + l3 + l4
    path = _piecewise([(0, 1.0), (x1, 0.0), (p, g["peak"]), (x2, g["trough2"]), (end, g["peak"] + g["overshoot"])])
    if kind is PatternKind.DOUBLE_TOP:
        path = -path
    return path, [0, x1, p, x2, end]


def inject(series: BarSeries, kind: PatternKind, at: int, scale: float = 0.02,
           geometry: dict | None = None, seed: int = 0, noise: float = 0.1,
           existing: list[InjectionRecord] | tuple = ()) -> tuple[BarSeries, InjectionRecord]:
    """Overwrite bars ``at .. at+len-1`` with a noised pattern of amplitude ``scale`` x price.

    Prices after the span are rescaled so the series continues from the
    pattern's last close without a jump.
    """
    kind = PatternKind.parse(kind)
    geometry = dict(geometry or default_geometry(kind))
    shape, anchors = pattern_shape(kind, geometry)
    length = len(shape)
    n = len(series)
    if at < 0 or at + length > n:
        raise SpanOutOfRange(f"span [{at}, {at + length}) outside series of {n} bars")
    if series.gap_after[at:at + length - 1].any():
        raise SpanOutOfRange("span crosses a session gap")
    for rec in existing:
        if at < rec.stop and rec.start < at + length:
            raise OverlapWithExistingInjection(f"span overlaps injection at {rec.start}")
    rng = np.random.default_rng(seed)
    base = float(series.close[at])
    amp = scale * base
    extent = float(shape.max() - shape.min())
    # noise fades out next to anchors so the anchor geometry stays exact
    dist = np.min(np.abs(np.arange(length)[:, None] - np.array(anchors)[None, :]), axis=1)
    taper = np.minimum(1.0, dist / 3.0)
    jitter = rng.uniform(-0.5, 0.5, length) * noise * extent * taper
    start_offset = shape[0]
    close_span = base + amp * (shape - start_offset + jitter)

    o, h, lo, c = (series.open.copy(), series.high.copy(), series.low.copy(), series.close.copy())
    stop = at + length
    if stop < n:
        factor = close_span[-1] / c[stop - 1]
        o[stop:] *= factor
        h[stop:] *= factor
        lo[stop:] *= factor
        c[stop:] *= factor
    c[at:stop] = close_span
    o[at + 1:stop] = close_span[:-1]
    wick = np.abs(rng.standard_normal((2, length))) * 0.01 * amp * extent
    h[at:stop] = np.maximum(o[at:stop], c[at:stop]) + wick[0]
    lo[at:stop] = np.minimum(o[at:stop], c[at:stop]) - wick[1]
    if stop < n:
        o[stop] = c[stop - 1]
        h[stop] = max(h[stop], o[stop], c[stop])
        lo[stop] = min(lo[stop], o[stop], c[stop])
    if np.any(lo <= 0):
        raise ValidationError("injection produced non-positive prices; reduce scale")
    out = series.replace(open=o, high=h, low=lo, close=c)
    record = InjectionRecord(kind, at, length, scale, {**geometry, "noise": noise, "seed": seed})
    return out, record


def inject_many(series: BarSeries, kind: PatternKind, count: int, seed: int, spacing: int | None = None,
                scale: float = 0.02, noise: float = 0.1, sample: bool = True,
                margin: int = 40) -> tuple[BarSeries, list[InjectionRecord]]:
    """Evenly spaced, non-overlapping injections with seeded jitter and geometry."""
    kind = PatternKind.parse(kind)
    rng = np.random.default_rng(seed)
    n = len(series)
    spacing = spacing or (n - 2 * margin) // max(count, 1)
    # gaps[i] = session breaks among bars 0..i-1, for O(1) span checks
    gaps = np.concatenate([[0], np.cumsum(series.gap_after)])
    records: list[InjectionRecord] = []
    for k in range(count):
        geometry = sample_geometry(kind, rng) if sample else default_geometry(kind)
        length = len(pattern_shape(kind, geometry)[0])
        slot = margin + k * spacing
        room = max(0, spacing - length - margin)
        at = slot + int(rng.integers(0, room + 1))
        # slide forward past a session break instead of straddling it
        last = slot + max(room, spacing - length)
        while at <= last and gaps[min(at + length - 1, n - 1)] - gaps[min(at, n - 1)] > 0:
            at += 1
        if at > last or at + length + margin > n:
            raise SpanOutOfRange(f"{count} injections of spacing {spacing} do not fit in {n} bars")
        series, rec = inject(series, kind, at, scale=scale, geometry=geometry,
                             seed=int(rng.integers(2**31)), noise=noise, existing=records)
        records.append(rec)
    return series, records


def write_records(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def read_records(path) -> list[InjectionRecord]:
    with open(path) as fh:
        return [InjectionRecord.from_json(json.loads(line)) for line in fh if line.strip()]
