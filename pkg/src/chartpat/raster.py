"""Binary vignettes of normalized windows: line charts and candlestick charts.

Pixel (row, col) with row 0 at the top. A value v in [0, 1] lands on row
``round((1 - v) * (height - 1))`` with halves rounded up.
"""

from __future__ import annotations

import base64
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadDimensions, ValidationError
from .market_data import CHANNELS


class Style(str, enum.Enum):
    LINE = "line"
    CANDLESTICK = "candlestick"


DEFAULT_SIZE = (64, 64)
# 30 candles need width >= 90; 96 x 64 also keeps the CNN shape trace valid
DEFAULT_CANDLE_SIZE = (96, 64)


@dataclass(frozen=True, eq=False)
class Vignette:
    pixels: np.ndarray  # uint8 {0, 1}, shape (height, width)
    style: Style
    channel_rendered: str | None = None

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def lit_fraction(self) -> float:
        return float(self.pixels.mean())


def value_row(v: np.ndarray | float, height: int) -> np.ndarray:
    return np.floor((1.0 - np.asarray(v, dtype=np.float64)) * (height - 1) + 0.5).astype(np.int64)


def column_spans(length: int, width: int) -> list[tuple[int, int]]:
    """Per-bar [start, stop) columns: width // length each, remainder to the last bar."""
    w = width // length
    spans = [(k * w, (k + 1) * w) for k in range(length)]
    spans[-1] = (spans[-1][0], width)
    return spans


def draw_line(img: np.ndarray, r0: int, c0: int, r1: int, c1: int) -> None:
    """Integer line between two pixels, 8-connected.

    Minor-axis offsets are computed from absolute deltas so that mirroring the
    endpoints mirrors the pixels exactly.
    """
    dr, dc = r1 - r0, c1 - c0
    sr, sc = (1 if dr >= 0 else -1), (1 if dc >= 0 else -1)
    adr, adc = abs(dr), abs(dc)
    steps = max(adr, adc)
    if steps == 0:
        img[r0, c0] = 1
        return
    t = np.arange(steps + 1)
    if adr >= adc:
        rows = r0 + sr * t
        cols = c0 + sc * ((t * adc * 2 + steps) // (2 * steps))
    else:
        cols = c0 + sc * t
        rows = r0 + sr * ((t * adr * 2 + steps) // (2 * steps))
    img[rows, cols] = 1


def _check(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise ValidationError("non-finite values in window")


def render_line(window: np.ndarray, channel: str | int = "H", width: int = 64, height: int = 64) -> Vignette:
    """Polyline of one channel of a normalized [channels x length] matrix (or a 1-D row)."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        values, name = window, (channel if isinstance(channel, str) else None)
    else:
        row = CHANNELS.index(channel.upper()) if isinstance(channel, str) else int(channel)
        if window.shape[0] == 1:
            row = 0
        values, name = window[row], (channel if isinstance(channel, str) else CHANNELS[row])
    _check(values)
    length = len(values)
    if width < length or height < 2 or length < 1:
        raise BadDimensions(f"cannot draw {length} bars into {width}x{height}")
    img = np.zeros((height, width), dtype=np.uint8)
    rows = value_row(np.clip(values, 0.0, 1.0), height)
    spans = column_spans(length, width)
    for k, (c0, c1) in enumerate(spans):
        img[rows[k], c0:c1] = 1
        if k + 1 < length:
            draw_line(img, int(rows[k]), c1 - 1, int(rows[k + 1]), spans[k + 1][0])
    return Vignette(img, Style.LINE, name)


def render_candlestick(window: np.ndarray, width: int = 96, height: int = 64,
                       hollow_bodies: bool = False) -> Vignette:
    """Candles from the O,H,L,C rows of a normalized matrix.

    The last column of every bar's span is a gutter; the body fills the rest
    and the 1-px wick sits in the middle of the body columns.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] < 4:
        raise BadDimensions("candlesticks need O, H, L, C rows")
    ohlc = np.clip(window[:4], 0.0, 1.0)
    _check(ohlc)
    length = ohlc.shape[1]
    if width < 3 * length or height < 4:
        raise BadDimensions(f"cannot draw {length} candles into {width}x{height}")
    img = np.zeros((height, width), dtype=np.uint8)
    r_open, r_high, r_low, r_close = (value_row(ohlc[i], height) for i in range(4))
    for k, (c0, c1) in enumerate(column_spans(length, width)):
        body_stop = c1 - 1
        centre = c0 + (body_stop - c0 - 1) // 2
        img[r_high[k]:r_low[k] + 1, centre] = 1
        top, bottom = sorted((int(r_open[k]), int(r_close[k])))
        if hollow_bodies and bottom - top >= 2 and body_stop - c0 >= 3:
            img[top, c0:body_stop] = 1
            img[bottom, c0:body_stop] = 1
            img[top:bottom + 1, c0] = 1
            img[top:bottom + 1, body_stop - 1] = 1
        else:
            img[top:bottom + 1, c0:body_stop] = 1
    return Vignette(img, Style.CANDLESTICK)


def render(window: np.ndarray, style: Style | str = Style.LINE, channel: str = "H",
           width: int | None = None, height: int | None = None, hollow_bodies: bool = False) -> Vignette:
    style = Style(style)
    if style is Style.LINE:
        w, h = DEFAULT_SIZE
        return render_line(window, channel, width or w, height or h)
    w, h = DEFAULT_CANDLE_SIZE
    return render_candlestick(window, width or w, height or h, hollow_bodies)


def write_pgm(v: Vignette, path: str | Path) -> None:
    """Binary PGM (P5); lit pixels are black on white for readability."""
    header = f"P5\n{v.width} {v.height}\n255\n".encode("ascii")
    body = ((1 - v.pixels) * 255).astype(np.uint8).tobytes()
    Path(path).write_bytes(header + body)


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValidationError("not a binary PGM")
    w, h = map(int, parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
    return (img < 128).astype(np.uint8)


def pack_vignette(v: Vignette) -> dict:
    """Bit-packed rows for embedding in a JSONL record."""
    return {
        "style": v.style.value,
        "channel": v.channel_rendered,
        "shape": [v.height, v.width],
        "bits_b64": base64.b64encode(np.packbits(v.pixels, axis=1).tobytes()).decode("ascii"),
    }


def unpack_vignette(rec: dict) -> Vignette:
    h, w = rec["shape"]
    packed = np.frombuffer(base64.b64decode(rec["bits_b64"]), dtype=np.uint8).reshape(h, -1)
    pixels = np.unpackbits(packed, axis=1)[:, :w].astype(np.uint8)
    return Vignette(pixels, Style(rec["style"]), rec.get("channel"))
