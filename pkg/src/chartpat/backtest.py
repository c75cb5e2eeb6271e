"""Trading simulation of the double top / double bottom setup with the pullback as stop."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingCompletionAnchor, ValidationError
from .market_data import BarSeries
from .patterns import PatternKind, PatternMatch


class Outcome(str, enum.Enum):
    TARGET_HIT = "TargetHit"
    STOP_HIT = "StopHit"
    TIMED_OUT = "TimedOut"


@dataclass(frozen=True)
class StrategyParams:
    target_multiple: float = 2.0
    fee: float = 0.0  # per trade, price units
    max_holding: int = 60  # bars
    # "stop": target distance measured from the entry to the pullback (stop) level;
    # "extremum": measured from the entry to the pattern's second extremum
    target_basis: str = "stop"

    def __post_init__(self):
        if not self.target_multiple > 0:
            raise ValidationError("target_multiple must be > 0")
        if self.fee < 0:
            raise ValidationError("fee must be >= 0")
        if self.max_holding < 1:
            raise ValidationError("max_holding must be >= 1")
        if self.target_basis not in ("stop", "extremum"):
            raise ValidationError("target_basis must be 'stop' or 'extremum'")


@dataclass(frozen=True)
class Trade:
    direction: int  # +1 long, -1 short
    entry_index: int
    entry_price: float
    exit_index: int
    exit_price: float
    stop: float
    target: float
    outcome: Outcome
    pnl: float

    def to_row(self) -> dict:
        return {"direction": "long" if self.direction > 0 else "short", "entry_index": self.entry_index,
                "entry_price": self.entry_price, "exit_index": self.exit_index, "exit_price": self.exit_price,
                "stop": self.stop, "target": self.target, "outcome": self.outcome.value, "pnl": self.pnl}


@dataclass
class Summary:
    trades: int = 0
    wins: int = 0
    total_pnl: float = 0.0
    outcomes: dict = field(default_factory=dict)
    pnls: list = field(default_factory=list)

    @property
    def win_rate(self) -> float:
        return self.wins / self.trades if self.trades else 0.0

    def to_json(self) -> dict:
        p = np.asarray(self.pnls, dtype=np.float64)
        dist = {}
        if p.size:
            dist = {"min": float(p.min()), "median": float(np.median(p)), "max": float(p.max()),
                    "mean": float(p.mean())}
        return {"trades": self.trades, "wins": self.wins, "win_rate": self.win_rate,
                "total_pnl": self.total_pnl, "outcomes": self.outcomes, "pnl_distribution": dist}


def _setup(series: BarSeries, m: PatternMatch, params: StrategyParams):
    if m.kind is PatternKind.DOUBLE_BOTTOM:
        direction = 1
    elif m.kind is PatternKind.DOUBLE_TOP:
        direction = -1
    else:
        raise ValidationError(f"no strategy for {m.kind.value}")
    anchors = m.absolute_anchors()
    entry = anchors.get("completion")
    if entry is None or m.pullback_value is None:
        raise MissingCompletionAnchor("match has no completion bar or pullback value")
    entry_price = float(series.close[entry])
    stop = float(m.pullback_value)
    if params.target_basis == "stop":
        dist = abs(entry_price - stop)
    else:
        ext = anchors["extremum2"]
        ext_price = series.low[ext] if direction > 0 else series.high[ext]
        dist = abs(entry_price - float(ext_price))
    target = entry_price + direction * params.target_multiple * dist
    return direction, entry, entry_price, stop, target


def simulate(series: BarSeries, matches: Sequence[PatternMatch],
             params: StrategyParams = StrategyParams()) -> tuple[list[Trade], Summary]:
    """First-touch exits on bar high/low; stop wins when both levels sit inside one bar.

    Positions run one at a time: a setup that completes while a trade is open is skipped.
    A trade still open at ``max_holding`` bars, at a session gap, or at the
    series end is closed at that bar's close as TimedOut.
    """
    setups = sorted((_setup(series, m, params) for m in matches), key=lambda s: s[1])
    trades: list[Trade] = []
    busy_until = -1
    n = len(series)
    for direction, entry, entry_price, stop, target in setups:
        if entry <= busy_until or entry >= n - 1 or bool(series.gap_after[entry]):
            continue
        exit_i, exit_p, outcome = None, None, None
        for t in range(entry + 1, min(n, entry + 1 + params.max_holding)):
            hi, lo = series.high[t], series.low[t]
            hit_stop = lo <= stop if direction > 0 else hi >= stop
            hit_target = hi >= target if direction > 0 else lo <= target
            if hit_stop:
                exit_i, exit_p, outcome = t, stop, Outcome.STOP_HIT
            elif hit_target:
                exit_i, exit_p, outcome = t, target, Outcome.TARGET_HIT
            elif t == entry + params.max_holding or t == n - 1 or bool(series.gap_after[t]):
                exit_i, exit_p, outcome = t, float(series.close[t]), Outcome.TIMED_OUT
            if outcome is not None:
                break
        pnl = direction * (exit_p - entry_price) - params.fee
        trades.append(Trade(direction, entry, entry_price, exit_i, float(exit_p), stop, target, outcome, pnl))
        busy_until = exit_i
    return trades, summarize(trades)


def summarize(trades: Sequence[Trade]) -> Summary:
    s = Summary()
    for t in trades:
        s.trades += 1
        s.wins += t.pnl > 0
        s.total_pnl += t.pnl
        s.outcomes[t.outcome.value] = s.outcomes.get(t.outcome.value, 0) + 1
        s.pnls.append(t.pnl)
    return s


TRADE_FIELDS = ("direction", "entry_index", "entry_price", "exit_index", "exit_price", "stop", "target",
                "outcome", "pnl")


def write_trades_csv(trades: Sequence[Trade], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRADE_FIELDS)
        w.writeheader()
        for t in trades:
            w.writerow(t.to_row())


def write_summary(summary: Summary, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary.to_json(), sort_keys=True, indent=2) + "\n")
