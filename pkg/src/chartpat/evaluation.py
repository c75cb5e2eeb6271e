"""Confusion metrics against the detector labels, the FP/FN audit loop, and result tables."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import UnresolvedAudits, ValidationError
from .market_data import format_timestamp


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def fp_rate(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def fn_rate(self) -> float:
        return self.fn / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def fp_share(self) -> float:
        """False positives over all samples (the denominator used in the 1536-sample figure)."""
        return self.fp / self.total if self.total else 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d.update(recall=self.recall, fp_rate=self.fp_rate, fn_rate=self.fn_rate, accuracy=self.accuracy)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Metrics":
        return cls(int(d["tp"]), int(d["fp"]), int(d["fn"]), int(d["tn"]))


def metrics_from_predictions(labels, predicted) -> Metrics:
    y = np.asarray(labels, dtype=bool)
    p = np.asarray(predicted, dtype=bool)
    if y.shape != p.shape:
        raise ValidationError("labels and predictions differ in length")
    return Metrics(int(np.sum(y & p)), int(np.sum(~y & p)), int(np.sum(y & ~p)), int(np.sum(~y & ~p)))


def _probabilities(model, samples) -> np.ndarray:
    if callable(model) and not hasattr(model, "layers"):
        return np.asarray(model(samples), dtype=np.float64)
    from .models import predict_samples

    return predict_samples(model, samples)


def evaluate(model, samples: Sequence, threshold: float = 0.5) -> Metrics:
    """Confusion counts of ``model`` against the samples' oracle labels.

    ``model`` is a ModelState or any callable mapping samples to probabilities.
    """
    probs = _probabilities(model, samples)
    if len(probs) != len(samples):
        raise ValidationError("model returned the wrong number of probabilities")
    return metrics_from_predictions([s.label for s in samples], probs >= threshold)


class Resolution(str, enum.Enum):
    UNREVIEWED = "Unreviewed"
    CONFIRMED_ERROR = "ConfirmedError"
    RELABELED_POSITIVE = "RelabeledPositive"
    RELABELED_NEGATIVE = "RelabeledNegative"


@dataclass
class AuditItem:
    origin: tuple[str, int, int]
    probability: float
    model_label: bool
    oracle_label: bool
    resolution: Resolution = Resolution.UNREVIEWED
    vignette_path: str | None = None

    def resolve(self, resolution: Resolution | str) -> None:
        resolution = Resolution(resolution)
        if self.resolution is not Resolution.UNREVIEWED:
            raise ValidationError(f"audit item already resolved as {self.resolution.value}")
        if resolution is Resolution.UNREVIEWED:
            raise ValidationError("cannot resolve back to Unreviewed")
        self.resolution = resolution

    @property
    def kind(self) -> str:
        return "FP" if self.model_label and not self.oracle_label else "FN"

    def to_json(self) -> dict:
        symbol, ts, length = self.origin
        return {
            "origin": {"symbol": symbol, "start": format_timestamp(ts), "start_minute": ts, "length": length},
            "probability": self.probability,
            "model_label": self.model_label,
            "oracle_label": self.oracle_label,
            "error": self.kind,
            "resolution": self.resolution.value,
            "vignette_path": self.vignette_path,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AuditItem":
        o = d["origin"]
        return cls((o["symbol"], int(o["start_minute"]), int(o["length"])), float(d["probability"]),
                   bool(d["model_label"]), bool(d["oracle_label"]), Resolution(d.get("resolution", "Unreviewed")),
                   d.get("vignette_path"))


def export_audit(model, samples: Sequence, threshold: float = 0.5,
                 vignette_dir: str | Path | None = None) -> list[AuditItem]:
    """One item per disagreement with the oracle, optionally with a PGM of the window."""
    probs = _probabilities(model, samples)
    items = []
    for s, p in zip(samples, probs):
        pred = bool(p >= threshold)
        if pred == s.label:
            continue
        path = None
        if vignette_dir is not None:
            path = _write_vignette(s, Path(vignette_dir))
        items.append(AuditItem(s.origin, float(p), pred, bool(s.label), vignette_path=path))
    return items


def _write_vignette(sample, directory: Path) -> str:
    from .raster import render_candlestick, render_line, write_pgm

    directory.mkdir(parents=True, exist_ok=True)
    symbol, ts, length = sample.origin
    path = directory / f"{symbol}_{ts}_{length}.pgm"
    if all(c in sample.channel_names for c in "OHLC"):
        v = render_candlestick(sample.matrix("OHLC"), width=max(96, 3 * length), height=64)
    else:
        v = render_line(sample.channels[0], width=max(64, length), height=64)
    write_pgm(v, path)
    return str(path)


def write_audit(items: Sequence[AuditItem], path: str | Path) -> None:
    with open(path, "w") as fh:
        for it in items:
            fh.write(json.dumps(it.to_json(), sort_keys=True) + "\n")


def read_audit(path: str | Path) -> list[AuditItem]:
    with open(path) as fh:
        return [AuditItem.from_json(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class CorrectedMetrics:
    metrics: Metrics
    generalization: float
    relabeled_positive: int
    relabeled_negative: int


def corrected_metrics(metrics: Metrics, audits: Sequence[AuditItem]) -> CorrectedMetrics:
    """Recount after human review of the disagreements.

    Relabeling an FP as a true pattern turns it into a TP; relabeling an FN as
    no pattern turns it into a TN. Generalization is the relabeled-FP count over
    the oracle's positive count.
    """
    unresolved = [a for a in audits if a.resolution is Resolution.UNREVIEWED]
    if unresolved:
        raise UnresolvedAudits(f"{len(unresolved)} audit items are still Unreviewed")
    gained = sum(1 for a in audits if a.kind == "FP" and a.resolution is Resolution.RELABELED_POSITIVE)
    dropped = sum(1 for a in audits if a.kind == "FN" and a.resolution is Resolution.RELABELED_NEGATIVE)
    if gained > metrics.fp or dropped > metrics.fn:
        raise ValidationError("audit relabels exceed the confusion counts")
    oracle_pos = metrics.tp + metrics.fn
    fixed = Metrics(metrics.tp + gained, metrics.fp - gained, metrics.fn - dropped, metrics.tn + dropped)
    gen = gained / oracle_pos if oracle_pos else 0.0
    return CorrectedMetrics(fixed, gen, gained, dropped)


@dataclass(frozen=True)
class ReportEntry:
    name: str
    recall: float
    generalization: float | None = None


def _entry(e) -> ReportEntry:
    if isinstance(e, ReportEntry):
        return e
    name, m, gen = e
    recall = m.recall if isinstance(m, Metrics) else float(m)
    return ReportEntry(name, recall, gen)


def format_generalization(g: float | None) -> str:
    return "--" if g is None else f"{100 * g:.1f}%"


def report(entries: Sequence) -> tuple[str, str]:
    """Aligned text table and CSV: Algorithm, Recall (2 decimals), Generalization."""
    rows = [_entry(e) for e in entries]
    if not rows:
        raise ValidationError("report needs at least one entry")
    header = ("Algorithm", "Recall", "Generalization")
    cells = [(r.name, f"{r.recall:.2f}", format_generalization(r.generalization)) for r in rows]
    widths = [max(len(header[k]), *(len(c[k]) for c in cells)) for k in range(3)]

    def line(c):
        return f"{c[0]:<{widths[0]}}  {c[1]:>{widths[1]}}  {c[2]:>{widths[2]}}"

    rule = "-" * (sum(widths) + 4)
    text = "\n".join([rule, line(header), rule, *(line(c) for c in cells), rule]) + "\n"
    csv = "\n".join([",".join(header), *(",".join(c) for c in cells)]) + "\n"
    return text, csv


# Published per-algorithm results, used for the arithmetic reproduction checks.
PUBLISHED_TABLE = (
    ReportEntry("LSTM", 0.97, 0.003),
    ReportEntry("2D CNN", 0.73, None),
    ReportEntry("1D CNN", 0.64, None),
)
