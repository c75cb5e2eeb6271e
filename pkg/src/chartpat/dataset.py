"""Labeled window corpora: detector-driven labeling, class balancing, splits, JSONL I/O."""

from __future__ import annotations

import base64
import bisect
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import params_hash
from .errors import NoNegatives, NoPositives, TooFewSamples, ValidationError
from .market_data import BarSeries, CHANNELS, format_timestamp, normalize_matrix, parse_channels, \
    parse_timestamp, select_channels, window_starts
from .patterns import PatternKind, PatternMatch, default_params, scan_series

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LabeledSample:
    channels: np.ndarray  # float32, [len(channel_names) x window_len], values in [0, 1]
    label: bool
    origin: tuple[str, int, int]  # symbol, start timestamp (epoch minutes), window length
    provenance: tuple[str, str]  # detector kind, params hash
    channel_names: tuple[str, ...] = CHANNELS

    @property
    def span(self) -> tuple[int, int]:
        """Inclusive timestamp span covered by the window."""
        return self.origin[1], self.origin[1] + self.origin[2] - 1

    def matrix(self, channels: str | Iterable[str]) -> np.ndarray:
        wanted = parse_channels(channels)
        missing = [c for c in wanted if c not in self.channel_names]
        if missing:
            raise ValidationError(f"sample lacks channels {missing}")
        return self.channels[[self.channel_names.index(c) for c in wanted]]


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: list[LabeledSample]
    validation: list[LabeledSample]
    seed: int

    def __post_init__(self):
        if not self.train or not self.validation:
            raise ValidationError("both splits must be non-empty")


def label_windows(series: BarSeries, matches: Sequence[PatternMatch], window_len: int) -> tuple[np.ndarray, np.ndarray]:
    """(starts, labels): a window is positive iff it fully contains a merged match span."""
    starts = window_starts(series, window_len, 1)
    positive = np.zeros(len(series), dtype=bool)
    for m in matches:
        lo, hi = m.span
        first = max(0, hi - window_len + 1)
        positive[first:lo + 1] = True
    return starts, positive[starts]


def build_labeled(series: BarSeries, kind: PatternKind, params=None, window_len: int = 30,
                  channels: str | Iterable[str] = CHANNELS, scheme: str = "joint",
                  matches: Sequence[PatternMatch] | None = None, jobs: int = 1) -> list[LabeledSample]:
    kind = PatternKind.parse(kind)
    params = params or default_params(kind)
    names = tuple(parse_channels(channels))
    if matches is None:
        matches = scan_series(series, kind, params, window_len, jobs=jobs)
    starts, labels = label_windows(series, matches, window_len)
    prov = (kind.value, params_hash(params))
    out = []
    for s, lab in zip(starts, labels):
        s = int(s)
        norm = normalize_matrix(series.matrix(s, s + window_len), scheme)
        out.append(LabeledSample(
            channels=select_channels(norm, names).astype(np.float32),
            label=bool(lab),
            origin=(series.symbol, int(series.timestamps[s]), window_len),
            provenance=prov,
            channel_names=names,
        ))
    return out


def class_ratio(samples: Sequence[LabeledSample]) -> float:
    """Fraction of positives."""
    return sum(s.label for s in samples) / len(samples) if samples else 0.0


def balance(samples: Sequence[LabeledSample], seed: int) -> list[LabeledSample]:
    """Keep every positive and down-sample negatives to the same count.

    Negatives are drawn one per contiguous time stratum, never overlapping a
    positive window or each other. When negatives are already scarcer than
    positives they are all kept and a warning records the achieved ratio.
    """
    pos = [s for s in samples if s.label]
    neg = sorted((s for s in samples if not s.label), key=lambda s: s.span)
    if not pos:
        raise NoPositives("no positive samples to balance")
    if not neg:
        raise NoNegatives("no negative samples to balance")
    rng = np.random.default_rng(seed)
    target = len(pos)
    if len(neg) <= target:
        chosen = list(neg)
    else:
        pos_spans = sorted(s.span for s in pos)
        plo = [a for a, _ in pos_spans]
        # running max of span ends makes the bisect test exact for overlapping spans
        phi = list(np.maximum.accumulate([b for _, b in pos_spans]))
        eligible = [s for s in neg if not _overlaps_sorted(s.span, plo, phi)]
        if not eligible:
            log.warning("every negative overlaps a positive window; ignoring that constraint")
            eligible = neg
        chosen = _stratified_pick(eligible, target, rng)
    if len(chosen) < target:
        msg = (f"only {len(chosen)} usable negatives for {target} positives; "
               f"positive ratio {target / (target + len(chosen)):.3f}")
        warnings.warn(msg, stacklevel=2)
        log.warning(msg)
    out = pos + chosen
    out.sort(key=lambda s: (s.span, s.label))
    return out


def _overlaps_sorted(span, lo_list, hi_prefix_max) -> bool:
    lo, hi = span
    k = bisect.bisect_right(lo_list, hi)
    return k > 0 and hi_prefix_max[k - 1] >= lo


def _stratified_pick(eligible: list[LabeledSample], target: int, rng) -> list[LabeledSample]:
    picked: list[LabeledSample] = []
    strata = np.array_split(np.arange(len(eligible)), target)
    for stratum in strata:
        for j in rng.permutation(stratum):
            cand = eligible[int(j)]
            if not picked or cand.span[0] > picked[-1].span[1]:
                picked.append(cand)
                break
    if len(picked) < target:
        # second pass: any remaining negative that fits between the picks
        taken = {id(s) for s in picked}
        for j in rng.permutation(len(eligible)):
            cand = eligible[int(j)]
            if id(cand) in taken:
                continue
            starts = [s.span[0] for s in picked]
            k = bisect.bisect_left(starts, cand.span[0])
            left_ok = k == 0 or picked[k - 1].span[1] < cand.span[0]
            right_ok = k == len(picked) or cand.span[1] < picked[k].span[0]
            if left_ok and right_ok:
                picked.insert(k, cand)
                taken.add(id(cand))
                if len(picked) == target:
                    break
    return picked


def split(samples: Sequence[LabeledSample], validation_fraction: float, seed: int) -> DatasetSplit:
    """Seeded stratified partition; class proportions are preserved per split."""
    if not 0 < validation_fraction < 1:
        raise ValidationError("validation_fraction must be in (0, 1)")
    n = len(samples)
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    n_val = min(max(int(round(validation_fraction * n)), 1), n - 1)
    rng = np.random.default_rng(seed)
    groups = {lab: [i for i, s in enumerate(samples) if s.label == lab] for lab in (True, False)}
    # largest-remainder allocation of validation slots across the two classes
    quotas = {lab: n_val * len(idx) / n for lab, idx in groups.items()}
    alloc = {lab: int(np.floor(q)) for lab, q in quotas.items()}
    for lab in sorted(groups, key=lambda l: (-(quotas[l] - alloc[l]), not l)):
        if sum(alloc.values()) >= n_val:
            break
        if alloc[lab] < len(groups[lab]):
            alloc[lab] += 1
    val_idx = set()
    for lab, idx in groups.items():
        perm = rng.permutation(len(idx))
        val_idx.update(idx[int(j)] for j in perm[:alloc[lab]])
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    validation = [s for i, s in enumerate(samples) if i in val_idx]
    return DatasetSplit(train, validation, seed)


# --------------------------------------------------------------------------
# JSONL persistence


def encode_array(a: np.ndarray, dtype: str = "<f4") -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype=dtype).tobytes()).decode("ascii")


def decode_array(text: str, shape, dtype: str = "<f4") -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype=dtype).reshape(shape).copy()


def sample_to_json(s: LabeledSample, split_name: str | None = None) -> dict:
    symbol, ts, length = s.origin
    rec = {
        "origin": {"symbol": symbol, "start": format_timestamp(ts), "start_minute": ts, "length": length},
        "label": s.label,
        "channels_b64": encode_array(s.channels),
        "shape": list(s.channels.shape),
        "channel_names": "".join(s.channel_names),
        "provenance": {"kind": s.provenance[0], "params_hash": s.provenance[1]},
    }
    if split_name:
        rec["split"] = split_name
    return rec


def sample_from_json(rec: dict) -> LabeledSample:
    o = rec["origin"]
    ts = o["start_minute"] if "start_minute" in o else parse_timestamp(o["start"])[0]
    return LabeledSample(
        channels=decode_array(rec["channels_b64"], rec["shape"]).astype(np.float32),
        label=bool(rec["label"]),
        origin=(o["symbol"], int(ts), int(o["length"])),
        provenance=(rec["provenance"]["kind"], rec["provenance"]["params_hash"]),
        channel_names=tuple(rec.get("channel_names", "".join(CHANNELS))),
    )


def meta_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def save_dataset(path: str | Path, samples: Sequence[LabeledSample] | None = None,
                 split_obj: DatasetSplit | None = None, meta: dict | None = None) -> None:
    """Write samples (or a split, tagged per line) plus a sidecar ``.meta.json``."""
    path = Path(path)
    lines = []
    if split_obj is not None:
        lines += [sample_to_json(s, "train") for s in split_obj.train]
        lines += [sample_to_json(s, "validation") for s in split_obj.validation]
        body = list(split_obj.train) + list(split_obj.validation)
    else:
        body = list(samples or [])
        lines += [sample_to_json(s) for s in body]
    with path.open("w") as fh:
        for rec in lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    info = dict(meta or {})
    info.setdefault("count", len(body))
    info.setdefault("positives", sum(s.label for s in body))
    if body:
        info.setdefault("window_len", body[0].origin[2])
        info.setdefault("channels", "".join(body[0].channel_names))
        info.setdefault("params_hash", body[0].provenance[1])
        info.setdefault("kind", body[0].provenance[0])
    if split_obj is not None:
        info["seed"] = split_obj.seed
    meta_path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> tuple[list[LabeledSample], DatasetSplit | None, dict]:
    path = Path(path)
    samples, train, val = [], [], []
    with path.open() as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            s = sample_from_json(rec)
            samples.append(s)
            if rec.get("split") == "train":
                train.append(s)
            elif rec.get("split") == "validation":
                val.append(s)
    meta = json.loads(meta_path(path).read_text()) if meta_path(path).exists() else {}
    sp = DatasetSplit(train, val, int(meta.get("seed", 0))) if train and val else None
    return samples, sp, meta
