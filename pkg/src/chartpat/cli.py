"""``chartpat`` command line: one subcommand per pipeline stage, each writing a run manifest."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import from_kv, read_kv
from .errors import ValidationError

log = logging.getLogger("chartpat")

SEEDED = ("synth", "build-dataset", "train")


class ArgError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    inputs: dict
    artifacts: list
    version: str = __version__
    wall_clock_s: float = 0.0

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def manifest_path(out) -> Path:
    return Path(str(out) + ".manifest.json")


def write_manifest(args, inputs, artifacts, started: float) -> Path:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    config = json.loads(json.dumps(config, default=str))
    seeds = {k: v for k, v in config.items() if k == "seed" or k.endswith("_seed")}
    m = RunManifest(args.command, config, seeds,
                    {str(p): sha256_file(p) for p in inputs if p and Path(p).is_file()},
                    [str(a) for a in artifacts], wall_clock_s=round(time.perf_counter() - started, 3))
    path = manifest_path(args.out)
    path.write_text(json.dumps(m.to_json(), indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# shared helpers


def _detector_params(kind, args):
    from .patterns import PatternKind, default_params

    cls = type(default_params(kind))
    values = dict(getattr(args, "params", None) or {})
    for item in getattr(args, "param", None) or []:
        if "=" not in item:
            raise ValidationError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    return from_kv(cls, values)


def _load_series(path, symbol=None):
    from .market_data import load_csv

    return load_csv(path, symbol=symbol)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    from .market_data import write_csv
    from .synthgen import inject_many, random_walk, write_records

    series = random_walk(args.bars, args.seed, volatility=args.volatility, symbol=args.symbol,
                         session_minutes=args.session_minutes)
    records = []
    if args.pattern and args.count:
        series, records = inject_many(series, args.pattern, args.count, seed=args.seed + 1,
                                      scale=args.scale, noise=args.noise)
    write_csv(series, args.out)
    rec_path = Path(str(args.out) + ".injections.jsonl")
    write_records(records, rec_path)
    print(f"wrote {len(series)} bars and {len(records)} injections to {args.out}")
    return [], [args.out, rec_path]


def cmd_scan(args):
    from .patterns import scan_series, write_matches_jsonl

    series = _load_series(args.input, args.symbol)
    matches = scan_series(series, args.pattern, _detector_params(args.pattern, args), args.window, jobs=args.jobs)
    write_matches_jsonl(matches, args.out)
    print(f"{len(matches)} {args.pattern} matches -> {args.out}")
    return [args.input], [args.out]


def cmd_build_dataset(args):
    from .dataset import balance, build_labeled, save_dataset, split
    from .config import params_hash

    series = _load_series(args.input, args.symbol)
    params = _detector_params(args.pattern, args)
    samples = build_labeled(series, args.pattern, params, args.window, channels=args.channels,
                            scheme=args.scheme, jobs=args.jobs)
    total, positives = len(samples), sum(s.label for s in samples)
    if args.balance:
        samples = balance(samples, args.seed)
    meta = {"source": str(args.input), "symbol": series.symbol, "windows_scanned": total,
            "positives_found": positives, "params": dataclasses.asdict(params),
            "params_hash": params_hash(params), "scheme": args.scheme}
    sp = split(samples, args.validation, args.seed + 1) if args.validation > 0 else None
    save_dataset(args.out, samples, sp, meta)
    print(f"{len(samples)} samples ({sum(s.label for s in samples)} positive) -> {args.out}")
    return [args.input], [args.out, str(args.out) + ".meta.json"]


def cmd_render(args):
    from .market_data import normalize_matrix
    from .raster import render, write_pgm

    if args.dataset:
        from .dataset import load_dataset

        samples, _, _ = load_dataset(args.dataset)
        if not 0 <= args.index < len(samples):
            raise ValidationError(f"index {args.index} outside dataset of {len(samples)}")
        s = samples[args.index]
        m = np.stack([s.matrix(c)[0] if c in s.channel_names else np.zeros(s.origin[2]) for c in "OHLCV"])
        src = args.dataset
    elif args.input:
        series = _load_series(args.input, args.symbol)
        if not 0 <= args.start <= len(series) - args.window:
            raise ValidationError("window does not fit in the series")
        m = normalize_matrix(series.matrix(args.start, args.start + args.window))
        src = args.input
    else:
        raise ValidationError("render needs --in or --dataset")
    v = render(m, args.style, args.channel, args.width, args.height, args.hollow)
    write_pgm(v, args.out)
    print(f"{v.width}x{v.height} {v.style.value} vignette -> {args.out}")
    return [src], [args.out]


def _builder(args, sample):
    from .models import build_cnn1d, build_cnn2d, build_lstm

    window = sample.origin[2]
    if args.model == "lstm":
        channels = args.channels or "C"
        return lambda **kw: build_lstm(len(channels), kw.get("units", args.units), seed=args.seed,
                                       window_len=window, channels=channels)
    if args.model == "cnn1d":
        channels = args.channels or "OHLC"
        return lambda **kw: build_cnn1d(len(channels), window, seed=args.seed, channels=channels)
    if args.model == "cnn2d":
        from .raster import DEFAULT_CANDLE_SIZE, DEFAULT_SIZE

        w, h = DEFAULT_CANDLE_SIZE if args.style == "candlestick" else DEFAULT_SIZE
        cfg = {"style": args.style, "channel": args.channel or "H"}
        return lambda **kw: build_cnn2d(args.width or w, args.height or h, cfg, seed=args.seed)
    raise ValidationError(f"unknown model {args.model!r}")


def _dataset_split(path, seed, fraction=0.2):
    from .dataset import load_dataset, split

    samples, sp, _ = load_dataset(path)
    if not samples:
        raise ValidationError(f"{path} holds no samples")
    return samples, sp or split(samples, fraction, seed)


def _parse_grid(text: str) -> dict:
    grid = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise ValidationError(f"grid entry {part!r} is not key=v1,v2")
        k, vals = part.split("=", 1)
        grid[k.strip()] = [json.loads(v) for v in vals.split(",") if v.strip()]
    return grid


def cmd_train(args):
    from .models import TrainConfig, grid_search, train
    from .nn import save_model

    samples, sp = _dataset_split(args.dataset, args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer, lr=args.lr,
                      seed=args.seed, patience=args.patience, threshold=args.threshold, fp_cap=args.fp_cap)
    builder = _builder(args, samples[0])
    artifacts = [args.out]
    if args.grid:
        results = grid_search(builder, sp, _parse_grid(args.grid), cfg, jobs=args.jobs)
        grid_csv = Path(str(args.out) + ".grid.csv")
        keys = sorted(results[0].params)
        lines = [",".join(keys + ["recall", "fp_rate", "best_epoch"])]
        for r in results:
            m = r.metrics
            lines.append(",".join([json.dumps(r.params[k]) for k in keys]
                                  + [repr(m.recall), repr(m.fp_rate), str(r.report.best_epoch)]))
        grid_csv.write_text("\n".join(lines) + "\n")
        artifacts.append(grid_csv)
        rep = results[0].report
    else:
        rep = train(builder(), sp, cfg, log=log.info)
    name = args.name or args.model
    save_model(rep.model, args.out, training={"name": name, "config": rep.config, "best_epoch": rep.best_epoch,
                                              "dataset_sha256": sha256_file(args.dataset)})
    report_path = Path(args.report or str(args.out) + ".report.json")
    _write_json(report_path, rep.to_json(name))
    artifacts.append(report_path)
    best = rep.best
    print(f"{name}: best epoch {rep.best_epoch + 1}, recall {best.recall:.3f}, fp_rate {best.fp_rate:.4f}")
    return [args.dataset], artifacts


def _eval_samples(args):
    samples, sp = _dataset_split(args.dataset, 0)
    if args.split == "validation":
        return sp.validation
    if args.split == "train":
        return sp.train
    return samples


def cmd_evaluate(args):
    from .evaluation import evaluate
    from .nn import load_model

    model = load_model(args.model)
    samples = _eval_samples(args)
    m = evaluate(model, samples, args.threshold)
    name = args.name or model.meta.get("kind", "model")
    _write_json(args.out, {"name": name, "split": args.split, "threshold": args.threshold,
                           "metrics": m.to_json(), "fp_share": m.fp_share, "generalization": None})
    print(f"{name}: recall {m.recall:.3f} fp_rate {m.fp_rate:.4f} ({m.tp}/{m.fp}/{m.fn}/{m.tn} tp/fp/fn/tn)")
    return [args.model, args.dataset], [args.out]


def cmd_audit(args):
    from .evaluation import Metrics, corrected_metrics, export_audit, read_audit, write_audit

    if args.action == "export":
        from .nn import load_model

        if not (args.model and args.dataset):
            raise ValidationError("audit export needs --model and --dataset")
        items = export_audit(load_model(args.model), _eval_samples(args), args.threshold, args.vignettes)
        write_audit(items, args.out)
        print(f"{len(items)} disagreements -> {args.out}")
        return [args.model, args.dataset], [args.out]
    if not args.audit:
        raise ValidationError(f"audit {args.action} needs --audit")
    items = read_audit(args.audit)
    if args.action == "resolve":
        for entry in args.set or []:
            idx, _, res = entry.partition("=")
            try:
                item = items[int(idx)]
            except (ValueError, IndexError):
                raise ValidationError(f"no audit item {idx!r}") from None
            item.resolve(res)
        write_audit(items, args.out)
        print(f"{sum(a.resolution.value != 'Unreviewed' for a in items)}/{len(items)} resolved -> {args.out}")
        return [args.audit], [args.out]
    # correct
    if not args.metrics:
        raise ValidationError("audit correct needs --metrics")
    ev = json.loads(Path(args.metrics).read_text())
    cm = corrected_metrics(Metrics.from_json(ev["metrics"]), items)
    out = dict(ev)
    out.update(original_metrics=ev["metrics"], metrics=cm.metrics.to_json(), generalization=cm.generalization,
               relabeled_positive=cm.relabeled_positive, relabeled_negative=cm.relabeled_negative)
    _write_json(args.out, out)
    print(f"generalization {cm.generalization:.4f}; corrected recall {cm.metrics.recall:.3f}")
    return [args.audit, args.metrics], [args.out]


def _report_entry(path):
    from .evaluation import Metrics, ReportEntry

    d = json.loads(Path(path).read_text())
    name = d.get("name") or Path(path).stem
    if "metrics" in d:
        m = Metrics.from_json(d["metrics"])
    elif d.get("best_metrics"):
        m = Metrics.from_json(d["best_metrics"])
    elif "recall" in d:
        return ReportEntry(name, float(d["recall"]), d.get("generalization"))
    else:
        raise ValidationError(f"{path} holds no metrics")
    return ReportEntry(name, m.recall, d.get("generalization"))


def cmd_report(args):
    from .evaluation import report

    paths = [p for p in args.runs.split(",") if p]
    text, csv = report([_report_entry(p) for p in paths])
    Path(args.out).write_text(text)
    csv_path = Path(str(args.out) + ".csv")
    csv_path.write_text(csv)
    sys.stdout.write(text)
    return paths, [args.out, csv_path]


def cmd_dtw_match(args):
    from .dtw import load_template, match_template, save_template, template_from_window, write_dtw_jsonl
    from .market_data import Window

    series = _load_series(args.input, args.symbol)
    inputs = [args.input]
    artifacts = [args.out]
    if args.template:
        template = load_template(args.template)
        inputs.append(args.template)
    elif args.template_start is not None:
        if not 0 <= args.template_start <= len(series) - args.window:
            raise ValidationError("template window does not fit in the series")
        template = template_from_window(Window(series, args.template_start, args.window), args.template_name)
        tpath = Path(str(args.out) + ".template.json")
        save_template(template, tpath)
        artifacts.append(tpath)
    else:
        raise ValidationError("dtw-match needs --template or --template-start")
    matches = match_template(series, template, args.window, args.threshold)
    write_dtw_jsonl(matches, args.out)
    print(f"{len(matches)} windows within {args.threshold} of {template.name} -> {args.out}")
    return inputs, artifacts


def cmd_backtest(args):
    from .backtest import StrategyParams, simulate, write_summary, write_trades_csv
    from .patterns import read_matches_jsonl

    series = _load_series(args.input, args.symbol)
    matches = read_matches_jsonl(args.matches, series)
    params = StrategyParams(args.target_multiple, args.fee, args.max_holding, args.target_basis)
    trades, summary = simulate(series, matches, params)
    write_trades_csv(trades, args.out)
    spath = Path(str(args.out) + ".summary.json")
    write_summary(summary, spath)
    print(f"{summary.trades} trades, win rate {summary.win_rate:.3f}, total pnl {summary.total_pnl:.4f}")
    return [args.input, args.matches], [args.out, spath]


# --------------------------------------------------------------------------
# parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chartpat", description="Chart pattern detection and classification pipeline.")
    p.add_argument("--version", action="version", version=f"chartpat {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="key=value file; explicit flags win")
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=_positive_int, default=1)
        return sp

    def detector(sp):
        sp.add_argument("--pattern", required=True, choices=["bearish-flag", "double-top", "double-bottom"])
        sp.add_argument("--window", type=int, default=30)
        sp.add_argument("--param", action="append", help="detector parameter key=value (repeatable)")

    def source(sp, required=True):
        sp.add_argument("--in", dest="input", required=required)
        sp.add_argument("--symbol", default=None)

    sp = add("synth", cmd_synth, "seeded random-walk bars with injected patterns")
    sp.add_argument("--bars", type=_positive_int, default=20000)
    sp.add_argument("--pattern", choices=["bearish-flag", "double-top", "double-bottom"])
    sp.add_argument("--count", type=int, default=0)
    sp.add_argument("--scale", type=float, default=0.02)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--volatility", type=float, default=0.001)
    sp.add_argument("--session-minutes", type=int, default=None)
    sp.add_argument("--symbol", default="SYNTH")

    sp = add("scan", cmd_scan, "run a detector over a bar file")
    source(sp)
    detector(sp)

    sp = add("build-dataset", cmd_build_dataset, "label windows, balance classes, split")
    source(sp)
    detector(sp)
    sp.add_argument("--channels", default="OHLCV")
    sp.add_argument("--scheme", default="joint", choices=["joint", "per_channel"])
    sp.add_argument("--validation", type=float, default=0.2)
    sp.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)

    sp = add("render", cmd_render, "rasterize one window to a PGM vignette")
    source(sp, required=False)
    sp.add_argument("--dataset")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--start", type=int, default=0)
    sp.add_argument("--window", type=int, default=30)
    sp.add_argument("--style", default="line", choices=["line", "candlestick"])
    sp.add_argument("--channel", default="H")
    sp.add_argument("--width", type=int, default=None)
    sp.add_argument("--height", type=int, default=None)
    sp.add_argument("--hollow", action="store_true")

    sp = add("train", cmd_train, "train one classifier (or a grid) on a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--model", required=True, choices=["lstm", "cnn1d", "cnn2d"])
    sp.add_argument("--name", default=None)
    sp.add_argument("--units", type=_positive_int, default=10)
    sp.add_argument("--channels", default=None)
    sp.add_argument("--style", default="line", choices=["line", "candlestick"])
    sp.add_argument("--channel", default=None)
    sp.add_argument("--width", type=int, default=None)
    sp.add_argument("--height", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--patience", type=int, default=0)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--fp-cap", type=float, default=0.01)
    sp.add_argument("--grid", default=None, help='e.g. "lr=0.01,0.001;units=5,10"')
    sp.add_argument("--report", default=None)

    sp = add("evaluate", cmd_evaluate, "confusion metrics of a model on a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--split", default="validation", choices=["validation", "train", "all"])
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--name", default=None)

    sp = add("audit", cmd_audit, "export, resolve and score FP/FN audits")
    sp.add_argument("action", choices=["export", "resolve", "correct"])
    sp.add_argument("--dataset")
    sp.add_argument("--model")
    sp.add_argument("--split", default="validation", choices=["validation", "train", "all"])
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--vignettes", default=None)
    sp.add_argument("--audit")
    sp.add_argument("--set", action="append", help="INDEX=Resolution (repeatable)")
    sp.add_argument("--metrics")

    sp = add("report", cmd_report, "per-algorithm recall / generalization table")
    sp.add_argument("--runs", required=True, help="comma-separated evaluate/train/audit JSON files")

    sp = add("dtw-match", cmd_dtw_match, "DTW template matching baseline")
    source(sp)
    sp.add_argument("--template")
    sp.add_argument("--template-start", type=int, default=None)
    sp.add_argument("--template-name", default="template")
    sp.add_argument("--window", type=int, default=30)
    sp.add_argument("--threshold", type=float, default=1.0)

    sp = add("backtest", cmd_backtest, "simulate the double top/bottom strategy")
    source(sp)
    sp.add_argument("--matches", required=True)
    sp.add_argument("--target-multiple", type=float, default=2.0)
    sp.add_argument("--fee", type=float, default=0.0)
    sp.add_argument("--max-holding", type=int, default=60)
    sp.add_argument("--target-basis", default="stop", choices=["stop", "extremum"])
    return p


def _apply_config(parser, argv, args):
    """Re-parse with config-file values as defaults so explicit flags still win."""
    values = read_kv(args.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    dests = {a.dest: a for a in sub._actions}
    defaults, extra = {}, {}
    for k, v in values.items():
        key = "input" if k == "in" else k
        if key in dests:
            action = dests[key]
            if isinstance(action, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
                from .config import _coerce

                v = _coerce(v, bool)
            elif action.type is not None:
                try:
                    v = action.type(v)
                except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                    raise ValidationError(f"config {k}: {exc}") from None
            if action.required:
                action.required = False
            defaults[key] = v
        else:
            extra[k] = v
    sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    if extra:
        if "param" not in dests:
            raise ValidationError(f"unknown config keys for {args.command}: {sorted(extra)}")
        args.params = extra
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _pre_parse(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command in SEEDED and args.seed is None:
            raise ValidationError(f"{args.command} requires --seed")
        started = time.perf_counter()
        inputs, artifacts = args.func(args)
        write_manifest(args, inputs, artifacts, started)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


def _pre_parse(parser, argv):
    # --config may be needed to satisfy required flags, so look for it before a full parse
    cfg = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            cfg = argv[i + 1]
        elif tok.startswith("--config="):
            cfg = tok.split("=", 1)[1]
    if cfg is None:
        return parser.parse_args(argv)
    command = next((t for t in argv if t in _command_names(parser)), None)
    if command is None:
        return parser.parse_args(argv)
    stub = argparse.Namespace(config=cfg, command=command)
    return _apply_config(parser, argv, stub)


def _command_names(parser):
    return next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices.keys()


if __name__ == "__main__":
    sys.exit(main())
