"""
cli.py - command-line surface: train, classify, forecast, timestamps, bench.

Every command prints one JSON report to stdout (and optionally to --out)
with stable field names: command, hyperparams, wall_clock_seconds, payload.
Exit codes: 0 success, 1 input or benchmark failure, 2 numerical failure.
Log verbosity comes from the MOTIONCODE_LOG environment variable (DEBUG,
INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from . import bench
from .core import (
    Hyperparams,
    InputError,
    ModelParams,
    MotionCodeError,
    NumericalError,
    TimeSeries,
)
from .dataio import (
    dataset_from_records,
    file_digest,
    forecast_split,
    inject_noise,
    load_dataset,
    load_model,
    load_queries,
    parse_records,
    save_model,
)
from .inference import FORECAST_HORIZON, classify_many, forecast
from .optimizer import train_model

__all__ = ["main"]

log = logging.getLogger("motioncode.cli")


def _configure_logging():
    name = os.environ.get("MOTIONCODE_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger("motioncode").setLevel(level)


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad flags; this artifact reserves 2 for
    numerical failures, so usage errors are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_io_flags(sub, with_threads=True):
    sub.add_argument("--data", required=True, help="input dataset path")
    sub.add_argument("--format", choices=("ragged", "ucr"), default="ragged",
                     help="input file format")
    sub.add_argument("--seed", type=int, default=0, help="random seed")
    if with_threads:
        sub.add_argument("--threads", type=int, default=1,
                         help="worker threads for per-class computations")
    sub.add_argument("--out", default=None,
                     help="also write the JSON report to this path")


def _build_parser():
    parser = _Parser(prog="motioncode",
                     description="collection-level sparse process models "
                                 "for labeled time series")
    subs = parser.add_subparsers(dest="command", required=True)

    tr = subs.add_parser("train", parents=[], help="fit a model")
    tr.add_argument("--data", required=True)
    tr.add_argument("--format", choices=("ragged", "ucr"), default="ragged")
    tr.add_argument("-m", "--m", type=int, default=10, dest="m",
                    help="number of informative timestamps per class")
    tr.add_argument("-d", "--d", type=int, default=2, dest="d",
                    help="code vector dimension")
    tr.add_argument("-J", "--J", type=int, default=1, dest="j",
                    help="kernel mixture components")
    tr.add_argument("--lambda", type=float, default=1.0, dest="lam",
                    help="code norm penalty weight")
    tr.add_argument("--sigma", type=float, default=0.1,
                    help="observation noise standard deviation")
    tr.add_argument("--max-iters", type=int, default=10,
                    help="optimizer iteration budget")
    tr.add_argument("--epsilon", type=float, default=1e-5,
                    help="stop once the loss decrease falls below this")
    tr.add_argument("--jitter", type=float, default=1e-6,
                    help="base diagonal stabilizer for factorizations")
    tr.add_argument("--noise", type=float, default=0.0,
                    help="inject noise at this level before training")
    tr.add_argument("--per-series-noise", action="store_true",
                    help="scale injected noise per series instead of per dataset")
    tr.add_argument("--split-fraction", type=float, default=None,
                    help="train on only the first fraction of every series")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--threads", type=int, default=1)
    tr.add_argument("--out", default="model.json", help="model output path")
    tr.set_defaults(handler=cmd_train)

    cl = subs.add_parser("classify", help="label series with a trained model")
    cl.add_argument("--model", required=True, help="trained model path")
    cl.add_argument("--train-data", required=True,
                    help="the collections the model was trained on")
    _add_io_flags(cl)
    cl.set_defaults(handler=cmd_classify)

    fc = subs.add_parser("forecast", help="predict future values per class")
    fc.add_argument("--model", required=True)
    fc.add_argument("--train-data", default=None,
                    help="training collections; omit with --split-fraction")
    fc.add_argument("--split-fraction", type=float, default=None,
                    help="split --data in time instead of reading separate files")
    _add_io_flags(fc)
    fc.set_defaults(handler=cmd_forecast)

    ts = subs.add_parser("timestamps",
                         help="per-class informative timestamps and the "
                              "predicted signal there")
    ts.add_argument("--model", required=True)
    _add_io_flags(ts)
    ts.set_defaults(handler=cmd_timestamps)

    be = subs.add_parser("bench",
                         help="generate fixtures and run the full check suite")
    be.add_argument("--out", default="bench-out", help="output directory")
    be.add_argument("--seed", type=int, default=0)
    be.set_defaults(handler=cmd_bench)

    return parser


def _hyper_dict(h: Hyperparams, threads=None):
    out = {
        "m": int(h.m), "d": int(h.d), "J": int(h.j), "lambda": float(h.lam),
        "sigma": float(h.sigma), "max_iters": int(h.max_iters),
        "epsilon": float(h.epsilon), "jitter": float(h.jitter),
    }
    if threads is not None:
        out["threads"] = int(threads)
    return out


def _emit(command, hyper, payload, started, out_path):
    report = {
        "command": command,
        "hyperparams": hyper,
        "wall_clock_seconds": time.perf_counter() - started,
        "payload": payload,
    }
    text = json.dumps(report, indent=1)
    print(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    return report


def _load_in_model_coordinates(path, fmt, model: ModelParams):
    """Load collections pinned to a model's coordinate system; the file must
    contain exactly the model's classes."""
    records = parse_records(path, fmt)
    ds = dataset_from_records(
        records,
        time_scale=model.time_scale,
        value_center=model.value_center,
        value_scale=model.value_scale,
    )
    if ds.class_labels != model.class_labels:
        raise InputError(
            f"{path}: class labels {ds.class_labels} do not match the "
            f"model's classes {model.class_labels}"
        )
    return ds


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    started = time.perf_counter()
    hyper = Hyperparams(m=args.m, d=args.d, j=args.j, lam=args.lam,
                        sigma=args.sigma, max_iters=args.max_iters,
                        epsilon=args.epsilon, jitter=args.jitter,
                        seed=args.seed)
    dataset = load_dataset(args.data, args.format)
    log.info("loaded %d classes, %d series from %s", dataset.n_classes,
             sum(len(c.series) for c in dataset.collections), args.data)
    if args.noise:
        dataset = inject_noise(dataset, args.noise, args.seed,
                               per_series=args.per_series_noise)
        log.info("injected noise at level %g", args.noise)
    if args.split_fraction is not None:
        dataset, _ = forecast_split(dataset, args.split_fraction)
        log.info("kept the first %.0f%% of every series", 100 * args.split_fraction)
    model, info = train_model(dataset, hyper, threads=args.threads)
    model = dataclasses.replace(model, data_digest=file_digest(args.data))
    save_model(model, args.out)
    log.info("model written to %s", args.out)
    payload = {
        "loss": float(info.loss),
        "iterations": int(info.iterations),
        "stop_reason": info.stop_reason,
        "model_path": str(args.out),
        "classes": [int(label) for label in model.class_labels],
        "data_digest": model.data_digest,
    }
    _emit("train", _hyper_dict(hyper, args.threads), payload, started, None)
    return 0


def cmd_classify(args):
    started = time.perf_counter()
    model = load_model(args.model)
    train_ds = _load_in_model_coordinates(args.train_data, args.format, model)
    queries = load_queries(args.data, model, args.format, horizon=1.0)
    series = [TimeSeries(q.times, q.values) for q in queries]
    results = classify_many(model, train_ds, series)
    rows = []
    hits = 0
    for q, (pred, dists) in zip(queries, results):
        hits += int(pred == q.class_index)
        rows.append({
            "true_label": int(model.class_labels[q.class_index]),
            "predicted_label": int(model.class_labels[pred]),
            "distances": [float(x) for x in dists],
        })
    payload = {
        "accuracy": hits / len(rows),
        "n_series": len(rows),
        "class_order": [int(x) for x in model.class_labels],
        "series": rows,
    }
    _emit("classify", _hyper_dict(model.hyper), payload, started, args.out)
    return 0


def _forecast_rows_from_queries(model, train_ds, queries, k):
    """Pair class k's query records with its training series by position."""
    mine = [q for q in queries if q.class_index == k]
    train_series = train_ds.collections[k].series
    if not mine:
        return []
    if len(mine) != len(train_series):
        raise InputError(
            f"class {model.class_labels[k]}: {len(mine)} test series cannot "
            f"be paired with {len(train_series)} training series"
        )
    center, scale = model.value_center, model.value_scale
    t0, t1 = model.time_scale
    rows = []
    for idx, (q, tr) in enumerate(zip(mine, train_series)):
        pred = forecast(model, train_ds, k, q.times)
        rows.append({
            "series": idx,
            "timestamps": [float(x) for x in t0 + q.times * (t1 - t0)],
            "actual": [float(x) for x in center + scale * q.values],
            "predicted": [float(x) for x in center + scale * pred.mean],
            "last_seen": float(center + scale * tr.values[-1]),
        })
    return rows


def cmd_forecast(args):
    started = time.perf_counter()
    model = load_model(args.model)
    if (args.split_fraction is None) == (args.train_data is None):
        raise InputError(
            "forecast needs exactly one of --train-data or --split-fraction"
        )
    if args.split_fraction is not None:
        full = _load_in_model_coordinates(args.data, args.format, model)
        train_ds, test_ds = forecast_split(full, args.split_fraction)
        rows_by_class = [
            bench.class_forecast_errors(model, train_ds, test_ds, k)
            for k in range(model.n_classes)
        ]
    else:
        train_ds = _load_in_model_coordinates(args.train_data, args.format, model)
        queries = load_queries(args.data, model, args.format,
                               horizon=FORECAST_HORIZON)
        rows_by_class = [
            _forecast_rows_from_queries(model, train_ds, queries, k)
            for k in range(model.n_classes)
        ]
    classes = []
    for k, rows in enumerate(rows_by_class):
        if not rows:
            continue
        rmse, last_seen = bench.summarize_rmse(rows)
        classes.append({
            "label": int(model.class_labels[k]),
            "rmse": rmse,
            "last_seen_rmse": last_seen,
            "n_points": int(sum(len(r["actual"]) for r in rows)),
            "points": rows,
        })
    payload = {"split_fraction": args.split_fraction, "classes": classes}
    _emit("forecast", _hyper_dict(model.hyper), payload, started, args.out)
    return 0


def cmd_timestamps(args):
    started = time.perf_counter()
    model = load_model(args.model)
    train_ds = _load_in_model_coordinates(args.data, args.format, model)
    center, scale = model.value_center, model.value_scale
    t0, t1 = model.time_scale
    classes = []
    for k in range(model.n_classes):
        s = np.sort(model.inducing_timestamps(k))
        pred = forecast(model, train_ds, k, s)
        classes.append({
            "label": int(model.class_labels[k]),
            "timestamps_normalized": [float(x) for x in s],
            "timestamps": [float(x) for x in t0 + s * (t1 - t0)],
            "mean": [float(x) for x in center + scale * pred.mean],
            "variance": [float(x) for x in scale * scale * pred.variance],
        })
    payload = {"classes": classes}
    _emit("timestamps", _hyper_dict(model.hyper), payload, started, args.out)
    return 0


def cmd_bench(args):
    started = time.perf_counter()
    fixtures = bench.write_fixtures(args.out, args.seed)
    log.info("fixtures written to %s", args.out)
    report = bench.run_checks(args.seed)
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "wb") as handle:
        handle.write(bench.report_to_bytes(report))
    scaling = bench.measure_scaling(args.seed)
    timing_path = os.path.join(args.out, "timing.json")
    with open(timing_path, "w", encoding="utf-8") as handle:
        json.dump(scaling, handle, indent=1)
        handle.write("\n")
    ok = report["all_passed"] and scaling["passed"]
    payload = {
        "out_dir": str(args.out),
        "fixtures": {name: str(path) for name, path in fixtures.items()},
        "report_path": report_path,
        "timing_path": timing_path,
        "checks": [
            {"name": c["name"], "passed": c["passed"]} for c in report["checks"]
        ] + [{"name": scaling["name"], "passed": scaling["passed"]}],
        "all_passed": bool(ok),
    }
    hyper = _hyper_dict(bench.benchmark_hyperparams())
    _emit("bench", hyper, payload, started, None)
    return 0 if ok else 1


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except MotionCodeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
