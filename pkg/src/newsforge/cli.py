"""``newsforge`` command line.

Exit codes: 0 success, 1 config or I/O error, 2 data-validation error,
3 grid finished with at least one FAILED cell.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from newsforge import ConfigError, ConvergenceError, DataError, __version__
from newsforge import pipeline
from newsforge.evaluation import dm_test, mape, nrmse
from newsforge.imputation import ImputationParams, impute_missing_features, impute_rows
from newsforge.ingest import (
    align_daily,
    load_feature_table,
    load_price_table,
    read_aligned_csv,
    split_chronological,
    write_aligned_csv,
)
from newsforge.models import MODEL_IDS, fit_model, make_params, model_from_json, model_to_json
from newsforge.selection import CASES, select_case

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("newsforge")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8")) if path else None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _complete(data):
    if data.missing.any():
        raise DataError("dataset still has missing feature rows; run `newsforge impute` first")
    return data


def cmd_init(args):
    text = json.dumps(pipeline.default_config_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_impute(args):
    params = ImputationParams(**(_load_json(args.params) or {}))
    if args.unnormalized:
        params = dataclasses.replace(params, unnormalized=True)
    data = align_daily(load_feature_table(args.features), load_price_table(args.prices))
    if data.dropped_after_last_price:
        log.info("dropped %d record(s) dated after the last price", data.dropped_after_last_price)
    rows = impute_rows(data, params)
    out = impute_missing_features(data, params)
    write_aligned_csv(out, args.out)
    print(f"{len(out)} rows, {len(rows)} imputed -> {args.out}")
    if rows:
        donors = np.array([r.donor_count for r in rows])
        widened = sum(r.band_used > params.band for r in rows)
        print(f"donors per imputed row: min {donors.min()}, median {np.median(donors):g}, "
              f"max {donors.max()}; {widened} row(s) needed a wider band")
    return EXIT_OK


def cmd_select(args):
    data = _complete(read_aligned_csv(args.data))
    train, _ = split_chronological(data, args.split_ratio)
    case = args.case
    if args.method:
        case = "full" if args.method == "full" else f"{args.method}{args.k}"
        if case not in CASES:
            raise ConfigError(f"--method {args.method} supports --k 10 or 25")
    sel = select_case(case, train.X, train.close, args.bins, args.mrmr_scheme)
    rows = [["rank", "index", "name", "score"]]
    rows += [[str(r), str(i), data.feature_names[i], repr(float(s))] for r, (i, s) in enumerate(sel.ranked, 1)]
    text = pipeline._csv_text(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if sel.degenerate:
        log.warning("all chi-square scores are 0; this case is reported as NA")
    return EXIT_OK


def _columns(data, spec):
    if not spec:
        return list(range(data.n_features))
    names = list(data.feature_names)
    cols = []
    for tok in spec.split(","):
        tok = tok.strip()
        if tok in names:
            cols.append(names.index(tok))
        elif tok.isdigit() and int(tok) < len(names):
            cols.append(int(tok))
        else:
            raise DataError(f"unknown feature column {tok!r}")
    return cols


def cmd_train(args):
    data = _complete(read_aligned_csv(args.data))
    train, _ = split_chronological(data, args.split_ratio)
    cols = _columns(data, args.columns)
    overrides = _load_json(args.params) or {}
    if args.ensemble:
        if args.model != "mlp":
            raise ConfigError("--ensemble applies to the mlp model only")
        overrides["ensemble"] = True
    params = make_params(args.model, overrides)
    model = fit_model(args.model, train.X[:, cols], train.close, params, args.seed)
    doc = json.loads(model_to_json(model))
    doc["columns"] = [data.feature_names[c] for c in cols]
    Path(args.out).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
    if args.trace:
        trace = getattr(model, "loss_trace", None)
        if not trace:
            log.warning("--trace only records loss curves for the mlp model")
        else:
            with open(args.trace, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["cycle", "train_sse"])
                w.writerows([[i + 1, repr(float(v))] for i, v in enumerate(trace)])
    print(f"trained {args.model} on {len(train)} rows -> {args.out}")
    return EXIT_OK


def _read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        dates = [r["date"] for r in rows]
        return dates, np.array([float(r["actual"]) for r in rows]), np.array([float(r["predicted"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: expected date,actual,predicted columns ({exc})") from None


def cmd_evaluate(args):
    if args.compare:
        da, ya, pa = _read_predictions(args.compare[0])
        db, yb, pb = _read_predictions(args.compare[1])
        if da != db or not np.array_equal(ya, yb):
            raise DataError("prediction files cover different dates or actuals")
        for name, p in zip(args.compare, (pa, pb)):
            print(f"{name}: MAPE {mape(ya, p):.3f}  NRMSE {nrmse(ya, p):.3f}")
        res = dm_test(ya - pa, yb - pb, args.horizon, args.power, not args.uncorrected)
        stat = "NA" if res.statistic is None else f"{res.statistic:.4f}"
        print(f"DM statistic: {stat} (n={res.n}, critical value {res.critical_value:.4f})")
        return EXIT_OK
    if not (args.model and args.data):
        raise ConfigError("evaluate needs --model and --data, or --compare A.csv B.csv")
    doc = json.loads(Path(args.model).read_text(encoding="utf-8"))
    data = _complete(read_aligned_csv(args.data))
    _, test = split_chronological(data, args.split_ratio)
    cols = _columns(data, ",".join(doc.get("columns", [])))
    model = model_from_json(json.dumps(doc))
    pred = np.asarray(model.predict(test.X[:, cols]), dtype=float)
    print(f"MAPE {mape(test.close, pred):.3f}  NRMSE {nrmse(test.close, pred):.3f}  (n={len(test)})")
    if args.out:
        rows = [["date", "actual", "predicted"]]
        rows += [[d.isoformat(), repr(float(a)), repr(float(p))] for d, a, p in zip(test.dates, test.close, pred)]
        Path(args.out).write_text(pipeline._csv_text(rows), encoding="utf-8")
    return EXIT_OK


def _finish(grid, out, fmt):
    pipeline.emit_report(grid, out, fmt)
    pipeline.write_artifacts(grid, out)
    failed = [k for k, c in grid.cells.items() if c.status == "FAILED"]
    for key in failed:
        log.error("FAILED %s: %s", "/".join(key), grid.cells[key].message)
    print(f"report written to {out} ({len(grid.cells)} cells, {len(failed)} failed)")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_run(args):
    if not args.config:
        raise ConfigError("run needs --config")
    config = pipeline.load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out:
        changes["output_dir"] = Path(args.out)
    if args.unnormalized:
        changes["imputation"] = dataclasses.replace(config.imputation, unnormalized=True)
    config = dataclasses.replace(config, **changes)
    grid = pipeline.run_experiment(config)
    return _finish(grid, config.output_dir, args.format)


def cmd_report(args):
    try:
        grid = pipeline.ReportGrid.from_dict(json.loads(Path(args.grid).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{args.grid}: not a grid file ({exc})") from None
    pipeline.emit_report(grid, args.out, args.format)
    print(f"report written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="newsforge", description="News-feature stock price forecasting grid.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a config with every default filled in")
    p.add_argument("--out", help="destination (stdout if omitted)")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("impute", help="align features to trading days and fill gaps")
    p.add_argument("--features", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--params", help="JSON file of imputation parameters")
    p.add_argument("--unnormalized", action="store_true", help="unnormalized inverse-distance sum")
    p.set_defaults(func=cmd_impute)

    def split_opts(p):
        p.add_argument("--data", required=True, help="aligned CSV from `impute`")
        p.add_argument("--split-ratio", type=float, default=0.8)

    p = sub.add_parser("select", help="rank features for one case on the training rows")
    split_opts(p)
    p.add_argument("--case", choices=CASES, default="chi10")
    p.add_argument("--method", choices=("chi2", "mrmr", "full"), help="with --k, overrides --case")
    p.add_argument("--k", type=int, choices=(10, 25), default=10)
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--mrmr-scheme", choices=("fcd", "mid"), default="fcd")
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="fit one model on the training rows")
    split_opts(p)
    p.add_argument("--model", choices=MODEL_IDS, required=True)
    p.add_argument("--columns", help="comma-separated feature names or indices")
    p.add_argument("--params", help="JSON file of parameter overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write the per-cycle training loss (mlp) to this CSV")
    p.add_argument("--ensemble", action="store_true", help="mlp: average the retained networks")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model, or DM-compare two prediction files")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--out", help="write date,actual,predicted CSV")
    p.add_argument("--compare", nargs=2, metavar=("A_CSV", "B_CSV"))
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--power", type=float, default=2)
    p.add_argument("--uncorrected", action="store_true", help="skip the small-sample correction")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="run the full experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "md", "all"), default="all")
    p.add_argument("--unnormalized", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-emit tables from a saved grid.json")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "md", "all"), default="all")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
