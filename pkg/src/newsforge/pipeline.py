"""Experiment grid: datasets x feature sets x cases x models, plus reports.

Per dataset and feature table: align, impute, split once; per case select
features on the training rows; per model fit, predict the test rows and
score MAPE/NRMSE. The best full-features model of each dataset is then
compared against its reduced-feature runs with the DM test.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from newsforge import ConfigError, DataError
from newsforge.evaluation import dm_test, mape, nrmse
from newsforge.imputation import ImputationParams, impute_missing_features
from newsforge.ingest import align_daily, load_feature_table, load_price_table, split_chronological
from newsforge.models import MODEL_IDS, MODEL_LABELS, fit_model, make_params, params_to_dict
from newsforge.selection import CASE_LABELS, CASES, select_case

logger = logging.getLogger(__name__)

MIN_ROWS = 10
REDUCED_CASES = ("chi25", "chi10", "mrmr25", "mrmr10")
CROSS_MODELS = ("gmdh", "grnn")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    prices: Path
    features: dict  # feature-set label -> path


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetSpec, ...]
    split_ratio: float = 0.8
    seed: int = 0
    cases: tuple[str, ...] = CASES
    models: tuple[str, ...] = MODEL_IDS
    params: dict = field(default_factory=dict)
    imputation: ImputationParams = ImputationParams()
    bins: int = 5
    mrmr_scheme: str = "fcd"
    dm_h: int = 1
    dm_power: float = 2
    dm_corrected: bool = True
    output_dir: Path = Path("out")

    def model_params(self, model_id):
        return make_params(model_id, self.params.get(model_id))


def default_config_dict() -> dict:
    """Config document with every documented default filled in."""
    return {
        "datasets": [
            {"name": "Example", "prices": "prices.csv", "features": {"LIWC": "liwc.csv"}},
        ],
        "split_ratio": 0.8,
        "seed": 0,
        "cases": list(CASES),
        "models": list(MODEL_IDS),
        "params": {m: params_to_dict(make_params(m)) for m in MODEL_IDS},
        "imputation": dataclasses.asdict(ImputationParams()),
        "selection": {"bins": 5, "mrmr_scheme": "fcd"},
        "dm": {"h": 1, "power": 2, "corrected": True},
        "output_dir": "out",
    }


def _order(values, universe, what):
    values = list(values)
    if not values:
        raise ConfigError(f"config lists no {what}")
    bad = [v for v in values if v not in universe]
    if bad:
        raise ConfigError(f"unknown {what}: {', '.join(map(str, bad))}")
    return tuple(v for v in universe if v in values)


def config_from_dict(doc: dict, base_dir=".") -> ExperimentConfig:
    """Validate a config document; relative paths resolve against ``base_dir``."""
    base_dir = Path(base_dir)
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    raw = doc.get("datasets") or []
    if not raw:
        raise ConfigError("config lists no datasets")
    datasets, names, paths = [], set(), set()
    for entry in raw:
        try:
            name = str(entry["name"])
            prices = base_dir / entry["prices"]
            feats = entry["features"]
        except (KeyError, TypeError):
            raise ConfigError("each dataset needs 'name', 'prices' and 'features'") from None
        if isinstance(feats, str):
            feats = {"features": feats}
        if not feats:
            raise ConfigError(f"dataset {name!r} has no feature tables")
        feats = {str(k): base_dir / v for k, v in feats.items()}
        if name in names:
            raise ConfigError(f"duplicate dataset name {name!r}")
        names.add(name)
        for pth in (prices, *feats.values()):
            key = (name, pth.resolve())
            if key in paths:
                raise ConfigError(f"dataset {name!r} repeats path {pth}")
            paths.add(key)
        datasets.append(DatasetSpec(name, prices, feats))

    params = doc.get("params") or {}
    for m, over in params.items():
        if m not in MODEL_IDS:
            raise ConfigError(f"params given for unknown model {m!r}")
        try:
            make_params(m, over)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {m} parameters: {exc}") from None
    try:
        imputation = ImputationParams(**(doc.get("imputation") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid imputation parameters: {exc}") from None

    ratio = float(doc.get("split_ratio", 0.8))
    if not 0 < ratio < 1:
        raise ConfigError(f"split_ratio must lie in (0, 1), got {ratio}")
    sel = doc.get("selection") or {}
    dm = doc.get("dm") or {}
    return ExperimentConfig(
        datasets=tuple(datasets),
        split_ratio=ratio,
        seed=int(doc.get("seed", 0)),
        cases=_order(doc.get("cases", CASES), CASES, "cases"),
        models=_order(doc.get("models", MODEL_IDS), MODEL_IDS, "models"),
        params={m: dict(v) for m, v in params.items()},
        imputation=imputation,
        bins=int(sel.get("bins", 5)),
        mrmr_scheme=str(sel.get("mrmr_scheme", "fcd")),
        dm_h=int(dm.get("h", 1)),
        dm_power=float(dm.get("power", 2)),
        dm_corrected=bool(dm.get("corrected", True)),
        output_dir=base_dir / doc.get("output_dir", "out"),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc, path.parent)


def cell_seed(seed: int, *keys) -> int:
    """Seed for one grid cell, independent of execution order."""
    text = "|".join([str(seed), *map(str, keys)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


@dataclass
class Cell:
    status: str  # "ok", "NA" or "FAILED"
    mape: float = math.nan
    nrmse: float = math.nan
    message: str = ""
    predictions: list | None = None


@dataclass
class DmEntry:
    dataset: str
    feature_set: str
    model: str
    case: str
    statistic: float | None
    note: str = ""


@dataclass
class CrossDmEntry:
    dataset: str
    model: str
    sets: tuple[str, str]
    statistic: float | None
    note: str = ""


@dataclass
class ReportGrid:
    datasets: list
    feature_sets: list
    cases: list
    models: list
    cells: dict = field(default_factory=dict)  # (ds, fs, case, model) -> Cell
    selections: dict = field(default_factory=dict)  # (ds, fs, case) -> dict
    test_dates: dict = field(default_factory=dict)  # (ds, fs) -> [iso dates]
    test_actual: dict = field(default_factory=dict)
    dm: list = field(default_factory=list)
    cross_dm: list = field(default_factory=list)
    best_models: dict = field(default_factory=dict)  # (ds, fs) -> model id

    @property
    def failed(self) -> bool:
        return any(c.status == "FAILED" for c in self.cells.values())

    def to_dict(self) -> dict:
        def k(t):
            return "|".join(t)

        return {
            "datasets": self.datasets,
            "feature_sets": self.feature_sets,
            "cases": self.cases,
            "models": self.models,
            "cells": {k(key): dataclasses.asdict(c) for key, c in self.cells.items()},
            "selections": {k(key): v for key, v in self.selections.items()},
            "test_dates": {k(key): v for key, v in self.test_dates.items()},
            "test_actual": {k(key): v for key, v in self.test_actual.items()},
            "dm": [dataclasses.asdict(e) for e in self.dm],
            "cross_dm": [dataclasses.asdict(e) for e in self.cross_dm],
            "best_models": {k(key): v for key, v in self.best_models.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportGrid":
        def t(s):
            return tuple(s.split("|"))

        g = cls(d["datasets"], d["feature_sets"], d["cases"], d["models"])
        g.cells = {t(key): Cell(**c) for key, c in d["cells"].items()}
        g.selections = {t(key): v for key, v in d["selections"].items()}
        g.test_dates = {t(key): v for key, v in d["test_dates"].items()}
        g.test_actual = {t(key): v for key, v in d["test_actual"].items()}
        g.dm = [DmEntry(**e) for e in d["dm"]]
        g.cross_dm = [CrossDmEntry(e["dataset"], e["model"], tuple(e["sets"]), e["statistic"], e["note"])
                      for e in d["cross_dm"]]
        g.best_models = {t(key): v for key, v in d["best_models"].items()}
        return g


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("NEWSFORGE_THREADS", "1")))
    except ValueError:
        return 1


def prepare_dataset(spec: DatasetSpec, fs: str, config: ExperimentConfig):
    table = load_feature_table(spec.features[fs])
    prices = load_price_table(spec.prices)
    data = impute_missing_features(align_daily(table, prices), config.imputation)
    if len(data) < MIN_ROWS:
        raise DataError(f"{spec.name}/{fs}: only {len(data)} aligned rows (need {MIN_ROWS})")
    return split_chronological(data, config.split_ratio)


def _run_cell(model_id, config, Xtr, ytr, Xte, yte, seed) -> Cell:
    try:
        model = fit_model(model_id, Xtr, ytr, config.model_params(model_id), seed)
        pred = np.asarray(model.predict(Xte), dtype=float)
        if not np.all(np.isfinite(pred)):
            raise FloatingPointError("non-finite predictions")
        return Cell("ok", mape(yte, pred), nrmse(yte, pred), predictions=pred.tolist())
    except Exception as exc:  # one diverging model must not sink the grid
        logger.warning("cell %s failed: %s", model_id, exc)
        return Cell("FAILED", message=f"{type(exc).__name__}: {exc}")


def check_inputs(config: ExperimentConfig) -> None:
    for spec in config.datasets:
        for pth in (spec.prices, *spec.features.values()):
            if not Path(pth).is_file():
                raise FileNotFoundError(f"{spec.name}: input file not found: {pth}")


def run_experiment(config: ExperimentConfig) -> ReportGrid:
    """Run the full grid. Raises before any work if an input file is missing."""
    check_inputs(config)
    feature_sets = []
    for spec in config.datasets:
        for fs in spec.features:
            if fs not in feature_sets:
                feature_sets.append(fs)
    grid = ReportGrid(
        datasets=[d.name for d in config.datasets],
        feature_sets=feature_sets,
        cases=list(config.cases),
        models=list(config.models),
    )
    for spec in config.datasets:
        for fs in spec.features:
            train, test = prepare_dataset(spec, fs, config)
            grid.test_dates[(spec.name, fs)] = [d.isoformat() for d in test.dates]
            grid.test_actual[(spec.name, fs)] = test.close.tolist()
            for case in config.cases:
                sel = select_case(case, train.X, train.close, config.bins, config.mrmr_scheme)
                cols = sel.indices
                grid.selections[(spec.name, fs, case)] = {
                    "method": sel.method,
                    "degenerate": sel.degenerate,
                    "ranked": [[i, train.feature_names[i], s] for i, s in sel.ranked],
                }
                if sel.degenerate:
                    for m in config.models:
                        grid.cells[(spec.name, fs, case, m)] = Cell("NA", message="all chi-square scores are 0")
                    continue
                Xtr, Xte = train.X[:, cols], test.X[:, cols]
                seeds = [cell_seed(config.seed, spec.name, fs, case, m) for m in config.models]
                jobs = list(zip(config.models, seeds))

                def work(job):
                    return _run_cell(job[0], config, Xtr, train.close, Xte, test.close, job[1])

                if _threads() > 1:
                    with ThreadPoolExecutor(max_workers=_threads()) as ex:
                        results = list(ex.map(work, jobs))
                else:
                    results = [work(j) for j in jobs]
                for m, cell in zip(config.models, results):
                    grid.cells[(spec.name, fs, case, m)] = cell
    _dm_tables(grid, config)
    return grid


def _errors(grid, ds, fs, case, model):
    cell = grid.cells.get((ds, fs, case, model))
    if cell is None or cell.status != "ok":
        return None
    return np.asarray(grid.test_actual[(ds, fs)]) - np.asarray(cell.predictions)


def _dm(ea, eb, config):
    res = dm_test(ea, eb, config.dm_h, config.dm_power, config.dm_corrected)
    return res.statistic, ("" if res.statistic is not None else "indeterminate")


def _dm_tables(grid: ReportGrid, config: ExperimentConfig) -> None:
    if "full" not in grid.cases:
        return
    for ds in grid.datasets:
        for fs in grid.feature_sets:
            scored = [
                (grid.cells[(ds, fs, "full", m)].mape, i, m)
                for i, m in enumerate(grid.models)
                if (ds, fs, "full", m) in grid.cells and grid.cells[(ds, fs, "full", m)].status == "ok"
            ]
            if not scored:
                continue
            best = min(scored)[2]
            grid.best_models[(ds, fs)] = best
            base = _errors(grid, ds, fs, "full", best)
            for case in REDUCED_CASES:
                if case not in grid.cases:
                    continue
                other = _errors(grid, ds, fs, case, best)
                if other is None:
                    grid.dm.append(DmEntry(ds, fs, best, case, None, grid.cells[(ds, fs, case, best)].status))
                    continue
                stat, note = _dm(base, other, config)
                grid.dm.append(DmEntry(ds, fs, best, case, stat, note))

    if len(grid.feature_sets) < 2:
        return
    a, b = grid.feature_sets[:2]
    for ds in grid.datasets:
        for m in CROSS_MODELS:
            if m not in grid.models:
                continue
            ea, eb = _errors(grid, ds, a, "full", m), _errors(grid, ds, b, "full", m)
            if ea is None or eb is None:
                grid.cross_dm.append(CrossDmEntry(ds, m, (a, b), None, "missing"))
            elif grid.test_dates.get((ds, a)) != grid.test_dates.get((ds, b)):
                grid.cross_dm.append(CrossDmEntry(ds, m, (a, b), None, "test dates differ"))
            else:
                stat, note = _dm(ea, eb, config)
                grid.cross_dm.append(CrossDmEntry(ds, m, (a, b), stat, note))


# ---------------------------------------------------------------- reports

def fmt_metric(cell: Cell | None, attr: str) -> str:
    if cell is None or cell.status == "NA":
        return "NA"
    if cell.status == "FAILED":
        return "FAILED"
    return f"{getattr(cell, attr):.3f}"


def fmt_dm(value: float | None) -> str:
    return "NA" if value is None else f"{value:.2f}"


def metric_rows(grid: ReportGrid, fs: str, case: str) -> list[list[str]]:
    head1 = ["Dataset"]
    head2 = [""]
    for m in grid.models:
        head1 += [MODEL_LABELS[m], ""]
        head2 += ["MAPE", "NRMSE"]
    rows = [head1, head2]
    for ds in grid.datasets:
        row = [ds]
        for m in grid.models:
            cell = grid.cells.get((ds, fs, case, m))
            row += [fmt_metric(cell, "mape"), fmt_metric(cell, "nrmse")]
        rows.append(row)
    return rows


def dm_rows(grid: ReportGrid, fs: str) -> list[list[str]]:
    cases = [c for c in REDUCED_CASES if c in grid.cases]
    rows = [["Dataset", "Model", *(CASE_LABELS[c] for c in cases)]]
    by_key = {(e.dataset, e.case): e for e in grid.dm if e.feature_set == fs}
    for ds in grid.datasets:
        best = grid.best_models.get((ds, fs))
        if best is None:
            continue
        rows.append([ds, MODEL_LABELS[best],
                     *(fmt_dm(by_key[(ds, c)].statistic if (ds, c) in by_key else None) for c in cases)])
    return rows


def cross_dm_rows(grid: ReportGrid) -> list[list[str]]:
    if len(grid.feature_sets) < 2:
        return []
    a, b = grid.feature_sets[:2]
    models = [m for m in CROSS_MODELS if m in grid.models]
    rows = [["Dataset", *(f"{MODEL_LABELS[m]} ({a}) vs. {MODEL_LABELS[m]} ({b})" for m in models)]]
    by_key = {(e.dataset, e.model): e for e in grid.cross_dm}
    for ds in grid.datasets:
        rows.append([ds, *(fmt_dm(by_key[(ds, m)].statistic if (ds, m) in by_key else None) for m in models)])
    return rows


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _md_table(rows, title) -> str:
    width = len(rows[0])
    lines = [f"**{title}**", "", "| " + " | ".join(rows[0]) + " |", "|" + "---|" * width]
    lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return "\n".join(lines) + "\n"


def _md_dm_table(grid, fs, rows, title) -> str:
    """DM rows grouped under one heading row per compared model."""
    header = rows[0]
    cols = header[2:]
    lines = [f"**{title}**", "", "| " + " | ".join(["Dataset", *cols]) + " |", "|" + "---|" * (len(cols) + 1)]
    seen = []
    for r in rows[1:]:
        if r[1] not in seen:
            seen.append(r[1])
    for model in seen:
        lines.append(f"| {model} (Full features) vs. {model} (reduced) |" + " |" * len(cols))
        lines += ["| " + " | ".join([r[0], *r[2:]]) + " |" for r in rows[1:] if r[1] == model]
    lines += ["", "NA - Not Applicable"]
    return "\n".join(lines) + "\n"


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in text)


def emit_report(grid: ReportGrid, out_dir, fmt: str = "all") -> list[Path]:
    """Write metric tables per feature set and case, DM tables and feature lists."""
    if fmt not in ("csv", "md", "all"):
        raise ValueError(f"unknown report format {fmt!r}")
    if not grid.cells:
        raise ValueError("empty grid")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    want = ("csv", "md") if fmt == "all" else (fmt,)
    written = []

    def write(name, text):
        pth = out / name
        pth.write_text(text, encoding="utf-8")
        written.append(pth)

    for fs in grid.feature_sets:
        for case in grid.cases:
            rows = metric_rows(grid, fs, case)
            stem = f"metrics_{_slug(fs)}_{case}"
            title = f"Test-set errors, {CASE_LABELS[case]} ({fs})"
            if "csv" in want:
                write(stem + ".csv", _csv_text(rows))
            if "md" in want:
                write(stem + ".md", _md_table(rows, title))
        rows = dm_rows(grid, fs)
        if len(rows) > 1 and len(rows[0]) > 2:
            if "csv" in want:
                write(f"dm_{_slug(fs)}.csv", _csv_text(rows))
            if "md" in want:
                write(f"dm_{_slug(fs)}.md", _md_dm_table(grid, fs, rows, f"DM test values ({fs})"))
    cross = cross_dm_rows(grid)
    if cross:
        if "csv" in want:
            write("dm_cross.csv", _csv_text(cross))
        if "md" in want:
            write("dm_cross.md", _md_table(cross, "DM test values across feature sets, full features"))

    sel_rows = [["dataset", "feature_set", "case", "rank", "index", "name", "score"]]
    for (ds, fs, case), sel in grid.selections.items():
        if case == "full":
            continue
        for r, (i, name, score) in enumerate(sel["ranked"], start=1):
            sel_rows.append([ds, fs, case, str(r), str(i), name, repr(float(score))])
    write("selected_features.csv", _csv_text(sel_rows))
    return written


def write_artifacts(grid: ReportGrid, out_dir) -> list[Path]:
    """Grid JSON and per-cell prediction CSVs (``date,actual,predicted``)."""
    out = Path(out_dir)
    pred_dir = out / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for (ds, fs, case, m), cell in grid.cells.items():
        if cell.status != "ok":
            continue
        rows = [["date", "actual", "predicted"]]
        for d, a, p in zip(grid.test_dates[(ds, fs)], grid.test_actual[(ds, fs)], cell.predictions):
            rows.append([d, repr(float(a)), repr(float(p))])
        pth = pred_dir / f"{_slug(ds)}__{_slug(fs)}__{case}__{m}.csv"
        pth.write_text(_csv_text(rows), encoding="utf-8")
        written.append(pth)
    gpath = out / "grid.json"
    gpath.write_text(json.dumps(grid.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
    written.append(gpath)
    return written
