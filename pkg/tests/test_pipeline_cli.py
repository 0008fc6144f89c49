import csv
import json
import re
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from newsforge import ConfigError, DataError
from newsforge import pipeline
from newsforge.cli import main
from newsforge.ingest import align_daily, load_feature_table, load_price_table, read_aligned_csv, write_aligned_csv
from newsforge.pipeline import Cell, ReportGrid, config_from_dict, emit_report, run_experiment

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
PRICES = FIXTURES / "synthetic_prices.csv"
FEATURES = FIXTURES / "synthetic_features.csv"
FAST_PARAMS = {
    "rf": {"ntree": 25},
    "qrrf": {"ntree": 25},
    "mlp": {"candidates_to_train": 4, "candidates_to_retain": 2, "cycles": 50},
}


def fast_doc(**changes):
    doc = json.loads((FIXTURES / "synthetic_config.json").read_text())
    doc["datasets"][0]["prices"] = str(PRICES)
    doc["datasets"][0]["features"] = {"LIWC": str(FEATURES)}
    doc["params"] = json.loads(json.dumps(FAST_PARAMS))
    doc.update(changes)
    return doc


def write_config(tmp_path, doc, name="config.json"):
    pth = tmp_path / name
    pth.write_text(json.dumps(doc))
    return pth


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def fast_grid():
    return run_experiment(config_from_dict(fast_doc()))


# ------------------------------------------------------------------ config

@pytest.mark.parametrize("changes", [
    {"models": []},
    {"cases": []},
    {"datasets": []},
    {"models": ["gmdh", "lstm"]},
    {"cases": ["chi5"]},
    {"split_ratio": 1.0},
    {"params": {"svr": {"C": -1.0}}},
    {"params": {"rf": {"trees": 3}}},
    {"params": {"xgb": {}}},
])
def test_invalid_configs_rejected(changes):
    with pytest.raises(ConfigError):
        config_from_dict(fast_doc(**changes))


def test_duplicate_datasets_and_paths_rejected():
    doc = fast_doc()
    doc["datasets"].append(dict(doc["datasets"][0]))
    with pytest.raises(ConfigError):
        config_from_dict(doc)
    doc = fast_doc()
    doc["datasets"][0]["features"] = {"A": str(FEATURES), "B": str(FEATURES)}
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_config_orders_cases_and_models_canonically():
    cfg = config_from_dict(fast_doc(models=["mlp", "gmdh"], cases=["mrmr10", "full"]))
    assert cfg.models == ("gmdh", "mlp") and cfg.cases == ("full", "mrmr10")
    plain = fast_doc()
    plain["datasets"][0]["features"] = str(FEATURES)
    assert list(config_from_dict(plain).datasets[0].features) == ["features"]


def test_init_output_is_a_loadable_config(tmp_path, capsys):
    out = tmp_path / "init.json"
    assert main(["init", "--out", str(out)]) == 0
    cfg = pipeline.load_config(out)
    assert cfg.models == pipeline.MODEL_IDS and cfg.split_ratio == 0.8


# ------------------------------------------------------------------ grid

def test_grid_shape_and_single_split(fast_grid):
    g = fast_grid
    assert len(g.cells) == 35 and not g.failed
    dates = g.test_dates[("Synthetic", "LIWC")]
    for cell in g.cells.values():
        assert cell.status == "ok" and np.isfinite(cell.mape) and np.isfinite(cell.nrmse)
        assert len(cell.predictions) == len(dates)
    assert g.best_models[("Synthetic", "LIWC")] in g.models
    assert [e.case for e in g.dm] == ["chi25", "chi10", "mrmr25", "mrmr10"]


def test_prediction_files_share_test_rows(fast_grid, tmp_path):
    pipeline.write_artifacts(fast_grid, tmp_path)
    files = sorted((tmp_path / "predictions").glob("*.csv"))
    assert len(files) == 35
    first = None
    for f in files:
        rows = list(csv.reader(f.open()))
        key = [(r[0], r[1]) for r in rows]
        first = first or key
        assert key == first


def test_rerun_and_threads_are_byte_identical(fast_grid, tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    emit_report(fast_grid, a)
    pipeline.write_artifacts(fast_grid, a)
    monkeypatch.setenv("NEWSFORGE_THREADS", "3")
    again = run_experiment(config_from_dict(fast_doc()))
    emit_report(again, b)
    pipeline.write_artifacts(again, b)
    assert tree_bytes(a) == tree_bytes(b)


def test_removing_a_model_leaves_other_cells_unchanged(fast_grid):
    smaller = run_experiment(config_from_dict(fast_doc(models=["gmdh", "grnn", "rf", "cart"])))
    for key, cell in smaller.cells.items():
        assert cell.predictions == fast_grid.cells[key].predictions


def test_csv_and_markdown_carry_identical_numbers(fast_grid, tmp_path):
    emit_report(fast_grid, tmp_path, "all")
    num = re.compile(r"-?\d+\.\d+")
    for md in tmp_path.glob("*.md"):
        csv_text = md.with_suffix(".csv").read_text()
        assert num.findall(md.read_text()) == num.findall(csv_text), md.name


def test_metric_table_layout(fast_grid):
    rows = pipeline.metric_rows(fast_grid, "LIWC", "full")
    assert rows[0][:3] == ["Dataset", "GMDH", ""]
    assert rows[1][:3] == ["", "MAPE", "NRMSE"]
    assert len(rows[0]) == 1 + 2 * 7
    assert all(re.fullmatch(r"\d+\.\d{3}", v) for v in rows[2][1:])


def na_grid():
    g = ReportGrid(["D"], ["F"], ["full", "chi10"], ["gmdh"])
    g.cells[("D", "F", "full", "gmdh")] = Cell("ok", 1.23456, 0.0456, predictions=[1.0])
    g.cells[("D", "F", "chi10", "gmdh")] = Cell("NA", message="all chi-square scores are 0")
    g.dm.append(pipeline.DmEntry("D", "F", "gmdh", "chi10", None, "NA"))
    g.best_models[("D", "F")] = "gmdh"
    return g


def test_na_case_renders_as_na(tmp_path):
    emit_report(na_grid(), tmp_path, "md")
    assert "| D | NA | NA |" in (tmp_path / "metrics_F_chi10.md").read_text()
    assert "| D | 1.235 | 0.046 |" in (tmp_path / "metrics_F_full.md").read_text()
    dm = (tmp_path / "dm_F.md").read_text()
    assert "| D | NA |" in dm and "NA - Not Applicable" in dm
    assert [p.name for p in tmp_path.glob("*.csv")] == ["selected_features.csv"]


def test_failed_cell_is_isolated_and_marked():
    doc = fast_doc(cases=["full"], models=["gmdh", "svr"])
    doc["params"]["svr"] = {"max_iter": 1}
    grid = run_experiment(config_from_dict(doc))
    assert grid.cells[("Synthetic", "LIWC", "full", "svr")].status == "FAILED"
    assert "ConvergenceError" in grid.cells[("Synthetic", "LIWC", "full", "svr")].message
    assert grid.cells[("Synthetic", "LIWC", "full", "gmdh")].status == "ok"
    assert pipeline.metric_rows(grid, "LIWC", "full")[2][3:] == ["FAILED", "FAILED"]


def test_two_feature_sets_add_cross_dm(tmp_path):
    copy = tmp_path / "other.csv"
    shutil.copy(FEATURES, copy)
    doc = fast_doc(cases=["full"], models=["gmdh", "grnn"])
    doc["datasets"][0]["features"] = {"LIWC": str(FEATURES), "Other": str(copy)}
    grid = run_experiment(config_from_dict(doc))
    assert [e.model for e in grid.cross_dm] == ["gmdh", "grnn"]
    # identical inputs give identical forecasts, so the comparison is indeterminate
    assert all(e.statistic is None for e in grid.cross_dm)
    rows = pipeline.cross_dm_rows(grid)
    assert rows[0][1] == "GMDH (LIWC) vs. GMDH (Other)" and rows[1][1:] == ["NA", "NA"]


def test_too_few_rows_is_a_data_error(tmp_path):
    prices = tmp_path / "p.csv"
    prices.write_text("".join(PRICES.read_text().splitlines(keepends=True)[:6]))
    doc = fast_doc()
    doc["datasets"][0]["prices"] = str(prices)
    with pytest.raises(DataError):
        run_experiment(config_from_dict(doc))


# ------------------------------------------------------------------ CLI

def test_cli_run_missing_input_writes_nothing(tmp_path, capsys):
    doc = fast_doc(output_dir="out")
    doc["datasets"][0]["prices"] = "does_not_exist.csv"
    cfg = write_config(tmp_path, doc)
    assert main(["run", "--config", str(cfg)]) == 1
    assert not (tmp_path / "out").exists()
    assert "not found" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1


def test_cli_run_and_report_reemission(tmp_path, capsys):
    cfg = write_config(tmp_path, fast_doc(cases=["full", "chi10"], models=["gmdh", "grnn", "cart"]))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"metrics_LIWC_full.csv", "metrics_LIWC_full.md", "dm_LIWC.md", "grid.json",
            "selected_features.csv", "predictions"} <= names
    again = tmp_path / "again"
    assert main(["report", "--grid", str(out / "grid.json"), "--out", str(again)]) == 0
    for p in again.iterdir():
        assert p.read_bytes() == (out / p.name).read_bytes()
    csv_only = tmp_path / "csv_only"
    assert main(["run", "--config", str(cfg), "--out", str(csv_only), "--format", "csv"]) == 0
    assert not list(csv_only.glob("*.md"))


def test_cli_failed_cell_exit_code(tmp_path, capsys):
    doc = fast_doc(cases=["full"], models=["cart", "svr"])
    doc["params"]["svr"] = {"max_iter": 1}
    cfg = write_config(tmp_path, doc)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "FAILED" in (tmp_path / "o" / "metrics_LIWC_full.md").read_text()


def test_cli_stepwise_workflow(tmp_path, capsys):
    aligned = tmp_path / "aligned.csv"
    assert main(["impute", "--features", str(FEATURES), "--prices", str(PRICES), "--out", str(aligned)]) == 0
    assert "imputed" in capsys.readouterr().out
    data = read_aligned_csv(aligned)
    assert not data.missing.any() and data.imputed.any()

    ranks = tmp_path / "ranks.csv"
    assert main(["select", "--data", str(aligned), "--method", "mrmr", "--k", "10", "--out", str(ranks)]) == 0
    rows = list(csv.reader(ranks.open()))
    assert rows[0] == ["rank", "index", "name", "score"] and len(rows) == 11
    names = ",".join(r[2] for r in rows[1:])

    model = tmp_path / "mlp.json"
    trace = tmp_path / "trace.csv"
    params = tmp_path / "mlp_params.json"
    params.write_text(json.dumps(FAST_PARAMS["mlp"]))
    assert main(["train", "--data", str(aligned), "--model", "mlp", "--columns", names,
                 "--params", str(params), "--seed", "3", "--out", str(model), "--trace", str(trace)]) == 0
    trace_rows = list(csv.reader(trace.open()))
    assert trace_rows[0] == ["cycle", "train_sse"] and len(trace_rows) == 51

    preds = tmp_path / "mlp_pred.csv"
    assert main(["evaluate", "--model", str(model), "--data", str(aligned), "--out", str(preds)]) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("MAPE ")

    other_model = tmp_path / "grnn.json"
    assert main(["train", "--data", str(aligned), "--model", "grnn", "--out", str(other_model)]) == 0
    other = tmp_path / "grnn_pred.csv"
    assert main(["evaluate", "--model", str(other_model), "--data", str(aligned), "--out", str(other)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--compare", str(preds), str(other), "--uncorrected"]) == 0
    assert "DM statistic:" in capsys.readouterr().out
    assert main(["evaluate", "--compare", str(preds), str(preds)]) == 0
    assert "DM statistic: NA" in capsys.readouterr().out


def test_cli_data_errors_exit_2(tmp_path, capsys):
    raw = tmp_path / "raw.csv"
    write_aligned_csv(align_daily(load_feature_table(FEATURES), load_price_table(PRICES)), raw)
    assert main(["train", "--data", str(raw), "--model", "cart", "--out", str(tmp_path / "m.json")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("date,a\n2016-01-04,abc\n")
    assert main(["impute", "--features", str(bad), "--prices", str(PRICES), "--out", str(tmp_path / "x.csv")]) == 2
    assert "non-numeric" in capsys.readouterr().err


def test_cli_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, fast_doc(cases=["full"], models=["cart"]))
    res = subprocess.run([sys.executable, "-m", "newsforge", "run", "--config", str(cfg),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "report written" in res.stdout
