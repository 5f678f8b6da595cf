from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from qst_model.errors import ArgumentError, MalformedFileError
from qst_model.report import (
    RunManifest,
    jsonable,
    manifest_path,
    merge_comparison,
    read_json_report,
    write_json_report,
    write_manifest,
)
from qst_model.svt import SUMMARY_COLUMNS


def _metrics(fidelity, trace_distance):
    return {
        "n": 10,
        "fidelity_mean": fidelity,
        "fidelity_std": 0.01,
        "trace_distance_mean": trace_distance,
        "trace_distance_std": 0.02,
        "rank_mean": 1.0,
        "rank_std": 0.1,
        "classic_fidelity_mean": None,
        "classic_fidelity_std": None,
    }


@pytest.fixture
def svt_table():
    rows = []
    for rank in (1, 2):
        row = {"rank": rank, "tau": 2.0, "delta": 0.1, **dict.fromkeys(SUMMARY_COLUMNS, 0.5)}
        row.update(mean_iterations=100.0 * rank, std_iterations=5.0)
        rows.append(row)
    return pd.DataFrame(rows)


def test_manifest_path():
    assert manifest_path(Path("reports/svt.csv")) == Path("reports/svt.csv.manifest.json")


def test_jsonable():
    value = {1: (np.float64(0.5), Path("a/b")), "x": np.arange(2), "bad": float("nan")}
    assert jsonable(value) == {"1": [0.5, "a/b"], "x": [0, 1], "bad": None}


def test_manifest_round_trip(tmp_path):
    manifest = RunManifest.create("svt", {"taus": (1.0, 2.0)}, 3, {"table": "t.csv"}, 1.5)
    path = tmp_path / "t.csv.manifest.json"
    write_manifest(manifest, path)
    document = read_json_report(path, "manifest")
    assert document["command"] == "svt"
    assert document["config"] == {"taus": [1.0, 2.0]}
    assert document["seed"] == 3


def test_invalid_report_is_not_written(tmp_path):
    path = tmp_path / "bad.json"
    manifest = RunManifest.create("fit", {}, None, {}, 0.0)
    with pytest.raises(MalformedFileError):
        write_manifest(manifest, path)
    assert not path.exists()


def test_read_rejects_invalid_documents(tmp_path):
    path = tmp_path / "eval.json"
    path.write_text("{not json")
    with pytest.raises(MalformedFileError):
        read_json_report(path, "eval_report")
    path.write_text('{"mode": "dataset"}')
    with pytest.raises(MalformedFileError):
        read_json_report(path, "eval_report")


def test_merge_comparison(svt_table):
    evals = [
        {"rank": 1, "depth": 2, "metrics": _metrics(0.95, 0.1)},
        {"rank": 1, "depth": 4, "metrics": _metrics(0.97, 0.08)},
        {"rank": 2, "depth": 2, "metrics": _metrics(0.9, 0.2)},
    ]
    table = merge_comparison(svt_table, evals)
    assert table[["rank", "stat"]].values.tolist() == [
        [1, "mean"],
        [1, "std"],
        [2, "mean"],
        [2, "std"],
    ]
    assert "lqst_T4_fidelity" in table.columns
    first = table.iloc[0]
    assert first["svt_iterations"] == 100.0
    assert first["lqst_T2_fidelity"] == 0.95
    assert table.iloc[1]["lqst_T2_trace_distance"] == 0.02
    # rank 2 has no depth-4 network
    assert np.isnan(table.iloc[2]["lqst_T4_fidelity"])
    assert first["svt_rank"] == 0.5
    assert first["lqst_T2_rank"] == 1.0
    assert table.iloc[1]["lqst_T2_rank"] == 0.1
    assert np.isnan(table.iloc[1]["svt_rank"])
    assert table["svt_test_rank"].isna().all()


def test_merge_comparison_carries_the_test_split_baseline(svt_table):
    baseline = {"tau": 2.0, "delta": 0.1, **dict.fromkeys(SUMMARY_COLUMNS, 0.0)}
    baseline.update(mean_rank=2.5)
    evals = [{"rank": 1, "depth": 3, "metrics": _metrics(0.9, 0.1), "svt_baseline": baseline}]
    table = merge_comparison(svt_table, evals)
    assert table.iloc[0]["svt_test_rank"] == 2.5
    assert np.isnan(table.iloc[1]["svt_test_rank"])


def test_merge_comparison_errors(svt_table):
    with pytest.raises(ArgumentError):
        merge_comparison(svt_table, [])
    with pytest.raises(ArgumentError):
        merge_comparison(svt_table, [{"rank": 3, "depth": 1, "metrics": _metrics(0.9, 0.1)}])
    with pytest.raises(ArgumentError):
        merge_comparison(
            svt_table, [{"rank": 1, "depth": 1, "metrics": _metrics(0.9, 0.1)}], delta=0.5
        )
