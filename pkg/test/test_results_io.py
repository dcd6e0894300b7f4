"""
Unit tests for the results_io module: result tables and their gnuplot
copies, the summary file and the run record written at the end of every
command.
"""

import json
import math
from unittest.mock import patch
import numpy as np
import pandas as pd
import pytest
from sqlalchemy.exc import OperationalError
from PerpetuityLab.accessories.results_io import (
    finish_run,
    flatten_statistics,
    read_summary,
    write_summary,
    write_table,
)
from DB import runs_db

HASH = "ab" * 32


@pytest.fixture
def frame():
    return pd.DataFrame({"eps": [0.5, 0.1], "hits": [10, 0], "censored": [False, True],
                         "label": ["x", "y"]})


# --- Tests for write_table ---
def test_write_table_csv(tmp_path, frame):
    path = write_table(frame, str(tmp_path), "left_tail", HASH)
    table = pd.read_csv(path)
    assert list(table.columns) == ["eps", "hits", "censored", "label", "config_hash"]
    assert set(table["config_hash"]) == {HASH}


def test_write_table_dat_copy(tmp_path, frame):
    write_table(frame, str(tmp_path), "left_tail", HASH)
    lines = (tmp_path / "left_tail.dat").read_text().splitlines()
    assert lines[0] == "# eps hits censored"
    assert lines[1] == "0.5 10 0"
    assert lines[2] == "0.1 0 1"


def test_write_table_jsonl(tmp_path, frame):
    path = write_table(frame, str(tmp_path / "nested"), "left_tail", HASH, fmt="jsonl")
    rows = [json.loads(line) for line in open(path)]
    assert rows[1]["label"] == "y"
    assert rows[0]["config_hash"] == HASH


def test_write_table_is_byte_stable(tmp_path):
    values = pd.DataFrame({"x": [1 / 3, math.pi]})
    first = write_table(values, str(tmp_path / "a"), "t", HASH)
    second = write_table(values, str(tmp_path / "b"), "t", HASH)
    assert open(first, "rb").read() == open(second, "rb").read()
    assert "0.333333333333" in open(first).read()


def test_write_table_unknown_format(tmp_path, frame):
    with pytest.raises(ValueError):
        write_table(frame, str(tmp_path), "left_tail", HASH, fmt="xlsx")


# --- Tests for the summary ---
def test_write_summary_non_finite_values(tmp_path):
    write_summary({"value": math.inf, "ratio": np.float64("nan"), "n": np.int64(3),
                   "ok": np.bool_(True)}, str(tmp_path))
    summary = read_summary(str(tmp_path))
    assert summary == {"value": "inf", "ratio": "nan", "n": 3, "ok": True}


def test_flatten_statistics():
    flat = flatten_statistics({"lambda_star": 0.5, "passed": True, "runs": {"0": {"mu": 0.3}},
                               "grid": [1, 2], "note": "text"})
    assert flat == {"lambda_star": 0.5, "passed": 1.0, "runs.0.mu": 0.3}


# --- Tests for finish_run ---
def test_finish_run_without_store(tmp_path):
    with patch.object(runs_db, "record_run") as mock_record:
        finish_run(str(tmp_path), "transform", HASH, {"lambda_star": 0.5}, seeds=[1],
                   started=0.0, exit_code=0, database_url="none")
    mock_record.assert_not_called()
    summary = read_summary(str(tmp_path))
    assert summary["subcommand"] == "transform"
    assert summary["seeds"] == [1]
    assert summary["config_hash"] == HASH
    assert summary["wall_time_s"] >= 0


def test_finish_run_records_run(tmp_path):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    finish_run(str(tmp_path), "fv", HASH, {"runs": {"0": {"lil_max": 1.1}}}, seeds=[0],
               started=0.0, exit_code=2, database_url=url)
    runs = runs_db.list_runs(database_url=url)
    assert len(runs) == 1
    assert runs[0]["exit_code"] == 2
    assert runs[0]["statistics"] == {"runs.0.lil_max": 1.1}


@patch("PerpetuityLab.accessories.results_io.logger")
def test_finish_run_survives_store_failure(mock_logger, tmp_path):
    failure = OperationalError("INSERT", {}, Exception("disk I/O error"))
    with patch.object(runs_db, "record_run", side_effect=failure):
        path = finish_run(str(tmp_path), "tail", HASH, {}, database_url="sqlite://")
    assert path.endswith("summary.json")
    mock_logger.error.assert_called_once()
