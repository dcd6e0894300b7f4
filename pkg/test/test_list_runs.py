#!/usr/bin/env python

"""
Unit tests for list_runs.py, against a run-record database in tmp_path.
"""

import sys
from unittest.mock import patch
import pytest
from sqlalchemy.exc import OperationalError
from DB.runs_db import record_run
from PerpetuityLab.list_runs import format_run, main, parse_arguments

HASH_A = "3fa1" + "0" * 60
HASH_B = "77c2" + "0" * 60


@pytest.fixture
def database_url(tmp_path):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    record_run("transform", HASH_A, [0], 0.25, 0, {"lambda_star": 0.5}, database_url=url)
    record_run("fv", HASH_B, [1, 2], 10.0, 2, {"lil_max_median": 1.5}, database_url=url)
    return url


def test_parse_arguments():
    with patch.object(sys, "argv", ["runs", "--config_hash", "3fa1"]):
        assert parse_arguments().config_hash == "3fa1"


def test_format_run():
    run = {"id": 4, "created": "2026-01-01T00:00:00", "subcommand": "tail",
           "config_hash": HASH_A, "seeds": [1, 2], "wall_time": 1.234, "exit_code": 0,
           "version": "1.0.0", "statistics": {"right_slope": -0.5, "left_final_exponent": None}}
    lines = format_run(run).splitlines()
    assert lines[0] == ("#4 2026-01-01T00:00:00 tail hash=3fa100000000 seeds=1,2 exit=0 "
                        "wall=1.23s v1.0.0")
    assert lines[1] == "    left_final_exponent = -"
    assert lines[2] == "    right_slope = -0.5"


def test_main_lists_all_runs(database_url, capsys):
    assert main(database_url=database_url) == 0
    output = capsys.readouterr().out
    assert "transform hash=3fa1" in output
    assert "fv hash=77c2" in output
    assert "lambda_star = 0.5" in output


def test_main_filters_by_hash_prefix(database_url, capsys):
    main(config_hash="77c2", database_url=database_url)
    output = capsys.readouterr().out
    assert "fv hash=77c2" in output
    assert "transform" not in output


def test_main_no_runs(database_url, capsys):
    main(config_hash="ffff", database_url=database_url)
    assert "No runs recorded." in capsys.readouterr().out


@patch("PerpetuityLab.list_runs.logger")
def test_main_logs_store_errors(mock_logger):
    failure = OperationalError("SELECT", {}, Exception("no such table"))
    with patch("DB.runs_db.list_runs", side_effect=failure):
        with pytest.raises(OperationalError):
            main(database_url="sqlite://")
    mock_logger.error.assert_called_once()


def test_main_store_disabled(capsys):
    with patch("DB.runs_db.list_runs") as mock_list:
        assert main(database_url="none") == 0
    mock_list.assert_not_called()
    assert "Run store disabled" in capsys.readouterr().out


def test_main_store_disabled_from_environment(capsys):
    with patch("PerpetuityLab.list_runs.DATABASE_URL", "none"):
        assert main() == 0
    assert "Run store disabled" in capsys.readouterr().out


def test_main_passes_hash_to_store(database_url):
    with patch("DB.runs_db.list_runs", return_value=[]) as mock_list:
        main(config_hash="3fa1", database_url=database_url)
    mock_list.assert_called_once_with("3fa1", database_url=database_url)
