#!/usr/bin/env python

"""
Unit tests for dependence.py.

The Monte Carlo trajectories of g are compared with the exact small-ball
probabilities of the discontinuous law, whose measure jumps from
g(0) = lambda2 to g(0+) = lambda1. The command is run end to end into a
temporary directory with the run-record store disabled.
"""

import json
import math
import sys
from unittest.mock import patch
import numpy as np
import pandas as pd
import pytest
from PerpetuityLab.accessories.coefficient_laws import discontinuous_ldm
from PerpetuityLab.accessories.ldm_functions import exponent_table
from PerpetuityLab.accessories.tail_scale import H1
from PerpetuityLab.dependence import (
    exponent_standard_error,
    ldm_trajectories,
    main,
    parse_arguments,
    separation,
)

EPS = [0.4, 0.3, 0.2]


@pytest.fixture(scope="module")
def discontinuous_run():
    return ldm_trajectories(discontinuous_ldm(2.0, 1.0), [0.0, 0.01], H1, EPS, 500_000,
                            seed=3, threads=1)


# --- Tests for exponent_standard_error ---
def test_exponent_standard_error():
    table = exponent_table([400, 100, 0], 10_000, EPS, H1)
    se = exponent_standard_error(table, H1)
    assert se[0] == pytest.approx(math.sqrt(0.96 / 400) * 0.4)
    assert se[1] == pytest.approx(math.sqrt(0.99 / 100) * 0.3)
    assert se[2] == math.inf


# --- Tests for separation ---
def test_separation_uses_last_common_cell():
    first = exponent_table([400, 100, 0], 10_000, EPS, H1)
    second = exponent_table([100, 20, 0], 10_000, EPS, H1)
    gap = separation(first, second, H1)
    assert gap["eps"] == 0.3
    assert gap["difference"] == pytest.approx(0.3 * math.log(5.0))
    joint = math.hypot(math.sqrt(0.99 / 100) * 0.3, math.sqrt(0.998 / 20) * 0.3)
    assert gap["joint_se"] == pytest.approx(joint)
    assert gap["n_se"] == pytest.approx(0.3 * math.log(5.0) / joint)


def test_separation_without_common_cell():
    first = exponent_table([0, 0, 0], 100, EPS, H1)
    gap = separation(first, first, H1)
    assert math.isnan(gap["n_se"])


def test_separation_needs_same_grid():
    with pytest.raises(ValueError):
        separation(exponent_table([5], 100, [0.4], H1), exponent_table([5], 100, [0.3], H1), H1)


# --- Tests for ldm_trajectories ---
def test_trajectories_match_exact_values(discontinuous_run):
    tables, frame = discontinuous_run
    assert list(frame.columns[:2]) == ["y", "eps"]
    for y, table in zip([0.0, 0.01], tables):
        rows = frame[frame["y"] == y]
        assert not table.censored.any()
        errors = np.abs(rows["exponent"] - rows["exact"]) / rows["se"]
        assert (errors < 5).all(), rows


def test_jump_at_zero_is_resolved(discontinuous_run):
    tables, _ = discontinuous_run
    gap = separation(tables[0], tables[1], H1)
    assert gap["eps"] == 0.2
    assert gap["difference"] > 0
    assert gap["n_se"] >= 3


def test_trajectories_are_reproducible():
    law = discontinuous_ldm(2.0, 1.0)
    first, _ = ldm_trajectories(law, [0.0], H1, [0.5], 20_000, seed=8, threads=1)
    second, _ = ldm_trajectories(law, [0.0], H1, [0.5], 20_000, seed=8, threads=2)
    np.testing.assert_array_equal(first[0].hits, second[0].hits)


# --- Tests for the command ---
def test_parse_arguments():
    test_args = ["dependence", "--law", "discontinuous-ldm", "--lambda1", "2", "--lambda2", "1",
                 "--y", "0", "0.01", "--samples", "1000", "--min_separation", "3"]
    with patch.object(sys, "argv", test_args):
        args = parse_arguments()
    assert args.y == [0.0, 0.01]
    assert args.samples == 1000
    assert args.min_separation == 3.0
    assert args.eps_grid == [0.2, 0.1, 0.05, 0.02]


def test_main_writes_trajectories(tmp_path):
    exit_code = main(law_spec={"kind": "fleming-viot"}, y=[0.0], eps_grid=[0.5, 0.3],
                     samples=20_000, seed=2, out_dir=str(tmp_path), database_url="none")
    assert exit_code == 0
    table = pd.read_csv(tmp_path / "dependence.csv")
    assert len(table) == 2
    assert np.isfinite(table["exact"]).all()
    assert table["config_hash"].nunique() == 1
    with open(tmp_path / "summary.json") as handle:
        summary = json.load(handle)
    assert summary["subcommand"] == "dependence"
    assert "0.0" in summary["statistics"]["by_y"]


def test_main_fails_on_missing_separation(tmp_path):
    exit_code = main(law_spec={"kind": "discontinuous-ldm", "lambda1": 2.0, "lambda2": 1.0},
                     y=[0.0, 0.0], eps_grid=[0.5, 0.4], samples=50_000, min_separation=5.0,
                     out_dir=str(tmp_path), database_url="none")
    assert exit_code == 2


@patch("PerpetuityLab.dependence.logger")
def test_main_logs_invalid_law(mock_logger, tmp_path):
    with pytest.raises(ValueError):
        main(law_spec={"kind": "discontinuous-ldm", "lambda1": 1.0, "lambda2": 2.0},
             samples=10, out_dir=str(tmp_path), database_url="none")
    mock_logger.error.assert_called_once()
