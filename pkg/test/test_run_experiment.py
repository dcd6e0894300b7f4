#!/usr/bin/env python

"""
Unit tests for run_experiment.py.

Configs are written to a temporary directory and run end to end with the
run-record store disabled, except where the dispatch itself is under test.
"""

import json
import sys
from unittest.mock import patch
import pandas as pd
import pytest
from PerpetuityLab.accessories.config import ConfigError, config_from_dict, config_hash
from PerpetuityLab.run_experiment import dispatch, main, parse_arguments


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


# --- Tests for parse_arguments ---
def test_parse_arguments():
    test_args = ["run", "--config", "configs/fv_lil.json", "--seed", "7", "--format", "jsonl"]
    with patch.object(sys, "argv", test_args):
        args = parse_arguments()
    assert args.config == "configs/fv_lil.json"
    assert args.seed == 7
    assert args.format == "jsonl"
    assert args.out is None


# --- Tests for main ---
def test_transform_config_end_to_end(tmp_path):
    data = {"subcommand": "transform", "law": {"kind": "fleming-viot"},
            "lambda_grid": [0.0, 1.0, 0.5]}
    out_dir = tmp_path / "out"
    exit_code = main(config=write_config(tmp_path, data), out_dir=str(out_dir),
                     database_url="none")
    assert exit_code == 0
    phi_table = pd.read_csv(out_dir / "phi.csv")
    assert len(phi_table) == 3
    # The stamped hash is that of the config after the --out override
    expected = config_hash({**data, "out": str(out_dir)})
    assert set(phi_table["config_hash"]) == {expected}


def test_seed_override_changes_hash(tmp_path):
    data = {"subcommand": "schedule", "eps_tilde": 1.0, "lambda_star": 0.5, "epsilon": 0.1,
            "y_star": 2.0, "c": 0.25, "n_max": 50}
    path = write_config(tmp_path, data)
    main(config=path, out_dir=str(tmp_path / "a"), seed=1, database_url="none")
    main(config=path, out_dir=str(tmp_path / "b"), seed=2, database_url="none")
    first = pd.read_csv(tmp_path / "a" / "schedule.csv")
    second = pd.read_csv(tmp_path / "b" / "schedule.csv")
    assert first["config_hash"][0] != second["config_hash"][0]
    with open(tmp_path / "b" / "summary.json") as handle:
        assert json.load(handle)["seeds"] == [2]


@patch("PerpetuityLab.run_experiment.logger")
def test_invalid_config_is_logged(mock_logger, tmp_path):
    path = write_config(tmp_path, {"subcommand": "tail", "law": {"kind": "fleming-viot"}})
    with pytest.raises(ConfigError) as error:
        main(config=path, out_dir=str(tmp_path), database_url="none")
    assert error.value.field == "n_steps"
    mock_logger.error.assert_called_once()


@patch("PerpetuityLab.run_experiment.logger")
def test_missing_config_is_logged(mock_logger, tmp_path):
    with pytest.raises(FileNotFoundError):
        main(config=str(tmp_path / "absent.json"), database_url="none")
    mock_logger.error.assert_called_once()


# --- Tests for dispatch ---
def test_dispatch_transform_needs_closed_form(tmp_path):
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("0.5,1.0\n")
    config = config_from_dict({"subcommand": "transform",
                               "law": {"kind": "empirical-file", "path": str(pairs)}})
    with pytest.raises(ConfigError) as error:
        dispatch(config, database_url="none")
    assert error.value.field == "law"


def test_dispatch_rejects_bad_lambda_grid():
    config = config_from_dict({"subcommand": "transform", "law": {"kind": "fleming-viot"},
                               "lambda_grid": [0.0, 1.0]})
    with pytest.raises(ConfigError) as error:
        dispatch(config, database_url="none")
    assert error.value.field == "lambda_grid"


def test_dispatch_passes_options_to_simulate(tmp_path):
    config = config_from_dict({"subcommand": "simulate", "law": {"kind": "fleming-viot"},
                               "n_steps": 10, "replicas": 5, "seeds": [4],
                               "out": str(tmp_path)})
    with patch("PerpetuityLab.perpetuity.simulate_main", return_value=0) as mock_simulate:
        assert dispatch(config, threads=2, database_url="none") == 0
    kwargs = mock_simulate.call_args.kwargs
    assert kwargs["law_spec"] == {"kind": "fleming-viot"}
    assert kwargs["n_steps"] == 10
    assert kwargs["replicas"] == 5
    assert kwargs["seeds"] == [4]
    assert kwargs["threads"] == 2
    assert kwargs["config_hash"] == config.config_hash
    assert kwargs["out_dir"] == str(tmp_path)


def test_dispatch_fv_band_length():
    config = config_from_dict({"subcommand": "fv", "n_steps": 1000, "lil_band": [0.5]})
    with pytest.raises(ConfigError) as error:
        dispatch(config, database_url="none")
    assert error.value.field == "lil_band"


def test_dispatch_passes_options_to_dependence(tmp_path):
    config = config_from_dict({"subcommand": "dependence",
                               "law": {"kind": "discontinuous-ldm", "lambda1": 2, "lambda2": 1},
                               "y": [0.0, 0.01], "eps_grid": [0.4, 0.2], "samples": 1000,
                               "min_separation": 3.0, "seeds": [6], "out": str(tmp_path)})
    with patch("PerpetuityLab.dependence.main", return_value=2) as mock_dependence:
        assert dispatch(config, threads=3, database_url="none") == 2
    kwargs = mock_dependence.call_args.kwargs
    assert kwargs["law_spec"]["kind"] == "discontinuous-ldm"
    assert kwargs["y"] == [0.0, 0.01]
    assert kwargs["eps_grid"] == [0.4, 0.2]
    assert kwargs["min_separation"] == 3.0
    assert kwargs["seeds"] == [6]
    assert kwargs["threads"] == 3
    assert kwargs["scale_spec"] == {"rho": 1.0, "beta": 0.0, "scale": 1.0}
    assert kwargs["config_hash"] == config.config_hash
