"""
Unit tests for the envelope_schedule module.

With H(x) = 1/x, eps_tilde = 1, lambda* = 1/2, eps = 0.1 and y* = 2 the
increment is f(x) = log2(log x / 0.55), so the smallest admissible start is
a_0 = 4 and f(exp(2.2)) = 2 exactly.
"""

import math
import sys
from dataclasses import replace
from unittest.mock import patch
import pandas as pd
import pytest
from PerpetuityLab.accessories.tail_scale import H1
from PerpetuityLab.envelope_schedule import (
    ScheduleParameterError,
    ScheduleParams,
    build_envelope_schedule,
    main,
    parse_arguments,
    schedule_step,
    smallest_start,
)


@pytest.fixture
def params():
    return ScheduleParams(eps_tilde=1.0, lambda_star=0.5, epsilon=0.1, y_star=2.0, c=0.25)


# --- Tests for ScheduleParams ---
@pytest.mark.parametrize("kwargs", [
    {"eps_tilde": 0.0},
    {"lambda_star": -0.5},
    {"epsilon": math.inf},
    {"y_star": 1.0},
    {"c": 2.0},
    {"c": 0.0},
])
def test_schedule_params_invalid(kwargs):
    values = {"eps_tilde": 1.0, "lambda_star": 0.5, "epsilon": 0.1, "y_star": 2.0, "c": 0.25}
    values.update(kwargs)
    with pytest.raises(ScheduleParameterError):
        ScheduleParams(**values)


def test_schedule_params_level(params):
    assert params.level == pytest.approx(0.55)
    assert params.to_dict()["c"] == 0.25


# --- Tests for schedule_step and smallest_start ---
def test_schedule_step(params):
    assert schedule_step(params, H1, math.exp(2.2)) == pytest.approx(2.0)
    assert schedule_step(params, H1, 4.0) == pytest.approx(math.log2(math.log(4.0) / 0.55))


def test_schedule_step_domain(params):
    with pytest.raises(ScheduleParameterError):
        schedule_step(params, H1, 1.0)


def test_smallest_start(params):
    assert smallest_start(params, H1) == 4


def test_smallest_start_large():
    # f(a) >= 1 needs log a >= 27.5, far beyond the first doubling steps
    params = ScheduleParams(eps_tilde=0.2, lambda_star=0.5, epsilon=0.1, y_star=10.0, c=0.05)
    a0 = smallest_start(params, H1)
    assert schedule_step(params, H1, a0) >= 1
    assert schedule_step(params, H1, a0 - 1) < 1


def test_smallest_start_out_of_reach():
    params = ScheduleParams(eps_tilde=0.01, lambda_star=0.5, epsilon=0.1, y_star=10.0, c=0.05)
    with pytest.raises(ScheduleParameterError):
        smallest_start(params, H1)


# --- Tests for build_envelope_schedule ---
def test_build_envelope_schedule(params):
    schedule = build_envelope_schedule(params, H1, n_max=200)
    assert schedule.k_seq[0] == 4
    assert schedule.k_seq[1] == 6
    assert schedule.checks["a0"] == 4
    assert schedule.checks["step_at_least_one"]
    assert schedule.checks["k_strictly_increasing"]
    assert schedule.checks["growth_holds"]
    assert schedule.burn_in == 0
    assert schedule.K == pytest.approx(6 ** 0.9)
    assert schedule.stable
    assert schedule.passed


def test_build_envelope_schedule_full_length(params):
    schedule = build_envelope_schedule(params, H1, n_max=10_000, horizon=100_000)
    assert schedule.horizon == 100_000
    assert schedule.burn_in is not None
    assert schedule.checks["step_at_least_one"]
    assert schedule.checks["k_strictly_increasing"]
    assert schedule.checks["growth_holds"]
    assert schedule.K_horizon == pytest.approx(schedule.K, rel=1e-9)
    assert schedule.stable
    assert schedule.passed
    assert len(schedule.a_seq) == 10_001


def test_stability_horizon_extends_short_runs(params):
    schedule = build_envelope_schedule(params, H1, n_max=50, horizon=10)
    assert schedule.horizon == 100
    assert schedule.K_horizon <= schedule.K * (1 + 1e-9)


def test_stability_tolerates_rounding(params):
    schedule = build_envelope_schedule(params, H1, n_max=200)
    nudged = replace(schedule, K_horizon=schedule.K * (1 + 1e-12))
    assert nudged.stable
    grown = replace(schedule, K_horizon=schedule.K * 1.01)
    assert not grown.stable
    assert not grown.passed


def test_schedule_frame(params):
    frame = build_envelope_schedule(params, H1, n_max=50).to_frame()
    assert len(frame) == 51
    assert list(frame.columns) == ["n", "a", "k", "log_upper_margin", "log_lower_margin",
                                   "growth"]
    assert (frame["log_upper_margin"].iloc[:-1] < 0).all()
    assert (frame["log_lower_margin"].iloc[:-1] >= 0).all()


def test_build_envelope_schedule_invalid(params):
    with pytest.raises(ScheduleParameterError):
        build_envelope_schedule(params, H1, n_max=1)
    with pytest.raises(ScheduleParameterError):
        build_envelope_schedule(params, H1, gamma=1.5)


# --- Tests for the command ---
def test_parse_arguments():
    test_args = ["schedule", "--eps_tilde", "1", "--lambda_star", "0.5", "--epsilon", "0.1",
                 "--y_star", "2", "--c", "0.25", "--n_max", "100"]
    with patch.object(sys, "argv", test_args):
        args = parse_arguments()
    assert args.n_max == 100
    assert args.gamma == 0.9
    assert args.rho == 1.0
    assert args.horizon == 100_000


def test_main_writes_schedule(tmp_path):
    exit_code = main(eps_tilde=1.0, lambda_star=0.5, epsilon=0.1, y_star=2.0, c=0.25,
                     n_max=100, out_dir=str(tmp_path), database_url="none")
    assert exit_code == 0
    frame = pd.read_csv(tmp_path / "schedule.csv")
    assert len(frame) == 101
    assert frame["k"].iloc[0] == 4


@patch("PerpetuityLab.envelope_schedule.logger")
def test_main_logs_invalid_parameters(mock_logger, tmp_path):
    with pytest.raises(ScheduleParameterError):
        main(eps_tilde=1.0, lambda_star=0.5, epsilon=0.1, y_star=0.5, c=0.25,
             out_dir=str(tmp_path), database_url="none")
    mock_logger.error.assert_called_once()
