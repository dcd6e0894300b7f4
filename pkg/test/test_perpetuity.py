#!/usr/bin/env python

"""
Unit tests for the perpetuity module.

The tests cover:
- The affine recursion and chain runner: storage, determinism, independence
  from the worker count and overflow handling.
- The truncated series and its agreement in law with the chain.
- Left- and right-tail estimators, the linear bound constant and the
  stochastic monotonicity check.
- The envelope statistic, the ergodic sandwich and the convergence report.
- The simulate, tail and envelope commands, run into a temporary directory
  with the run-record store disabled.
"""

import json
import math
from unittest.mock import patch
import numpy as np
import pandas as pd
import pytest
from PerpetuityLab.accessories.coefficient_laws import fleming_viot, pqd_synthetic
from PerpetuityLab.accessories.streams import make_rng
from PerpetuityLab.accessories.tail_scale import H1
from PerpetuityLab.flemingviot import run_fv
from PerpetuityLab.perpetuity import (
    ChainConfig,
    InsufficientTailDataError,
    ReplicaOverflowError,
    affine_recursion,
    convergence_report,
    envelope_main,
    envelope_statistic,
    ergodic_average_check,
    estimate_left_tail,
    exponent_by_checkpoint,
    geometric_indices,
    kesten_right_tail,
    linear_bound_constant,
    ramp_function,
    run_chain,
    simulate_main,
    simulate_series,
    stochastic_monotonicity_check,
    tail_main,
    unit_function,
)
from PerpetuityLab.transform import phi_closed_fv


@pytest.fixture
def halving_law():
    """A = 1/2 and B = 1 deterministically, so X_n = 2 - 2**(1-n) from 0."""
    return pqd_synthetic(0.5, b_const=1.0)


@pytest.fixture
def exploding_law():
    """A = 4 and B = 1: X_n = (4**n - 1)/3 first exceeds 1e300 at n = 500."""
    return pqd_synthetic(4.0, b_const=1.0)


# --- Tests for the recursion and ChainConfig ---
def test_affine_recursion():
    out = affine_recursion(0.0, np.array([0.5, 0.5, 0.5]), np.ones(3))
    np.testing.assert_allclose(out, [1.0, 1.5, 1.75])


def test_geometric_indices_end_at_n_max():
    grid = geometric_indices(12345, 50)
    assert grid[0] == 1
    assert grid[-1] == 12345
    assert np.all(np.diff(grid) > 0)


@pytest.mark.parametrize("kwargs", [
    {"n_steps": 0},
    {"n_steps": 10, "replicas": 0},
    {"n_steps": 10, "x0": -1.0},
    {"n_steps": 10, "checkpoints": (5, 11)},
])
def test_chain_config_invalid(halving_law, kwargs):
    with pytest.raises(ValueError):
        ChainConfig(law=halving_law, **kwargs)


def test_chain_config_storage(halving_law):
    assert list(ChainConfig(halving_law, 5).storage_indices()) == [1, 2, 3, 4, 5]
    assert list(ChainConfig(halving_law, 5, replicas=3).storage_indices()) == [5]
    assert list(ChainConfig(halving_law, 5, checkpoints=(0, 2)).storage_indices()) == [0, 2, 5]


# --- Tests for run_chain ---
def test_run_chain_single_replica(halving_law):
    run = run_chain(ChainConfig(halving_law, 3))
    np.testing.assert_allclose(run.trajectory(), [1.0, 1.5, 1.75])
    assert math.isnan(run.envelope[0, 1])
    assert run.envelope[0, 2] == pytest.approx(1.75 * math.log(3))
    assert not run.overflowed.any()


def test_run_chain_is_deterministic():
    cfg = ChainConfig(fleming_viot(), 200, seed=9)
    np.testing.assert_array_equal(run_chain(cfg).values, run_chain(cfg).values)


def test_run_chain_independent_of_threads():
    cfg = ChainConfig(fleming_viot(), 20, replicas=300, seed=2)
    inline = run_chain(cfg, threads=1, block_size=100)
    pooled = run_chain(cfg, threads=3, block_size=100)
    np.testing.assert_array_equal(inline.final, pooled.final)


def test_run_chain_keeps_starting_value(halving_law):
    run = run_chain(ChainConfig(halving_law, 4, replicas=2, x0=2.0, checkpoints=(0, 2)))
    np.testing.assert_allclose(run.at(0), [2.0, 2.0])
    np.testing.assert_allclose(run.at(2), [2.0, 2.0])
    with pytest.raises(KeyError):
        run.at(3)


def test_run_chain_matches_fleming_viot_run():
    """Both runners draw (Y1, T1) in the same layout, so X_n agrees exactly."""
    chain = run_chain(ChainConfig(fleming_viot(), 1000, seed=5))
    fv = run_fv(1000, seed=5)
    np.testing.assert_array_equal(chain.trajectory(), fv.trajectory["x"].to_numpy())


def test_run_chain_single_replica_overflow(exploding_law):
    with pytest.raises(ReplicaOverflowError):
        run_chain(ChainConfig(exploding_law, 600))


def test_run_chain_replica_overflow_is_marked(exploding_law):
    run = run_chain(ChainConfig(exploding_law, 600, replicas=2, checkpoints=(499, 600)))
    np.testing.assert_array_equal(run.overflow_step, [500, 500])
    assert np.all(np.isfinite(run.at(499)))
    assert np.all(np.isnan(run.final))


# --- Tests for simulate_series ---
def test_simulate_series_partial_sums(halving_law):
    result = simulate_series(halving_law, 3, make_rng(0), size=2)
    np.testing.assert_allclose(result.partial_sum, [1.75, 1.75])
    np.testing.assert_allclose(result.product, [0.125, 0.125])
    assert not result.converged.any()


def test_simulate_series_converges(halving_law):
    assert simulate_series(halving_law, 60, make_rng(0)).converged[0]


def test_simulate_series_overflow(exploding_law):
    with pytest.raises(ReplicaOverflowError):
        simulate_series(exploding_law, 600, make_rng(0))
    assert simulate_series(exploding_law, 600, make_rng(0), size=2).overflowed.all()


def test_simulate_series_needs_a_term(halving_law):
    with pytest.raises(ValueError):
        simulate_series(halving_law, 0, make_rng(0))


# --- Tests for the tail estimators ---
def test_estimate_left_tail_counts_strictly_below():
    samples = np.append(np.arange(1, 1001) / 1000, np.nan)
    table = estimate_left_tail(samples, H1, [0.5, 0.1])
    np.testing.assert_array_equal(table.hits, [499, 99])
    assert table.exponent[0] == pytest.approx(-math.log(0.499) * 0.5)


def test_kesten_right_tail_pareto():
    samples = np.random.default_rng(17).pareto(1.5, 200_000) + 1.0
    report = kesten_right_tail(samples)
    assert report.usable.all()
    assert report.slope == pytest.approx(-1.5, abs=0.1)


def test_kesten_right_tail_needs_data():
    with pytest.raises(InsufficientTailDataError):
        kesten_right_tail(np.zeros(100))
    with pytest.raises(InsufficientTailDataError):
        kesten_right_tail(np.arange(1.0, 201.0), x_grid=[150.0, 160.0, 170.0])


def test_linear_bound_constant():
    result = linear_bound_constant([1.0, 4.0, 16.0, 100.0], z_grid=[0.25, 0.5, 1.0])
    np.testing.assert_allclose(result["ratio"], [2.0, 1.5, 1.0])
    assert result["c1"] == 2.0


def test_stochastic_monotonicity_fleming_viot():
    cfg = ChainConfig(fleming_viot(), 1, replicas=4000, seed=12)
    report = stochastic_monotonicity_check(cfg, [1, 5, 20])
    assert report["checkpoints"] == [1, 5, 20]
    assert report["passed"], report["violations"]
    assert len(report["max_excess"]) == 2


def test_stochastic_monotonicity_needs_zero_start(halving_law):
    with pytest.raises(ValueError):
        stochastic_monotonicity_check(ChainConfig(halving_law, 5, x0=1.0), [1, 2])


# --- Tests for envelope_statistic ---
def test_envelope_statistic_from_array():
    statistic = envelope_statistic([1.0, 1.5, 1.75, 1.875])
    assert statistic.final == pytest.approx(1.75 * math.log(3))
    assert statistic.argmin_n == 3
    assert list(statistic.n) == [3, 4]


def test_envelope_statistic_from_run_matches_array():
    run = run_chain(ChainConfig(fleming_viot(), 500, seed=4))
    from_run = envelope_statistic(run)
    from_array = envelope_statistic(run.trajectory())
    assert from_run.final == pytest.approx(from_array.final, rel=1e-12)
    assert from_run.argmin_n == from_array.argmin_n


def test_envelope_statistic_needs_three_steps(halving_law):
    with pytest.raises(ValueError):
        envelope_statistic([1.0, 2.0])
    with pytest.raises(ValueError):
        envelope_statistic(run_chain(ChainConfig(halving_law, 5, replicas=2)))


# --- Tests for the ergodic sandwich ---
def test_ramp_function():
    f = ramp_function(2.0)
    np.testing.assert_allclose(f([0.0, 1.0, 1.5, 2.0, 3.0]), [1.0, 1.0, 0.5, 0.0, 0.0])
    with pytest.raises(ValueError):
        ramp_function(0.0)


def test_ergodic_average_check_unit_function():
    rng = np.random.default_rng(0)
    result = ergodic_average_check(rng.random(1000), rng.random(1000), unit_function)
    assert result["passed"]
    assert result["expected"] == 1.0
    assert result["tolerance"] == 0.0


def test_ergodic_average_check_uniform_draws():
    rng = np.random.default_rng(1)
    result = ergodic_average_check(rng.random(20000), rng.random(20000), ramp_function(1.0),
                                   subsequence=2)
    assert result["passed"]
    assert result["expected"] == pytest.approx(0.75, abs=0.02)
    assert len(result["window_averages"]) == 10


def test_ergodic_average_check_detects_mismatch():
    result = ergodic_average_check(np.zeros(100), np.full(100, 0.9), ramp_function(1.0))
    assert not result["passed"]


# --- Tests for convergence_report and exponent_by_checkpoint ---
def test_convergence_report_fleming_viot():
    report = convergence_report(fleming_viot(), n=5000, seed=1)
    assert report["convergence_condition_met"]
    assert not report["diverging"]


def test_convergence_report_flags_divergence(exploding_law):
    report = convergence_report(exploding_law, n=1000, probe_steps=600, probe_replicas=5)
    assert not report["convergence_condition_met"]
    assert report["diverging"]
    assert report["overflow_fraction"] == 1.0


def test_exponent_by_checkpoint_fleming_viot():
    cfg = ChainConfig(fleming_viot(), 1, replicas=2000, seed=3)
    frame, report = exponent_by_checkpoint(cfg, [1, 2, 3], eps=0.5)
    assert list(frame["n"]) == [1, 2, 3]
    assert frame["lambda_n"][0] == pytest.approx(0.25)
    assert frame["lambda_n"][1] == pytest.approx(phi_closed_fv(0.25), abs=1e-8)
    assert set(report) == {"monotone", "violations"}


def test_exponent_by_checkpoint_rejects_zero(halving_law):
    with pytest.raises(ValueError):
        exponent_by_checkpoint(ChainConfig(halving_law, 5, replicas=2), [0, 1], eps=0.5)


# --- Tests for the commands ---
def _summary(out_dir):
    with open(out_dir / "summary.json") as handle:
        return json.load(handle)


def test_simulate_main_single_trajectory(tmp_path):
    exit_code = simulate_main(law_spec={"kind": "pqd-synthetic", "a": 0.5, "b_const": 1.0},
                              n_steps=3, out_dir=str(tmp_path), database_url="none")
    assert exit_code == 0
    chain = pd.read_csv(tmp_path / "chain.csv")
    np.testing.assert_allclose(chain["x"], [1.0, 1.5, 1.75])
    summary = _summary(tmp_path)
    assert summary["subcommand"] == "simulate"
    assert summary["statistics"]["final_mean"] == pytest.approx(1.75)


def test_simulate_main_series_agrees_with_chain(tmp_path):
    exit_code = simulate_main(law_spec={"kind": "fleming-viot"}, n_steps=40, replicas=2000,
                              series=True, seed=6, out_dir=str(tmp_path), database_url="none")
    assert exit_code == 0
    statistics = _summary(tmp_path)["statistics"]
    assert statistics["series_ks"] <= statistics["series_band"]
    assert len(pd.read_csv(tmp_path / "chain.csv")) == 1


@patch("PerpetuityLab.perpetuity.logger")
def test_simulate_main_logs_invalid_length(mock_logger, tmp_path):
    with pytest.raises(ValueError):
        simulate_main(law_spec={"kind": "fleming-viot"}, n_steps=0, out_dir=str(tmp_path),
                      database_url="none")
    mock_logger.error.assert_called_once()


def test_tail_main_writes_tables(tmp_path):
    exit_code = tail_main(law_spec={"kind": "fleming-viot"}, n_steps=30, replicas=5000,
                          eps_grid=[0.5, 0.2], monotonicity_checkpoints=[1, 10], seed=2,
                          out_dir=str(tmp_path), database_url="none")
    assert exit_code == 0
    left = pd.read_csv(tmp_path / "left_tail.csv")
    assert list(left["eps"]) == [0.5, 0.2]
    statistics = _summary(tmp_path)["statistics"]
    assert statistics["monotonicity_passed"]
    assert "linear_bound_c1" in statistics


def test_envelope_main_band(tmp_path):
    inside = envelope_main(law_spec={"kind": "fleming-viot"}, n_steps=2000, seeds=[1, 2],
                           band=[0.0, 1e9], out_dir=str(tmp_path / "inside"),
                           database_url="none")
    outside = envelope_main(law_spec={"kind": "fleming-viot"}, n_steps=2000, seeds=[1, 2],
                            band=[1e6, 1e7], out_dir=str(tmp_path / "outside"),
                            database_url="none")
    assert (inside, outside) == (0, 2)
    frame = pd.read_csv(tmp_path / "inside" / "envelope.csv")
    assert set(frame["seed"]) == {1, 2}
    assert _summary(tmp_path / "inside")["statistics"]["fraction_in_band"] == 1.0
