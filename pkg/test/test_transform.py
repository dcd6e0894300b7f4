#!/usr/bin/env python

"""
Unit tests for the transform module.

The numerical transform is checked against the closed forms known for the
Fleming-Viot and PQD measures, together with the structural properties of
phi (monotone, concave, a single crossing of the diagonal at lambda_star)
and the fixed-point iteration. The command is run end to end into a
temporary directory with the run-record store disabled.
"""

import json
import math
import sys
from unittest.mock import patch
import numpy as np
import pandas as pd
import pytest
from PerpetuityLab.accessories.ldm_functions import (
    ConstantLdm, DiscontinuousClosedForm, FlemingViotClosedForm, PqdClosedForm, TabulatedEmpirical
)
from PerpetuityLab.transform import (
    TransformContext,
    fv_minimizer,
    iterate,
    lambda_star,
    lambda_star_closed_pqd,
    lambda_star_value,
    main,
    make_grid,
    parse_arguments,
    phi,
    phi_closed_fv,
    phi_closed_pqd,
    phi_value,
    pqd_minimizer,
    property_report,
)


@pytest.fixture
def fv_ctx():
    return TransformContext(FlemingViotClosedForm())


@pytest.fixture
def pqd_ctx():
    return TransformContext(PqdClosedForm(gamma=1.0, a=0.25, rho=1.0))


# --- Tests for phi ---
@pytest.mark.parametrize("lam", [0.0, 0.05, 0.2, 0.35, 0.49, 0.5, 0.8, 3.0])
def test_phi_matches_fleming_viot_closed_form(fv_ctx, lam):
    assert phi(fv_ctx, lam) == pytest.approx(phi_closed_fv(lam), abs=1e-8)


def test_phi_fleming_viot_minimiser(fv_ctx):
    result = phi_value(fv_ctx, 0.25)
    assert result.boundary is None
    assert result.argmin == pytest.approx(fv_minimizer(0.25), rel=1e-4)


def test_phi_fleming_viot_boundary_beyond_half(fv_ctx):
    result = phi_value(fv_ctx, 0.6)
    assert result.value == 0.5
    assert result.boundary == "infinity"
    assert result.argmin is None


def test_phi_at_zero_is_right_limit():
    ctx = TransformContext(DiscontinuousClosedForm(lambda1=2.0, lambda2=1.0))
    result = phi_value(ctx, 0.0)
    assert result.value == pytest.approx(2.0)
    assert result.boundary == "zero"


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 4.0])
def test_phi_matches_pqd_closed_form(pqd_ctx, lam):
    result = phi_value(pqd_ctx, lam)
    assert result.value == pytest.approx(phi_closed_pqd(1.0, 0.25, 1.0, lam), rel=1e-8)
    assert result.argmin == pytest.approx(pqd_minimizer(1.0, 0.25, 1.0, lam), rel=1e-4)


def test_phi_with_index_two():
    ctx = TransformContext(PqdClosedForm(gamma=0.5, a=0.3, rho=2.0), rho=2.0)
    assert phi(ctx, 1.5) == pytest.approx(phi_closed_pqd(0.5, 0.3, 2.0, 1.5), rel=1e-8)


def test_phi_rejects_negative_lambda(fv_ctx):
    with pytest.raises(ValueError):
        phi(fv_ctx, -0.1)


def test_phi_constant_measure():
    ctx = TransformContext(ConstantLdm(0.7))
    assert phi(ctx, 0.0) == pytest.approx(0.7)
    assert phi(ctx, 5.0) == pytest.approx(0.7)


def test_phi_tabulated_bounds():
    table = TabulatedEmpirical(y=[0.0, 1.0, 4.0], g=[0.25, 0.4, 0.48],
                               ci_lo=[0.2, 0.35, 0.45], ci_hi=[0.3, 0.45, 0.5])
    result = phi_value(TransformContext(table, grid_size=2000), 0.3)
    assert result.ci_lo <= result.value <= result.ci_hi


# --- Tests for lambda_star ---
def test_lambda_star_fleming_viot(fv_ctx):
    assert lambda_star(fv_ctx) == pytest.approx(0.5, abs=1e-8)


def test_lambda_star_pqd(pqd_ctx):
    star = lambda_star_value(pqd_ctx)
    assert star.value == pytest.approx(4.0, rel=1e-8)
    assert star.value == pytest.approx(lambda_star_closed_pqd(1.0, 0.25, 1.0), rel=1e-8)
    assert star.argmin == pytest.approx(2.0, rel=1e-4)


def test_lambda_star_infinite_when_g_blows_up():
    ctx = TransformContext(PqdClosedForm(gamma=1.0, a=1.5, rho=1.0))
    assert lambda_star(ctx) == math.inf
    assert lambda_star_closed_pqd(1.0, 1.5, 1.0) == math.inf


def test_lambda_star_is_fixed_point(pqd_ctx):
    star = lambda_star(pqd_ctx)
    assert phi(pqd_ctx, star) == pytest.approx(star, rel=1e-8)


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("a", [0.05, 0.25, 0.5, 0.7, 0.9])
@pytest.mark.parametrize("gamma", [0.25, 0.5, 1.0, 2.0, 4.0])
def test_pqd_grid_matches_closed_forms(gamma, a, rho):
    ctx = TransformContext(PqdClosedForm(gamma=gamma, a=a, rho=rho), rho=rho)
    assert lambda_star(ctx) == pytest.approx(lambda_star_closed_pqd(gamma, a, rho), rel=1e-8)
    for lam in (0.5, 3.0):
        assert phi(ctx, lam) == pytest.approx(phi_closed_pqd(gamma, a, rho, lam), rel=1e-8)


@pytest.mark.parametrize("a", [1.0, 1.5, 3.0])
@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_pqd_lambda_star_infinite_without_contraction(a, rho):
    ctx = TransformContext(PqdClosedForm(gamma=1.0, a=a, rho=rho), rho=rho)
    assert lambda_star(ctx) == math.inf
    assert lambda_star_closed_pqd(1.0, a, rho) == math.inf


# --- Tests for iterate ---
def test_iterate_converges_monotonically(pqd_ctx):
    trace = iterate(pqd_ctx, 1.0)
    assert trace.guaranteed
    assert trace.converged
    assert trace.is_nondecreasing()
    assert trace.limit == pytest.approx(4.0, rel=1e-6)


def test_iterate_fleming_viot_from_g_at_zero(fv_ctx):
    lambda1 = FlemingViotClosedForm().value_at_zero()
    assert lambda1 == pytest.approx(0.25)
    trace = iterate(fv_ctx, lambda1)
    assert trace.guaranteed
    assert trace.converged
    assert trace.is_nondecreasing()
    assert len(trace.lambdas) <= 201
    assert trace.limit == pytest.approx(0.5, abs=1e-6)
    assert trace.lambdas[1] == pytest.approx(phi_closed_fv(0.25), abs=1e-8)


def test_iterate_from_above_is_not_guaranteed(fv_ctx):
    trace = iterate(fv_ctx, 0.9)
    assert not trace.guaranteed
    assert trace.lambdas[1] == 0.5


def test_iterate_rejects_negative_start(fv_ctx):
    with pytest.raises(ValueError):
        iterate(fv_ctx, -1.0)


# --- Tests for property_report ---
def test_property_report_fleming_viot(fv_ctx):
    report = property_report(fv_ctx, make_grid(0.0, 1.0, 0.1))
    assert report["passed"], report["violations"]
    assert report["crossing"] == pytest.approx(0.5, abs=1e-6)


def test_property_report_pqd(pqd_ctx):
    report = property_report(pqd_ctx, make_grid(0.0, 6.0, 0.5))
    assert report["passed"], report["violations"]
    assert report["crossing"] == pytest.approx(4.0, abs=1e-6)


# --- Tests for the closed forms and make_grid ---
def test_closed_forms():
    assert phi_closed_pqd(0.25, 1.0, 1.0, 0.25) == pytest.approx(1.0)
    assert phi_closed_fv(0.25) == pytest.approx(0.25 * (2 * math.sqrt(0.1875) + 1))
    assert fv_minimizer(0.5) == math.inf


def test_make_grid_includes_stop():
    grid = make_grid(0.0, 1.0, 0.1)
    assert len(grid) == 11
    assert grid[-1] == 1.0
    with pytest.raises(ValueError):
        make_grid(1.0, 0.0, 0.1)


# --- Tests for the command ---
def test_parse_arguments():
    test_args = ["transform", "--law", "pqd", "--gamma", "2", "--lambda_grid", "0", "4", "0.5"]
    with patch.object(sys, "argv", test_args):
        args = parse_arguments()
    assert args.law == "pqd"
    assert args.gamma == 2.0
    assert args.lambda_grid == [0.0, 4.0, 0.5]


def test_main_writes_tables(tmp_path):
    exit_code = main(ldm_spec={"kind": "fleming-viot"}, lambda_grid=[0.0, 1.0, 0.25],
                     out_dir=str(tmp_path), database_url="none")
    assert exit_code == 0

    phi_table = pd.read_csv(tmp_path / "phi.csv")
    assert list(phi_table["lambda"]) == [0.0, 0.25, 0.5, 0.75, 1.0]
    np.testing.assert_allclose(phi_table["phi"], [phi_closed_fv(l) for l in phi_table["lambda"]],
                               atol=1e-8)
    assert phi_table["config_hash"].nunique() == 1
    assert (tmp_path / "phi.dat").exists()
    assert (tmp_path / "trace.csv").exists()

    with open(tmp_path / "summary.json") as handle:
        summary = json.load(handle)
    assert summary["subcommand"] == "transform"
    assert summary["exit_code"] == 0
    assert summary["statistics"]["lambda_star"] == pytest.approx(0.5, abs=1e-8)
    assert summary["config_hash"] == phi_table["config_hash"][0]


def test_main_is_deterministic(tmp_path):
    for name in ("first", "second"):
        main(ldm_spec={"kind": "pqd", "gamma": 1.0, "a": 0.25}, lambda_grid=[0.0, 2.0, 1.0],
             out_dir=str(tmp_path / name), database_url="none")
    assert (tmp_path / "first" / "phi.csv").read_bytes() == \
        (tmp_path / "second" / "phi.csv").read_bytes()


@patch("PerpetuityLab.transform.logger")
def test_main_logs_invalid_ldm(mock_logger, tmp_path):
    with pytest.raises(ValueError):
        main(ldm_spec={"kind": "nonsense"}, out_dir=str(tmp_path), database_url="none")
    mock_logger.error.assert_called_once()
