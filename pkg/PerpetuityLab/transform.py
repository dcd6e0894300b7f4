#!/usr/bin/env python

"""
Legendre-type transform of a local dependence measure and its fixed point.

For a local dependence measure g and an index rho > 0,

    phi(lambda)  = inf_{y > 0} { g(y) + lambda / y**rho },
    lambda_star  = inf_{y > 1} { y**rho g(y) / (y**rho - 1) }.

phi maps the left-tail exponent of X to that of A X + B, and lambda_star is
its unique fixed point, the exponent of the solution of X = A X + B.

Both infima are computed numerically. The search grid is laid out in
u = 1/(1+y) (for phi) or u = 1/y (for lambda_star), so that the y -> inf
boundary becomes a grid end and its limiting value is compared explicitly.
The best grid cell is then polished by golden-section search in log y.

Command-Line Arguments
----------------------
--law : str
    'fleming-viot', 'pqd', 'discontinuous' or 'constant' (closed-form LDMs),
    or 'table' with --ldm_table.
--gamma, --a : float
    Parameters of the PQD closed form.
--g0, --g0_plus : float
    g(0) and g(0+) of the discontinuous LDM; --g0 is also the constant level.
--rho : float
    Index of the scale H.
--ldm_table : str
    CSV of a tabulated LDM (y, g, ci_lo, ci_hi).
--lambda_grid : float float float
    start stop step of the lambda grid.
--lambda1 : float
    Start of the fixed-point iteration (default g(0)).
--max_steps : int
    Iteration cap.

Example Usage
-------------
>>> PerpetuityLab transform --law fleming-viot --lambda_grid 0 1 0.05

Logging
-------
Logs are written to `PerpetuityLab/logging/perpetuitylab.log`.
"""

import argparse
import math
import time
from dataclasses import dataclass, field
from typing import Optional
import numpy as np
import pandas as pd
from PerpetuityLab.settings import (
    get_logger, DEFAULT_GRID_SIZE, DEFAULT_GOLDEN_TOL, DEFAULT_OUTPUT_DIR
)
from PerpetuityLab.accessories.numerics import grid_then_golden
from PerpetuityLab.accessories.ldm_functions import (
    LdmFunction, TabulatedEmpirical, ldm_from_dict
)
from PerpetuityLab.accessories import results_io
from PerpetuityLab.accessories.config import config_hash as hash_options

# Set up logger
logger = get_logger(__name__)

# Tolerances for the structural checks of property_report
PROPERTY_TOL = 1e-9
SIGN_TOL = 1e-8


@dataclass(frozen=True)
class TransformContext:
    """
    A local dependence measure bundled with its index and solver settings.

    Attributes
    ----------
    g : LdmFunction
        The local dependence measure.
    rho : float
        Index of the scale H used downstream.
    grid_size : int
        Points of the uniform part of the search grid.
    tol : float
        Relative tolerance of the golden-section polish in y.
    edge_decades : int
        Decades of geometric refinement near each end of the u-grid.
    """

    g: LdmFunction
    rho: float = 1.0
    grid_size: int = DEFAULT_GRID_SIZE
    tol: float = DEFAULT_GOLDEN_TOL
    edge_decades: int = 12

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho!r}")
        if self.grid_size < 10:
            raise ValueError(f"grid_size must be at least 10, got {self.grid_size!r}")


@dataclass
class PhiValue:
    """
    Result of one infimum.

    Attributes
    ----------
    value : float
        The infimum, possibly ``inf``.
    argmin : float or None
        Minimising y, or None when the infimum is a boundary limit.
    boundary : str or None
        'zero' or 'infinity' when a boundary limit wins.
    ci_lo, ci_hi : float
        Bounds from the lower and upper tables of a tabulated g; equal to
        ``value`` otherwise.
    """

    value: float
    argmin: Optional[float] = None
    boundary: Optional[str] = None
    ci_lo: float = math.nan
    ci_hi: float = math.nan

    def __post_init__(self):
        if math.isnan(self.ci_lo):
            self.ci_lo = self.value
        if math.isnan(self.ci_hi):
            self.ci_hi = self.value


@dataclass
class FixedPointTrace:
    """
    The sequence lambda_{n+1} = phi(lambda_n).

    Attributes
    ----------
    lambdas : list of float
        lambda_1, lambda_2, ...
    converged : bool
        True when two successive values agree to the tolerance.
    limit : float
        Last value of the sequence.
    guaranteed : bool
        True when lambda_1 lies in [0, lambda_star], where the sequence is
        nondecreasing and converges to lambda_star.
    """

    lambdas: list = field(default_factory=list)
    converged: bool = False
    limit: float = math.nan
    guaranteed: bool = False

    def is_nondecreasing(self, tol=1e-12):
        values = np.asarray(self.lambdas)
        return bool(np.all(np.diff(values) >= -tol))


def _u_grid(ctx):
    """Interior points of (0, 1): uniform part plus geometric clusters at both ends."""
    uniform = np.linspace(0.0, 1.0, ctx.grid_size + 2)[1:-1]
    edge = np.logspace(-ctx.edge_decades, -2, 40 * ctx.edge_decades)
    return np.unique(np.concatenate([edge, uniform, 1.0 - edge]))


def _infimum(objective_y, log_y, boundaries, tol):
    """
    Minimise over a log-y grid and compare with boundary limits.

    Parameters
    ----------
    objective_y : callable
        Vectorised objective in y, values in [0, inf].
    log_y : numpy.ndarray
        Increasing grid in log y.
    boundaries : dict
        Boundary name -> limiting value.
    tol : float
        Golden-section tolerance in log y.
    """
    def objective_t(t):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            values = np.asarray(objective_y(np.exp(t)), dtype=float)
        return np.where(np.isnan(values), np.inf, values)

    t_best, interior = grid_then_golden(objective_t, log_y, tol=tol)
    best = PhiValue(value=interior, argmin=None if math.isnan(t_best) else float(math.exp(t_best)))
    # Ties go to the interior point
    for name, value in boundaries.items():
        if value < best.value:
            best = PhiValue(value=float(value), argmin=None, boundary=name)
    return best


def _phi_untabulated(ctx, g, lam):
    u = _u_grid(ctx)
    log_y = np.sort(np.log((1.0 - u) / u))

    def objective(y):
        return g(y) + lam * y ** (-ctx.rho)

    boundaries = {"infinity": g.limit_at_infinity()}
    boundaries["zero"] = g.limit_at_zero() if lam == 0 else math.inf
    return _infimum(objective, log_y, boundaries, ctx.tol)


def phi_value(ctx, lam):
    """
    Compute phi(lambda) with its minimiser diagnostic.

    Parameters
    ----------
    ctx : TransformContext
        The measure and solver settings.
    lam : float
        Nonnegative argument.

    Returns
    -------
    PhiValue
        The infimum, the minimising y or the winning boundary, and for a
        tabulated g the bounds from its confidence tables.
    """
    if lam < 0:
        raise ValueError(f"phi is defined for lambda >= 0, got {lam!r}")
    result = _phi_untabulated(ctx, ctx.g, lam)
    if isinstance(ctx.g, TabulatedEmpirical):
        result.ci_lo = _phi_untabulated(ctx, ctx.g.lower(), lam).value
        result.ci_hi = _phi_untabulated(ctx, ctx.g.upper(), lam).value
    logger.debug("phi(%g) = %.12g (argmin %s, boundary %s)", lam, result.value,
                 result.argmin, result.boundary)
    return result


def phi(ctx, lam):
    """
    phi(lambda) = inf_{y > 0} g(y) + lambda / y**rho.

    Returns ``inf`` if and only if g is infinite on all of (0, inf).

    Examples
    --------
    >>> phi(TransformContext(FlemingViotClosedForm()), 0.6)
    0.5
    """
    return phi_value(ctx, lam).value


def lambda_star_value(ctx):
    """lambda_star with its minimiser diagnostic, see ``lambda_star``."""
    g = ctx.g
    u = _u_grid(ctx)
    log_y = np.sort(-np.log(u))

    def objective(y):
        power = y ** ctx.rho
        return power / (power - 1.0) * g(y)

    boundaries = {"infinity": g.limit_at_infinity()}
    at_one = float(g(np.array([1.0]))[0])
    boundaries["one"] = math.inf if at_one > 0 else 0.0
    result = _infimum(objective, log_y, boundaries, ctx.tol)
    logger.debug("lambda_star = %.12g (argmin %s, boundary %s)", result.value,
                 result.argmin, result.boundary)
    return result


def lambda_star(ctx):
    """
    lambda_star = inf_{y > 1} y**rho g(y) / (y**rho - 1).

    Returns ``inf`` when g is infinite on all of (1, inf).
    """
    return lambda_star_value(ctx).value


def iterate(ctx, lambda1, max_steps=200, tol=1e-10):
    """
    Run lambda_{n+1} = phi(lambda_n) from ``lambda1``.

    Parameters
    ----------
    ctx : TransformContext
        The measure and solver settings.
    lambda1 : float
        Starting value, nonnegative.
    max_steps : int, optional
        Maximal number of applications of phi.
    tol : float, optional
        Stop when |lambda_{n+1} - lambda_n| <= tol.

    Returns
    -------
    FixedPointTrace
        The trace; ``guaranteed`` is False when lambda1 lies outside
        [0, lambda_star], in which case monotone convergence is not assured.
    """
    if lambda1 < 0:
        raise ValueError(f"lambda1 must be nonnegative, got {lambda1!r}")
    star = lambda_star(ctx)
    trace = FixedPointTrace(lambdas=[float(lambda1)], guaranteed=bool(lambda1 <= star))
    if not trace.guaranteed:
        logger.warning("Iteration started at %g outside [0, lambda_star=%g]; no monotone guarantee",
                       lambda1, star)

    current = float(lambda1)
    for _ in range(max_steps):
        following = phi(ctx, current)
        trace.lambdas.append(following)
        if not math.isfinite(following):
            break
        if abs(following - current) <= tol:
            trace.converged = True
            break
        current = following
    trace.limit = trace.lambdas[-1]
    if not trace.converged:
        logger.warning("Fixed-point iteration did not converge in %d steps (last %g)",
                       max_steps, trace.limit)
    return trace


def _crossing(ctx, grid, values):
    """Locate the sign change of phi(c) - c on the grid and refine it by bisection."""
    diff = np.asarray(values) - np.asarray(grid)
    above = diff >= 0
    for i in range(len(grid) - 1):
        if above[i] and not above[i + 1]:
            lo, hi = float(grid[i]), float(grid[i + 1])
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if phi(ctx, mid) - mid >= 0:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
    return math.nan


def property_report(ctx, lambda_grid):
    """
    Check the structural properties of phi on a lambda grid.

    Checks
    ------
    - phi is nondecreasing on the grid;
    - midpoint concavity phi((l1+l2)/2) >= (phi(l1)+phi(l2))/2 - 1e-9 for
      consecutive grid points;
    - phi(c) >= c exactly for c <= lambda_star and phi(c) < c beyond it;
    - phi(0) = g(0+).

    Parameters
    ----------
    ctx : TransformContext
        The measure and solver settings.
    lambda_grid : array_like
        Increasing nonnegative lambda values.

    Returns
    -------
    dict
        ``lambda``, ``phi`` (lists), ``lambda_star``, ``crossing`` (refined
        root of phi(c) - c), ``violations`` (list of str) and ``passed``.
        Never raises on a failed check.
    """
    grid = np.asarray(lambda_grid, dtype=float)
    values = np.array([phi(ctx, lam) for lam in grid])
    star = lambda_star(ctx)
    violations = []

    for i in range(len(grid) - 1):
        if values[i + 1] < values[i] - PROPERTY_TOL:
            violations.append(f"phi decreases between lambda={grid[i]:g} and {grid[i + 1]:g}")
        mid = 0.5 * (grid[i] + grid[i + 1])
        chord = 0.5 * (values[i] + values[i + 1])
        if math.isfinite(chord) and phi(ctx, mid) < chord - PROPERTY_TOL:
            violations.append(f"midpoint concavity fails at lambda={mid:g}")

    for c, value in zip(grid, values):
        if c <= star and value < c - SIGN_TOL:
            violations.append(f"phi(c) < c at c={c:g} <= lambda_star")
        if c > star + SIGN_TOL and value >= c:
            violations.append(f"phi(c) >= c at c={c:g} > lambda_star")

    if len(grid) and grid[0] == 0:
        zero_limit = ctx.g.limit_at_zero()
        if abs(values[0] - zero_limit) > PROPERTY_TOL * (1 + abs(zero_limit)):
            violations.append(f"phi(0)={values[0]:.12g} differs from g(0+)={zero_limit:.12g}")

    crossing = _crossing(ctx, grid, values)
    for violation in violations:
        logger.warning("Transform property violated: %s", violation)
    return {
        "lambda": grid.tolist(),
        "phi": values.tolist(),
        "lambda_star": star,
        "crossing": crossing,
        "violations": violations,
        "passed": not violations,
    }


#############################
# Closed forms
#############################


def phi_closed_pqd(gamma, a, rho, lam):
    """
    Closed-form phi for the PQD measure gamma (1 - a y)**-rho.

    Examples
    --------
    >>> phi_closed_pqd(0.25, 1.0, 1.0, 0.25)
    1.0
    """
    p = 1.0 / (1.0 + rho)
    return (gamma ** p + a ** (rho * p) * lam ** p) ** (1.0 + rho)


def pqd_minimizer(gamma, a, rho, lam):
    """Minimising y of the PQD transform, lam**(1/(1+rho)) / ((gamma a)**(1/(1+rho)) + a lam**(1/(1+rho)))."""
    p = 1.0 / (1.0 + rho)
    numerator = lam ** p
    denominator = (gamma * a) ** p + a * numerator
    return math.inf if denominator == 0 else numerator / denominator


def lambda_star_closed_pqd(gamma, a, rho):
    """Closed-form fixed point gamma (1 - a**(rho/(1+rho)))**-(1+rho) for a < 1, inf otherwise."""
    if a >= 1:
        return math.inf
    return gamma * (1.0 - a ** (rho / (1.0 + rho))) ** (-(1.0 + rho))


def phi_closed_fv(lam):
    """
    Closed-form phi for the Fleming-Viot measure with rho = 1.

    (1/4)(2 sqrt(lam - lam^2) + 1) for lam < 1/2, else 1/2.
    """
    if lam < 0:
        raise ValueError(f"phi is defined for lambda >= 0, got {lam!r}")
    if lam >= 0.5:
        return 0.5
    return 0.25 * (2.0 * math.sqrt(lam - lam * lam) + 1.0)


def fv_minimizer(lam):
    """Minimising y of the Fleming-Viot transform, 4 sqrt(lam (1 - lam)) / (1 - 2 lam) for lam < 1/2."""
    if lam >= 0.5:
        return math.inf
    return 4.0 * math.sqrt(lam * (1.0 - lam)) / (1.0 - 2.0 * lam)


#############################
# Command
#############################


def parse_arguments():
    """
    Parse command-line arguments.

    Returns
    -------
    argparse.Namespace
        Parsed arguments.
    """
    parser = argparse.ArgumentParser(
        description="Compute phi on a lambda grid, lambda_star and the fixed-point trace",
        epilog="Example usage: PerpetuityLab transform --law fleming-viot --lambda_grid 0 1 0.05",
    )
    add_arguments(parser)
    return parser.parse_args()


def add_arguments(parser):
    """Register the transform options on ``parser``."""
    parser.add_argument("--law", choices=["fleming-viot", "pqd", "discontinuous", "constant", "table"],
                        default="fleming-viot",
                        help="Closed-form LDM to transform, or 'table' for --ldm_table.")
    parser.add_argument("--gamma", type=float, default=1.0, help="PQD gamma.")
    parser.add_argument("--a", type=float, default=0.25, help="PQD ess inf A.")
    parser.add_argument("--rho", type=float, default=1.0, help="Index of the scale H.")
    parser.add_argument("--g0", type=float, default=1.0,
                        help="Level of the constant LDM, or g(0) of the discontinuous one.")
    parser.add_argument("--g0_plus", type=float, default=2.0,
                        help="g(0+) of the discontinuous LDM.")
    parser.add_argument("--ldm_table", type=str, default=None,
                        help="CSV of a tabulated LDM with columns y,g,ci_lo,ci_hi.")
    parser.add_argument("--lambda_grid", type=float, nargs=3, default=[0.0, 1.0, 0.05],
                        metavar=("START", "STOP", "STEP"), help="Lambda grid, stop included.")
    parser.add_argument("--lambda1", type=float, default=None,
                        help="Start of the fixed-point iteration, defaults to g(0).")
    parser.add_argument("--max_steps", type=int, default=200, help="Iteration cap.")


def ldm_spec_from_args(args):
    """Turn the --law options into the config form read by ``ldm_from_dict``."""
    if args.law == "fleming-viot":
        return {"kind": "fleming-viot"}
    if args.law == "pqd":
        return {"kind": "pqd", "gamma": args.gamma, "a": args.a, "rho": args.rho}
    if args.law == "discontinuous":
        return {"kind": "discontinuous", "lambda1": args.g0_plus, "lambda2": args.g0}
    if args.law == "constant":
        return {"kind": "constant", "level": args.g0}
    if args.ldm_table is None:
        raise ValueError("--ldm_table is required with --law table")
    return {"kind": "tabulated", "path": args.ldm_table}


def make_grid(start, stop, step):
    """Inclusive arithmetic grid, rounded to remove float drift."""
    if step <= 0 or stop < start:
        raise ValueError(f"Invalid lambda grid start={start} stop={stop} step={step}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(count), 12)


def run_transform(ctx, lambda_grid, lambda1=None, max_steps=200):
    """
    Evaluate phi on a grid, lambda_star, the trace and the property report.

    Returns
    -------
    tuple of (pandas.DataFrame, pandas.DataFrame, dict)
        phi table, trace table and summary statistics.
    """
    rows = []
    for lam in lambda_grid:
        result = phi_value(ctx, float(lam))
        rows.append({"lambda": float(lam), "phi": result.value, "ci_lo": result.ci_lo,
                     "ci_hi": result.ci_hi,
                     "argmin": result.argmin if result.argmin is not None else math.nan,
                     "boundary": result.boundary or ""})
    phi_table = pd.DataFrame(rows)
    star = lambda_star_value(ctx)
    start = ctx.g.value_at_zero() if lambda1 is None else lambda1
    trace = iterate(ctx, start, max_steps=max_steps)
    trace_table = pd.DataFrame({"step": np.arange(1, len(trace.lambdas) + 1),
                                "lambda": trace.lambdas})
    report = property_report(ctx, lambda_grid)
    summary = {
        "lambda_star": star.value,
        "lambda_star_argmin": star.argmin if star.argmin is not None else math.nan,
        "trace_limit": trace.limit,
        "trace_steps": len(trace.lambdas),
        "trace_converged": trace.converged,
        "trace_guaranteed": trace.guaranteed,
        "trace_nondecreasing": trace.is_nondecreasing(),
        "crossing": report["crossing"],
        "violations": report["violations"],
        "properties_passed": report["passed"],
    }
    return phi_table, trace_table, summary


def main(ldm_spec=None, rho=1.0, lambda_grid=None, lambda1=None, max_steps=200, solver=None,
         seed=None, out_dir=None, fmt="csv", config_hash=None, database_url=None):
    """
    Run the transform command.

    Parameters
    ----------
    ldm_spec : dict, optional
        Config form of the LDM (see ``ldm_from_dict``). Parsed from the
        command line when omitted.
    rho : float, optional
        Index of the scale H.
    lambda_grid : sequence of float, optional
        (start, stop, step) of the lambda grid.
    lambda1 : float, optional
        Start of the iteration, defaults to g(0).
    max_steps : int, optional
        Iteration cap.
    solver : dict, optional
        Overrides for ``grid_size`` and ``tol``.
    seed : int, optional
        Unused; accepted so every command takes the global flags.
    out_dir : str, optional
        Output directory.
    fmt : {'csv', 'jsonl'}, optional
        Table format.
    config_hash : str, optional
        Hash stamped on every output row; derived from the options if omitted.
    database_url : str, optional
        Run-record store.

    Returns
    -------
    int
        0 when every structural property holds, 2 otherwise.
    """
    started = time.perf_counter()
    try:
        if ldm_spec is None:
            args = parse_arguments()
            ldm_spec = ldm_spec_from_args(args)
            rho, lambda_grid = args.rho, args.lambda_grid
            lambda1, max_steps = args.lambda1, args.max_steps

        lambda_grid = list(lambda_grid or [0.0, 1.0, 0.05])
        out_dir = out_dir or DEFAULT_OUTPUT_DIR
        logger.info("Command executed: transform ldm=%s rho=%s lambda_grid=%s",
                    ldm_spec, rho, lambda_grid)

        ctx = TransformContext(g=ldm_from_dict(ldm_spec), rho=rho, **(solver or {}))
        options = {"subcommand": "transform", "ldm": ldm_spec, "rho": rho,
                   "lambda_grid": lambda_grid, "lambda1": lambda1, "max_steps": max_steps,
                   "solver": solver or {}}
        config_hash = config_hash or hash_options(options)

        phi_table, trace_table, summary = run_transform(
            ctx, make_grid(*lambda_grid), lambda1=lambda1, max_steps=max_steps)
        results_io.write_table(phi_table, out_dir, "phi", config_hash, fmt)
        results_io.write_table(trace_table, out_dir, "trace", config_hash, fmt)
        exit_code = 0 if summary["properties_passed"] else 2
        results_io.finish_run(out_dir, "transform", config_hash, summary, seeds=[],
                              started=started, exit_code=exit_code, database_url=database_url)
        logger.info("lambda_star = %.10g, trace limit %.10g", summary["lambda_star"],
                    summary["trace_limit"])
        return exit_code

    except ValueError as ve:
        logger.error("ValueError: %s", str(ve))
        raise
    except Exception as e:
        logger.error("An unexpected error occurred: %s", str(e))
        raise


if __name__ == "__main__":
    raise SystemExit(main())
