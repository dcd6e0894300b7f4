"""
Shared numerical building blocks for PerpetuityLab.

The solvers here work on extended reals: objective values of ``numpy.inf`` are legal and simply lose
every comparison.

Functions
---------
golden_section_minimize(fun, lower, upper, tol, max_iterations)
    Golden-section search for the minimum of a unimodal function on a bracket.
grid_then_golden(objective, grid, tol)
    Dense scan of a vectorised objective followed by a golden-section polish
    around the best interior cell.
bisect_decreasing(fun, target, lower, upper, rtol)
    Solve ``fun(x) = target`` for a strictly decreasing ``fun``, expanding the
    bracket geometrically when needed.
log_integrate(log_integrand, lower, upper, rtol)
    Log of an integral of ``exp(log_integrand)``, computed with composite
    Gauss-Legendre panels and log-sum-exp so the integrand never underflows.
binomial_interval(hits, trials, confidence)
    Clopper-Pearson interval for a binomial proportion.
dkw_halfwidth(n, confidence)
    Dvoretzky-Kiefer-Wolfowitz band half-width for an empirical CDF.
ks_distance(samples, cdf) / ks_two_sample(first, second)
    Kolmogorov-Smirnov statistics.
"""

import math
import numpy as np
from scipy import special, stats
from PerpetuityLab.settings import get_logger

logger = get_logger(__name__)

PHI_RATIO = 2 / (1 + math.sqrt(5))

# Gauss-Legendre nodes on [-1, 1]
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


class BracketError(ValueError):
    """Raised when a root cannot be bracketed."""
    pass


def golden_section_minimize(fun, lower, upper, tol=1e-12, max_iterations=200):
    """
    Minimise ``fun`` on ``[lower, upper]`` by golden-section search.

    Parameters
    ----------
    fun : callable
        Scalar function of one variable. May return ``inf``.
    lower, upper : float
        Bracket endpoints.
    tol : float, optional
        Stop when the bracket is shorter than ``tol * max(1, |midpoint|)``.
    max_iterations : int, optional
        Iteration cap.

    Returns
    -------
    tuple of (float, float, bool)
        ``(argmin, minimum, converged)``. The bracket endpoints are included
        in the comparison so a monotone objective returns its endpoint.
    """
    x1 = upper - PHI_RATIO * (upper - lower)
    x2 = lower + PHI_RATIO * (upper - lower)
    f1 = fun(x1)
    f2 = fun(x2)
    f_lower = fun(lower)
    f_upper = fun(upper)
    lower0, upper0 = lower, upper

    iteration = 0
    while iteration < max_iterations and abs(upper - lower) > tol * max(1.0, abs(x1)):
        if f2 > f1:
            upper, x2, f2 = x2, x1, f1
            x1 = upper - PHI_RATIO * (upper - lower)
            f1 = fun(x1)
        else:
            lower, x1, f1 = x1, x2, f2
            x2 = lower + PHI_RATIO * (upper - lower)
            f2 = fun(x2)
        iteration += 1

    argmin, minimum = (x1, f1) if f1 <= f2 else (x2, f2)
    if f_lower < minimum:
        argmin, minimum = lower0, f_lower
    if f_upper < minimum:
        argmin, minimum = upper0, f_upper

    converged = not (math.isnan(f1) or math.isnan(f2)) and iteration < max_iterations
    return argmin, minimum, converged


def grid_then_golden(objective, grid, tol=1e-12):
    """
    Global scan of a vectorised objective followed by a local polish.

    Parameters
    ----------
    objective : callable
        Vectorised function mapping an array of grid points to an array of
        values in ``[0, inf]``.
    grid : numpy.ndarray
        Strictly increasing evaluation points (interior points only).
    tol : float, optional
        Relative tolerance of the golden-section polish.

    Returns
    -------
    tuple of (float, float)
        ``(argmin, minimum)``. ``minimum`` is ``inf`` and ``argmin`` is
        ``nan`` when the objective is infinite on the whole grid.
    """
    values = np.asarray(objective(grid), dtype=float)
    finite = np.isfinite(values)
    if not finite.any():
        return math.nan, math.inf

    # Ties go to the smaller grid point, np.argmin returns the first minimum
    best = int(np.argmin(np.where(finite, values, np.inf)))
    left = grid[max(best - 1, 0)]
    right = grid[min(best + 1, len(grid) - 1)]
    logger.debug("Grid minimum %.6g at %.6g, polishing on [%.6g, %.6g]",
                 values[best], grid[best], left, right)

    def scalar(point):
        return float(np.asarray(objective(np.array([point])))[0])

    argmin, minimum, converged = golden_section_minimize(scalar, left, right, tol=tol)
    if not converged:
        logger.warning("Golden-section polish hit its iteration cap near %.6g", argmin)
    if values[best] < minimum:
        return float(grid[best]), float(values[best])
    return float(argmin), float(minimum)


def bisect_decreasing(fun, target, lower=1e-300, upper=1.0, rtol=1e-12, max_iterations=400):
    """
    Solve ``fun(x) = target`` for a strictly decreasing positive function.

    The bracket is expanded geometrically (upper bound doubled, lower bound
    squared towards zero) until it contains the solution. Bisection runs on
    the logarithm of ``x`` so that brackets spanning many decades converge
    quickly.

    Parameters
    ----------
    fun : callable
        Strictly decreasing function of a positive variable.
    target : float
        Value to reach.
    lower, upper : float, optional
        Initial bracket.
    rtol : float, optional
        Stop when ``|fun(x) - target| <= rtol * target``.
    max_iterations : int, optional
        Iteration cap for the bisection itself.

    Returns
    -------
    float
        The solution ``x``.

    Raises
    ------
    BracketError
        If the bracket cannot be expanded to contain ``target``.
    """
    expansions = 0
    while fun(upper) > target:
        upper *= 2.0
        expansions += 1
        if expansions > 2000 or not math.isfinite(upper):
            raise BracketError(f"No upper bracket for target {target!r}")
    while fun(lower) < target:
        lower = lower ** 2 if lower < 1 else lower / 2.0
        expansions += 1
        if expansions > 2000 or lower == 0.0:
            raise BracketError(f"No lower bracket for target {target!r}")
    if expansions:
        logger.debug("Bracket expanded %d times to [%g, %g]", expansions, lower, upper)

    log_lo, log_hi = math.log(lower), math.log(upper)
    mid = math.exp(0.5 * (log_lo + log_hi))
    for _ in range(max_iterations):
        mid = math.exp(0.5 * (log_lo + log_hi))
        value = fun(mid)
        if abs(value - target) <= rtol * abs(target):
            return mid
        if value > target:
            log_lo = math.log(mid)
        else:
            log_hi = math.log(mid)
        if log_hi - log_lo < 1e-15:
            break
    return mid


def log_integrate(log_integrand, lower, upper, rtol=1e-10, start_panels=64, max_panels=2 ** 16):
    """
    Compute ``log(integral of exp(log_integrand(x)) dx)`` on ``[lower, upper]``.

    Composite 20-point Gauss-Legendre panels are summed with log-sum-exp.
    The panel count doubles until two successive log-values agree to
    ``rtol`` (absolute tolerance on the log scale, i.e. relative on the
    integral).

    Parameters
    ----------
    log_integrand : callable
        Vectorised log of the integrand; ``-inf`` is allowed.
    lower, upper : float
        Finite integration limits with ``lower < upper``.
    rtol : float, optional
        Target agreement between successive refinements.
    start_panels, max_panels : int, optional
        Initial and maximal number of panels.

    Returns
    -------
    tuple of (float, float)
        ``(log_value, error_estimate)``.

    Raises
    ------
    ValueError
        If the limits are not a proper finite interval.
    """
    if not (math.isfinite(lower) and math.isfinite(upper) and lower < upper):
        raise ValueError(f"Invalid integration limits [{lower}, {upper}]")

    def composite(panels):
        edges = np.linspace(lower, upper, panels + 1)
        half = 0.5 * np.diff(edges)
        centres = 0.5 * (edges[:-1] + edges[1:])
        points = (centres[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        log_weights = np.log((half[:, None] * _GL_WEIGHTS[None, :]).ravel())
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            terms = np.asarray(log_integrand(points), dtype=float) + log_weights
        terms = np.where(np.isnan(terms), -np.inf, terms)
        return float(special.logsumexp(terms))

    panels = start_panels
    previous = composite(panels)
    error = math.inf
    while panels < max_panels:
        panels *= 2
        current = composite(panels)
        if current == previous == -math.inf:
            return -math.inf, 0.0
        error = abs(current - previous)
        if error <= rtol:
            return current, error
        previous = current
    logger.warning("log_integrate stopped at %d panels without reaching rtol=%g", panels, rtol)
    return previous, error


def binomial_interval(hits, trials, confidence=0.95):
    """
    Clopper-Pearson interval for a binomial proportion.

    Parameters
    ----------
    hits : int
        Number of successes.
    trials : int
        Number of trials, positive.
    confidence : float, optional
        Two-sided confidence level.

    Returns
    -------
    tuple of (float, float)
        Lower and upper bounds of the proportion.
    """
    alpha = 1.0 - confidence
    lower = 0.0 if hits == 0 else float(stats.beta.ppf(alpha / 2, hits, trials - hits + 1))
    upper = 1.0 if hits == trials else float(stats.beta.ppf(1 - alpha / 2, hits + 1, trials - hits))
    return lower, upper


def dkw_halfwidth(n, confidence=0.99):
    """Half-width of the DKW confidence band for an empirical CDF of ``n`` points."""
    return math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n))


def ks_distance(samples, cdf):
    """Kolmogorov-Smirnov distance between ``samples`` and a callable ``cdf``."""
    return float(stats.kstest(np.asarray(samples), cdf).statistic)


def ks_two_sample(first, second):
    """Two-sample Kolmogorov-Smirnov distance."""
    return float(stats.ks_2samp(np.asarray(first), np.asarray(second)).statistic)


def least_squares_limit(eps, values, model="log"):
    """
    Extrapolate a sequence indexed by ``eps`` to ``eps -> 0``.

    Parameters
    ----------
    eps : array_like
        Positive, strictly decreasing grid.
    values : array_like
        Finite values at the grid points.
    model : {'log', 'laplace'}
        ``'log'`` fits ``v = L + c / log(1/eps)``; ``'laplace'`` fits
        ``v = L + b * eps + c * eps * log(eps)``.

    Returns
    -------
    float
        The fitted intercept ``L``, or ``nan`` with too few points.
    """
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values)
    eps, values = eps[keep], values[keep]
    if model == "log":
        design = np.column_stack([np.ones_like(eps), 1.0 / np.log(1.0 / eps)])
    else:
        design = np.column_stack([np.ones_like(eps), eps, eps * np.log(eps)])
    if len(eps) < design.shape[1]:
        return math.nan
    coefficients, *_ = np.linalg.lstsq(design, values, rcond=None)
    return float(coefficients[0])
