#!/usr/bin/env python

"""
Perpetuity simulation and tail statistics.

Simulates the Markov chain X_n = A_n X_{n-1} + B_n and the truncated series
S_N = sum_{k<=N} B_k prod_{j<k} A_j, and estimates from them

- the left-tail exponent -log P(X_n < eps) / H(eps) along an eps grid;
- the lower-envelope statistic, the running infimum of X_n / H^{-1}(log n);
- the right-tail power-law slope of P(X_n > x);
- stochastic monotonicity of X_n in n when X_0 = 0;
- a subsequence ergodic average against independent replicas.

Three subcommands live here: ``simulate``, ``tail`` and ``envelope``.

Command-Line Arguments
----------------------
--law : str
    Coefficient law kind, with its parameters (--a, --gamma, --lambda1, ...).
--n_steps : int
    Chain length.
--replicas : int
    Independent replicas (simulate, tail).
--eps_grid : float ...
    Decreasing eps grid (tail).
--band : float float
    Acceptance band of the final envelope value (envelope).

Example Usage
-------------
>>> PerpetuityLab tail --law fleming-viot --n_steps 500 --replicas 1000000 --eps_grid 0.2 0.1 0.05

Logging
-------
Logs are written to `PerpetuityLab/logging/perpetuitylab.log`.
"""

import argparse
import math
import time
from dataclasses import dataclass, replace
import numpy as np
import pandas as pd
from PerpetuityLab.settings import (
    get_logger, DEFAULT_OUTPUT_DIR, DEFAULT_THREADS, REPLICA_BLOCK_SIZE, OVERFLOW_LIMIT, STEP_CHUNK
)
from PerpetuityLab.accessories import coefficient_laws, results_io
from PerpetuityLab.accessories.config import (
    add_law_arguments, law_spec_from_args, scale_spec_from_args, config_hash as hash_options
)
from PerpetuityLab.accessories.ldm_functions import (
    ExponentTable, exponent_table, check_eps_grid, closed_form_for
)
from PerpetuityLab.accessories.numerics import dkw_halfwidth, ks_two_sample
from PerpetuityLab.accessories.streams import make_rng, map_blocks
from PerpetuityLab.accessories.tail_scale import H1, TailScale, envelope_normalizer_many
from PerpetuityLab.transform import TransformContext, phi

# Set up logger
logger = get_logger(__name__)

# Single trajectories longer than this are stored on a geometric index grid
THIN_THRESHOLD = 100_000
THIN_POINTS = 2000
# Product of the A's below which a series is treated as converged
SERIES_CONVERGED = 1e-16
# Exceedances per x-cell needed for the right-tail slope
MIN_TAIL_COUNT = 100
# Replica count below which tail estimates are flagged as thin
RECOMMENDED_REPLICAS = 100_000

# A left-tail estimate is an exponent table indexed by eps
TailEstimate = ExponentTable


class ReplicaOverflowError(OverflowError):
    """Raised when a single trajectory exceeds the overflow limit."""
    pass


class InsufficientTailDataError(ValueError):
    """Raised when fewer than three x-cells carry enough exceedances for a slope."""
    pass


def geometric_indices(n_max, points):
    """Distinct integers 1 <= n <= n_max, roughly geometric, always ending at n_max."""
    grid = np.unique(np.round(np.geomspace(1, n_max, points)).astype(np.int64))
    return grid if grid[-1] == n_max else np.append(grid, n_max)


@dataclass(frozen=True)
class ChainConfig:
    """
    Settings of a perpetuity chain.

    Attributes
    ----------
    law : CoefficientLaw
        Law of (A_n, B_n).
    n_steps : int
        Number of steps, at least 1.
    replicas : int
        Independent replicas, at least 1.
    x0 : float
        Nonnegative starting value.
    seed : int
        Root seed.
    scale : TailScale
        Scale H of the envelope statistic.
    checkpoints : tuple of int, optional
        Steps to store (0 stores X_0); n_steps is always added. Defaults to every step for a single
        trajectory, a geometric grid beyond ``THIN_THRESHOLD`` steps, and the
        final step only for several replicas.
    """

    law: coefficient_laws.CoefficientLaw
    n_steps: int
    replicas: int = 1
    x0: float = 0.0
    seed: int = 0
    scale: TailScale = H1
    checkpoints: tuple = None

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be at least 1, got {self.n_steps!r}")
        if self.replicas < 1:
            raise ValueError(f"replicas must be at least 1, got {self.replicas!r}")
        if not (self.x0 >= 0 and math.isfinite(self.x0)):
            raise ValueError(f"x0 must be a nonnegative number, got {self.x0!r}")
        if self.checkpoints is not None:
            points = tuple(sorted({int(n) for n in self.checkpoints} | {self.n_steps}))
            if not points or points[0] < 0 or points[-1] > self.n_steps:
                raise ValueError(f"checkpoints must lie in [0, {self.n_steps}], "
                                 f"got {self.checkpoints!r}")
            object.__setattr__(self, "checkpoints", points)

    def storage_indices(self):
        if self.checkpoints is not None:
            return np.array(self.checkpoints, dtype=np.int64)
        if self.replicas > 1:
            return np.array([self.n_steps], dtype=np.int64)
        if self.n_steps <= THIN_THRESHOLD:
            return np.arange(1, self.n_steps + 1, dtype=np.int64)
        return geometric_indices(self.n_steps, THIN_POINTS)


@dataclass
class ChainRun:
    """
    Stored output of ``run_chain``.

    Attributes
    ----------
    config : ChainConfig
        The settings.
    indices : numpy.ndarray
        Stored step numbers.
    values : numpy.ndarray
        X_n, shape (replicas, len(indices)); NaN after an overflow.
    envelope : numpy.ndarray
        Running infimum of X_m / H^{-1}(log m) over 3 <= m <= n, same shape;
        NaN for n < 3.
    overflow_step : numpy.ndarray
        Step at which each replica overflowed, -1 if it did not.
    """

    config: ChainConfig
    indices: np.ndarray
    values: np.ndarray
    envelope: np.ndarray
    overflow_step: np.ndarray

    @property
    def overflowed(self):
        return self.overflow_step >= 0

    def at(self, n):
        """X_n across replicas at a stored step ``n``."""
        position = np.flatnonzero(self.indices == n)
        if not position.size:
            raise KeyError(f"Step {n} was not stored")
        return self.values[:, position[0]]

    @property
    def final(self):
        return self.at(self.config.n_steps)

    def trajectory(self):
        """Stored values of the first replica."""
        return self.values[0]

    def to_frame(self):
        """Long-form table of the first replica, or per-checkpoint quantiles for many."""
        if self.config.replicas == 1:
            return pd.DataFrame({"n": self.indices, "x": self.values[0],
                                 "envelope": self.envelope[0]})
        rows = []
        for j, n in enumerate(self.indices):
            column = self.values[:, j]
            column = column[np.isfinite(column)]
            quantiles = np.quantile(column, [0.05, 0.5, 0.95]) if column.size else [np.nan] * 3
            rows.append({"n": int(n), "mean": float(np.mean(column)) if column.size else np.nan,
                         "q05": quantiles[0], "median": quantiles[1], "q95": quantiles[2],
                         "finite": int(column.size)})
        return pd.DataFrame(rows)


def affine_recursion(x, a, b):
    """X_k = a_k X_{k-1} + b_k for a single trajectory; returns X_1..X_len(a)."""
    out = []
    for a_k, b_k in zip(a.tolist(), b.tolist()):
        x = a_k * x + b_k
        out.append(x)
    return np.array(out)


def _run_single(cfg, store):
    rng = make_rng(cfg.seed)
    values = np.full(len(store), np.nan)
    envelope = np.full(len(store), np.nan)
    if store[0] == 0:
        values[0] = cfg.x0

    x, running, n = cfg.x0, math.inf, 0
    while n < cfg.n_steps:
        size = min(STEP_CHUNK, cfg.n_steps - n)
        a, b = coefficient_laws.sample_many(cfg.law, rng, size)
        with np.errstate(over="ignore", invalid="ignore"):
            xs = affine_recursion(x, a, b)
        steps = np.arange(n + 1, n + size + 1)

        bad = np.flatnonzero(~(xs <= OVERFLOW_LIMIT))
        if bad.size:
            step = int(steps[bad[0]])
            logger.error("Chain overflowed at step %d (X=%r, seed %s)", step, xs[bad[0]], cfg.seed)
            raise ReplicaOverflowError(f"X_n exceeded {OVERFLOW_LIMIT:g} at step {step}; "
                                       "E[log A] < 0 may fail for this law")

        ratios = np.full(size, np.inf)
        valid = steps >= 3
        if valid.any():
            ratios[valid] = xs[valid] / envelope_normalizer_many(cfg.scale, steps[valid])
        running_seq = np.minimum(running, np.minimum.accumulate(ratios))

        in_chunk = (store > n) & (store <= n + size)
        offsets = store[in_chunk] - n - 1
        values[in_chunk] = xs[offsets]
        envelope[in_chunk] = running_seq[offsets]

        x, running, n = float(xs[-1]), float(running_seq[-1]), n + size

    envelope[store < 3] = np.nan
    return values[None, :], envelope[None, :], np.array([-1])


def _run_block(cfg, store, normalizers, rng, size):
    x = np.full(size, cfg.x0)
    running = np.full(size, np.inf)
    values = np.full((size, len(store)), np.nan)
    envelope = np.full((size, len(store)), np.nan)
    overflow_step = np.full(size, -1, dtype=np.int64)
    column = 0
    if store[0] == 0:
        values[:, 0] = x
        column = 1

    for n in range(1, cfg.n_steps + 1):
        a, b = coefficient_laws.sample_many(cfg.law, rng, size)
        with np.errstate(over="ignore", invalid="ignore"):
            x = a * x + b
        bad = (overflow_step < 0) & ~(x <= OVERFLOW_LIMIT)
        if bad.any():
            overflow_step[bad] = n
        x[overflow_step >= 0] = np.nan
        if n >= 3:
            running = np.fmin(running, x / normalizers[n - 3])
        if column < len(store) and store[column] == n:
            values[:, column] = x
            if n >= 3:
                envelope[:, column] = np.where(overflow_step >= 0, np.nan, running)
            column += 1
    return values, envelope, overflow_step


def run_chain(cfg, threads=DEFAULT_THREADS, block_size=REPLICA_BLOCK_SIZE):
    """
    Simulate X_n = A_n X_{n-1} + B_n.

    A single replica draws its coefficients in chunks of ``STEP_CHUNK`` from
    ``default_rng(seed)``, the same stream layout used by
    ``flemingviot.run_fv``. Several replicas are stepped together in blocks,
    each block with its own child stream of ``SeedSequence(seed)``.

    Parameters
    ----------
    cfg : ChainConfig
        The settings.
    threads : int, optional
        Worker threads for replica blocks.
    block_size : int, optional
        Replicas per block.

    Returns
    -------
    ChainRun

    Raises
    ------
    ReplicaOverflowError
        If a single trajectory exceeds 1e300. With several replicas an
        overflowing replica is marked in ``overflow_step`` and set to NaN.
    """
    store = cfg.storage_indices()
    logger.debug("run_chain: %s law, %d steps, %d replica(s), %d stored indices",
                 cfg.law.kind, cfg.n_steps, cfg.replicas, len(store))
    if cfg.replicas == 1:
        values, envelope, overflow_step = _run_single(cfg, store)
    else:
        normalizers = envelope_normalizer_many(cfg.scale, np.arange(3, max(cfg.n_steps, 3) + 1))

        def task(rng, size, index):
            return _run_block(cfg, store, normalizers, rng, size)

        blocks = map_blocks(task, cfg.replicas, cfg.seed, threads=threads, block_size=block_size)
        values = np.vstack([block[0] for block in blocks])
        envelope = np.vstack([block[1] for block in blocks])
        overflow_step = np.concatenate([block[2] for block in blocks])

    run = ChainRun(config=cfg, indices=store, values=values, envelope=envelope,
                   overflow_step=overflow_step)
    if run.overflowed.any():
        logger.warning("%d of %d replicas overflowed (first at step %d)",
                       int(run.overflowed.sum()), cfg.replicas,
                       int(overflow_step[run.overflowed].min()))
    return run


@dataclass
class SeriesResult:
    """
    Truncated series S_N and its remainder proxy.

    Attributes
    ----------
    partial_sum : numpy.ndarray
        S_N per replica.
    product : numpy.ndarray
        prod_{j<=N} A_j per replica.
    converged : numpy.ndarray of bool
        product below 1e-16.
    overflowed : numpy.ndarray of bool
        S_N exceeded the overflow limit.
    """

    partial_sum: np.ndarray
    product: np.ndarray
    converged: np.ndarray
    overflowed: np.ndarray


def simulate_series(law, n_terms, rng, size=1):
    """
    Draw S_N = sum_{k<=N} B_k prod_{j<k} A_j.

    Parameters
    ----------
    law : CoefficientLaw
        Law of (A, B).
    n_terms : int
        Truncation N, at least 1.
    rng : numpy.random.Generator
        Random stream.
    size : int, optional
        Independent replicas.

    Returns
    -------
    SeriesResult

    Raises
    ------
    ReplicaOverflowError
        For ``size == 1`` when the sum exceeds 1e300.

    Examples
    --------
    >>> law = coefficient_laws.pqd_synthetic(0.5, b_const=1.0)
    >>> simulate_series(law, 1, make_rng(0)).partial_sum[0]
    1.0
    """
    if n_terms < 1:
        raise ValueError(f"The series needs at least one term, got {n_terms!r}")
    total = np.zeros(size)
    product = np.ones(size)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_terms):
            a, b = coefficient_laws.sample_many(law, rng, size)
            total = total + b * product
            product = product * a
    overflowed = ~(total <= OVERFLOW_LIMIT)
    if size == 1 and overflowed[0]:
        logger.error("Series overflowed within %d terms", n_terms)
        raise ReplicaOverflowError(f"S_N exceeded {OVERFLOW_LIMIT:g} within {n_terms} terms")
    return SeriesResult(partial_sum=total, product=product,
                        converged=product < SERIES_CONVERGED, overflowed=overflowed)


def estimate_left_tail(samples, scale, eps_grid, confidence=0.95):
    """
    Estimate the left-tail exponent of X from independent samples.

    Parameters
    ----------
    samples : array_like
        Draws of X at a fixed n; non-finite entries are dropped.
    scale : TailScale
        Normalising scale H.
    eps_grid : array_like
        Strictly decreasing eps values.
    confidence : float, optional
        Level of the binomial intervals.

    Returns
    -------
    TailEstimate
        ``-log P_hat(X < eps) / H(eps)`` per cell; empty cells are censored
        and reported as lower bounds. ``extra["increasing"]`` records the
        monotone trend of the uncensored estimates.
    """
    eps = check_eps_grid(eps_grid)
    x = np.sort(np.asarray(samples, dtype=float))
    x = x[np.isfinite(x)]
    if x.size < RECOMMENDED_REPLICAS:
        logger.warning("Left-tail estimate from only %d samples", x.size)
    hits = np.searchsorted(x, eps, side="left")
    table = exponent_table(hits, x.size, eps, scale, confidence)
    table.extra["increasing"] = table.is_increasing()
    logger.info("Left tail from %d samples: final exponent %.4g [%.4g, %.4g], %d censored",
                x.size, *table.final, int(table.censored.sum()))
    return table


def stochastic_monotonicity_check(cfg, checkpoints, x_grid=None, confidence=0.99,
                                  threads=DEFAULT_THREADS):
    """
    Check that the CDF of X_n is nonincreasing in n when X_0 = 0.

    Parameters
    ----------
    cfg : ChainConfig
        Settings with ``x0 == 0``; n_steps and checkpoints are replaced.
    checkpoints : iterable of int
        Steps n_1 < n_2 < ...; 0 is allowed.
    x_grid : array_like, optional
        Points where CDFs are compared; defaults to the 1%..99% quantiles of
        the last checkpoint.
    confidence : float, optional
        DKW band level per empirical CDF.

    Returns
    -------
    dict
        ``checkpoints``, ``x``, ``cdf`` (one list per checkpoint), ``band``,
        ``max_excess`` per consecutive pair, ``violations`` and ``passed``.
    """
    if cfg.x0 != 0:
        raise ValueError("The monotonicity check needs x0 = 0")
    points = sorted({int(n) for n in checkpoints})
    if points[-1] < 1:
        raise ValueError("At least one checkpoint must be >= 1")
    run = run_chain(replace(cfg, n_steps=points[-1], checkpoints=tuple(points)), threads=threads)

    columns = [np.sort(run.at(n)[np.isfinite(run.at(n))]) for n in points]
    if x_grid is None:
        x_grid = np.unique(np.quantile(columns[-1], np.linspace(0.01, 0.99, 99)))
    x_grid = np.asarray(x_grid, dtype=float)
    cdfs = [np.searchsorted(column, x_grid, side="right") / column.size for column in columns]
    band = 2.0 * dkw_halfwidth(min(column.size for column in columns), confidence)

    violations, max_excess = [], []
    for (n1, f1), (n2, f2) in zip(zip(points, cdfs), zip(points[1:], cdfs[1:])):
        excess = f2 - f1
        max_excess.append(float(excess.max()))
        for x, e in zip(x_grid[excess > band], excess[excess > band]):
            violations.append(f"P(X_{n2} <= {x:.6g}) exceeds P(X_{n1} <= {x:.6g}) by {e:.4g}")
    for violation in violations:
        logger.warning("Stochastic monotonicity violated: %s", violation)
    return {
        "checkpoints": points,
        "x": x_grid.tolist(),
        "cdf": [cdf.tolist() for cdf in cdfs],
        "band": band,
        "max_excess": max_excess,
        "violations": violations,
        "passed": not violations,
    }


@dataclass
class EnvelopeStatistic:
    """
    Running infimum of X_n / H^{-1}(log n) on a geometric n grid.

    Attributes
    ----------
    n : numpy.ndarray
        Grid of steps, all >= 3.
    running_inf : numpy.ndarray
        The running infimum at each grid step.
    final : float
        Value at the last step.
    argmin_n : int
        Step where the final infimum was attained (first stored step carrying
        it for thinned runs).
    """

    n: np.ndarray
    running_inf: np.ndarray
    final: float
    argmin_n: int

    def to_frame(self):
        return pd.DataFrame({"n": self.n, "running_inf": self.running_inf})


def envelope_statistic(trajectory, scale=H1, grid_points=200):
    """
    The lower-envelope statistic of a single trajectory.

    Parameters
    ----------
    trajectory : ChainRun or array_like
        A single-replica run (its online running infimum is used, so thinning
        loses nothing), or the values X_1, ..., X_N.
    scale : TailScale, optional
        H for array input; a ChainRun uses its own config scale.
    grid_points : int, optional
        Size of the geometric reporting grid.

    Returns
    -------
    EnvelopeStatistic
    """
    if isinstance(trajectory, ChainRun):
        if trajectory.config.replicas != 1:
            raise ValueError("envelope_statistic needs a single-replica run")
        keep = trajectory.indices >= 3
        n = trajectory.indices[keep]
        running = trajectory.envelope[0][keep]
        if not n.size:
            raise ValueError("The envelope statistic needs n_steps >= 3")
        final = float(running[-1])
        argmin_n = int(n[np.flatnonzero(running == final)[0]])
        if n.size > grid_points:
            picks = np.unique(np.searchsorted(n, geometric_indices(int(n[-1]), grid_points)))
            picks = picks[picks < n.size]
            n, running = n[picks], running[picks]
    else:
        x = np.asarray(trajectory, dtype=float)
        if x.size < 3:
            raise ValueError("The envelope statistic needs n_steps >= 3")
        steps = np.arange(3, x.size + 1)
        ratios = x[2:] / envelope_normalizer_many(scale, steps)
        cumulative = np.minimum.accumulate(ratios)
        final = float(cumulative[-1])
        argmin_n = int(steps[np.argmin(ratios)])
        n = geometric_indices(x.size, grid_points)
        n = n[n >= 3]
        running = cumulative[n - 3]
    if n[-1] < 10_000:
        logger.debug("Envelope statistic from a short run (%d steps)", n[-1])
    return EnvelopeStatistic(n=np.asarray(n), running_inf=np.asarray(running), final=final,
                             argmin_n=argmin_n)


@dataclass
class RightTailReport:
    """
    Least-squares fit of log P(X > x) against log x.

    Attributes
    ----------
    slope, intercept : float
        Fit over the usable cells; the slope estimates -alpha.
    x : numpy.ndarray
        The x grid.
    p_hat : numpy.ndarray
        Empirical exceedance probabilities.
    counts : numpy.ndarray
        Exceedance counts.
    usable : numpy.ndarray of bool
        Cells with at least ``MIN_TAIL_COUNT`` exceedances.
    """

    slope: float
    intercept: float
    x: np.ndarray
    p_hat: np.ndarray
    counts: np.ndarray
    usable: np.ndarray

    def to_frame(self):
        return pd.DataFrame({"x": self.x, "p_hat": self.p_hat, "count": self.counts,
                             "usable": self.usable})


def kesten_right_tail(samples, x_grid=None, min_count=MIN_TAIL_COUNT):
    """
    Power-law slope of the right tail of X.

    Parameters
    ----------
    samples : array_like
        Draws of X from a chain in its stationary regime.
    x_grid : array_like, optional
        Positive increasing points; defaults to the decade starting at the
        90% quantile.
    min_count : int, optional
        Exceedances needed for a cell to enter the fit.

    Returns
    -------
    RightTailReport

    Raises
    ------
    InsufficientTailDataError
        If fewer than three cells are usable.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    x = x[np.isfinite(x)]
    if x_grid is None:
        start = float(np.quantile(x, 0.9)) if x.size else 0.0
        if not start > 0:
            logger.error("Right tail: 90%% quantile %g is not positive", start)
            raise InsufficientTailDataError("insufficient tail data: nonpositive upper quantile")
        x_grid = np.geomspace(start, 10.0 * start, 11)
    grid = np.asarray(x_grid, dtype=float)
    counts = x.size - np.searchsorted(x, grid, side="right")
    usable = counts >= min_count
    if usable.sum() < 3:
        logger.error("Right tail: only %d usable cells", int(usable.sum()))
        raise InsufficientTailDataError(
            f"insufficient tail data: {int(usable.sum())} cells with >= {min_count} exceedances")
    p_hat = counts / x.size
    slope, intercept = np.polyfit(np.log(grid[usable]), np.log(p_hat[usable]), 1)
    logger.info("Right-tail slope %.4f over %d cells", slope, int(usable.sum()))
    return RightTailReport(slope=float(slope), intercept=float(intercept), x=grid, p_hat=p_hat,
                           counts=counts, usable=usable)


def linear_bound_constant(samples, z_grid=None):
    """
    sup_z P_hat(X^{-1/2} <= z) / z over a grid of small z.

    For X = T/Y**2 this is the ratio bounding P(Y/sqrt(T) <= z) by c1 z.

    Returns
    -------
    dict
        ``z``, ``ratio`` and ``c1`` (the supremum).
    """
    x = np.sort(np.asarray(samples, dtype=float))
    x = x[np.isfinite(x)]
    z = np.geomspace(1e-2, 1.0, 25) if z_grid is None else np.asarray(z_grid, dtype=float)
    # X^{-1/2} <= z  iff  X >= z^-2
    counts = x.size - np.searchsorted(x, z ** -2.0, side="left")
    ratio = counts / x.size / z
    return {"z": z.tolist(), "ratio": ratio.tolist(), "c1": float(ratio.max())}


def ramp_function(c):
    """The clamped ramp f_c: 1 below c/2, 0 above c, linear in between."""
    if not c > 0:
        raise ValueError(f"The ramp needs c > 0, got {c!r}")

    def f(x):
        return np.clip(2.0 * (c - np.asarray(x, dtype=float)) / c, 0.0, 1.0)
    return f


def unit_function(x):
    return np.ones(np.shape(x))


def ergodic_average_check(trajectory, replica_samples, f, subsequence=None, windows=10,
                          n_se=3.0):
    """
    Compare window averages of f along a trajectory with E[f(X)].

    Parameters
    ----------
    trajectory : array_like
        X_1, ..., X_N of one long run.
    replica_samples : array_like
        Independent draws of X (or of X_n at large n).
    f : callable
        Bounded uniformly continuous test function, vectorised.
    subsequence : int or array_like, optional
        Every ``subsequence``-th step, or explicit 1-based steps; all steps
        by default.
    windows : int, optional
        Number of consecutive windows.
    n_se : float, optional
        Width of the sandwich tolerance in standard errors.

    Returns
    -------
    dict
        ``time_average``, ``window_averages``, ``expected``, ``tolerance``
        and ``passed`` (min window - tol <= E <= max window + tol).
    """
    path = np.asarray(trajectory, dtype=float)
    if subsequence is None:
        picked = path
    elif np.isscalar(subsequence):
        picked = path[int(subsequence) - 1::int(subsequence)]
    else:
        steps = np.asarray(subsequence, dtype=np.int64)
        picked = path[steps[(steps >= 1) & (steps <= path.size)] - 1]
    values = f(picked)
    window_means = np.array([chunk.mean() for chunk in np.array_split(values, windows) if chunk.size])

    replica_values = f(np.asarray(replica_samples, dtype=float))
    expected = float(np.mean(replica_values))
    se_replicas = float(np.std(replica_values, ddof=1) / math.sqrt(replica_values.size)) \
        if replica_values.size > 1 else 0.0
    se_windows = float(np.std(window_means, ddof=1) / math.sqrt(window_means.size)) \
        if window_means.size > 1 else 0.0
    tolerance = n_se * math.hypot(se_replicas, se_windows)
    lower, upper = float(window_means.min()), float(window_means.max())
    passed = lower - tolerance <= expected <= upper + tolerance
    if not passed:
        logger.warning("Ergodic sandwich failed: E=%.5g outside [%.5g, %.5g] +- %.3g",
                       expected, lower, upper, tolerance)
    return {
        "time_average": float(values.mean()),
        "window_averages": window_means.tolist(),
        "expected": expected,
        "tolerance": tolerance,
        "passed": bool(passed),
    }


def convergence_report(law, n=100_000, seed=0, probe_steps=2000, probe_replicas=200):
    """
    Check E[log A] < 0 and E[log+ B] < inf, and probe for divergence when it fails.

    Parameters
    ----------
    law : CoefficientLaw
        Law of (A, B).
    n : int, optional
        Samples for the moment diagnostics.
    seed : int, optional
        Root seed.
    probe_steps, probe_replicas : int, optional
        Size of the chain run made when the condition is not met.

    Returns
    -------
    dict
        The moment diagnostics plus ``diverging``, ``overflow_fraction`` and
        ``median_log_growth`` (median log X between the probe midpoint and
        end).
    """
    report = coefficient_laws.moment_diagnostics(law, n, make_rng(seed))
    report.update({"diverging": False, "overflow_fraction": 0.0, "median_log_growth": math.nan})
    if report["convergence_condition_met"]:
        return report

    half = max(probe_steps // 2, 1)
    run = run_chain(ChainConfig(law=law, n_steps=probe_steps, replicas=probe_replicas,
                                seed=seed, checkpoints=(half, probe_steps)))
    with np.errstate(divide="ignore", invalid="ignore"):
        early = np.log(np.nan_to_num(run.at(half), nan=np.inf))
        late = np.log(np.nan_to_num(run.at(probe_steps), nan=np.inf))
    growth = float(np.median(late) - np.median(early)) if np.isfinite(np.median(early)) \
        else math.inf
    report["overflow_fraction"] = float(run.overflowed.mean())
    report["median_log_growth"] = growth
    report["diverging"] = bool(report["overflow_fraction"] > 0 or growth > 0.25)
    logger.warning("Convergence condition not met for %s; diverging=%s (overflow %.2f, growth %.3g)",
                   law.kind, report["diverging"], report["overflow_fraction"], growth)
    return report


def exponent_by_checkpoint(cfg, checkpoints, eps, g=None, confidence=0.95,
                           threads=DEFAULT_THREADS):
    """
    Left-tail exponents of X_n at one eps for several n, against lambda_n.

    The sequence lambda_0 = 0, lambda_1 = g(0), lambda_n = phi(lambda_{n-1})
    is the exact exponent of X_n started from X_0 = 0.

    Parameters
    ----------
    cfg : ChainConfig
        Settings with ``x0 == 0`` and ``replicas`` replicas.
    checkpoints : iterable of int
        Steps n >= 1.
    eps : float
        The matched eps.
    g : LdmFunction, optional
        Defaults to the law's closed form; without one lambda_n is omitted.
    confidence : float, optional
        Level of the binomial intervals.

    Returns
    -------
    tuple of (pandas.DataFrame, dict)
        One row per checkpoint (``n``, ``exponent``, ``ci_lo``, ``ci_hi``,
        ``censored``, ``lambda_n``) and a report with ``monotone`` and
        ``violations``.
    """
    points = sorted({int(n) for n in checkpoints})
    if points[0] < 1:
        raise ValueError("Checkpoints must be >= 1")
    run = run_chain(replace(cfg, n_steps=points[-1], checkpoints=tuple(points)), threads=threads)

    g = g if g is not None else closed_form_for(cfg.law)
    lambdas = {}
    if g is not None:
        ctx = TransformContext(g=g, rho=cfg.scale.rho)
        current = g.value_at_zero()
        for n in range(1, points[-1] + 1):
            if n > 1:
                following = phi(ctx, current)
                stalled = abs(following - current) <= 1e-12
                current = following
            else:
                stalled = False
            lambdas[n] = current
            if stalled:
                lambdas.update({m: current for m in range(n + 1, points[-1] + 1)})
                break

    rows = []
    for n in points:
        cell = estimate_left_tail(run.at(n), cfg.scale, [eps], confidence)
        exponent, ci_lo, ci_hi = cell.final
        rows.append({"n": n, "exponent": exponent, "ci_lo": ci_lo, "ci_hi": ci_hi,
                     "censored": bool(cell.censored[0]), "lambda_n": lambdas.get(n, math.nan)})
    frame = pd.DataFrame(rows)

    violations = []
    for previous, current in zip(rows, rows[1:]):
        if current["ci_hi"] < previous["ci_lo"]:
            violations.append(f"exponent drops between n={previous['n']} and n={current['n']}")
    return frame, {"monotone": not violations, "violations": violations}


#############################
# Commands
#############################


def law_and_scale(law_spec, scale_spec):
    """Build the coefficient law and the scale H from their config forms."""
    scale = TailScale.from_dict(scale_spec or {})
    spec = dict(law_spec)
    if spec.get("kind") == coefficient_laws.PQD_SYNTHETIC:
        spec["scale"] = scale.to_dict()
    return coefficient_laws.law_from_dict(spec), scale


def _base_parser(description, epilog):
    parser = argparse.ArgumentParser(description=description, epilog=epilog)
    add_law_arguments(parser)
    parser.add_argument("--n_steps", type=int, required=True, help="Chain length.")
    parser.add_argument("--seed", type=int, default=0, help="Root seed.")
    return parser


def add_simulate_arguments(parser):
    parser.add_argument("--replicas", type=int, default=1, help="Independent replicas.")
    parser.add_argument("--x0", type=float, default=0.0, help="Starting value.")
    parser.add_argument("--checkpoints", type=int, nargs="+", default=None,
                        help="Steps to store.")
    parser.add_argument("--series", action="store_true",
                        help="Also draw S_N with N = n_steps and compare laws.")


def add_tail_arguments(parser):
    parser.add_argument("--replicas", type=int, default=100_000, help="Independent replicas.")
    parser.add_argument("--eps_grid", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.02],
                        help="Decreasing eps grid.")
    parser.add_argument("--x_grid", type=float, nargs="+", default=None,
                        help="Right-tail x grid.")
    parser.add_argument("--monotonicity_checkpoints", type=int, nargs="+", default=None,
                        help="Also check stochastic monotonicity at these steps.")
    parser.add_argument("--confidence", type=float, default=0.95, help="Interval level.")


def add_envelope_arguments(parser):
    parser.add_argument("--band", type=float, nargs=2, default=None, metavar=("LOW", "HIGH"),
                        help="Acceptance band of the final running infimum.")
    parser.add_argument("--min_fraction", type=float, default=0.9,
                        help="Fraction of seeds that must fall in the band.")


def simulate_main(law_spec=None, scale_spec=None, n_steps=None, replicas=1, x0=0.0,
                  checkpoints=None, series=False, seed=0, seeds=None, threads=None,
                  out_dir=None, fmt="csv", config_hash=None, database_url=None):
    """
    Run the simulate command.

    Writes the stored trajectory (one replica) or per-checkpoint quantiles
    (several replicas). With ``series`` the law of S_N is compared to that
    of X_N by a two-sample KS distance against a 99% DKW band.

    Returns
    -------
    int
        0 on success, 2 when the series comparison fails.
    """
    started = time.perf_counter()
    try:
        if law_spec is None:
            parser = _base_parser("Simulate the perpetuity chain",
                                  "Example usage: PerpetuityLab simulate --law fleming-viot "
                                  "--n_steps 1000")
            add_simulate_arguments(parser)
            args = parser.parse_args()
            law_spec, scale_spec = law_spec_from_args(args), scale_spec_from_args(args)
            n_steps, replicas, x0 = args.n_steps, args.replicas, args.x0
            checkpoints, series, seed = args.checkpoints, args.series, args.seed

        seed = seeds[0] if seeds else seed
        threads = threads or DEFAULT_THREADS
        out_dir = out_dir or DEFAULT_OUTPUT_DIR
        logger.info("Command executed: simulate law=%s n_steps=%s replicas=%s seed=%s",
                    law_spec, n_steps, replicas, seed)
        law, scale = law_and_scale(law_spec, scale_spec)
        options = {"subcommand": "simulate", "law": law_spec, "scale": scale.to_dict(),
                   "n_steps": n_steps, "replicas": replicas, "x0": x0,
                   "checkpoints": checkpoints, "series": series, "seed": seed}
        config_hash = config_hash or hash_options(options)

        cfg = ChainConfig(law=law, n_steps=n_steps, replicas=replicas, x0=x0, seed=seed,
                          scale=scale, checkpoints=tuple(checkpoints) if checkpoints else None)
        run = run_chain(cfg, threads=threads)
        results_io.write_table(run.to_frame(), out_dir, "chain", config_hash, fmt)

        final = run.final[np.isfinite(run.final)]
        statistics = {
            "final_mean": float(final.mean()) if final.size else math.nan,
            "final_median": float(np.median(final)) if final.size else math.nan,
            "overflowed": int(run.overflowed.sum()),
        }
        exit_code = 0
        if series:
            draws = simulate_series(law, n_steps, make_rng([seed, 1]), size=replicas)
            distance = ks_two_sample(draws.partial_sum[~draws.overflowed], final)
            band = 2.0 * dkw_halfwidth(min(final.size, replicas), 0.99)
            statistics.update({"series_ks": distance, "series_band": band,
                               "series_converged_fraction": float(draws.converged.mean())})
            if distance > band:
                logger.warning("Chain and series laws differ: KS %.4g > band %.4g", distance, band)
                exit_code = 2
        results_io.finish_run(out_dir, "simulate", config_hash, statistics, seeds=[seed],
                              started=started, exit_code=exit_code, database_url=database_url)
        return exit_code

    except ValueError as ve:
        logger.error("ValueError: %s", str(ve))
        raise
    except Exception as e:
        logger.error("An unexpected error occurred: %s", str(e))
        raise


def tail_main(law_spec=None, scale_spec=None, n_steps=None, replicas=100_000, eps_grid=None,
              x_grid=None, monotonicity_checkpoints=None, confidence=0.95, seed=0, seeds=None,
              threads=None, out_dir=None, fmt="csv", config_hash=None, database_url=None):
    """
    Run the tail command.

    Simulates ``replicas`` independent chains to ``n_steps``, then writes the
    left-tail exponent table and the right-tail slope (when the tail carries
    enough data). Optionally checks stochastic monotonicity.

    Returns
    -------
    int
        0 on success, 2 when the monotonicity check fails.
    """
    started = time.perf_counter()
    try:
        if law_spec is None:
            parser = _base_parser("Estimate left- and right-tail statistics of X_n",
                                  "Example usage: PerpetuityLab tail --law fleming-viot "
                                  "--n_steps 500 --replicas 1000000")
            add_tail_arguments(parser)
            args = parser.parse_args()
            law_spec, scale_spec = law_spec_from_args(args), scale_spec_from_args(args)
            n_steps, replicas, eps_grid = args.n_steps, args.replicas, args.eps_grid
            x_grid, monotonicity_checkpoints = args.x_grid, args.monotonicity_checkpoints
            confidence, seed = args.confidence, args.seed

        seed = seeds[0] if seeds else seed
        threads = threads or DEFAULT_THREADS
        out_dir = out_dir or DEFAULT_OUTPUT_DIR
        eps_grid = list(eps_grid or [0.2, 0.1, 0.05, 0.02])
        logger.info("Command executed: tail law=%s n_steps=%s replicas=%s eps=%s seed=%s",
                    law_spec, n_steps, replicas, eps_grid, seed)
        law, scale = law_and_scale(law_spec, scale_spec)
        options = {"subcommand": "tail", "law": law_spec, "scale": scale.to_dict(),
                   "n_steps": n_steps, "replicas": replicas, "eps_grid": eps_grid,
                   "x_grid": x_grid, "monotonicity_checkpoints": monotonicity_checkpoints,
                   "confidence": confidence, "seed": seed}
        config_hash = config_hash or hash_options(options)

        cfg = ChainConfig(law=law, n_steps=n_steps, replicas=replicas, seed=seed, scale=scale)
        run = run_chain(cfg, threads=threads)
        left = estimate_left_tail(run.final, scale, eps_grid, confidence)
        results_io.write_table(left.to_frame(), out_dir, "left_tail", config_hash, fmt)
        exponent, ci_lo, ci_hi = left.final
        statistics = {"left_final_exponent": exponent, "left_final_ci_lo": ci_lo,
                      "left_final_ci_hi": ci_hi, "left_increasing": left.is_increasing(),
                      "left_extrapolated": left.extrapolated}

        try:
            right = kesten_right_tail(run.final, x_grid)
            results_io.write_table(right.to_frame(), out_dir, "right_tail", config_hash, fmt)
            statistics["right_slope"] = right.slope
        except InsufficientTailDataError as e:
            logger.warning("Right-tail slope skipped: %s", e)
            statistics["right_slope"] = math.nan
        statistics["linear_bound_c1"] = linear_bound_constant(run.final)["c1"]

        exit_code = 0
        if monotonicity_checkpoints:
            report = stochastic_monotonicity_check(cfg, monotonicity_checkpoints,
                                                   threads=threads)
            statistics["monotonicity_passed"] = report["passed"]
            statistics["monotonicity_violations"] = len(report["violations"])
            if not report["passed"]:
                exit_code = 2
        results_io.finish_run(out_dir, "tail", config_hash, statistics, seeds=[seed],
                              started=started, exit_code=exit_code, database_url=database_url)
        return exit_code

    except ValueError as ve:
        logger.error("ValueError: %s", str(ve))
        raise
    except Exception as e:
        logger.error("An unexpected error occurred: %s", str(e))
        raise


def envelope_main(law_spec=None, scale_spec=None, n_steps=None, band=None, min_fraction=0.9,
                  seed=0, seeds=None, threads=None, out_dir=None, fmt="csv", config_hash=None,
                  database_url=None):
    """
    Run the envelope command: one long trajectory per seed.

    Returns
    -------
    int
        0 on success, 2 when fewer than ``min_fraction`` of the seeds end
        inside ``band``.
    """
    started = time.perf_counter()
    try:
        if law_spec is None:
            parser = _base_parser("Lower-envelope statistic of long single trajectories",
                                  "Example usage: PerpetuityLab envelope --law fleming-viot "
                                  "--n_steps 1000000 --band 0.25 1.0")
            add_envelope_arguments(parser)
            args = parser.parse_args()
            law_spec, scale_spec = law_spec_from_args(args), scale_spec_from_args(args)
            n_steps, band, min_fraction, seed = args.n_steps, args.band, args.min_fraction, args.seed

        seeds = list(seeds) if seeds else [seed]
        out_dir = out_dir or DEFAULT_OUTPUT_DIR
        logger.info("Command executed: envelope law=%s n_steps=%s seeds=%s", law_spec, n_steps, seeds)
        law, scale = law_and_scale(law_spec, scale_spec)
        options = {"subcommand": "envelope", "law": law_spec, "scale": scale.to_dict(),
                   "n_steps": n_steps, "band": band, "min_fraction": min_fraction, "seeds": seeds}
        config_hash = config_hash or hash_options(options)

        frames, finals = [], []
        for one_seed in seeds:
            run = run_chain(ChainConfig(law=law, n_steps=n_steps, seed=one_seed, scale=scale))
            statistic = envelope_statistic(run)
            frame = statistic.to_frame()
            frame.insert(0, "seed", one_seed)
            frames.append(frame)
            finals.append(statistic.final)
            logger.info("Seed %d: final running infimum %.5g (attained at n=%d)",
                        one_seed, statistic.final, statistic.argmin_n)
        results_io.write_table(pd.concat(frames, ignore_index=True), out_dir, "envelope",
                               config_hash, fmt)

        statistics = {"final_by_seed": {str(s): v for s, v in zip(seeds, finals)},
                      "final_median": float(np.median(finals))}
        exit_code = 0
        if band:
            inside = [band[0] <= value <= band[1] for value in finals]
            statistics["fraction_in_band"] = float(np.mean(inside))
            if statistics["fraction_in_band"] < min_fraction:
                logger.warning("Only %.0f%% of seeds in band %s", 100 * statistics["fraction_in_band"], band)
                exit_code = 2
        results_io.finish_run(out_dir, "envelope", config_hash, statistics, seeds=seeds,
                              started=started, exit_code=exit_code, database_url=database_url)
        return exit_code

    except ValueError as ve:
        logger.error("ValueError: %s", str(ve))
        raise
    except Exception as e:
        logger.error("An unexpected error occurred: %s", str(e))
        raise


if __name__ == "__main__":
    raise SystemExit(simulate_main())
