#!/usr/bin/env python

"""
Embedded Fleming-Viot chain with two particles.

At every branch event the particle that hits zero jumps onto the survivor.
Writing Y_k for the survivor height and T_k for the time of the k-th event,
the rescaled pairs (Theta_k, Lambda_k) = (Y_k / Y_{k-1}, (T_k - T_{k-1}) / Y_{k-1}**2)
are i.i.d. copies of (Y_1, T_1), and X_k = T_k / Y_k**2 follows the
perpetuity recursion X_k = (X_{k-1} + Lambda_k) / Theta_k**2.

This module runs the chain in log space, tracks the iterated-logarithm
ratio Y_n / sqrt(2 T_n log log T_n), the growth slopes of log Y_n and
log T_n, and computes mu = E[log Y_1] by quadrature.

Command-Line Arguments
----------------------
--n_steps : int
    Branch events per run (at least 1000).
--seed : int
    Root seed (one run); with the global ``--seed`` or a config, one run per seed.
--thin_points : int
    Size of the geometric storage grid for runs beyond 100000 steps.
--n_min : int
    First step entering the overall maximum of the ratio.
--lil_band : float float
    Acceptance band of the maximal ratio.

Example Usage
-------------
>>> PerpetuityLab fv --n_steps 1000000 --lil_band 0.5 1.4

Logging
-------
Logs are written to `PerpetuityLab/logging/perpetuitylab.log`.
"""

import argparse
import math
import time
import warnings
from dataclasses import dataclass, field, asdict
from functools import lru_cache
import numpy as np
import pandas as pd
from scipy import integrate
from PerpetuityLab.settings import get_logger, DEFAULT_OUTPUT_DIR, OVERFLOW_LIMIT, STEP_CHUNK
from PerpetuityLab.accessories import results_io
from PerpetuityLab.accessories.coefficient_laws import sample_fv_steps, fv_y_density
from PerpetuityLab.accessories.config import config_hash as hash_options
from PerpetuityLab.accessories.ldm_functions import QuadratureError
from PerpetuityLab.accessories.numerics import binomial_interval
from PerpetuityLab.accessories.streams import make_rng
from PerpetuityLab.perpetuity import (
    ReplicaOverflowError, THIN_THRESHOLD, THIN_POINTS, affine_recursion, geometric_indices
)

logger = get_logger(__name__)

MIN_STEPS = 1000
DEFAULT_WINDOWS = 10
# mu = E[log Y_1] = (1/2) log 2, from the Y_1 density 8y / (pi (y^4 + 4))
MU_REFERENCE = 0.5 * math.log(2.0)
QUADRATURE_RTOL = 1e-8


@dataclass(frozen=True)
class FvChainState:
    """
    State after k branch events.

    Attributes
    ----------
    k : int
        Number of events.
    y : float
        Survivor height Y_k > 0.
    t : float
        Event time T_k >= 0.
    x : float
        T_k / Y_k**2, propagated by its own recursion.
    """

    k: int = 0
    y: float = 1.0
    t: float = 0.0
    x: float = 0.0

    def __post_init__(self):
        if not self.y > 0:
            raise ValueError(f"Survivor height must be positive, got {self.y!r}")
        if not self.t >= 0:
            raise ValueError(f"Event time must be nonnegative, got {self.t!r}")


def fv_step(state, rng):
    """
    Advance the chain by one branch event.

    Y' = Y Theta, T' = T + Y**2 Lambda and X' = (X + Lambda) / Theta**2,
    with (Theta, Lambda) an exact draw of (Y_1, T_1).

    Raises
    ------
    ReplicaOverflowError
        If Y or T exceeds 1e300.
    """
    theta, lam = sample_fv_steps(rng, 1)
    theta, lam = float(theta[0]), float(lam[0])
    y = state.y * theta
    t = state.t + state.y ** 2 * lam
    if not (y <= OVERFLOW_LIMIT and t <= OVERFLOW_LIMIT):
        logger.error("Fleming-Viot state overflowed at step %d", state.k + 1)
        raise ReplicaOverflowError(f"Y or T exceeded {OVERFLOW_LIMIT:g} at step {state.k + 1}; "
                                   "use run_fv, which works in log space")
    return FvChainState(k=state.k + 1, y=y, t=t, x=(state.x + lam) / theta ** 2)


@dataclass
class LilReport:
    """
    Growth and iterated-logarithm statistics of one run.

    Attributes
    ----------
    n_steps, n_min : int
        Run length and the first step entering ``lil_max``.
    lil_max : float
        max over n_min <= n <= n_steps of Y_n / sqrt(2 T_n log log T_n),
        over steps with T_n > e**e.
    window_maxima : list of dict
        ``{"start", "stop", "max"}`` of the same ratio over geometric windows.
    log_n_max : float
        max over n >= n_min of Y_n / sqrt(2 T_n log n).
    slope_log_y, slope_log_t : float
        Least-squares slopes of log Y_n and log T_n against n over the final half.
    slope_ratio : float
        slope_log_t / slope_log_y, which tends to 2.
    mu_hat : float
        Estimate of mu, the slope of log Y_n.
    loglog_ratio : float
        log log T_n / log n at n_steps.
    autocorrelation : float
        Lag-1 sample autocorrelation of log Theta_k.
    """

    n_steps: int
    n_min: int
    lil_max: float
    window_maxima: list
    log_n_max: float
    slope_log_y: float
    slope_log_t: float
    slope_ratio: float
    mu_hat: float
    loglog_ratio: float
    autocorrelation: float

    def to_dict(self):
        return asdict(self)


@dataclass
class FvRun:
    """Stored trajectory (a pandas table) and its LilReport."""

    seed: int
    trajectory: pd.DataFrame
    report: LilReport


class _Regression:
    """Streaming least squares of values against centred step numbers."""

    def __init__(self, start, stop):
        self.start = start
        self.centre = 0.5 * (start + stop)
        self.count = 0
        self.sxx = 0.0
        self.sx = 0.0
        self.sy = 0.0
        self.sxy = 0.0

    def add(self, steps, values):
        keep = steps >= self.start
        if not keep.any():
            return
        x = steps[keep] - self.centre
        y = values[keep]
        self.count += int(keep.sum())
        self.sx += float(x.sum())
        self.sxx += float((x * x).sum())
        self.sy += float(y.sum())
        self.sxy += float((x * y).sum())

    @property
    def slope(self):
        denominator = self.count * self.sxx - self.sx ** 2
        if self.count < 2 or denominator <= 0:
            return math.nan
        return (self.count * self.sxy - self.sx * self.sy) / denominator


def _log_lil_ratio(log_y, log_t):
    """log of Y / sqrt(2 T log log T), NaN unless log T > e."""
    ratio = np.full(log_y.shape, np.nan)
    valid = log_t > math.e
    ratio[valid] = log_y[valid] - 0.5 * (math.log(2.0) + log_t[valid] + np.log(np.log(log_t[valid])))
    return ratio


def run_fv(n_steps, seed=0, thin_points=THIN_POINTS, n_min=MIN_STEPS, windows=DEFAULT_WINDOWS):
    """
    Run the embedded chain for ``n_steps`` events from Y_0 = 1, T_0 = 0.

    The (Theta, Lambda) draws come from ``default_rng(seed)`` in chunks of
    ``STEP_CHUNK``, the same layout ``perpetuity.run_chain`` uses for the
    fleming-viot law, so X_n here equals the chain value from the same seed.

    Parameters
    ----------
    n_steps : int
        Number of events, at least 1000.
    seed : int, optional
        Root seed.
    thin_points : int, optional
        Storage grid size for runs longer than 100000 steps.
    n_min : int, optional
        First step for the maximal iterated-logarithm ratio.
    windows : int, optional
        Number of geometric windows for the window maxima.

    Returns
    -------
    FvRun
        Trajectory table with columns ``n``, ``log_y``, ``log_t``, ``y``,
        ``t``, ``x``, ``lil_ratio`` and ``loglog_ratio`` at the stored
        steps, and the LilReport.
    """
    if n_steps < MIN_STEPS:
        raise ValueError(f"run_fv needs at least {MIN_STEPS} steps, got {n_steps!r}")
    if not 1 <= n_min <= n_steps:
        raise ValueError(f"n_min must lie in [1, {n_steps}], got {n_min!r}")
    rng = make_rng(seed)
    store = (np.arange(1, n_steps + 1) if n_steps <= THIN_THRESHOLD
             else geometric_indices(n_steps, thin_points))
    edges = np.unique(np.round(np.geomspace(n_min, n_steps, windows + 1)).astype(np.int64))
    window_max = np.full(len(edges) - 1, -np.inf)

    stored = {key: np.full(len(store), np.nan) for key in ("log_y", "log_t", "x", "lil")}
    half = n_steps // 2 + 1
    fit_y, fit_t = _Regression(half, n_steps), _Regression(half, n_steps)
    lil_max = log_n_max = -np.inf
    sum_u = sum_uu = sum_lag = 0.0
    previous_u = None

    log_y, log_t, x, n = 0.0, -np.inf, 0.0, 0
    while n < n_steps:
        size = min(STEP_CHUNK, n_steps - n)
        theta, lam = sample_fv_steps(rng, size)
        steps = np.arange(n + 1, n + size + 1)
        log_theta = np.log(theta)

        # log Y_k and log T_k = log(T_{k-1} + Y_{k-1}^2 Lambda_k)
        log_y_seq = log_y + np.cumsum(log_theta)
        log_y_before = np.concatenate(([log_y], log_y_seq[:-1]))
        increments = 2.0 * log_y_before + np.log(lam)
        log_t_seq = np.logaddexp.accumulate(np.concatenate(([log_t], increments)))[1:]
        a = theta ** -2.0
        x_seq = affine_recursion(x, a, lam * a)

        lil = _log_lil_ratio(log_y_seq, log_t_seq)
        late = steps >= n_min
        if (late & np.isfinite(lil)).any():
            lil_max = max(lil_max, float(np.nanmax(lil[late])))
        positions = np.minimum(np.searchsorted(edges, steps, side="right") - 1, len(window_max) - 1)
        inside = (positions >= 0) & (positions < len(window_max)) & np.isfinite(lil)
        np.maximum.at(window_max, positions[inside], lil[inside])
        with np.errstate(divide="ignore", invalid="ignore"):
            log_n_ratio = log_y_seq - 0.5 * (math.log(2.0) + log_t_seq + np.log(np.log(steps)))
        log_n_ratio[steps < 3] = np.nan
        if (late & np.isfinite(log_n_ratio)).any():
            log_n_max = max(log_n_max, float(np.nanmax(log_n_ratio[late])))

        fit_y.add(steps, log_y_seq)
        fit_t.add(steps, log_t_seq)

        sum_u += float(log_theta.sum())
        sum_uu += float((log_theta ** 2).sum())
        if previous_u is not None:
            sum_lag += previous_u * float(log_theta[0])
        sum_lag += float((log_theta[:-1] * log_theta[1:]).sum())
        previous_u = float(log_theta[-1])

        in_chunk = (store > n) & (store <= n + size)
        offsets = store[in_chunk] - n - 1
        stored["log_y"][in_chunk] = log_y_seq[offsets]
        stored["log_t"][in_chunk] = log_t_seq[offsets]
        stored["x"][in_chunk] = x_seq[offsets]
        stored["lil"][in_chunk] = lil[offsets]

        if not x_seq[-1] <= OVERFLOW_LIMIT:
            logger.error("X_n overflowed in the Fleming-Viot run (seed %s)", seed)
            raise ReplicaOverflowError(f"X_n exceeded {OVERFLOW_LIMIT:g} by step {n + size}")
        log_y, log_t, x, n = float(log_y_seq[-1]), float(log_t_seq[-1]), float(x_seq[-1]), n + size

    mean_u = sum_u / n_steps
    variance = sum_uu / n_steps - mean_u ** 2
    covariance = sum_lag / (n_steps - 1) - mean_u ** 2
    autocorrelation = covariance / variance if variance > 0 else math.nan

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        trajectory = pd.DataFrame({
            "n": store,
            "log_y": stored["log_y"],
            "log_t": stored["log_t"],
            "y": np.exp(stored["log_y"]),
            "t": np.exp(stored["log_t"]),
            "x": stored["x"],
            "lil_ratio": np.exp(stored["lil"]),
            "loglog_ratio": np.where(stored["log_t"] > 0, np.log(stored["log_t"]) / np.log(store), np.nan),
        })
    slope_y, slope_t = fit_y.slope, fit_t.slope
    report = LilReport(
        n_steps=n_steps,
        n_min=n_min,
        lil_max=float(np.exp(lil_max)),
        window_maxima=[{"start": int(start), "stop": int(stop), "max": float(np.exp(value))}
                       for start, stop, value in zip(edges[:-1], edges[1:], window_max)],
        log_n_max=float(np.exp(log_n_max)),
        slope_log_y=slope_y,
        slope_log_t=slope_t,
        slope_ratio=slope_t / slope_y if slope_y else math.nan,
        mu_hat=slope_y,
        loglog_ratio=math.log(log_t) / math.log(n_steps) if log_t > 0 else math.nan,
        autocorrelation=autocorrelation,
    )
    if report.lil_max == 0.0:
        logger.warning("T_n never exceeded e^e after step %d; the ratio is undefined", n_min)
    logger.info("Fleming-Viot run seed %s: %d steps, lil_max %.4f, slope ratio %.4f, mu_hat %.5f",
                seed, n_steps, report.lil_max, report.slope_ratio, report.mu_hat)
    return FvRun(seed=seed, trajectory=trajectory, report=report)


@dataclass(frozen=True)
class MuQuadrature:
    """
    Quadrature values for mu = E[log Y_1].

    Attributes
    ----------
    mu : float
        Two-dimensional quadrature of log y against the (Y_1, T_1) density.
    mu_1d : float
        One-dimensional quadrature against the Y_1 marginal.
    total_mass : float
        Two-dimensional quadrature of the density itself.
    errors : dict
        Absolute error estimates of the three integrals.
    warnings : tuple of str
        Integration warnings raised by scipy, if any.
    """

    mu: float
    mu_1d: float
    total_mass: float
    errors: dict = field(default_factory=dict)
    warnings: tuple = ()


def _unit_square_density(v, u):
    """
    The (Y_1, T_1) density on the unit square, Jacobians included.

    y = u/(1-u) and t = k v/(1-v) with k = ((1-y)^2 + 1)/2, which centres the
    t-part on its bulk for every y. With w = (1-v)/v and r = 4y/(2k) the
    t-part becomes exp(-w) (1 - exp(-r w)) / (pi k v^2).
    """
    if v <= 0.0 or u <= 0.0 or u >= 1.0:
        return 0.0
    y = u / (1.0 - u)
    k = 0.5 * ((1.0 - y) ** 2 + 1.0)
    w = (1.0 - v) / v
    value = math.exp(-w) * -math.expm1(-2.0 * y / k * w) / (math.pi * k * v * v)
    return value / (1.0 - u) ** 2


@lru_cache(maxsize=1)
def mu_quadrature(rtol=QUADRATURE_RTOL):
    """
    mu = E[log Y_1] by adaptive quadrature, cached.

    Returns
    -------
    MuQuadrature

    Raises
    ------
    QuadratureError
        If an integral is not finite or its error estimate exceeds 100 rtol.
    """
    caught = []
    with warnings.catch_warnings(record=True) as records:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        mass, mass_error = integrate.dblquad(_unit_square_density, 0.0, 1.0, 0.0, 1.0,
                                             epsabs=1e-12, epsrel=rtol)
        mu, mu_error = integrate.dblquad(
            lambda v, u: math.log(u / (1.0 - u)) * _unit_square_density(v, u),
            0.0, 1.0, 0.0, 1.0, epsabs=1e-12, epsrel=rtol)

        def log_weighted(y):
            return math.log(y) * float(fv_y_density(y))

        lower_part, lower_error = integrate.quad(log_weighted, 0.0, 1.0, epsabs=1e-13, epsrel=rtol)
        upper_part, upper_error = integrate.quad(log_weighted, 1.0, np.inf, epsabs=1e-13, epsrel=rtol)
        caught = tuple(str(record.message) for record in records)

    errors = {"mu": mu_error, "mu_1d": lower_error + upper_error, "total_mass": mass_error}
    values = {"mu": mu, "mu_1d": lower_part + upper_part, "total_mass": mass}
    for name, value in values.items():
        if not math.isfinite(value) or errors[name] > 100 * rtol * max(abs(value), 1.0):
            logger.error("Quadrature for %s failed: value %r, error %r", name, value, errors[name])
            raise QuadratureError(f"{name} quadrature failed: value {value!r}, error {errors[name]!r}")
    for message in caught:
        logger.warning("Quadrature warning: %s", message)
    logger.info("mu quadrature: %.12f (1-D %.12f), total mass %.12f", mu, values["mu_1d"], mass)
    return MuQuadrature(mu=mu, mu_1d=values["mu_1d"], total_mass=mass, errors=errors,
                        warnings=caught)


@dataclass
class SubgaussianReport:
    """
    (1/t^2) log P(X^{-1/2} >= t) on a t grid.

    Attributes
    ----------
    t : numpy.ndarray
        The grid.
    hits, trials : numpy.ndarray
        Counts of X <= 1/t^2 and sample sizes.
    value, ci_lo, ci_hi : numpy.ndarray
        The statistic and its binomial interval. Censored cells carry the
        bound -log(n)/t^2 as value and ci_hi.
    censored : numpy.ndarray of bool
        Cells with zero hits.
    """

    t: np.ndarray
    hits: np.ndarray
    trials: np.ndarray
    value: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    censored: np.ndarray

    def to_frame(self):
        return pd.DataFrame({"t": self.t, "hits": self.hits, "trials": self.trials,
                             "value": self.value, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
                             "censored": self.censored})


def _check_t_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(~(t >= 1)) or np.any(np.diff(t) <= 0):
        raise ValueError(f"t grid must be increasing and start at t >= 1, got {list(t)}")
    return t


def subgaussian_check(samples, t_grid, confidence=0.95):
    """
    Estimate (1/t^2) log P(X^{-1/2} >= t) from samples of X.

    X^{-1/2} >= t is the event X <= 1/t^2. For the Fleming-Viot B the value
    tends to -1/4 as t grows.

    Parameters
    ----------
    samples : array_like
        Draws of X > 0.
    t_grid : array_like
        Increasing t values, all >= 1.
    confidence : float, optional
        Level of the Clopper-Pearson intervals.

    Returns
    -------
    SubgaussianReport
    """
    t = _check_t_grid(t_grid)
    x = np.sort(np.asarray(samples, dtype=float))
    trials = np.full(t.size, x.size)
    hits = np.searchsorted(x, t ** -2.0, side="right")
    value = np.empty(t.size)
    ci_lo = np.empty(t.size)
    ci_hi = np.empty(t.size)
    for i, (k, level) in enumerate(zip(hits, t)):
        p_lo, p_hi = binomial_interval(int(k), x.size, confidence)
        if k == 0:
            value[i] = ci_hi[i] = -math.log(x.size) / level ** 2
            ci_lo[i] = -math.inf
            continue
        value[i] = math.log(k / x.size) / level ** 2
        ci_lo[i] = math.log(p_lo) / level ** 2 if p_lo > 0 else -math.inf
        ci_hi[i] = math.log(p_hi) / level ** 2
    censored = hits == 0
    if censored.any():
        logger.warning("%d of %d t cells censored (zero hits)", int(censored.sum()), t.size)
    return SubgaussianReport(t=t, hits=hits, trials=trials, value=value, ci_lo=ci_lo,
                             ci_hi=ci_hi, censored=censored)


def subgaussian_curve(cdf, t_grid):
    """(1/t^2) log P(X <= 1/t^2) for an analytic CDF, no sampling."""
    t = _check_t_grid(t_grid)
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(cdf(t ** -2.0), dtype=float)) / t ** 2


def parse_arguments():
    parser = argparse.ArgumentParser(
        description="Run the embedded two-particle Fleming-Viot chain",
        epilog="Example usage: PerpetuityLab fv --n_steps 1000000 --lil_band 0.5 1.4")
    add_arguments(parser)
    parser.add_argument("--seed", type=int, default=0, help="Root seed.")
    return parser.parse_args()


def add_arguments(parser):
    parser.add_argument("--n_steps", type=int, required=True, help="Branch events per run.")
    parser.add_argument("--n_min", type=int, default=MIN_STEPS,
                        help="First step of the maximal ratio.")
    parser.add_argument("--thin_points", type=int, default=THIN_POINTS,
                        help="Storage grid size for long runs.")
    parser.add_argument("--lil_band", type=float, nargs=2, default=None, metavar=("LOW", "HIGH"),
                        help="Acceptance band of the maximal ratio.")
    parser.add_argument("--min_fraction", type=float, default=0.9,
                        help="Fraction of seeds that must fall in the band.")


def main(n_steps=None, n_min=MIN_STEPS, thin_points=THIN_POINTS, lil_band=None, min_fraction=0.9,
         seed=0, seeds=None, out_dir=None, fmt="csv", config_hash=None, database_url=None):
    """
    Run the fv command, one chain per seed.

    Returns
    -------
    int
        0 on success, 2 when fewer than ``min_fraction`` of the seeds have
        ``lil_max`` inside ``lil_band``.
    """
    started = time.perf_counter()
    try:
        if n_steps is None:
            args = parse_arguments()
            n_steps, n_min, thin_points = args.n_steps, args.n_min, args.thin_points
            lil_band, min_fraction, seed = args.lil_band, args.min_fraction, args.seed

        seeds = list(seeds) if seeds else [seed]
        out_dir = out_dir or DEFAULT_OUTPUT_DIR
        logger.info("Command executed: fv n_steps=%s seeds=%s", n_steps, seeds)
        options = {"subcommand": "fv", "n_steps": n_steps, "n_min": n_min,
                   "thin_points": thin_points, "lil_band": lil_band,
                   "min_fraction": min_fraction, "seeds": seeds}
        config_hash = config_hash or hash_options(options)

        frames, reports = [], {}
        for one_seed in seeds:
            run = run_fv(n_steps, one_seed, thin_points=thin_points, n_min=n_min)
            frame = run.trajectory.copy()
            frame.insert(0, "seed", one_seed)
            frames.append(frame)
            reports[str(one_seed)] = run.report.to_dict()
        results_io.write_table(pd.concat(frames, ignore_index=True), out_dir, "fv", config_hash, fmt)

        statistics = {"runs": reports, "mu_reference": MU_REFERENCE,
                      "lil_max_median": float(np.median([r["lil_max"] for r in reports.values()]))}
        exit_code = 0
        if lil_band:
            inside = [lil_band[0] <= r["lil_max"] <= lil_band[1] for r in reports.values()]
            statistics["fraction_in_band"] = float(np.mean(inside))
            if statistics["fraction_in_band"] < min_fraction:
                logger.warning("Only %.0f%% of seeds have lil_max in %s",
                               100 * statistics["fraction_in_band"], lil_band)
                exit_code = 2
        results_io.finish_run(out_dir, "fv", config_hash, statistics, seeds=seeds,
                              started=started, exit_code=exit_code, database_url=database_url)
        return exit_code

    except ValueError as ve:
        logger.error("ValueError: %s", str(ve))
        raise
    except Exception as e:
        logger.error("An unexpected error occurred: %s", str(e))
        raise


if __name__ == "__main__":
    raise SystemExit(main())
