#!/usr/bin/env python

"""
Index schedule behind the lower-envelope bound.

Given eps_tilde > 0, lambda* > 0, eps > 0, y* > 1 and c in (0, eps_tilde y*),
the schedule is

    f(x)      = (log eps_tilde - log H^{-1}(log x / (lambda* (1 + eps)))) / log y*
    a_{n+1}   = a_n + f(a_n),   a_0 the smallest integer >= 2 with f(a_0) >= 1
    k_n       = ceil(a_n)

so that H^{-1}(log a_n / (lambda* (1 + eps))) y*^{f(a_n)} = eps_tilde. The
builder checks, for every n up to n_max,

- the upper bound  H^{-1}(log k_{n+1} / (lambda* (1 + eps))) y*^{k_{n+1} - k_n - 1} < eps_tilde;
- the lower bound  H^{-1}(log k_{n+1} / (lambda* (1 + eps))) y*^{k_{n+1} - k_n} >= c;
- the growth bound k_n^gamma <= K n, with K computed from the run and
  required to hold unchanged up to a longer horizon (default 100000).

Both bounds are only promised for large n; the builder reports the first
index after which they hold throughout (the burn-in).

Command-Line Arguments
----------------------
--eps_tilde, --lambda_star, --epsilon, --y_star, --c : float
    Schedule parameters.
--n_max : int
    Length of the schedule (default 10000).
--gamma : float
    Exponent of the growth bound (default 0.9).
--horizon : int
    Last index of the stability check of K (default 100000).

Example Usage
-------------
>>> PerpetuityLab schedule --eps_tilde 1 --lambda_star 0.5 --epsilon 0.1 --y_star 2 --c 0.25

Logging
-------
Logs are written to `PerpetuityLab/logging/perpetuitylab.log`.
"""

import argparse
import math
import time
from dataclasses import dataclass, field
import numpy as np
import pandas as pd
from PerpetuityLab.settings import get_logger, DEFAULT_OUTPUT_DIR
from PerpetuityLab.accessories import results_io
from PerpetuityLab.accessories.config import config_hash as hash_options
from PerpetuityLab.accessories.tail_scale import H1, TailScale, eval_h_inverse, inverse_many

logger = get_logger(__name__)

DEFAULT_N_MAX = 10_000
DEFAULT_GAMMA = 0.9
# K must still bound k_n^gamma / n this far out
STABILITY_HORIZON = 100_000
# Relative slack when comparing K over the run and over the horizon
STABILITY_RTOL = 1e-9
# Largest a_0 tried before giving up
A0_LIMIT = 2 ** 62


class ScheduleParameterError(ValueError):
    """Raised for schedule parameters outside their admissible ranges."""
    pass


@dataclass(frozen=True)
class ScheduleParams:
    """
    Parameters of the envelope schedule.

    Attributes
    ----------
    eps_tilde : float
        Target of the upper bound, > 0.
    lambda_star : float
        Fixed point lambda*, > 0.
    epsilon : float
        Slack eps > 0 in lambda* (1 + eps).
    y_star : float
        Base y* > 1.
    c : float
        Lower bound constant in (0, eps_tilde y*).
    """

    eps_tilde: float
    lambda_star: float
    epsilon: float
    y_star: float
    c: float

    def __post_init__(self):
        for name in ("eps_tilde", "lambda_star", "epsilon"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ScheduleParameterError(f"{name} must be positive and finite, got {value!r}")
        if not (math.isfinite(self.y_star) and self.y_star > 1):
            raise ScheduleParameterError(f"y_star must exceed 1, got {self.y_star!r}")
        if not 0 < self.c < self.eps_tilde * self.y_star:
            raise ScheduleParameterError(
                f"c must lie in (0, eps_tilde * y_star) = (0, {self.eps_tilde * self.y_star:g}), "
                f"got {self.c!r}")

    @property
    def level(self):
        """lambda* (1 + eps)."""
        return self.lambda_star * (1.0 + self.epsilon)

    def to_dict(self):
        return {"eps_tilde": self.eps_tilde, "lambda_star": self.lambda_star,
                "epsilon": self.epsilon, "y_star": self.y_star, "c": self.c}


@dataclass
class EnvelopeSchedule:
    """
    The sequences a_n, k_n and their verification.

    Attributes
    ----------
    a_seq : numpy.ndarray
        a_0, ..., a_{n_max}.
    k_seq : numpy.ndarray
        ceil(a_n), integer.
    params : ScheduleParams
        The parameters.
    upper : numpy.ndarray
        log of the upper-bound quantity minus log eps_tilde, per n < n_max
        (negative where the bound holds).
    lower : numpy.ndarray
        log of the lower-bound quantity minus log c (nonnegative where the
        bound holds).
    burn_in : int or None
        First n from which both bounds hold up to n_max; None if the last
        index fails.
    K : float
        max over 1 <= n <= n_max of k_n^gamma / n.
    K_horizon : float
        The same maximum over 1 <= n <= horizon.
    horizon : int
        Last index of the stability check, beyond n_max.
    checks : dict
        Named boolean checks and summary numbers.
    """

    a_seq: np.ndarray
    k_seq: np.ndarray
    params: ScheduleParams
    upper: np.ndarray
    lower: np.ndarray
    burn_in: int = None
    K: float = math.nan
    K_horizon: float = math.nan
    horizon: int = STABILITY_HORIZON
    gamma: float = DEFAULT_GAMMA
    checks: dict = field(default_factory=dict)

    @property
    def stable(self):
        """K computed up to n_max still bounds k_n^gamma / n up to the horizon."""
        return bool(self.K_horizon <= self.K * (1.0 + STABILITY_RTOL))

    @property
    def passed(self):
        return bool(self.burn_in is not None and self.checks.get("step_at_least_one")
                    and self.checks.get("k_strictly_increasing") and self.stable)

    def to_frame(self):
        n = np.arange(len(self.a_seq))
        upper = np.append(self.upper, np.nan)
        lower = np.append(self.lower, np.nan)
        with np.errstate(divide="ignore"):
            growth = np.where(n > 0, self.k_seq.astype(float) ** self.gamma / np.maximum(n, 1), np.nan)
        return pd.DataFrame({"n": n, "a": self.a_seq, "k": self.k_seq, "log_upper_margin": upper,
                             "log_lower_margin": lower, "growth": growth})


def schedule_step(params, scale, x):
    """
    f(x), the increment of the schedule at x > 1.

    Examples
    --------
    >>> params = ScheduleParams(1.0, 0.5, 0.1, 2.0, 0.25)
    >>> round(schedule_step(params, H1, math.exp(2.2)), 12)
    2.0
    """
    if not x > 1:
        raise ScheduleParameterError(f"f is defined for x > 1, got {x!r}")
    inverse = eval_h_inverse(scale, math.log(x) / params.level)
    return (math.log(params.eps_tilde) - math.log(inverse)) / math.log(params.y_star)


def smallest_start(params, scale):
    """The smallest integer a_0 >= 2 with f(a_0) >= 1 (f is increasing)."""
    if schedule_step(params, scale, 2) >= 1:
        return 2
    low, high = 2, 4
    while schedule_step(params, scale, high) < 1:
        low, high = high, high * 2
        if high > A0_LIMIT:
            logger.error("No start a_0 <= %d with f(a_0) >= 1", A0_LIMIT)
            raise ScheduleParameterError("f(x) stays below 1; no admissible start a_0")
    while high - low > 1:
        middle = (low + high) // 2
        if schedule_step(params, scale, middle) >= 1:
            high = middle
        else:
            low = middle
    return high


def build_envelope_schedule(params, scale=H1, n_max=DEFAULT_N_MAX, gamma=DEFAULT_GAMMA,
                            horizon=STABILITY_HORIZON):
    """
    Build and verify the schedule a_n, k_n.

    Parameters
    ----------
    params : ScheduleParams
        The parameters.
    scale : TailScale, optional
        The scale H.
    n_max : int, optional
        Last index, at least 2.
    gamma : float, optional
        Growth-bound exponent in (0, 1].
    horizon : int, optional
        Length of the stability check of K; raised to 2 n_max when smaller.

    Returns
    -------
    EnvelopeSchedule

    Raises
    ------
    ScheduleParameterError
        For invalid ``n_max`` or ``gamma``, or when no start exists.
    """
    if n_max < 2:
        raise ScheduleParameterError(f"n_max must be at least 2, got {n_max!r}")
    if not 0 < gamma <= 1:
        raise ScheduleParameterError(f"gamma must lie in (0, 1], got {gamma!r}")

    horizon = max(int(horizon), 2 * n_max)
    a0 = smallest_start(params, scale)
    a_long = np.empty(horizon + 1)
    a_long[0] = a = float(a0)
    for n in range(1, horizon + 1):
        a = a + schedule_step(params, scale, a)
        a_long[n] = a
    k_long = np.ceil(a_long).astype(np.int64)
    a_seq, k_seq = a_long[: n_max + 1], k_long[: n_max + 1]

    # Bounds in log form: log H^{-1}(...) + exponent * log y*
    log_inverse = np.log(inverse_many(scale, np.log(k_seq[1:].astype(float)) / params.level))
    jumps = np.diff(k_seq)
    log_y = math.log(params.y_star)
    upper = log_inverse + (jumps - 1) * log_y - math.log(params.eps_tilde)
    lower = log_inverse + jumps * log_y - math.log(params.c)
    holds = (upper < 0) & (lower >= 0)
    failures = np.flatnonzero(~holds)
    if not failures.size:
        burn_in = 0
    elif failures[-1] == len(holds) - 1:
        burn_in = None
    else:
        burn_in = int(failures[-1] + 1)

    n = np.arange(1, n_max + 1)
    growth = k_long[1:].astype(float) ** gamma / np.arange(1, horizon + 1)
    K = float(growth[:n_max].max())
    K_horizon = float(growth.max())

    checks = {
        "a0": a0,
        "step_at_least_one": bool(np.all(np.diff(a_seq) >= 1.0 - 1e-12)),
        "k_strictly_increasing": bool(np.all(jumps > 0)),
        "upper_bound_violations": int((upper >= 0).sum()),
        "lower_bound_violations": int((lower < 0).sum()),
        "final_ratio": float(a_seq[-1] / a_seq[-2]),
        "growth_holds": bool(np.all(k_seq[1:] ** gamma <= K * n * (1 + 1e-12))),
    }
    schedule = EnvelopeSchedule(a_seq=a_seq, k_seq=k_seq, params=params, upper=upper,
                                lower=lower, burn_in=burn_in, K=K, K_horizon=K_horizon,
                                horizon=horizon, gamma=gamma,
                                checks=checks)
    if burn_in is None:
        logger.warning("Schedule bounds fail at the last index %d", n_max)
    elif burn_in > 0:
        logger.info("Schedule bounds hold from n=%d on", burn_in)
    if not schedule.stable:
        logger.warning("Growth constant not stable: K=%.6g up to n=%d, %.6g up to n=%d",
                       K, n_max, K_horizon, horizon)
    logger.debug("Schedule: a0=%d, a_n_max=%.6g, K=%.6g", a0, a_seq[-1], K)
    return schedule


def parse_arguments():
    parser = argparse.ArgumentParser(
        description="Build and verify the lower-envelope index schedule",
        epilog="Example usage: PerpetuityLab schedule --eps_tilde 1 --lambda_star 0.5 "
               "--epsilon 0.1 --y_star 2 --c 0.25")
    add_arguments(parser)
    return parser.parse_args()


def add_arguments(parser):
    parser.add_argument("--eps_tilde", type=float, required=True, help="Upper-bound target.")
    parser.add_argument("--lambda_star", type=float, required=True, help="Fixed point lambda*.")
    parser.add_argument("--epsilon", type=float, required=True, help="Slack in lambda*(1+eps).")
    parser.add_argument("--y_star", type=float, required=True, help="Base y* > 1.")
    parser.add_argument("--c", type=float, required=True, help="Lower-bound constant.")
    parser.add_argument("--n_max", type=int, default=DEFAULT_N_MAX, help="Schedule length.")
    parser.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="Growth exponent.")
    parser.add_argument("--horizon", type=int, default=STABILITY_HORIZON,
                        help="Last index of the stability check of K.")
    parser.add_argument("--rho", type=float, default=1.0, help="Index of the scale H.")
    parser.add_argument("--beta", type=float, default=0.0, help="Log exponent of the scale H.")


def main(eps_tilde=None, lambda_star=None, epsilon=None, y_star=None, c=None,
         n_max=DEFAULT_N_MAX, gamma=DEFAULT_GAMMA, horizon=STABILITY_HORIZON, scale_spec=None,
         seeds=None, out_dir=None,
         fmt="csv", config_hash=None, database_url=None):
    """
    Run the schedule command.

    Returns
    -------
    int
        0 when both bounds hold past a burn-in, a_{n+1} >= a_n + 1, k_n is
        strictly increasing and K is stable; 2 otherwise.
    """
    started = time.perf_counter()
    try:
        if eps_tilde is None:
            args = parse_arguments()
            eps_tilde, lambda_star, epsilon = args.eps_tilde, args.lambda_star, args.epsilon
            y_star, c, n_max, gamma = args.y_star, args.c, args.n_max, args.gamma
            horizon = args.horizon
            scale_spec = {"rho": args.rho, "beta": args.beta, "scale": 1.0}

        out_dir = out_dir or DEFAULT_OUTPUT_DIR
        scale = TailScale.from_dict(scale_spec or {})
        params = ScheduleParams(eps_tilde, lambda_star, epsilon, y_star, c)
        logger.info("Command executed: schedule %s n_max=%d gamma=%g", params.to_dict(), n_max, gamma)
        options = {"subcommand": "schedule", **params.to_dict(), "n_max": n_max, "gamma": gamma,
                   "horizon": horizon, "scale": scale.to_dict()}
        config_hash = config_hash or hash_options(options)

        schedule = build_envelope_schedule(params, scale, n_max, gamma, horizon)
        results_io.write_table(schedule.to_frame(), out_dir, "schedule", config_hash, fmt)
        statistics = {"burn_in": schedule.burn_in if schedule.burn_in is not None else math.nan,
                      "K": schedule.K, "K_horizon": schedule.K_horizon,
                      "horizon": schedule.horizon, "stable": schedule.stable,
                      **schedule.checks}
        exit_code = 0 if schedule.passed else 2
        results_io.finish_run(out_dir, "schedule", config_hash, statistics, seeds=seeds or [],
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
