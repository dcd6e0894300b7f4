#!/usr/bin/env python

"""
Monte Carlo trajectories of the local dependence measure g.

For each requested y the command estimates -log P(eps A y + B < eps) / H(eps)
along a decreasing eps grid, next to the exact value wherever the law has an
analytic small-ball probability. With y = 0 this is the left-tail exponent of
B. With two or more y values it also reports how far apart the trajectories
of the first and the last y are, in joint standard errors, at the smallest
eps where neither is censored.

Command-Line Arguments
----------------------
--law : str
    Coefficient law kind, with its parameters (--lambda1, --lambda2, ...).
--y : float ...
    Arguments of g (default 0).
--eps_grid : float ...
    Decreasing eps grid.
--samples : int
    Pairs (A, B) drawn per y.
--min_separation : float, optional
    Required separation, in joint standard errors, of the first and last y.

Example Usage
-------------
>>> PerpetuityLab dependence --law discontinuous-ldm --lambda1 2 --lambda2 1 --y 0 0.01 --eps_grid 0.4 0.3 0.2 --samples 2000000 --min_separation 3

Logging
-------
Logs are written to `PerpetuityLab/logging/perpetuitylab.log`.
"""

import argparse
import math
import time
import numpy as np
import pandas as pd
from PerpetuityLab.settings import get_logger, DEFAULT_OUTPUT_DIR, DEFAULT_THREADS
from PerpetuityLab.accessories import results_io
from PerpetuityLab.accessories.config import (
    add_law_arguments, law_spec_from_args, scale_spec_from_args, config_hash as hash_options
)
from PerpetuityLab.accessories.ldm_functions import estimate_g, exact_g_trajectory
from PerpetuityLab.perpetuity import law_and_scale

logger = get_logger(__name__)

DEFAULT_EPS_GRID = [0.2, 0.1, 0.05, 0.02]
DEFAULT_SAMPLES = 1_000_000


def exponent_standard_error(table, scale):
    """
    Delta-method standard error of each exponent in an ExponentTable.

    sd(-log p_hat) is about sqrt((1 - p) / (n p)); censored cells get inf.
    """
    h_eps = np.asarray(scale.h(table.eps), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt((1.0 - table.p_hat) / table.hits) / h_eps
    return np.where(table.censored, math.inf, se)


def separation(first, second, scale):
    """
    Distance between two exponent trajectories at their last common uncensored cell.

    Parameters
    ----------
    first, second : ExponentTable
        Tables on the same eps grid from independent samples.
    scale : TailScale
        The scale H both were normalised by.

    Returns
    -------
    dict
        ``eps``, ``difference`` (second minus first), ``joint_se`` and
        ``n_se``; all NaN when no cell is uncensored in both.
    """
    if not np.array_equal(first.eps, second.eps):
        raise ValueError("Trajectories must share one eps grid")
    both = np.flatnonzero(~first.censored & ~second.censored)
    if not both.size:
        logger.warning("No eps cell is uncensored for both trajectories")
        return {"eps": math.nan, "difference": math.nan, "joint_se": math.nan, "n_se": math.nan}
    i = int(both[-1])
    difference = float(second.exponent[i] - first.exponent[i])
    joint_se = math.hypot(exponent_standard_error(first, scale)[i],
                          exponent_standard_error(second, scale)[i])
    n_se = difference / joint_se if joint_se > 0 else math.inf
    return {"eps": float(first.eps[i]), "difference": difference, "joint_se": joint_se,
            "n_se": n_se}


def ldm_trajectories(law, ys, scale, eps_grid, samples, seed, threads=DEFAULT_THREADS,
                     confidence=0.95):
    """
    Estimate g(y) trajectories for several y from independent streams.

    The y with position i draws from the root seed ``[seed, i]``.

    Returns
    -------
    tuple of (list of ExponentTable, pandas.DataFrame)
        The tables, and one long frame with a ``y`` column, the standard
        error and the ``exact`` value (NaN without an oracle).
    """
    tables, frames = [], []
    for index, y in enumerate(ys):
        table = estimate_g(law, y, scale, eps_grid, samples, [seed, index], threads=threads,
                           confidence=confidence)
        try:
            exact = exact_g_trajectory(law, y, table.eps, scale)
        except ValueError:
            exact = np.full(table.eps.size, math.nan)
        frame = table.to_frame()
        frame["se"] = exponent_standard_error(table, scale)
        frame["exact"] = exact
        tables.append(table)
        frames.append(frame)
    frame = pd.concat(frames, ignore_index=True)
    return tables, frame[["y"] + [column for column in frame.columns if column != "y"]]


def parse_arguments():
    parser = argparse.ArgumentParser(
        description="Monte Carlo trajectories of the local dependence measure g",
        epilog="Example usage: PerpetuityLab dependence --law fleming-viot --y 0 --samples 1000000")
    add_law_arguments(parser)
    add_arguments(parser)
    parser.add_argument("--seed", type=int, default=0, help="Root seed.")
    return parser.parse_args()


def add_arguments(parser):
    parser.add_argument("--y", type=float, nargs="+", default=[0.0], help="Arguments of g.")
    parser.add_argument("--eps_grid", type=float, nargs="+", default=DEFAULT_EPS_GRID,
                        help="Decreasing eps grid.")
    parser.add_argument("--samples", type=int, default=DEFAULT_SAMPLES,
                        help="Pairs (A, B) drawn per y.")
    parser.add_argument("--confidence", type=float, default=0.95, help="Interval level.")
    parser.add_argument("--min_separation", type=float, default=None,
                        help="Required separation of the first and last y, in joint SE.")


def main(law_spec=None, scale_spec=None, y=None, eps_grid=None, samples=DEFAULT_SAMPLES,
         confidence=0.95, min_separation=None, seed=0, seeds=None, threads=None, out_dir=None,
         fmt="csv", config_hash=None, database_url=None):
    """
    Run the dependence command.

    Returns
    -------
    int
        0 on success, 2 when ``min_separation`` is set and the first and
        last y trajectories are closer than that many joint standard errors.
    """
    started = time.perf_counter()
    try:
        if law_spec is None:
            args = parse_arguments()
            law_spec, scale_spec = law_spec_from_args(args), scale_spec_from_args(args)
            y, eps_grid, samples = args.y, args.eps_grid, args.samples
            confidence, min_separation, seed = args.confidence, args.min_separation, args.seed

        seed = seeds[0] if seeds else seed
        threads = threads or DEFAULT_THREADS
        out_dir = out_dir or DEFAULT_OUTPUT_DIR
        ys = list(y) if y is not None else [0.0]
        eps_grid = list(eps_grid or DEFAULT_EPS_GRID)
        logger.info("Command executed: dependence law=%s y=%s eps=%s samples=%s seed=%s",
                    law_spec, ys, eps_grid, samples, seed)
        law, scale = law_and_scale(law_spec, scale_spec)
        options = {"subcommand": "dependence", "law": law_spec, "scale": scale.to_dict(), "y": ys,
                   "eps_grid": eps_grid, "samples": samples, "confidence": confidence,
                   "min_separation": min_separation, "seed": seed}
        config_hash = config_hash or hash_options(options)

        tables, frame = ldm_trajectories(law, ys, scale, eps_grid, samples, seed,
                                         threads=threads, confidence=confidence)
        results_io.write_table(frame, out_dir, "dependence", config_hash, fmt)

        statistics = {"by_y": {}}
        for value, table in zip(ys, tables):
            exponent, ci_lo, ci_hi = table.final
            statistics["by_y"][str(value)] = {
                "final_exponent": exponent, "final_ci_lo": ci_lo, "final_ci_hi": ci_hi,
                "final_censored": bool(table.censored[-1]), "increasing": table.is_increasing(),
            }
        exit_code = 0
        if len(ys) >= 2:
            gap = separation(tables[0], tables[-1], scale)
            statistics["separation"] = gap
            logger.info("g(%g) and g(%g) differ by %.4g at eps=%g (%.2f joint SE)",
                        ys[0], ys[-1], gap["difference"], gap["eps"], gap["n_se"])
            if min_separation is not None and not gap["n_se"] >= min_separation:
                logger.warning("Separation %.2f SE is below the required %.2f",
                               gap["n_se"], min_separation)
                exit_code = 2
        results_io.finish_run(out_dir, "dependence", config_hash, statistics, seeds=[seed],
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
