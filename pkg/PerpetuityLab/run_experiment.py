#!/usr/bin/env python

"""
Run an experiment described by a JSON config file.

The config names a subcommand, its options, the coefficient law (or, for
``transform``, a local dependence measure), the scale H, solver overrides
and the seeds. The file is validated, hashed and dispatched to the command's
``main`` function, which writes its result tables, ``summary.json`` and a
run record. The config hash stamped on every output row is the hash of the
config as loaded, after command-line overrides.

Command-Line Arguments
----------------------
--config : str
    Path to the JSON config.
--seed : int, optional
    Replaces the config seeds with this one.
--out : str, optional
    Output directory (overrides the config and ``PERPETUITYLAB_OUT``).
--threads : int, optional
    Worker threads for replica blocks.
--format : {'csv', 'jsonl'}, optional
    Table format.

Example Usage
-------------
>>> PerpetuityLab run --config configs/transform_fv.json --out results/transform_fv

Config Example
--------------
{
    "subcommand": "transform",
    "law": {"kind": "fleming-viot"},
    "lambda_grid": [0.0, 1.0, 0.1]
}

Logging
-------
Logs are written to `PerpetuityLab/logging/perpetuitylab.log`.
"""

import argparse
from PerpetuityLab.settings import get_logger, DEFAULT_OUTPUT_DIR, DEFAULT_THREADS
from PerpetuityLab.accessories.config import ConfigError, load_config
from PerpetuityLab.accessories.ldm_functions import closed_form_for
from PerpetuityLab import transform, perpetuity, envelope_schedule, flemingviot, dependence

# Set up logger
logger = get_logger(__name__)


def parse_arguments():
    """
    Parse command-line arguments.

    Returns
    -------
    argparse.Namespace
        Parsed arguments.
    """
    parser = argparse.ArgumentParser(
        description="Run an experiment from a JSON config",
        epilog="Example usage: PerpetuityLab run --config configs/transform_fv.json",
    )
    parser.add_argument("--config", type=str, required=True, help="Path to the JSON config.")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seeds.")
    parser.add_argument("--out", type=str, default=None, help="Output directory.")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads.")
    parser.add_argument("--format", choices=["csv", "jsonl"], default=None, help="Table format.")
    return parser.parse_args()


def _transform_ldm(config):
    """The LDM spec for a transform config: 'ldm' if given, else the law's closed form."""
    if config.ldm is not None:
        return config.ldm
    g = closed_form_for(config.law.build(config.scale))
    if g is None:
        raise ConfigError("law", f"{config.law.kind} has no closed-form dependence measure; "
                                 "give 'ldm' instead")
    return g.to_dict()


def dispatch(config, threads=None, database_url=None):
    """
    Call the command ``main`` for a loaded config.

    Parameters
    ----------
    config : ExperimentConfig
        The validated config.
    threads : int, optional
        Worker threads.
    database_url : str, optional
        Run-record store.

    Returns
    -------
    int
        The command's exit code.
    """
    out_dir = config.out or DEFAULT_OUTPUT_DIR
    options = dict(config.options)
    common = {"out_dir": out_dir, "fmt": config.format, "config_hash": config.config_hash,
              "database_url": database_url}
    seeds = list(config.seeds)
    scale_spec = {"rho": config.scale.rho, "beta": config.scale.beta, "scale": config.scale.scale}

    if config.subcommand == "transform":
        lambda_grid = options.get("lambda_grid", [0.0, 1.0, 0.05])
        if len(lambda_grid) != 3:
            raise ConfigError("lambda_grid", f"expected [start, stop, step], got {lambda_grid!r}")
        return transform.main(ldm_spec=_transform_ldm(config), rho=config.scale.rho,
                              lambda_grid=lambda_grid, lambda1=options.get("lambda1"),
                              max_steps=options.get("max_steps", 200),
                              solver=config.solver.transform_overrides(), **common)

    if config.subcommand in ("simulate", "tail", "envelope"):
        command = {"simulate": perpetuity.simulate_main, "tail": perpetuity.tail_main,
                   "envelope": perpetuity.envelope_main}[config.subcommand]
        if config.subcommand == "envelope" and "band" in options and len(options["band"]) != 2:
            raise ConfigError("band", f"expected [low, high], got {options['band']!r}")
        threads_option = {} if config.subcommand == "envelope" else {"threads": threads}
        return command(law_spec=config.law.to_dict(), scale_spec=scale_spec, seeds=seeds,
                       **threads_option, **options, **common)

    if config.subcommand == "schedule":
        return envelope_schedule.main(scale_spec=scale_spec, seeds=seeds, **options, **common)

    if config.subcommand == "dependence":
        return dependence.main(law_spec=config.law.to_dict(), scale_spec=scale_spec, seeds=seeds,
                               threads=threads, **options, **common)

    if "lil_band" in options and len(options["lil_band"]) != 2:
        raise ConfigError("lil_band", f"expected [low, high], got {options['lil_band']!r}")
    return flemingviot.main(seeds=seeds, **options, **common)


def main(config=None, seed=None, out_dir=None, threads=None, fmt=None, database_url=None):
    """
    Load a config and run it.

    Parameters
    ----------
    config : str, optional
        Path to the JSON config. Parsed from the command line when omitted.
    seed : int, optional
        Seed override.
    out_dir : str, optional
        Output directory override.
    threads : int, optional
        Worker threads.
    fmt : {'csv', 'jsonl'}, optional
        Table format override.
    database_url : str, optional
        Run-record store.

    Returns
    -------
    int
        0 on success, 2 on a property-check failure.

    Raises
    ------
    ConfigError
        For an invalid config, after logging it.
    """
    try:
        if config is None:
            args = parse_arguments()
            config, seed, out_dir = args.config, args.seed, args.out
            threads, fmt = args.threads, args.format

        logger.info("Command executed: run --config %s", config)
        loaded = load_config(config, seed=seed, out=out_dir, fmt=fmt)
        exit_code = dispatch(loaded, threads=threads or DEFAULT_THREADS, database_url=database_url)
        logger.info("Config %s finished with exit code %d", config, exit_code)
        return exit_code

    except ConfigError as ce:
        logger.error("Invalid config %s: %s", config, ce)
        raise
    except FileNotFoundError as fe:
        logger.error("Config file not found: %s", fe)
        raise
    except Exception as e:
        logger.error("An unexpected error occurred: %s", str(e))
        raise


if __name__ == "__main__":
    raise SystemExit(main())
