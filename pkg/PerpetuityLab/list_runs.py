#!/usr/bin/env python

"""
List stored run records.

Every command stores a run record (config hash, seeds, wall time, version,
exit code and statistics). This command prints them, optionally only the
runs of one config hash.

Command-Line Arguments
----------------------
--config_hash : str, optional
    Only show runs of this config hash (a unique prefix is enough).

Example Usage
-------------
>>> PerpetuityLab runs --config_hash 3fa1c2

Logging
-------
Logs are written to `PerpetuityLab/logging/perpetuitylab.log`.
"""

import argparse
from sqlalchemy.exc import SQLAlchemyError
from DB import runs_db
from PerpetuityLab.settings import get_logger, DATABASE_URL

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
        description="List stored run records",
        epilog="Example usage: PerpetuityLab runs --config_hash 3fa1c2",
    )
    parser.add_argument("--config_hash", "--config-hash", type=str, default=None,
                        help="Only list runs of this config hash (prefix allowed).")
    return parser.parse_args()


def format_run(run):
    """One line per run, followed by its statistics."""
    seeds = ",".join(str(seed) for seed in run["seeds"]) or "-"
    wall_time = run["wall_time"] if run["wall_time"] is not None else float("nan")
    lines = [f"#{run['id']} {run['created']} {run['subcommand']} hash={run['config_hash'][:12]} "
             f"seeds={seeds} exit={run['exit_code']} wall={wall_time:.2f}s v{run['version']}"]
    for name, value in sorted(run["statistics"].items()):
        lines.append(f"    {name} = {value:.10g}" if value is not None else f"    {name} = -")
    return "\n".join(lines)


def main(config_hash=None, database_url=None, from_cli=False):
    """
    Print stored runs.

    Parameters
    ----------
    config_hash : str, optional
        Hash or hash prefix to filter by.
    database_url : str, optional
        Run-record store.
    from_cli : bool, optional
        Parse ``--config_hash`` from the command line.

    Returns
    -------
    int
        0 on success, also when the store is disabled.
    """
    try:
        if from_cli:
            config_hash = parse_arguments().config_hash

        logger.info("Command executed: runs --config_hash %s", config_hash)
        database_url = database_url or DATABASE_URL
        if database_url.lower() == "none":
            logger.info("Run store disabled; nothing to list")
            print("Run store disabled (PERPETUITYLAB_DB=none).")
            return 0
        runs = runs_db.list_runs(config_hash, database_url=database_url)
        if not runs:
            print("No runs recorded.")
            return 0
        for run in runs:
            print(format_run(run))
        return 0

    except SQLAlchemyError as se:
        logger.error("Could not read run records: %s", se)
        raise
    except Exception as e:
        logger.error("An unexpected error occurred: %s", str(e))
        raise


if __name__ == "__main__":
    raise SystemExit(main(from_cli=True))
