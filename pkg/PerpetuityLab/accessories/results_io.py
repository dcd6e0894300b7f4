"""
Result files.

Every command writes

- one table per result kind as CSV (or JSON lines with ``--format jsonl``),
  each row stamped with the config hash;
- a whitespace-separated ``.dat`` copy of each table with a ``#`` header
  line, ready for gnuplot;
- ``summary.json`` holding the config hash, seeds, library version, exit
  code, wall time and the run statistics.

Tables are written in a fixed column order and float format so identical
inputs give byte-identical files. Wall time only ever appears in the
summary and the run record.
"""

import json
import math
import os
import time
import numpy as np
import pandas as pd
from sqlalchemy.exc import SQLAlchemyError
from PerpetuityLab.settings import get_logger, VERSION, DATABASE_URL
from DB import runs_db

logger = get_logger(__name__)

FLOAT_FORMAT = "%.12g"


def _jsonable(value):
    """Convert numpy scalars and non-finite floats to JSON-safe values."""
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(item) for item in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def table_path(out_dir, name, fmt="csv"):
    return os.path.join(out_dir, f"{name}.{'jsonl' if fmt == 'jsonl' else 'csv'}")


def write_table(frame, out_dir, name, config_hash, fmt="csv"):
    """
    Write a result table and its gnuplot copy.

    Parameters
    ----------
    frame : pandas.DataFrame
        The table; a ``config_hash`` column is appended.
    out_dir : str
        Output directory, created if missing.
    name : str
        File stem.
    config_hash : str
        Hash stamped on every row.
    fmt : {'csv', 'jsonl'}, optional
        Table format.

    Returns
    -------
    str
        Path of the table file.
    """
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"Unknown output format {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    table = frame.copy()
    table["config_hash"] = config_hash
    path = table_path(out_dir, name, fmt)
    if fmt == "csv":
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    else:
        table.to_json(path, orient="records", lines=True, double_precision=15)
    write_dat(frame, os.path.join(out_dir, f"{name}.dat"))
    logger.info("Wrote %d rows to %s", len(table), path)
    return path


def write_dat(frame, path):
    """Write the numeric and boolean columns of ``frame`` as a gnuplot data file."""
    columns = [column for column in frame.columns
               if pd.api.types.is_numeric_dtype(frame[column])
               or pd.api.types.is_bool_dtype(frame[column])]
    numeric = frame[columns].astype(float)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# " + " ".join(columns) + "\n")
        numeric.to_csv(handle, sep=" ", header=False, index=False, float_format=FLOAT_FORMAT)
    return path


def write_summary(summary, out_dir, name="summary"):
    """
    Write a summary as sorted-key JSON.

    Non-finite floats are written as the strings "inf", "-inf" and "nan".
    """
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.json")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(_jsonable(summary), handle, sort_keys=True, indent=2)
        handle.write("\n")
    return path


def read_summary(out_dir, name="summary"):
    with open(os.path.join(out_dir, f"{name}.json"), "r", encoding="utf-8") as handle:
        return json.load(handle)


def finish_run(out_dir, subcommand, config_hash, statistics, seeds=None, started=None,
               exit_code=0, database_url=None):
    """
    Write the summary of a finished command and store its run record.

    Parameters
    ----------
    out_dir : str
        Output directory.
    subcommand : str
        Name of the command.
    config_hash : str
        Hash of the command options.
    statistics : dict
        Named run statistics; nested values are kept in the summary and
        flattened to scalars for the run record.
    seeds : list of int, optional
        Root seeds used.
    started : float, optional
        ``time.perf_counter()`` at command start.
    exit_code : int, optional
        Exit code the command will return.
    database_url : str, optional
        Run-record store; ``"none"`` skips recording.

    Returns
    -------
    str
        Path of the summary file.
    """
    wall_time = time.perf_counter() - started if started is not None else math.nan
    summary = {
        "config_hash": config_hash,
        "subcommand": subcommand,
        "seeds": list(seeds or []),
        "version": VERSION,
        "exit_code": exit_code,
        "wall_time_s": wall_time,
        "statistics": statistics,
    }
    path = write_summary(summary, out_dir)

    database_url = database_url or DATABASE_URL
    if database_url.lower() != "none":
        try:
            runs_db.record_run(subcommand=subcommand, config_hash=config_hash,
                               seeds=list(seeds or []), wall_time=wall_time,
                               exit_code=exit_code, statistics=flatten_statistics(statistics),
                               database_url=database_url)
        except SQLAlchemyError as e:
            # The result files are already on disk; a store failure does not fail the run
            logger.error("Could not store the run record: %s", e)
    return path


def flatten_statistics(statistics, prefix=""):
    """
    Flatten nested statistics to ``{dotted.name: float}``.

    Booleans become 0/1, lists are skipped and strings are dropped.
    """
    flat = {}
    for key, value in statistics.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_statistics(value, prefix=f"{name}."))
        elif isinstance(value, (bool, np.bool_)):
            flat[name] = float(value)
        elif isinstance(value, (int, float, np.integer, np.floating)) and value is not None:
            flat[name] = float(value)
    return flat
