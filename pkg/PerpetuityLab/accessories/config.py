"""
Experiment configuration.

A config is a JSON object naming one subcommand, the coefficient law, the
scale H, solver overrides, the seeds and the options of that subcommand:

    {
      "subcommand": "transform",
      "law": {"kind": "fleming-viot"},
      "lambda_grid": [0.0, 1.0, 0.05]
    }

Unknown keys are rejected and every error names the offending field. The
config hash is the SHA-256 of the canonical (sorted-key, compact) JSON form
and is stamped on every output row and run record.

The module also holds the argparse helpers shared by the subcommands that
take a law on the command line.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from PerpetuityLab.settings import (
    get_logger, DEFAULT_GRID_SIZE, DEFAULT_GOLDEN_TOL, DEFAULT_BISECTION_TOL
)
from PerpetuityLab.accessories.coefficient_laws import LAW_KINDS, law_from_dict
from PerpetuityLab.accessories.tail_scale import TailScale

logger = get_logger(__name__)

FORMATS = ("csv", "jsonl")

TOP_LEVEL_KEYS = {"subcommand", "law", "ldm", "scale", "solver", "seeds", "out", "format"}

# Option schema per subcommand: key -> (kind, required)
SUBCOMMAND_OPTIONS = {
    "transform": {
        "lambda_grid": ("floats", False), "lambda1": ("float", False),
        "max_steps": ("int", False),
    },
    "simulate": {
        "n_steps": ("int", True), "replicas": ("int", False), "x0": ("float", False),
        "checkpoints": ("ints", False), "series": ("bool", False),
    },
    "tail": {
        "n_steps": ("int", True), "replicas": ("int", True), "eps_grid": ("floats", False),
        "x_grid": ("floats", False), "monotonicity_checkpoints": ("ints", False),
        "confidence": ("float", False),
    },
    "envelope": {
        "n_steps": ("int", True), "band": ("floats", False), "min_fraction": ("float", False),
    },
    "schedule": {
        "eps_tilde": ("float", True), "lambda_star": ("float", True), "epsilon": ("float", True),
        "y_star": ("float", True), "c": ("float", True), "n_max": ("int", False),
        "gamma": ("float", False), "horizon": ("int", False),
    },
    "dependence": {
        "y": ("floats", False), "eps_grid": ("floats", False), "samples": ("int", False),
        "confidence": ("float", False), "min_separation": ("float", False),
    },
    "fv": {
        "n_steps": ("int", True), "n_min": ("int", False), "thin_points": ("int", False),
        "lil_band": ("floats", False), "min_fraction": ("float", False),
    },
}

# Subcommands that need a coefficient law (or, for transform, a law or an ldm)
NEEDS_LAW = {"simulate", "tail", "envelope", "dependence"}


class ConfigError(ValueError):
    """Raised for an invalid experiment config; ``field`` names the offending entry."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ScaleSpec:
    rho: float = 1.0
    beta: float = 0.0
    scale: float = 1.0

    def build(self):
        return TailScale(rho=self.rho, log_exponent=self.beta, scale=self.scale)


@dataclass(frozen=True)
class LawSpec:
    """
    Config form of a coefficient law.

    Attributes
    ----------
    kind : str
        One of the built-in law kinds.
    params : dict
        Kind-specific parameters, passed to ``law_from_dict``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    def build(self, scale_spec=None):
        spec = self.to_dict()
        if scale_spec is not None:
            spec["scale"] = {"rho": scale_spec.rho, "beta": scale_spec.beta,
                             "scale": scale_spec.scale}
        return law_from_dict(spec)


@dataclass(frozen=True)
class SolverSpec:
    grid_size: int = DEFAULT_GRID_SIZE
    tol: float = DEFAULT_GOLDEN_TOL
    bisection_tol: float = DEFAULT_BISECTION_TOL

    def transform_overrides(self):
        return {"grid_size": self.grid_size, "tol": self.tol}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A validated experiment config.

    Attributes
    ----------
    subcommand : str
        Command to run.
    law : LawSpec or None
        Coefficient law.
    ldm : dict or None
        Local dependence measure for ``transform`` when no law is given.
    scale : ScaleSpec
        The scale H.
    solver : SolverSpec
        Solver overrides.
    seeds : tuple of int
        Root seeds, one run per seed where the command supports it.
    options : dict
        Subcommand options.
    out : str or None
        Output directory.
    format : str
        'csv' or 'jsonl'.
    raw : dict
        The canonical input, used for the hash.
    """

    subcommand: str
    law: LawSpec = None
    ldm: dict = None
    scale: ScaleSpec = ScaleSpec()
    solver: SolverSpec = SolverSpec()
    seeds: tuple = (0,)
    options: dict = field(default_factory=dict)
    out: str = None
    format: str = "csv"
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def config_hash(self):
        return config_hash(self.raw)


def canonical_json(data):
    """Sorted-key compact JSON text of ``data``."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(data):
    """
    SHA-256 hex digest of the canonical JSON form of ``data``.

    Examples
    --------
    >>> config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})
    True
    """
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def _check_number(field_name, value, kind):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field_name, f"expected a number, got {value!r}")
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(field_name, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(field_name, f"expected a finite number, got {value!r}")
    return float(value)


def _check_option(field_name, value, kind):
    if kind in ("int", "float"):
        return _check_number(field_name, value, kind)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(field_name, f"expected true or false, got {value!r}")
        return value
    if kind in ("floats", "ints"):
        if not isinstance(value, list) or not value:
            raise ConfigError(field_name, f"expected a non-empty list, got {value!r}")
        item = "int" if kind == "ints" else "float"
        return [_check_number(f"{field_name}[{i}]", v, item) for i, v in enumerate(value)]
    raise ConfigError(field_name, f"unsupported option kind {kind}")


def _parse_law(data):
    if not isinstance(data, dict):
        raise ConfigError("law", f"expected an object, got {data!r}")
    kind = data.get("kind")
    if kind not in LAW_KINDS:
        raise ConfigError("law.kind", f"expected one of {', '.join(LAW_KINDS)}, got {kind!r}")
    params = {key: value for key, value in data.items() if key != "kind"}
    allowed = {
        "pqd-synthetic": {"a", "width", "gamma", "b_const"},
        "discontinuous-ldm": {"lambda1", "lambda2"},
        "fleming-viot": set(),
        "empirical-file": {"path"},
    }[kind]
    for key in params:
        if key not in allowed:
            raise ConfigError(f"law.{key}", f"unknown parameter for {kind}")
    required = {"pqd-synthetic": {"a"}, "discontinuous-ldm": {"lambda1", "lambda2"},
                "empirical-file": {"path"}}.get(kind, set())
    for key in sorted(required - set(params)):
        raise ConfigError(f"law.{key}", "missing required parameter")
    for key, value in params.items():
        if key == "path":
            if not isinstance(value, str):
                raise ConfigError("law.path", f"expected a string, got {value!r}")
        elif not (key == "b_const" and value is None):
            params[key] = _check_number(f"law.{key}", value, "float")
    return LawSpec(kind=kind, params=params)


def _parse_section(data, name, spec_type, kinds):
    if not isinstance(data, dict):
        raise ConfigError(name, f"expected an object, got {data!r}")
    values = {}
    for key, value in data.items():
        if key not in kinds:
            raise ConfigError(f"{name}.{key}", "unknown key")
        values[key] = _check_number(f"{name}.{key}", value, kinds[key])
    try:
        spec = spec_type(**values)
        if spec_type is ScaleSpec:
            spec.build()
    except ValueError as ve:
        raise ConfigError(name, str(ve)) from ve
    return spec


def config_from_dict(data, seed=None, out=None, fmt=None):
    """
    Validate a config mapping and build an ExperimentConfig.

    Parameters
    ----------
    data : dict
        Parsed JSON.
    seed : int, optional
        Replaces ``seeds`` with ``[seed]``.
    out : str, optional
        Replaces ``out``.
    fmt : str, optional
        Replaces ``format``.

    Returns
    -------
    ExperimentConfig

    Raises
    ------
    ConfigError
        Naming the first offending field.
    """
    if not isinstance(data, dict):
        raise ConfigError("<root>", "a config must be a JSON object")
    data = dict(data)
    if seed is not None:
        data["seeds"] = [seed]
    if out is not None:
        data["out"] = out
    if fmt is not None:
        data["format"] = fmt

    subcommand = data.get("subcommand")
    if subcommand is None:
        raise ConfigError("subcommand", "missing required field")
    if subcommand not in SUBCOMMAND_OPTIONS:
        raise ConfigError("subcommand", f"expected one of {', '.join(SUBCOMMAND_OPTIONS)}, "
                                        f"got {subcommand!r}")
    option_kinds = SUBCOMMAND_OPTIONS[subcommand]
    for key in data:
        if key not in TOP_LEVEL_KEYS and key not in option_kinds:
            raise ConfigError(key, f"unknown key for subcommand {subcommand}")

    if subcommand in NEEDS_LAW and "law" not in data:
        raise ConfigError("law", "missing required field")
    if subcommand == "transform" and "law" not in data and "ldm" not in data:
        raise ConfigError("law", "missing required field (or give 'ldm')")
    law = _parse_law(data["law"]) if "law" in data else None
    ldm = data.get("ldm")
    if ldm is not None and not isinstance(ldm, dict):
        raise ConfigError("ldm", f"expected an object, got {ldm!r}")

    scale = _parse_section(data.get("scale", {}), "scale", ScaleSpec,
                           {"rho": "float", "beta": "float", "scale": "float"})
    solver = _parse_section(data.get("solver", {}), "solver", SolverSpec,
                            {"grid_size": "int", "tol": "float", "bisection_tol": "float"})

    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", f"expected a non-empty list of integers, got {seeds!r}")
    seeds = tuple(_check_number(f"seeds[{i}]", s, "int") for i, s in enumerate(seeds))

    fmt = data.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError("format", f"expected one of {', '.join(FORMATS)}, got {fmt!r}")
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out", f"expected a directory path, got {out!r}")

    options = {}
    for key, (kind, required) in option_kinds.items():
        if key in data:
            options[key] = _check_option(key, data[key], kind)
        elif required:
            raise ConfigError(key, "missing required field")

    return ExperimentConfig(subcommand=subcommand, law=law, ldm=ldm, scale=scale, solver=solver,
                            seeds=seeds, options=options, out=out, format=fmt, raw=data)


def load_config(path, seed=None, out=None, fmt=None):
    """
    Read and validate a JSON config file.

    Raises
    ------
    ConfigError
        For unreadable JSON (with line and column) or schema errors.
    """
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error("Config %s is not valid JSON: %s", path, e)
        raise ConfigError("<json>", f"line {e.lineno} column {e.colno}: {e.msg}") from e
    config = config_from_dict(data, seed=seed, out=out, fmt=fmt)
    logger.info("Loaded %s config from %s (hash %s)", config.subcommand, path,
                config.config_hash[:12])
    return config


#############################
# Command-line helpers
#############################


def add_law_arguments(parser):
    """Register the law and scale options shared by simulate, tail, envelope and dependence."""
    parser.add_argument("--law", choices=LAW_KINDS, default="fleming-viot",
                        help="Coefficient law kind.")
    parser.add_argument("--a", type=float, default=None, help="pqd-synthetic: ess inf A.")
    parser.add_argument("--width", type=float, default=None, help="pqd-synthetic: support width of A.")
    parser.add_argument("--gamma", type=float, default=None, help="pqd-synthetic: exponent of B.")
    parser.add_argument("--b_const", type=float, default=None, help="pqd-synthetic: constant B.")
    parser.add_argument("--lambda1", type=float, default=None, help="discontinuous-ldm: g(0+).")
    parser.add_argument("--lambda2", type=float, default=None, help="discontinuous-ldm: g(0).")
    parser.add_argument("--path", type=str, default=None, help="empirical-file: (a,b) CSV.")
    parser.add_argument("--rho", type=float, default=1.0, help="Index of the scale H.")
    parser.add_argument("--beta", type=float, default=0.0, help="Log exponent of the scale H.")


def law_spec_from_args(args):
    """Collect the law options of ``args`` into a config-form dict."""
    spec = {"kind": args.law}
    for key in ("a", "width", "gamma", "b_const", "lambda1", "lambda2", "path"):
        value = getattr(args, key, None)
        if value is not None:
            spec[key] = value
    return spec


def scale_spec_from_args(args):
    return {"rho": args.rho, "beta": args.beta, "scale": 1.0}
