"""
Coefficient laws for the random affine recursion X = A X + B.

Each ``CoefficientLaw`` draws pairs (A, B) of nonnegative reals from a
``numpy.random.Generator`` and may carry analytic metadata (ess inf A, a
closed-form local dependence measure, whether (A, B) has a density).

Four kinds are provided:

- ``pqd-synthetic``: A uniform on [a, a + width], independent of B, with
  P(B < x) = exp(-gamma H(x)) for every x > 0, or B degenerate at ``b_const``.
- ``discontinuous-ldm``: (A, B) = (V/U, U) with the mixed density whose local
  dependence measure jumps at zero.
- ``fleming-viot``: A = Y1**-2, B = T1 * Y1**-2 where T1 is the first time one
  of two Brownian particles started at 1 hits zero and Y1 the height of the
  survivor at that time. Sampled exactly, without time discretisation.
- ``empirical-file``: sequential rows of a two-column CSV.

The module also holds the analytic densities and small-ball probabilities
used as oracles by the tests and by ``ldm_functions.exact_g_trajectory``.
"""

import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional
import numpy as np
import pandas as pd
from scipy import special
from scipy.interpolate import PchipInterpolator
from PerpetuityLab.settings import get_logger
from PerpetuityLab.accessories.tail_scale import TailScale, inverse_many, H1
from PerpetuityLab.accessories.numerics import log_integrate

logger = get_logger(__name__)

PQD_SYNTHETIC = "pqd-synthetic"
DISCONTINUOUS_LDM = "discontinuous-ldm"
FLEMING_VIOT = "fleming-viot"
EMPIRICAL_FILE = "empirical-file"

LAW_KINDS = (PQD_SYNTHETIC, DISCONTINUOUS_LDM, FLEMING_VIOT, EMPIRICAL_FILE)

# Rejection rounds allowed for the survivor-position sampler
MAX_REJECTION_ROUNDS = 1_000_000

# Points in the inverse-CDF table of the Example U-sampler
U_TABLE_SIZE = 10_000


class LawParameterError(ValueError):
    """Raised when a coefficient law is given invalid parameters."""
    pass


class SampleExhaustedError(IOError):
    """Raised when an empirical coefficient file has no rows left."""
    pass


class RejectionLimitError(RuntimeError):
    """Raised when the survivor-position rejection loop exceeds its round limit."""
    pass


#############################
# Law records
#############################


@dataclass(frozen=True)
class LawMetadata:
    """
    Optional analytic facts about a law.

    Attributes
    ----------
    ess_inf_a : float or None
        Essential infimum of A.
    closed_form_ldm : dict or None
        Config form of the closed-form local dependence measure, turned into an
        ``LdmFunction`` by ``ldm_functions.closed_form_for``.
    has_density : bool
        True when (A, B) has a joint density.
    """

    ess_inf_a: Optional[float] = None
    closed_form_ldm: Optional[dict] = None
    has_density: bool = False


@dataclass(frozen=True)
class PqdSyntheticParams:
    a: float
    width: float = 0.0
    gamma: float = 1.0
    b_const: Optional[float] = None
    scale: TailScale = H1


@dataclass(frozen=True)
class DiscontinuousParams:
    lambda1: float
    lambda2: float


@dataclass(frozen=True)
class FlemingViotParams:
    pass


class EmpiricalSource:
    """
    Sequential reader over the rows of an (a, b) table.

    The rows are consumed in file order; every draw advances a shared cursor.
    Access is serialised with a lock so a source may be shared between workers,
    although the resulting interleaving then depends on scheduling.
    """

    def __init__(self, path, a, b):
        self.path = str(path)
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.position = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.a)

    def take(self, size):
        """Return the next ``size`` rows as arrays ``(a, b)``."""
        with self._lock:
            start = self.position
            if start + size > len(self.a):
                logger.error("Empirical file %s exhausted after %d rows (requested %d more)",
                             self.path, start, size)
                raise SampleExhaustedError(
                    f"{self.path} has {len(self.a) - start} rows left, {size} requested")
            self.position = start + size
        return self.a[start:start + size].copy(), self.b[start:start + size].copy()

    def rewind(self):
        """Reset the cursor to the first row."""
        with self._lock:
            self.position = 0


@dataclass(frozen=True)
class EmpiricalFileParams:
    path: str
    source: EmpiricalSource = field(compare=False, repr=False, default=None)


@dataclass(frozen=True)
class CoefficientLaw:
    """
    A sampler for the coefficient pair (A, B).

    Attributes
    ----------
    kind : str
        One of ``LAW_KINDS``.
    params : dataclass
        Kind-specific parameter record.
    metadata : LawMetadata
        Analytic facts known about the law.
    """

    kind: str
    params: object
    metadata: LawMetadata = LawMetadata()

    def to_dict(self):
        """Config form of the law (``{"kind": ..., params...}``)."""
        if self.kind == PQD_SYNTHETIC:
            p = self.params
            spec = {"kind": self.kind, "a": p.a, "width": p.width, "gamma": p.gamma,
                    "scale": p.scale.to_dict()}
            if p.b_const is not None:
                spec["b_const"] = p.b_const
            return spec
        if self.kind == DISCONTINUOUS_LDM:
            return {"kind": self.kind, "lambda1": self.params.lambda1,
                    "lambda2": self.params.lambda2}
        if self.kind == EMPIRICAL_FILE:
            return {"kind": self.kind, "path": self.params.path}
        return {"kind": self.kind}


#############################
# Constructors
#############################


def pqd_synthetic(a, width=0.0, gamma=1.0, b_const=None, scale=H1):
    """
    Build a PQD synthetic law with A ~ Uniform[a, a + width] independent of B.

    Parameters
    ----------
    a : float
        Essential infimum of A, nonnegative.
    width : float, optional
        Width of the support of A; zero gives A identically ``a``.
    gamma : float, optional
        Left-tail exponent of B: P(B < x) = exp(-gamma H(x)).
    b_const : float, optional
        When given, B is degenerate at this value and ``gamma`` is ignored.
    scale : TailScale, optional
        The scale H.

    Returns
    -------
    CoefficientLaw
    """
    if not (a >= 0 and math.isfinite(a)):
        raise LawParameterError(f"pqd-synthetic needs a >= 0, got a={a!r}")
    if not (width >= 0 and math.isfinite(width)):
        raise LawParameterError(f"pqd-synthetic needs width >= 0, got width={width!r}")
    if b_const is None and not (gamma > 0 and math.isfinite(gamma)):
        raise LawParameterError(f"pqd-synthetic needs gamma > 0, got gamma={gamma!r}")
    if b_const is not None and not (b_const >= 0 and math.isfinite(b_const)):
        raise LawParameterError(f"b_const must be a nonnegative number, got {b_const!r}")

    closed = None
    if b_const is None:
        closed = {"kind": "pqd", "gamma": gamma, "a": a, "rho": scale.rho}
    params = PqdSyntheticParams(a=float(a), width=float(width), gamma=float(gamma),
                                b_const=None if b_const is None else float(b_const),
                                scale=scale)
    return CoefficientLaw(PQD_SYNTHETIC, params,
                          LawMetadata(ess_inf_a=float(a), closed_form_ldm=closed,
                                      has_density=b_const is None and width > 0))


def discontinuous_ldm(lambda1, lambda2):
    """
    Build the (V/U, U) law whose local dependence measure jumps at zero.

    Parameters
    ----------
    lambda1, lambda2 : float
        Exponents with ``lambda1 > lambda2 > 0``.

    Returns
    -------
    CoefficientLaw
    """
    if not (lambda2 > 0 and lambda1 > lambda2 and math.isfinite(lambda1)):
        logger.error("Invalid discontinuous-ldm parameters lambda1=%r lambda2=%r",
                     lambda1, lambda2)
        raise LawParameterError(
            f"discontinuous-ldm needs lambda1 > lambda2 > 0, got {lambda1!r}, {lambda2!r}")
    closed = {"kind": "discontinuous", "lambda1": float(lambda1), "lambda2": float(lambda2)}
    return CoefficientLaw(DISCONTINUOUS_LDM,
                          DiscontinuousParams(float(lambda1), float(lambda2)),
                          LawMetadata(ess_inf_a=0.0, closed_form_ldm=closed, has_density=True))


def fleming_viot():
    """Build the exact two-particle Fleming-Viot step law."""
    return CoefficientLaw(FLEMING_VIOT, FlemingViotParams(),
                          LawMetadata(ess_inf_a=0.0, closed_form_ldm={"kind": "fleming-viot"},
                                      has_density=True))


def read_coefficient_csv(path):
    """
    Load a two-column (a, b) CSV with an optional header row.

    Parameters
    ----------
    path : str or Path
        File to read.

    Returns
    -------
    tuple of numpy.ndarray
        The ``a`` and ``b`` columns.

    Raises
    ------
    LawParameterError
        If the file does not hold two numeric columns of nonnegative finite values.
    """
    frame = pd.read_csv(path, header=None, comment="#", skip_blank_lines=True)
    if frame.shape[1] != 2:
        raise LawParameterError(f"{path} must have exactly two columns (a, b), "
                                f"found {frame.shape[1]}")
    first = pd.to_numeric(frame.iloc[0], errors="coerce")
    if first.isna().any():
        header = [str(value).strip().lower() for value in frame.iloc[0]]
        if header != ["a", "b"]:
            raise LawParameterError(f"{path} header must be 'a,b', found {header}")
        frame = frame.iloc[1:]
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values).all(axis=1) | (values < 0).any(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        logger.error("Rejected row %d of %s: %s", row, path, values[row])
        raise LawParameterError(f"{path}: row {row} is not a pair of nonnegative finite numbers")
    if len(values) == 0:
        raise LawParameterError(f"{path} contains no rows")
    logger.info("Loaded %d coefficient pairs from %s", len(values), path)
    return values[:, 0], values[:, 1]


def empirical_file(path):
    """Build a law that replays the rows of an (a, b) CSV in order."""
    a, b = read_coefficient_csv(path)
    source = EmpiricalSource(path, a, b)
    return CoefficientLaw(EMPIRICAL_FILE, EmpiricalFileParams(str(path), source),
                          LawMetadata(ess_inf_a=None))


def law_from_dict(spec):
    """
    Build a law from its config form.

    Parameters
    ----------
    spec : dict
        ``{"kind": ..., kind-specific params}``.

    Returns
    -------
    CoefficientLaw
    """
    kind = spec.get("kind")
    if kind == PQD_SYNTHETIC:
        scale = TailScale.from_dict(spec.get("scale", {}))
        return pqd_synthetic(spec["a"], spec.get("width", 0.0), spec.get("gamma", 1.0),
                             spec.get("b_const"), scale)
    if kind == DISCONTINUOUS_LDM:
        return discontinuous_ldm(spec["lambda1"], spec["lambda2"])
    if kind == FLEMING_VIOT:
        return fleming_viot()
    if kind == EMPIRICAL_FILE:
        return empirical_file(spec["path"])
    raise LawParameterError(f"Unknown law kind {kind!r}; expected one of {', '.join(LAW_KINDS)}")


# Documentation used by the `laws` subcommand
LAW_CATALOG = {
    FLEMING_VIOT: {
        "params": {},
        "anchor": "A=Y_1^{-2} and B=T_1Y_1^{-2}",
        "description": "Exact two-particle Fleming-Viot step: T1 is the first hitting time of 0 "
                       "by either of two Brownian particles started at 1, Y1 the survivor height.",
    },
    PQD_SYNTHETIC: {
        "params": {"gamma": "left-tail exponent of B, P(B<x)=exp(-gamma H(x))",
                   "a": "ess inf A (A uniform on [a, a+width])",
                   "rho": "index of the scale H (from the config 'scale' block)",
                   "width": "support width of A", "b_const": "optional degenerate B"},
        "anchor": "g(y)=gamma(1-ay)^{-rho} for y<1/a, infinity otherwise",
        "description": "A independent of B, hence positively quadrant dependent.",
    },
    DISCONTINUOUS_LDM: {
        "params": {"lambda1": "exponent of U on the branch V<1 (g(0+))",
                   "lambda2": "exponent of U on the branch V>=1 (g(0)), lambda1 > lambda2 > 0"},
        "anchor": "g(0)=lambda_2 < lambda_1=g(0^+)",
        "description": "(A,B)=(V/U,U) with P(V<v)=exp(-1/v); the dependence measure jumps at 0.",
    },
    EMPIRICAL_FILE: {
        "params": {"path": "CSV with columns a,b (header optional)"},
        "anchor": "user supplied (A_n, B_n) pairs",
        "description": "Rows are consumed in order; running out raises an error.",
    },
}


#############################
# Fleming-Viot step law
#############################


@dataclass(frozen=True)
class FvStepSample:
    """
    One Fleming-Viot branch event.

    Attributes
    ----------
    y1 : float
        Survivor height Y1.
    t1 : float
        Branch time T1.
    a : float
        Y1**-2.
    b : float
        T1 * Y1**-2.
    """

    y1: float
    t1: float
    a: float
    b: float


def sample_first_passages(rng, size):
    """
    Draw ``size`` first-passage times of Brownian motion from 1 to 0.

    Uses tau = 1/Z**2 for standard normal Z; exact zeros are redrawn.
    """
    z = np.asarray(rng.standard_normal(size), dtype=float)
    zero = z == 0.0
    while zero.any():
        z[zero] = rng.standard_normal(int(zero.sum()))
        zero = z == 0.0
    return 1.0 / z ** 2


def sample_first_passage(rng):
    """Draw one first-passage time of Brownian motion from 1 to 0."""
    return float(sample_first_passages(rng, 1)[0])


def sample_survivor_positions(t, rng, max_rounds=MAX_REJECTION_ROUNDS):
    """
    Draw Brownian positions at time t conditioned on not having hit 0.

    The target density on (0, inf) is proportional to
    exp(-(1-y)**2/2t) - exp(-(1+y)**2/2t). Factoring the difference,

        exp(-(1-y)**2/2t) - exp(-(1+y)**2/2t)
            = exp(-(1-y)**2/2t) * (1 - exp(-2y/t)),

    so a Normal(1, t) proposal restricted to y > 0 is accepted with
    probability 1 - exp(-2y/t). The overall acceptance rate is
    2 Phi(1/sqrt(t)) - 1.

    Parameters
    ----------
    t : array_like
        Positive times, one draw per entry.
    rng : numpy.random.Generator
        Random stream.
    max_rounds : int, optional
        Guard on the number of rejection rounds.

    Returns
    -------
    tuple of (numpy.ndarray, int)
        Positions and the total number of proposals made.

    Raises
    ------
    RejectionLimitError
        If some entries are still pending after ``max_rounds`` rounds.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(~(t > 0)):
        raise LawParameterError("Survivor positions need t > 0")
    out = np.empty_like(t)
    pending = np.arange(t.size)
    proposals = 0
    rounds = 0
    while pending.size:
        tp = t[pending]
        y = 1.0 + np.sqrt(tp) * rng.standard_normal(pending.size)
        u = rng.random(pending.size)
        proposals += pending.size
        with np.errstate(over="ignore"):
            accept = (y > 0) & (u < -np.expm1(-2.0 * y / tp))
        out[pending[accept]] = y[accept]
        pending = pending[~accept]
        rounds += 1
        if rounds >= max_rounds and pending.size:
            logger.error("Survivor sampler gave up with %d pending draws after %d rounds",
                         pending.size, rounds)
            raise RejectionLimitError(f"{pending.size} survivor draws pending after {rounds} rounds")
    logger.debug("Survivor sampler: %d draws, %d proposals, %d rounds",
                 t.size, proposals, rounds)
    return out, proposals


def sample_survivor_position(t, rng):
    """Draw one survivor position at time ``t``."""
    positions, _ = sample_survivor_positions(np.array([t]), rng)
    return float(positions[0])


def sample_fv_steps(rng, size):
    """
    Draw ``size`` exact Fleming-Viot branch events.

    Two independent first-passage times are drawn per event, T1 is their
    minimum, and Y1 is drawn from the conditioned position law at T1. The
    survivor's own hitting time is discarded, so conditioning on the event
    that it exceeds T1 is all that is needed.

    Returns
    -------
    tuple of numpy.ndarray
        ``(y1, t1)``.
    """
    taus = sample_first_passages(rng, 2 * size).reshape(2, size)
    t1 = taus.min(axis=0)
    y1, _ = sample_survivor_positions(t1, rng)
    return y1, t1


def sample_fv_step(rng):
    """Draw one Fleming-Viot branch event as an ``FvStepSample``."""
    y1, t1 = sample_fv_steps(rng, 1)
    y, t = float(y1[0]), float(t1[0])
    a = y ** -2
    return FvStepSample(y1=y, t1=t, a=a, b=t * a)


#############################
# Discontinuous LDM law
#############################


def _log_u_mass(lam, u):
    """log of the integral of exp(-lam/s) over (0, u], vectorised in u."""
    u = np.asarray(u, dtype=float)
    x = lam / u
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        # 1 - x e^x E1(x), by its asymptotic series once E1 nears underflow
        small = np.minimum(x, 650.0)
        exact = np.log1p(-np.exp(np.log(small) + small + np.log(special.exp1(small))))
        series = np.log(1.0 / x - 2.0 / x ** 2 + 6.0 / x ** 3 - 24.0 / x ** 4)
        return np.log(u) - x + np.where(x < 650.0, exact, series)


@lru_cache(maxsize=32)
def _u_inverse_cdf(lam):
    """
    Monotone spline table for the inverse CDF of U with density prop. to exp(-lam/u) on (0, 1].

    Returns the interpolator in log-CDF, the log normaliser and the table's
    smallest u.
    """
    u_low = lam / 600.0
    u_grid = np.geomspace(min(u_low, 0.5), 1.0, U_TABLE_SIZE)
    log_norm = float(_log_u_mass(lam, 1.0))
    log_cdf = _log_u_mass(lam, u_grid) - log_norm
    log_cdf[-1] = 0.0
    log_cdf, keep = np.unique(log_cdf, return_index=True)
    spline = PchipInterpolator(log_cdf, u_grid[keep], extrapolate=False)
    return spline, log_norm, float(u_grid[keep][0]), float(log_cdf[0])


def u_cdf(lam, u):
    """CDF of U with density proportional to exp(-lam/u) on (0, 1]."""
    _, log_norm, _, _ = _u_inverse_cdf(lam)
    u = np.clip(np.asarray(u, dtype=float), 1e-300, 1.0)
    return np.exp(_log_u_mass(lam, u) - log_norm)


def sample_u(lam, rng, size):
    """
    Draw U with density proportional to exp(-lam/u) on (0, 1].

    Inverse CDF from a monotone (PCHIP) spline of log F, followed by one
    Newton step on F(u) = w kept inside the table range.
    """
    spline, log_norm, u_low, log_cdf_low = _u_inverse_cdf(lam)
    w = rng.random(size)
    w = np.where(w == 0.0, np.nextafter(0.0, 1.0), w)
    log_w = np.log(w)
    inside = log_w >= log_cdf_low
    u = np.full(size, u_low)
    if not inside.any():
        return u
    u[inside] = spline(log_w[inside])
    # Newton correction, F'(u) = exp(-lam/u) / norm
    log_f = _log_u_mass(lam, u) - log_norm
    with np.errstate(over="ignore", invalid="ignore"):
        step = (np.exp(log_f) - w) * np.exp(lam / u + log_norm)
    corrected = u - step
    ok = inside & np.isfinite(corrected) & (corrected > 0.5 * u) & (corrected < np.minimum(2.0 * u, 1.0))
    u = np.where(ok, corrected, u)
    return np.clip(u, u_low, 1.0)


def sample_discontinuous_many(params, rng, size):
    """
    Draw ``size`` pairs (A, B) = (V/U, U).

    The branch V < 1 has probability exp(-1) under P(V < v) = exp(-1/v). On
    that branch U has density prop. to exp(-lambda1/u), on the other
    exp(-lambda2/u); V is drawn from its law truncated to the branch.
    """
    if not params.lambda1 > params.lambda2 > 0:
        raise LawParameterError("discontinuous-ldm needs lambda1 > lambda2 > 0")
    low_branch = rng.random(size) < math.exp(-1.0)
    n_low = int(low_branch.sum())
    u = np.empty(size)
    u[low_branch] = sample_u(params.lambda1, rng, n_low)
    u[~low_branch] = sample_u(params.lambda2, rng, size - n_low)

    # V = 1/E with E standard exponential; V < 1 iff E > 1
    e = np.empty(size)
    e[low_branch] = 1.0 + rng.standard_exponential(n_low)
    w = rng.random(size - n_low)
    e[~low_branch] = -np.log1p(-w * (1.0 - math.exp(-1.0)))
    e = np.where(e == 0.0, np.nextafter(0.0, 1.0), e)
    v = 1.0 / e
    return v / u, u


def sample_discontinuous(params, rng):
    """Draw one (A, B) pair from the discontinuous-LDM law."""
    a, b = sample_discontinuous_many(params, rng, 1)
    return float(a[0]), float(b[0])


#############################
# Generic sampling
#############################


def _sample_pqd(params, rng, size):
    a = params.a + params.width * rng.random(size) if params.width > 0 else np.full(size, params.a)
    if params.b_const is not None:
        return a, np.full(size, params.b_const)
    e = rng.standard_exponential(size)
    e = np.where(e == 0.0, np.nextafter(0.0, 1.0), e)
    # P(H^{-1}(E/gamma) < x) = P(E > gamma H(x)) = exp(-gamma H(x))
    return a, inverse_many(params.scale, e / params.gamma)


def _sample_fv(params, rng, size):
    y1, t1 = sample_fv_steps(rng, size)
    a = y1 ** -2.0
    return a, t1 * a


def _sample_empirical(params, rng, size):
    return params.source.take(size)


_SAMPLERS = {
    PQD_SYNTHETIC: _sample_pqd,
    DISCONTINUOUS_LDM: sample_discontinuous_many,
    FLEMING_VIOT: _sample_fv,
    EMPIRICAL_FILE: _sample_empirical,
}


def sample_many(law, rng, size):
    """
    Draw ``size`` independent pairs (A, B).

    Parameters
    ----------
    law : CoefficientLaw
        The law.
    rng : numpy.random.Generator
        Random stream; the result is a deterministic function of its state.
    size : int
        Number of pairs.

    Returns
    -------
    tuple of numpy.ndarray
        Arrays ``(a, b)`` of length ``size``.
    """
    try:
        sampler = _SAMPLERS[law.kind]
    except KeyError:
        raise LawParameterError(f"Unknown law kind {law.kind!r}") from None
    return sampler(law.params, rng, size)


def sample(law, rng):
    """Draw one pair (A, B)."""
    a, b = sample_many(law, rng, 1)
    return float(a[0]), float(b[0])


def moment_diagnostics(law, n, rng):
    """
    Monte Carlo check of E[log A] < 0 and E[log+ B] < inf.

    Parameters
    ----------
    law : CoefficientLaw
        The law.
    n : int
        Sample count, at least 1000.
    rng : numpy.random.Generator
        Random stream.

    Returns
    -------
    dict
        ``e_log_a``, ``e_log_plus_b``, ``e_sqrt_a``, their standard errors
        (``se_*``), ``n`` and ``convergence_condition_met``.
    """
    if n < 1000:
        raise LawParameterError(f"moment_diagnostics needs n >= 1000, got {n}")
    a, b = sample_many(law, rng, n)
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
    log_plus_b = np.log(np.maximum(b, 1.0))
    sqrt_a = np.sqrt(a)

    def mean_se(values):
        mean = float(np.mean(values))
        if not math.isfinite(mean):
            return mean, math.nan
        return mean, float(np.std(values, ddof=1) / math.sqrt(len(values)))

    e_log_a, se_log_a = mean_se(log_a)
    e_log_plus_b, se_log_plus_b = mean_se(log_plus_b)
    e_sqrt_a, se_sqrt_a = mean_se(sqrt_a)
    met = (e_log_a == -math.inf) or (e_log_a + 3.0 * se_log_a < 0)
    met = bool(met and math.isfinite(e_log_plus_b))
    logger.info("Moment diagnostics for %s: E[log A]=%.6g (SE %.3g), E[log+ B]=%.6g, condition %s",
                law.kind, e_log_a, se_log_a, e_log_plus_b, "met" if met else "not met")
    return {
        "n": n,
        "e_log_a": e_log_a,
        "se_log_a": se_log_a,
        "e_log_plus_b": e_log_plus_b,
        "se_log_plus_b": se_log_plus_b,
        "e_sqrt_a": e_sqrt_a,
        "se_sqrt_a": se_sqrt_a,
        "convergence_condition_met": met,
    }


#############################
# Analytic oracles
#############################


def survival_probability(t):
    """P(tau > t) = 2 Phi(1/sqrt(t)) - 1 for the first passage from 1 to 0."""
    t = np.asarray(t, dtype=float)
    return 2.0 * special.ndtr(1.0 / np.sqrt(t)) - 1.0


def first_passage_cdf(t):
    """P(tau <= t) = 2 (1 - Phi(1/sqrt(t)))."""
    t = np.asarray(t, dtype=float)
    return 2.0 * special.ndtr(-1.0 / np.sqrt(t))


def survivor_density(y, t):
    """Unnormalised survivor-position density at time ``t``."""
    y = np.asarray(y, dtype=float)
    return np.exp(-(1.0 - y) ** 2 / (2.0 * t)) * -np.expm1(-2.0 * y / t)


def fv_joint_density(y, t):
    """Joint density of (Y1, T1): (1/(pi t^2)) [exp(-((1-y)^2+1)/2t) - exp(-((1+y)^2+1)/2t)]."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        value = (np.exp(-((1.0 - y) ** 2 + 1.0) / (2.0 * t)) * -np.expm1(-2.0 * y / t)
                 / (math.pi * t ** 2))
    return np.where((y > 0) & (t > 0), value, 0.0)


def fv_y_density(y):
    """Marginal density of Y1, (2/pi)[1/((1-y)^2+1) - 1/((1+y)^2+1)] = 8y/(pi (y^4 + 4))."""
    y = np.asarray(y, dtype=float)
    return np.where(y > 0, 8.0 * y / (math.pi * (y ** 4 + 4.0)), 0.0)


def fv_ab_density(a, b):
    """Joint density of (A, B) = (Y1**-2, T1 Y1**-2)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    root = np.sqrt(a)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lower = ((root - 0.5) ** 2 + 0.25) / b
        upper = ((root + 0.5) ** 2 + 0.25) / b
        value = (np.exp(-lower) - np.exp(-upper)) / (2.0 * math.pi * b ** 2 * root)
    return np.where((a > 0) & (b > 0), value, 0.0)


def fv_a_density(a):
    """Marginal density of A, 4 / (pi (4 a^2 + 1))."""
    a = np.asarray(a, dtype=float)
    return np.where(a >= 0, 4.0 / (math.pi * (4.0 * a ** 2 + 1.0)), 0.0)


def fv_a_cdf(a):
    """Marginal CDF of A, (2/pi) arctan(2a)."""
    a = np.asarray(a, dtype=float)
    return np.where(a > 0, 2.0 / math.pi * np.arctan(2.0 * np.maximum(a, 0.0)), 0.0)


def fv_log_small_ball_probability(eps, y, rtol=1e-10):
    """
    log P(eps A y + B < eps) for the Fleming-Viot law.

    With u = sqrt(A) the event is B < eps (1 - u^2 y); integrating the joint
    density over b leaves

        (1/pi) int_0^{1/sqrt(y)} [exp(-c_-(u)/beta)/c_-(u) - exp(-c_+(u)/beta)/c_+(u)] du,

    where c_(+/-)(u) = (u +/- 1/2)^2 + 1/4 and beta = eps (1 - u^2 y). For
    y = 0 the upper limit is infinite and is cut where the integrand drops
    below exp(-750).
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    if y < 0:
        raise ValueError(f"y must be nonnegative, got {y!r}")
    upper = 1.0 / math.sqrt(y) if y > 0 else 0.5 + math.sqrt(750.0 * eps) + 1.0

    def log_integrand(u):
        beta = eps * (1.0 - u ** 2 * y)
        c_minus = (u - 0.5) ** 2 + 0.25
        c_plus = (u + 0.5) ** 2 + 0.25
        first = -c_minus / beta - np.log(c_minus)
        second = -c_plus / beta - np.log(c_plus)
        return first + np.log(-np.expm1(second - first)) - math.log(math.pi)

    log_value, _ = log_integrate(log_integrand, 0.0, upper, rtol=rtol)
    return log_value


def fv_small_ball_probability(eps, y):
    """P(eps A y + B < eps) for the Fleming-Viot law."""
    return math.exp(fv_log_small_ball_probability(eps, y))


def fv_b_right_tail_check(b_samples, x_grid):
    """
    Compare the right tail of B with 1/(pi x).

    Returns
    -------
    list of dict
        Per x: empirical tail ``p_hat``, ``hits`` and the ratio
        ``p_hat * pi * x``, which tends to 1 for large x.
    """
    b_samples = np.asarray(b_samples, dtype=float)
    rows = []
    for x in x_grid:
        hits = int(np.count_nonzero(b_samples > x))
        p_hat = hits / len(b_samples)
        rows.append({"x": float(x), "hits": hits, "p_hat": p_hat,
                     "ratio": p_hat * math.pi * x})
    return rows


def discontinuous_log_small_ball_probability(eps, y, lambda1, lambda2, rtol=1e-10):
    """
    log P(eps A y + B < eps) for the discontinuous-LDM law.

    For y = 0 this is the mixture of the two U laws at eps. For y > 0 the event
    is U < eps and V < w with w = u (eps - u) / (eps y), giving

        int_0^eps [c1 e^{-l1/u} F_V(min(1, w)) + c2 e^{-l2/u} (F_V(w) - F_V(1))^+] du

    with F_V(v) = exp(-1/v) and c_j = 1 / int_0^1 e^{-l_j/u} du.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    if eps >= 1 and y == 0:
        return 0.0
    if y == 0:
        low = -1.0 + float(_log_u_mass(lambda1, eps) - _log_u_mass(lambda1, 1.0))
        high = math.log1p(-math.exp(-1.0)) + float(_log_u_mass(lambda2, eps)
                                                    - _log_u_mass(lambda2, 1.0))
        return float(np.logaddexp(low, high))

    log_c1 = -float(_log_u_mass(lambda1, 1.0))
    log_c2 = -float(_log_u_mass(lambda2, 1.0))
    upper = min(eps, 1.0)

    def log_integrand(u):
        w = u * (eps - u) / (eps * y)
        first = log_c1 - lambda1 / u - 1.0 / np.minimum(w, 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            second = np.where(
                w > 1.0,
                log_c2 - lambda2 / u - 1.0 / w + np.log(-np.expm1(1.0 / w - 1.0)),
                -np.inf)
        return np.logaddexp(first, second)

    log_value, _ = log_integrate(log_integrand, 0.0, upper, rtol=rtol)
    return log_value


def pqd_log_small_ball_probability(params, eps, y, rtol=1e-10):
    """
    log P(eps A y + B < eps) for a PQD synthetic law with random B.

    Equals log E_A[exp(-gamma H(eps (1 - A y)))] over A < 1/y.
    """
    if params.b_const is not None:
        return 0.0 if params.b_const < eps and params.a * y < 1 else -math.inf
    scale = params.scale

    def log_term(a):
        with np.errstate(divide="ignore", invalid="ignore"):
            room = eps * (1.0 - np.asarray(a) * y)
            return np.where(room > 0, -params.gamma * scale.h(np.where(room > 0, room, 1.0)), -np.inf)

    if params.width == 0 or y == 0:
        return float(log_term(np.array([params.a]))[0])
    upper = params.a + params.width
    if y > 0:
        upper = min(upper, 1.0 / y)
    if upper <= params.a:
        return -math.inf
    log_value, _ = log_integrate(log_term, params.a, upper, rtol=rtol)
    return log_value - math.log(params.width)


def log_small_ball_probability(law, eps, y):
    """
    Exact log P(eps A y + B < eps) when the law has an analytic form.

    Returns ``None`` for laws without an oracle.
    """
    if law.kind == FLEMING_VIOT:
        return fv_log_small_ball_probability(eps, y)
    if law.kind == DISCONTINUOUS_LDM:
        return discontinuous_log_small_ball_probability(eps, y, law.params.lambda1,
                                                        law.params.lambda2)
    if law.kind == PQD_SYNTHETIC:
        return pqd_log_small_ball_probability(law.params, eps, y)
    return None
