"""
Local dependence measures.

The local dependence measure of a coefficient pair (A, B) with respect to a
scale H is

    g(y) = lim_{eps -> 0+} -log P(eps A y + B < eps) / H(eps),

a nondecreasing map from [0, inf) to [0, inf]. This module holds the closed
forms known for the built-in laws, a tabulated form for empirical estimates,
the Monte Carlo estimator with binomial confidence intervals, and two
deterministic checks on Laplace-type limits.

Values of ``numpy.inf`` are legal everywhere and propagate through arithmetic.
"""

import math
from dataclasses import dataclass, field
import numpy as np
import pandas as pd
from PerpetuityLab.settings import get_logger, DEFAULT_THREADS, REPLICA_BLOCK_SIZE
from PerpetuityLab.accessories import coefficient_laws
from PerpetuityLab.accessories.numerics import (
    binomial_interval, least_squares_limit, log_integrate
)
from PerpetuityLab.accessories.streams import map_blocks
from PerpetuityLab.accessories.tail_scale import H1

logger = get_logger(__name__)

TABLE_COLUMNS = ["y", "g", "ci_lo", "ci_hi"]


class QuadratureError(RuntimeError):
    """Raised when a log-space quadrature does not produce a finite value."""
    pass


#############################
# LDM representations
#############################


class LdmFunction:
    """
    Base class of local dependence measures.

    Subclasses implement ``__call__`` (vectorised evaluation on y >= 0),
    ``value_at_zero`` (g(0)), ``limit_at_zero`` (g(0+)) and
    ``limit_at_infinity`` (sup g, approached as y -> inf).
    """

    kind = "abstract"

    def __call__(self, y):
        raise NotImplementedError

    def value_at_zero(self):
        return float(self(np.array([0.0]))[0])

    def limit_at_zero(self):
        return self.value_at_zero()

    def limit_at_infinity(self):
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class PqdClosedForm(LdmFunction):
    """g(y) = gamma (1 - a y)**-rho for y < 1/a, inf otherwise."""

    gamma: float
    a: float
    rho: float = 1.0
    kind = "pqd"

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        room = 1.0 - self.a * y
        with np.errstate(divide="ignore", invalid="ignore"):
            value = self.gamma * np.where(room > 0, room, 1.0) ** (-self.rho)
        return np.where(room > 0, value, np.inf)

    def limit_at_infinity(self):
        return self.gamma if self.a == 0 else math.inf

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "a": self.a, "rho": self.rho}


@dataclass(frozen=True)
class FlemingViotClosedForm(LdmFunction):
    """g(y) = 1/2 - 1/(y + 2 + sqrt(4 + y^2)), with g(0) = 1/4 and sup g = 1/2."""

    kind = "fleming-viot"

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return 0.5 - 1.0 / (y + 2.0 + np.sqrt(4.0 + y ** 2))

    def limit_at_infinity(self):
        return 0.5


@dataclass(frozen=True)
class DiscontinuousClosedForm(LdmFunction):
    """g(0) = lambda2 and g(y) = (sqrt(lambda1 + y) + sqrt(y))**2 for y > 0."""

    lambda1: float
    lambda2: float
    kind = "discontinuous"

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        positive = np.maximum(y, 0.0)
        value = (np.sqrt(self.lambda1 + positive) + np.sqrt(positive)) ** 2
        return np.where(y > 0, value, self.lambda2)

    def value_at_zero(self):
        return self.lambda2

    def limit_at_zero(self):
        return self.lambda1

    def limit_at_infinity(self):
        return math.inf

    def to_dict(self):
        return {"kind": self.kind, "lambda1": self.lambda1, "lambda2": self.lambda2}


@dataclass(frozen=True)
class ConstantLdm(LdmFunction):
    """g identically equal to ``level``."""

    level: float
    kind = "constant"

    def __call__(self, y):
        return np.full(np.shape(y), float(self.level))

    def limit_at_infinity(self):
        return float(self.level)

    def to_dict(self):
        return {"kind": self.kind, "level": self.level}


@dataclass(frozen=True, eq=False)
class TabulatedEmpirical(LdmFunction):
    """
    Tabulated g with confidence bounds.

    Linear interpolation between nodes, constant extension outside the node
    range. The node at the smallest y supplies both g(0) and g(0+).
    """

    y: np.ndarray
    g: np.ndarray
    ci_lo: np.ndarray = None
    ci_hi: np.ndarray = None
    strict: bool = field(default=True, repr=False)
    kind = "tabulated"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        g = np.asarray(self.g, dtype=float)
        order = np.argsort(y, kind="stable")
        lo = g if self.ci_lo is None else np.asarray(self.ci_lo, dtype=float)
        hi = g if self.ci_hi is None else np.asarray(self.ci_hi, dtype=float)
        object.__setattr__(self, "y", y[order])
        object.__setattr__(self, "g", g[order])
        object.__setattr__(self, "ci_lo", lo[order])
        object.__setattr__(self, "ci_hi", hi[order])
        if len(self.y) == 0 or np.any(self.y < 0):
            raise ValueError("A tabulated LDM needs at least one node with y >= 0")
        if not self.strict:
            return
        # nondecreasing up to CI overlap: no later upper bound may fall below an earlier lower bound
        running_lo = np.maximum.accumulate(self.ci_lo)
        clash = np.flatnonzero(self.ci_hi[1:] < running_lo[:-1])
        if clash.size:
            node = int(clash[0]) + 1
            logger.error("Tabulated LDM decreases beyond its confidence band at y=%g", self.y[node])
            raise ValueError(f"Tabulated g is not nondecreasing within its CIs at y={self.y[node]:g}")

    def __call__(self, y):
        return self._interp(y, self.g)

    def _interp(self, y, values):
        y = np.asarray(y, dtype=float)
        finite = np.isfinite(values)
        out = np.interp(y, self.y, np.where(finite, values, 0.0))
        if finite.all():
            return out
        # a query is inf when either node of its cell is inf
        last = len(self.y) - 1
        left = np.clip(np.searchsorted(self.y, y, side="right") - 1, 0, last)
        right = np.clip(np.searchsorted(self.y, y, side="left"), 0, last)
        return np.where(~finite[left] | ~finite[right], np.inf, out)

    def lower(self):
        """The g-table built from the lower confidence bounds."""
        return TabulatedEmpirical(self.y, self.ci_lo, strict=False)

    def upper(self):
        """The g-table built from the upper confidence bounds."""
        return TabulatedEmpirical(self.y, self.ci_hi, strict=False)

    def limit_at_infinity(self):
        return float(self.g[-1])

    def value_at_zero(self):
        return float(self.g[0])

    def to_frame(self):
        return pd.DataFrame({"y": self.y, "g": self.g, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi})

    def to_dict(self):
        return {"kind": self.kind, "y": self.y.tolist(), "g": self.g.tolist(),
                "ci_lo": self.ci_lo.tolist(), "ci_hi": self.ci_hi.tolist()}


def eval_g(g, y):
    """
    Evaluate a local dependence measure at one point.

    Parameters
    ----------
    g : LdmFunction
        The measure.
    y : float
        Nonnegative argument.

    Returns
    -------
    float
        g(y), possibly ``inf``.

    Examples
    --------
    >>> eval_g(FlemingViotClosedForm(), 0.0)
    0.25
    """
    if y < 0:
        raise ValueError(f"g is defined on [0, inf), got y={y!r}")
    return float(g(np.array([y], dtype=float))[0])


def ldm_from_dict(spec):
    """Build an LdmFunction from its config form."""
    kind = spec.get("kind")
    if kind == "pqd":
        return PqdClosedForm(float(spec["gamma"]), float(spec["a"]), float(spec.get("rho", 1.0)))
    if kind == "fleming-viot":
        return FlemingViotClosedForm()
    if kind == "discontinuous":
        return DiscontinuousClosedForm(float(spec["lambda1"]), float(spec["lambda2"]))
    if kind == "constant":
        return ConstantLdm(float(spec["level"]))
    if kind == "tabulated":
        if "path" in spec:
            return read_tabulated(spec["path"])
        return TabulatedEmpirical(spec["y"], spec["g"], spec.get("ci_lo"), spec.get("ci_hi"))
    raise ValueError(f"Unknown LDM kind {kind!r}")


def closed_form_for(law):
    """
    Return the closed-form LDM attached to a law, or ``None``.

    Parameters
    ----------
    law : CoefficientLaw
        A law whose metadata may name a closed form.
    """
    spec = law.metadata.closed_form_ldm
    return None if spec is None else ldm_from_dict(spec)


def monotonicity_violations(g, ys):
    """Return the grid points where g decreases (exact comparison)."""
    ys = np.asarray(ys, dtype=float)
    values = g(ys)
    drops = np.flatnonzero(values[1:] < values[:-1])
    return [float(ys[i + 1]) for i in drops]


#############################
# CSV import / export
#############################


def write_tabulated(table, path):
    """Write a TabulatedEmpirical as CSV with columns y, g, ci_lo, ci_hi."""
    table.to_frame().to_csv(path, index=False)
    logger.info("Tabulated LDM written to %s", path)


def read_tabulated(path):
    """Read a TabulatedEmpirical from a CSV with columns y, g, ci_lo, ci_hi."""
    frame = pd.read_csv(path)
    missing = [column for column in TABLE_COLUMNS if column not in frame.columns]
    if missing:
        logger.error("Tabulated LDM file %s is missing columns %s", path, missing)
        raise ValueError(f"{path} is missing columns {', '.join(missing)}")
    return TabulatedEmpirical(frame["y"].to_numpy(float), frame["g"].to_numpy(float),
                              frame["ci_lo"].to_numpy(float), frame["ci_hi"].to_numpy(float))


#############################
# Monte Carlo estimation
#############################


@dataclass
class ExponentTable:
    """
    Per-eps estimates of -log P / H(eps).

    Attributes
    ----------
    eps : numpy.ndarray
        The eps grid, strictly decreasing.
    hits, trials : numpy.ndarray
        Event counts and sample sizes per cell.
    p_hat : numpy.ndarray
        Empirical probabilities.
    exponent : numpy.ndarray
        Point estimates; for censored cells the one-sided bound log(n)/H(eps).
    ci_lo, ci_hi : numpy.ndarray
        Binomial intervals mapped through p -> -log p / H(eps).
    censored : numpy.ndarray of bool
        Cells with zero hits.
    extrapolated : float
        Least-squares fit of exponent = L + c/log(1/eps) over uncensored cells.
    heuristic : bool
        Always True; the extrapolation has no proven rate.
    """

    eps: np.ndarray
    hits: np.ndarray
    trials: np.ndarray
    p_hat: np.ndarray
    exponent: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    censored: np.ndarray
    extrapolated: float = math.nan
    heuristic: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def final(self):
        """(exponent, ci_lo, ci_hi) at the smallest eps."""
        return float(self.exponent[-1]), float(self.ci_lo[-1]), float(self.ci_hi[-1])

    def is_increasing(self):
        """True when the uncensored point estimates increase along the grid."""
        values = self.exponent[~self.censored]
        return bool(np.all(np.diff(values) > 0))

    def to_frame(self):
        frame = pd.DataFrame({
            "eps": self.eps, "hits": self.hits, "trials": self.trials, "p_hat": self.p_hat,
            "exponent": self.exponent, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
            "censored": self.censored,
        })
        for key, value in self.extra.items():
            frame[key] = value
        return frame


def check_eps_grid(eps_grid):
    """Validate and return a strictly decreasing positive eps grid as an array."""
    eps = np.asarray(eps_grid, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(~(eps > 0)) or np.any(np.diff(eps) >= 0):
        raise ValueError(f"eps grid must be strictly decreasing and positive, got {list(eps)}")
    return eps


def exponent_table(hits, trials, eps_grid, scale, confidence=0.95):
    """
    Turn per-eps hit counts into an ExponentTable.

    Parameters
    ----------
    hits : array_like of int
        Number of samples in the small-ball event per eps.
    trials : int or array_like of int
        Sample sizes.
    eps_grid : array_like
        Strictly decreasing eps values.
    scale : TailScale
        Normalising scale H.
    confidence : float, optional
        Level of the Clopper-Pearson intervals.

    Returns
    -------
    ExponentTable
    """
    eps = check_eps_grid(eps_grid)
    hits = np.asarray(hits, dtype=int)
    trials = np.broadcast_to(np.asarray(trials, dtype=int), hits.shape).copy()
    h_eps = scale.h(eps)
    p_hat = hits / trials
    censored = hits == 0
    exponent = np.empty(len(eps))
    ci_lo = np.empty(len(eps))
    ci_hi = np.empty(len(eps))
    for i, (k, n) in enumerate(zip(hits, trials)):
        p_lo, p_hi = binomial_interval(int(k), int(n), confidence)
        if k == 0:
            exponent[i] = math.log(n) / h_eps[i]
            ci_lo[i] = exponent[i]
            ci_hi[i] = math.inf
            continue
        exponent[i] = -math.log(p_hat[i]) / h_eps[i]
        ci_lo[i] = -math.log(p_hi) / h_eps[i]
        ci_hi[i] = math.inf if p_lo == 0 else -math.log(p_lo) / h_eps[i]

    if censored.any():
        logger.warning("%d of %d eps cells censored (zero hits); reported as lower bounds",
                       int(censored.sum()), len(eps))
    extrapolated = least_squares_limit(eps[~censored], exponent[~censored], model="log") \
        if (~censored).sum() >= 2 else math.nan
    return ExponentTable(eps=eps, hits=hits, trials=trials, p_hat=p_hat, exponent=exponent,
                         ci_lo=ci_lo, ci_hi=ci_hi, censored=censored, extrapolated=extrapolated)


def small_ball_hits(a, b, y, eps):
    """Count samples with eps * a * y + b < eps for every eps in the grid."""
    eps = np.asarray(eps, dtype=float)[:, None]
    return np.count_nonzero(eps * a[None, :] * y + b[None, :] < eps, axis=1)


def estimate_g(law, y, scale, eps_grid, n, seed, threads=DEFAULT_THREADS,
               confidence=0.95, block_size=REPLICA_BLOCK_SIZE):
    """
    Monte Carlo estimate of g(y) along a decreasing eps grid.

    For each eps the estimate is -log P_hat(eps A y + B < eps) / H(eps). The
    same ``n`` pairs serve every grid point; they are drawn in blocks with one
    seeded stream per block and reduced in block order.

    Parameters
    ----------
    law : CoefficientLaw
        Coefficient law.
    y : float
        Nonnegative argument of g.
    scale : TailScale
        Normalising scale H.
    eps_grid : array_like
        Strictly decreasing positive eps values.
    n : int
        Samples per eps.
    seed : int or numpy.random.SeedSequence
        Root seed.
    threads : int, optional
        Worker threads.
    confidence : float, optional
        Level of the binomial intervals.
    block_size : int, optional
        Samples per block.

    Returns
    -------
    ExponentTable
        Censored cells are reported as one-sided bounds instead of failing.
    """
    if y < 0:
        raise ValueError(f"g is defined on [0, inf), got y={y!r}")
    eps = check_eps_grid(eps_grid)

    def task(rng, size, index):
        a, b = coefficient_laws.sample_many(law, rng, size)
        return small_ball_hits(a, b, y, eps)

    hits = np.sum(map_blocks(task, n, seed, threads=threads, block_size=block_size), axis=0)
    table = exponent_table(hits, n, eps, scale, confidence)
    table.extra["y"] = y
    logger.info("estimate_g(y=%g) on %s: final exponent %.4g, extrapolated %.4g (heuristic)",
                y, law.kind, table.exponent[-1], table.extrapolated)
    return table


def exact_g_trajectory(law, y, eps_grid, scale=H1):
    """
    The eps-trajectory of -log P(eps A y + B < eps)/H(eps) from the analytic oracle.

    Parameters
    ----------
    law : CoefficientLaw
        A Fleming-Viot, discontinuous-LDM or PQD synthetic law.
    y : float
        Nonnegative argument.
    eps_grid : array_like
        Positive eps values.
    scale : TailScale, optional
        Normalising scale; the Fleming-Viot and discontinuous laws use H(x)=1/x.

    Returns
    -------
    numpy.ndarray
        One value per eps.

    Raises
    ------
    ValueError
        If the law has no small-ball oracle.
    """
    values = []
    for eps in np.asarray(eps_grid, dtype=float):
        log_p = coefficient_laws.log_small_ball_probability(law, float(eps), y)
        if log_p is None:
            raise ValueError(f"No analytic small-ball probability for law kind {law.kind!r}")
        values.append(-log_p / float(scale.h(eps)))
    return np.array(values)


#############################
# Laplace-type limit checks
#############################


@dataclass
class LaplaceReport:
    """eps log I(eps) along the grid, its extrapolation and the errors against -f_min."""

    eps: np.ndarray
    values: np.ndarray
    extrapolated: float
    f_min: float = math.nan

    @property
    def errors(self):
        return np.abs(self.values + self.f_min)


def laplace_min_limit(f, lower, upper, eps_grid, log_density=None, f_min=None, rtol=1e-10):
    """
    Evaluate eps log int exp(-f/eps) dmu along an eps grid.

    The integral is computed in log space, so exp(-f/eps) never underflows.
    The sequence tends to -min f as eps -> 0; a least-squares fit of
    L + b eps + c eps log(eps) supplies an extrapolated limit.

    Parameters
    ----------
    f : callable
        Vectorised continuous function on [lower, upper].
    lower, upper : float
        Interval with lower < upper.
    eps_grid : array_like
        Positive eps values.
    log_density : callable, optional
        Vectorised log-density of mu; Lebesgue measure when omitted.
    f_min : float, optional
        Known minimum, stored for error reporting.
    rtol : float, optional
        Log-space tolerance of the quadrature.

    Returns
    -------
    LaplaceReport

    Raises
    ------
    QuadratureError
        If the quadrature fails at some eps; the message names that eps.
    """
    if not lower < upper:
        raise ValueError(f"Need lower < upper, got [{lower}, {upper}]")
    eps = np.asarray(eps_grid, dtype=float)
    values = []
    for e in eps:
        def log_integrand(x, e=e):
            log_value = -np.asarray(f(x), dtype=float) / e
            if log_density is not None:
                log_value = log_value + log_density(x)
            return log_value

        log_i, error = log_integrate(log_integrand, lower, upper, rtol=rtol)
        if not math.isfinite(log_i) or error > 1e3 * rtol:
            logger.error("Laplace quadrature failed at eps=%g (log I=%r, error=%g)", e, log_i, error)
            raise QuadratureError(f"Quadrature failed at eps={e:g}")
        values.append(e * log_i)
    values = np.array(values)
    extrapolated = least_squares_limit(eps, values, model="laplace")
    return LaplaceReport(eps=eps, values=values, extrapolated=extrapolated,
                         f_min=math.nan if f_min is None else f_min)


def ied_difference_check(lambda1, lambda2, eps_grid, sign=-1, tol=1e-6):
    """
    Check that eps log(f2 +/- f1) -> -lambda2 for f_j(eps) = exp(-lambda_j/eps).

    Evaluated as -lambda2 + eps log1p(+/- exp(-(lambda1 - lambda2)/eps)).

    Parameters
    ----------
    lambda1, lambda2 : float
        Exponents with lambda1 > lambda2 >= 0.
    eps_grid : array_like
        Positive eps values, decreasing.
    sign : {-1, 1}, optional
        Use the difference (-1) or the sum (+1).
    tol : float, optional
        Allowed distance from -lambda2 at the last grid point.

    Returns
    -------
    dict
        ``eps``, ``values``, ``target`` and ``passed``.
    """
    if not lambda1 > lambda2 >= 0:
        raise ValueError(f"Need lambda1 > lambda2 >= 0, got {lambda1!r}, {lambda2!r}")
    eps = np.asarray(eps_grid, dtype=float)
    ratio = np.exp(-(lambda1 - lambda2) / eps)
    values = -lambda2 + eps * np.log1p(sign * ratio)
    target = -float(lambda2)
    passed = bool(abs(values[-1] - target) <= tol)
    if not passed:
        logger.warning("IED difference check off by %g at eps=%g", abs(values[-1] - target), eps[-1])
    return {"eps": eps, "values": values, "target": target, "passed": passed}
