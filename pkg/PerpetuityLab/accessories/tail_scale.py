"""
Regularly varying tail scales.

A ``TailScale`` is the function

    H(x) = c * x**(-rho) * log(e + 1/x)**beta,

regularly varying with index ``-rho`` at zero. It normalises every left-tail
exponent in the package: a variable X has exponent lambda when
``-log P(X < x) / H(x) -> lambda`` as ``x -> 0+``.

H is continuous and strictly decreasing on the whole half-line (0, inf) and
maps it onto (0, inf), so H^{-1} is defined for every positive level. Only
x <= 1 is the asymptotic regime the theory cares about; larger arguments are
evaluated by the same formula and logged.

Functions
---------
eval_h(scale, x)
    H(x) with domain checks.
eval_h_inverse(scale, u)
    H^{-1}(u); closed form for beta = 0, bisection otherwise.
envelope_normalizer(scale, n)
    H^{-1}(log n), the lower-envelope normaliser.
inverse_many(scale, u)
    Vectorised H^{-1} used by the samplers.
regular_variation_report(scale, x, ys)
    H(xy)/H(x) against y**(-rho).
"""

import math
from dataclasses import dataclass
import numpy as np
from PerpetuityLab.settings import get_logger, DEFAULT_BISECTION_TOL
from PerpetuityLab.accessories.numerics import bisect_decreasing, BracketError

logger = get_logger(__name__)

# Upper end of the asymptotic regime
X_MAX = 1.0


class TailScaleDomainError(ValueError):
    """Raised when H is evaluated outside (0, inf)."""
    pass


class TailScaleRangeError(ValueError):
    """Raised when H^{-1} is asked for a level H cannot reach."""
    pass


@dataclass(frozen=True)
class TailScale:
    """
    Parametric regularly varying scale.

    Attributes
    ----------
    rho : float
        Index magnitude, H has index -rho at 0.
    log_exponent : float
        Exponent beta >= 0 of the slowly varying factor log(e + 1/x).
    scale : float
        Multiplicative constant c > 0.
    """

    rho: float = 1.0
    log_exponent: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be positive, got {self.rho!r}")
        if not (self.log_exponent >= 0 and math.isfinite(self.log_exponent)):
            raise ValueError(f"beta must be nonnegative, got {self.log_exponent!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive, got {self.scale!r}")

    @property
    def is_pure_power(self):
        """True when the slowly varying factor is absent."""
        return self.log_exponent == 0.0

    def h(self, x):
        """Vectorised H without domain checks."""
        x = np.asarray(x, dtype=float)
        value = self.scale * x ** (-self.rho)
        if self.log_exponent:
            value = value * np.log(math.e + 1.0 / x) ** self.log_exponent
        return value

    def to_dict(self):
        """Config form ``{"rho", "beta", "scale"}``."""
        return {"rho": self.rho, "beta": self.log_exponent, "scale": self.scale}

    @classmethod
    def from_dict(cls, spec):
        """Build a scale from its config form; missing keys take defaults."""
        return cls(rho=float(spec.get("rho", 1.0)),
                   log_exponent=float(spec.get("beta", 0.0)),
                   scale=float(spec.get("scale", 1.0)))


# H_1(x) = 1/x, the scale of every Fleming-Viot experiment
H1 = TailScale()


def eval_h(scale, x):
    """
    Evaluate H at a single point.

    Parameters
    ----------
    scale : TailScale
        The scale.
    x : float
        Positive finite argument.

    Returns
    -------
    float
        H(x).

    Raises
    ------
    TailScaleDomainError
        If ``x <= 0`` or ``x`` is not finite.

    Examples
    --------
    >>> eval_h(TailScale(rho=2.0, scale=3.0), 0.5)
    12.0
    """
    if not (math.isfinite(x) and x > 0):
        logger.error("H evaluated outside its domain at x=%r", x)
        raise TailScaleDomainError(f"H is defined on (0, inf), got x={x!r}")
    if not in_asymptotic_regime(x):
        logger.debug("H evaluated at x=%g outside the asymptotic regime (0, %g]", x, X_MAX)
    return float(scale.h(x))


def eval_h_inverse(scale, u):
    """
    Evaluate H^{-1} at a single level.

    For ``beta = 0`` the inverse is ``(c/u)**(1/rho)``. Otherwise a bisection
    on ``[1e-300, 1]``, expanded geometrically when needed, solves
    ``H(x) = u`` to relative residual 1e-12.

    Parameters
    ----------
    scale : TailScale
        The scale.
    u : float
        Positive finite level.

    Returns
    -------
    float
        The unique x with H(x) = u.

    Raises
    ------
    TailScaleRangeError
        If ``u`` is not a positive finite number or cannot be bracketed.
    """
    if not (math.isfinite(u) and u > 0):
        logger.error("H^{-1} requested at unreachable level u=%r", u)
        raise TailScaleRangeError(f"H maps onto (0, inf), got u={u!r}")
    if scale.is_pure_power:
        return (scale.scale / u) ** (1.0 / scale.rho)
    try:
        return bisect_decreasing(lambda x: float(scale.h(x)), u,
                                 lower=1e-300, upper=1.0, rtol=DEFAULT_BISECTION_TOL)
    except BracketError as e:
        logger.error("H^{-1} bracket failure at u=%r: %s", u, e)
        raise TailScaleRangeError(str(e)) from e


def inverse_many(scale, u, iterations=120):
    """
    Vectorised H^{-1}.

    For ``beta > 0`` the root lies in ``[x0, x0 * log(e + 1/x0)**(beta/rho)]``
    with ``x0 = (c/u)**(1/rho)``, because ``log(e + 1/x) >= 1`` and decreases
    in x. A fixed number of bisection steps on ``log x`` is run for all
    entries at once.

    Parameters
    ----------
    scale : TailScale
        The scale.
    u : array_like
        Positive levels.
    iterations : int, optional
        Bisection steps for ``beta > 0``.

    Returns
    -------
    numpy.ndarray
        H^{-1}(u) elementwise.
    """
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0)):
        raise TailScaleRangeError("H^{-1} requires positive levels")
    x0 = (scale.scale / u) ** (1.0 / scale.rho)
    if scale.is_pure_power:
        return x0
    log_lo = np.log(x0)
    log_hi = log_lo + (scale.log_exponent / scale.rho) * np.log(np.log(math.e + 1.0 / x0))
    for _ in range(iterations):
        mid = 0.5 * (log_lo + log_hi)
        too_small = scale.h(np.exp(mid)) > u
        log_lo = np.where(too_small, mid, log_lo)
        log_hi = np.where(too_small, log_hi, mid)
    return np.exp(0.5 * (log_lo + log_hi))


def in_asymptotic_regime(x):
    """True when x lies in (0, X_MAX], where H is used for tail exponents."""
    return 0 < x <= X_MAX


def envelope_normalizer(scale, n):
    """
    Return H^{-1}(log n).

    Parameters
    ----------
    scale : TailScale
        The scale.
    n : int
        Index, at least 3.

    Returns
    -------
    float
        The lower-envelope normaliser at n.
    """
    if n < 3:
        raise TailScaleRangeError(f"The envelope normaliser needs n >= 3, got {n!r}")
    return eval_h_inverse(scale, math.log(n))


def envelope_normalizer_many(scale, n):
    """Vectorised ``envelope_normalizer`` for an integer array ``n >= 3``."""
    return inverse_many(scale, np.log(np.asarray(n, dtype=float)))


def regular_variation_report(scale, x, ys=(0.5, 2.0, 10.0)):
    """
    Compare H(xy)/H(x) with the limit y**(-rho).

    Parameters
    ----------
    scale : TailScale
        The scale.
    x : float
        Small base point.
    ys : iterable of float, optional
        Multipliers.

    Returns
    -------
    list of dict
        One entry per y with keys ``y``, ``ratio``, ``limit`` and
        ``relative_error``.
    """
    base = eval_h(scale, x)
    report = []
    for y in ys:
        ratio = eval_h(scale, x * y) / base
        limit = y ** (-scale.rho)
        report.append({
            "y": y,
            "ratio": ratio,
            "limit": limit,
            "relative_error": abs(ratio - limit) / limit,
        })
    return report
