"""
Legendre/Cramer transforms, their generalized inverses, and the binary kl.

The inverse rate inf_{lambda in (0,b)} (s + psi(lambda)) / lambda is found
through the stationarity condition h(lambda) = lambda psi'(lambda) - psi(lambda) - s,
which is nondecreasing in lambda. Bracketing is geometric from 1e-6; the
root is refined with Brent's bracketing solver and the residual at the root
is reported as an optimality certificate.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

from scipy.optimize import bisect, brentq
from scipy.special import rel_entr

from .cgf import RateFunction

logger = logging.getLogger(__name__)

LAMBDA_START = 1e-6
# lambda caps for unbounded domains; the Legendre cap is lower because
# lambda*a - psi(lambda) loses ~lambda*eps absolute precision
INVERSE_LAMBDA_CAP = 1e12
LEGENDRE_LAMBDA_CAP = 1e8
BOUNDARY_MARGIN = 2.0 ** -30
RESIDUAL_TOL = 1e-10
KL_INVERSE_XTOL = 1e-13
GOLDEN_RATIO = (math.sqrt(5.0) - 1.0) / 2.0


class TransformError(ValueError):
    """Raised for invalid transform arguments."""
    pass


@dataclass(frozen=True)
class InversionResult:
    """
    Result of inverting a Cramer transform at level s.

    lambda_star is math.inf for the identically-zero rate (gap 0, no finite
    optimizer) and 0.0 when s == 0.
    """

    gap: float
    lambda_star: float
    residual: float
    iterations: int
    at_boundary: bool = False


@dataclass
class GoldenSectionResult:
    x: float
    fx: float
    iterations: int
    converged: bool
    trace: List[Tuple[float, float]] = field(default_factory=list)


def _upper_lambda(rf: RateFunction, cap: float) -> float:
    b = rf.domain_sup
    if math.isinf(b):
        return cap
    return b - BOUNDARY_MARGIN * b


def legendre(rf: RateFunction, a: float) -> float:
    """
    sup_{lambda in [0,b)} {lambda a - rf(lambda)}.

    0 for a <= 0; +inf when a exceeds sup rf' and the objective diverges.
    """
    if math.isnan(a):
        raise TransformError("legendre: a is NaN")
    if a <= 0:
        return 0.0
    if rf.is_degenerate:
        return math.inf

    upper = _upper_lambda(rf, LEGENDRE_LAMBDA_CAP)

    def slope_gap(lam: float) -> float:
        return rf.eval_deriv(lam) - a

    lo, hi = 0.0, min(LAMBDA_START, upper)
    while slope_gap(hi) < 0:
        if hi >= upper:
            return _legendre_at_boundary(rf, a, upper)
        lo, hi = hi, min(2.0 * hi, upper)

    lam = brentq(slope_gap, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return max(lam * a - rf.eval(lam), 0.0)


def _legendre_at_boundary(rf: RateFunction, a: float, upper: float) -> float:
    """Slope never reaches a inside the domain: supremum sits at the right end."""
    value = upper * a - rf.eval(upper)
    if math.isinf(rf.domain_sup):
        half = 0.5 * upper
        growth = value - (half * a - rf.eval(half))
        if growth > 1e-6 * max(1.0, abs(value)):
            return math.inf
    logger.debug(f"legendre({rf.kind}, a={a!r}) evaluated as a limit at lambda={upper!r}")
    return max(value, 0.0)


def inverse_rate(rf: RateFunction, s: float) -> InversionResult:
    """
    Generalized inverse of the Cramer transform of rf at level s:
    inf_{lambda in (0,b)} (s + rf(lambda)) / lambda.
    """
    if math.isnan(s) or s < 0:
        raise TransformError(f"inverse_rate: s={s!r} must be nonnegative")
    if rf.is_degenerate:
        return InversionResult(gap=0.0, lambda_star=math.inf, residual=0.0, iterations=0)
    if s == 0:
        return InversionResult(gap=0.0, lambda_star=0.0, residual=0.0, iterations=0)

    upper = _upper_lambda(rf, INVERSE_LAMBDA_CAP)

    def stationarity(lam: float) -> float:
        return lam * rf.eval_deriv(lam) - rf.eval(lam) - s

    lo, hi = 0.0, min(LAMBDA_START, upper)
    expansions = 0
    h_hi = stationarity(hi)
    while h_hi < 0:
        if hi >= upper:
            gap = (s + rf.eval(upper)) / upper
            logger.debug(
                f"inverse_rate({rf.kind}, s={s!r}) hit the domain edge at lambda={upper!r}"
            )
            return InversionResult(
                gap=gap, lambda_star=upper, residual=h_hi,
                iterations=expansions, at_boundary=True,
            )
        lo, hi = hi, min(2.0 * hi, upper)
        h_hi = stationarity(hi)
        expansions += 1

    lam, info = brentq(
        stationarity, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500, full_output=True
    )
    residual = stationarity(lam)
    gap = (s + rf.eval(lam)) / lam
    iterations = expansions + info.iterations

    if abs(residual) > RESIDUAL_TOL * max(1.0, s):
        # flat stretches of h (vanishing curvature): fall back to direct minimization
        logger.warning(
            f"inverse_rate({rf.kind}, s={s!r}) residual {residual!r} above tolerance, "
            "falling back to golden-section search"
        )
        result = golden_section_min(
            lambda l: (s + rf.eval(l)) / l, max(lo, LAMBDA_START * 1e-3), hi
        )
        if result.fx < gap:
            lam, gap = result.x, result.fx
            residual = stationarity(lam)
        iterations += result.iterations

    return InversionResult(gap=gap, lambda_star=lam, residual=residual, iterations=iterations)


def golden_section_min(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float = 1e-10,
    ftol: float = 1e-10,
    max_iter: int = 300,
) -> GoldenSectionResult:
    """
    Golden-section search for a minimum of f on [lo, hi].

    Stops when the bracket is narrower than xtol * max(1, |x|), or once it is
    narrower than 1e-5 * max(1, |x|) and the best value has improved by less
    than ftol (relative) over five iterations.
    """
    if not lo < hi:
        raise TransformError(f"golden_section_min: empty bracket [{lo!r}, {hi!r}]")
    trace: List[Tuple[float, float]] = []
    x1 = hi - GOLDEN_RATIO * (hi - lo)
    x2 = lo + GOLDEN_RATIO * (hi - lo)
    f1, f2 = f(x1), f(x2)
    trace += [(x1, f1), (x2, f2)]
    best_history = [min(f1, f2)]
    iteration = 0
    converged = False
    while iteration < max_iter:
        iteration += 1
        if f2 > f1:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN_RATIO * (hi - lo)
            f1 = f(x1)
            trace.append((x1, f1))
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN_RATIO * (hi - lo)
            f2 = f(x2)
            trace.append((x2, f2))
        best_history.append(min(best_history[-1], f1, f2))
        scale = max(1.0, abs(0.5 * (lo + hi)))
        if hi - lo <= xtol * scale:
            converged = True
            break
        if len(best_history) > 5 and hi - lo <= 1e-5 * scale:
            old, new = best_history[-6], best_history[-1]
            if math.isfinite(old) and old - new <= ftol * max(abs(new), 1e-300):
                converged = True
                break

    x, fx = (x1, f1) if f1 <= f2 else (x2, f2)
    return GoldenSectionResult(x=x, fx=fx, iterations=iteration, converged=converged, trace=trace)


def _check_probability(value: float, name: str) -> None:
    if math.isnan(value) or not 0.0 <= value <= 1.0:
        raise TransformError(f"{name}={value!r} must lie in [0, 1]")


def binary_kl(a: float, b: float) -> float:
    """kl(a, b) between Bernoulli(a) and Bernoulli(b), with 0 ln 0 = 0."""
    _check_probability(a, "a")
    _check_probability(b, "b")
    return float(rel_entr(a, b) + rel_entr(1.0 - a, 1.0 - b))


def binary_kl_upper_inverse(a: float, s: float) -> float:
    """Largest b in [a, 1) with kl(a, b) <= s, by bisection on b -> kl(a, b)."""
    _check_probability(a, "a")
    if math.isnan(s) or s < 0:
        raise TransformError(f"binary_kl_upper_inverse: s={s!r} must be nonnegative")
    if math.isinf(s) or a >= 1.0:
        return 1.0
    if s == 0:
        return a
    if a == 0.0:
        return -math.expm1(-s)

    top = 1.0 - KL_INVERSE_XTOL
    if binary_kl(a, top) <= s:
        return top
    return bisect(lambda b: binary_kl(a, b) - s, a, top, xtol=KL_INVERSE_XTOL, maxiter=200)
