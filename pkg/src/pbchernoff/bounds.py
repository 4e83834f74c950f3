"""
Generalization bound evaluators.

Every evaluator takes a BoundQuery (empirical Gibbs risk, KL divergence,
sample size, confidence) and returns a BoundReport carrying the bound value,
the optimal lambda when there is one, and the additive breakdown
empirical risk + gap (gap = complexity term + CGF term at lambda*).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Optional

from .cgf import L2Psi, RateFunction
from .transform import binary_kl_upper_inverse, inverse_rate

logger = logging.getLogger(__name__)


class BoundError(ValueError):
    """Raised for invalid bound queries or parameters."""
    pass


class BoundKind(str, Enum):
    PAC_BAYES_CHERNOFF = "pac_bayes_chernoff"
    FIXED_LAMBDA = "fixed_lambda"
    CHERNOFF_KL = "chernoff_kl"
    SUBGAUSSIAN = "subgaussian"
    SUBGAMMA = "subgamma"
    L2 = "l2"
    LOGSOBOLEV_ORACLE = "logsobolev_oracle"
    EMPIRICAL_GRADIENT = "empirical_gradient"
    MCALLESTER = "mcallester"
    SEEGER = "seeger"
    ORACLE = "oracle"


class ComplexityVariant(str, Enum):
    """Numerator of the complexity term: log(n/delta) or log(2n/delta)."""

    N_OVER_DELTA = "n_over_delta"
    TWO_N_OVER_DELTA = "two_n_over_delta"


class LambdaNormalization(str, Enum):
    """Fixed-lambda forms: log(1/delta) over lambda*n, or log(n/delta) over lambda*(n-1)."""

    BANERJEE = "banerjee"
    CHERNOFF = "chernoff"


@dataclass(frozen=True)
class BoundQuery:
    """Empirical Gibbs risk, KL(rho|pi) in nats, sample size n >= 2, confidence delta."""

    emp_gibbs_risk: float
    kl_div: float
    n: int
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.emp_gibbs_risk) and self.emp_gibbs_risk >= 0):
            raise BoundError(f"emp_gibbs_risk={self.emp_gibbs_risk!r} must be finite and nonnegative")
        if math.isnan(self.kl_div) or self.kl_div < 0:
            raise BoundError(f"kl_div={self.kl_div!r} must be nonnegative")
        if int(self.n) != self.n or self.n < 2:
            raise BoundError(f"n={self.n!r} must be an integer >= 2")
        if not 0.0 < self.delta < 1.0:
            raise BoundError(f"delta={self.delta!r} must lie in (0, 1)")
        object.__setattr__(self, "n", int(self.n))


@dataclass
class BoundReport:
    kind: BoundKind
    value: float
    lambda_star: Optional[float]
    complexity_s: float
    empirical_risk: float
    gap_term: float
    complexity_term: Optional[float] = None
    cgf_term: Optional[float] = None
    notes: Dict[str, Any] = field(default_factory=dict)

    @property
    def components(self) -> Dict[str, float]:
        return {"empirical_risk": self.empirical_risk, "gap_term": self.gap_term}

    def to_dict(self) -> Dict[str, Any]:
        """Flat JSON-ready mapping; +inf is rendered as the string "inf"."""
        out = {
            "kind": self.kind.value,
            "value": _inf_str(self.value),
            "lambda_star": _inf_str(self.lambda_star),
            "complexity": _inf_str(self.complexity_s),
            "empirical_risk": self.empirical_risk,
            "gap": _inf_str(self.gap_term),
        }
        if self.complexity_term is not None:
            out["complexity_term"] = _inf_str(self.complexity_term)
        if self.cgf_term is not None:
            out["cgf_term"] = _inf_str(self.cgf_term)
        out.update({k: _inf_str(v) for k, v in self.notes.items()})
        return out


def _inf_str(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _infinite_report(kind: BoundKind, q: BoundQuery) -> BoundReport:
    return BoundReport(
        kind=kind, value=math.inf, lambda_star=None, complexity_s=math.inf,
        empirical_risk=q.emp_gibbs_risk, gap_term=math.inf,
    )


def _closed_form_report(kind: BoundKind, q: BoundQuery, s: float, gap: float,
                        lambda_star: Optional[float]) -> BoundReport:
    return BoundReport(
        kind=kind, value=q.emp_gibbs_risk + gap, lambda_star=lambda_star,
        complexity_s=s, empirical_risk=q.emp_gibbs_risk, gap_term=gap,
    )


def _require_nonnegative(**params: float) -> None:
    for name, value in params.items():
        if math.isnan(value) or value < 0:
            raise BoundError(f"{name}={value!r} must be nonnegative")


def _require_positive(**params: float) -> None:
    for name, value in params.items():
        if math.isnan(value) or not value > 0:
            raise BoundError(f"{name}={value!r} must be positive")


def _quadratic_lambda_star(s: float, curvature: float) -> float:
    # psi = curvature * lambda^2 / 2  =>  lambda* = sqrt(2 s / curvature)
    if curvature == 0:
        return math.inf
    return math.sqrt(2.0 * s / curvature)


def complexity(q: BoundQuery,
               variant: ComplexityVariant = ComplexityVariant.N_OVER_DELTA) -> float:
    """(KL + log(n/delta)) / (n-1), or with log(2n/delta) for the gradient bound."""
    if math.isinf(q.kl_div):
        return math.inf
    factor = 2.0 if variant == ComplexityVariant.TWO_N_OVER_DELTA else 1.0
    return (q.kl_div + math.log(factor * q.n / q.delta)) / (q.n - 1)


def pac_bayes_chernoff(q: BoundQuery, expected_rate: RateFunction) -> BoundReport:
    """Empirical risk plus the inverse Cramer transform of E_rho[psi] at the complexity level."""
    kind = BoundKind.PAC_BAYES_CHERNOFF
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    s = complexity(q)
    inversion = inverse_rate(expected_rate, s)
    lam = inversion.lambda_star
    if math.isfinite(lam) and lam > 0:
        complexity_term = s / lam
        cgf_term = expected_rate.eval(lam) / lam
    else:
        complexity_term, cgf_term = 0.0, 0.0
    report = BoundReport(
        kind=kind,
        value=q.emp_gibbs_risk + inversion.gap,
        lambda_star=lam,
        complexity_s=s,
        empirical_risk=q.emp_gibbs_risk,
        gap_term=inversion.gap,
        complexity_term=complexity_term,
        cgf_term=cgf_term,
        notes={"residual": inversion.residual},
    )
    if inversion.at_boundary:
        report.notes["at_boundary"] = True
    return report


def fixed_lambda_bound(q: BoundQuery, rate: RateFunction, lam: float,
                       normalization: LambdaNormalization = LambdaNormalization.CHERNOFF
                       ) -> BoundReport:
    """Bound at a fixed lambda in (0, b): emp + numerator/(lambda*divisor) + psi(lambda)/lambda."""
    kind = BoundKind.FIXED_LAMBDA
    if math.isnan(lam) or not 0 < lam < rate.domain_sup:
        raise BoundError(f"lambda={lam!r} outside (0, {rate.domain_sup!r})")
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    if normalization == LambdaNormalization.BANERJEE:
        numerator, divisor = q.kl_div + math.log(1.0 / q.delta), q.n
    else:
        numerator, divisor = q.kl_div + math.log(q.n / q.delta), q.n - 1
    complexity_term = numerator / (lam * divisor)
    cgf_term = rate.eval(lam) / lam
    gap = complexity_term + cgf_term
    return BoundReport(
        kind=kind, value=q.emp_gibbs_risk + gap, lambda_star=lam,
        complexity_s=numerator / divisor, empirical_risk=q.emp_gibbs_risk, gap_term=gap,
        complexity_term=complexity_term, cgf_term=cgf_term,
        notes={"normalization": normalization.value},
    )


def chernoff_binary_kl(q: BoundQuery) -> BoundReport:
    """Upper kl-inverse of the empirical Gibbs risk at radius (KL + log(n/delta))/(n-1)."""
    kind = BoundKind.CHERNOFF_KL
    if q.emp_gibbs_risk > 1.0:
        raise BoundError(f"emp_gibbs_risk={q.emp_gibbs_risk!r} must lie in [0, 1] for the 0-1 loss")
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    s = complexity(q)
    value = binary_kl_upper_inverse(q.emp_gibbs_risk, s)
    return _closed_form_report(kind, q, s, value - q.emp_gibbs_risk, None)


def subgaussian_bound(q: BoundQuery, expected_sigma2: float) -> BoundReport:
    """emp + sqrt(2 E_rho[sigma^2] s)."""
    _require_nonnegative(expected_sigma2=expected_sigma2)
    kind = BoundKind.SUBGAUSSIAN
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    s = complexity(q)
    gap = math.sqrt(2.0 * expected_sigma2 * s)
    return _closed_form_report(kind, q, s, gap, _quadratic_lambda_star(s, expected_sigma2))


def subgamma_bound(q: BoundQuery, sigma2: float, c: float) -> BoundReport:
    """emp + sqrt(2 sigma^2 s) + c s."""
    _require_nonnegative(sigma2=sigma2, c=c)
    kind = BoundKind.SUBGAMMA
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    s = complexity(q)
    gap = math.sqrt(2.0 * sigma2 * s) + c * s
    if sigma2 == 0:
        lambda_star = math.inf if c == 0 else 1.0 / c
    else:
        root = math.sqrt(2.0 * s / sigma2)
        lambda_star = root / (1.0 + c * root)
    return _closed_form_report(kind, q, s, gap, lambda_star)


def l2_printed_gap(M: float, expected_theta_norm2: float, s: float) -> float:
    """Closed form printed with the parameter-norm corollary: sqrt(2 M E||theta||^2 s)."""
    return math.sqrt(2.0 * M * expected_theta_norm2 * s)


def l2_bound(q: BoundQuery, M: float, expected_theta_norm2: float) -> BoundReport:
    """
    Parameter-norm bound with psi(lambda) = 2 M lambda^2 ||theta||^2.

    The gap comes from inverting that psi, which gives 2 sqrt(2 M ||theta||^2 s);
    the printed closed form (half of it) is reported in notes["printed_gap"].
    """
    _require_positive(M=M)
    _require_nonnegative(expected_theta_norm2=expected_theta_norm2)
    kind = BoundKind.L2
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    s = complexity(q)
    inversion = inverse_rate(L2Psi(M, expected_theta_norm2), s)
    solver_closed_form = math.sqrt(8.0 * M * expected_theta_norm2 * s)
    if abs(inversion.gap - solver_closed_form) > 1e-8 * max(1.0, solver_closed_form):
        logger.warning(
            f"l2 solver gap {inversion.gap!r} disagrees with sqrt(8 M n2 s)={solver_closed_form!r}"
        )
    printed = l2_printed_gap(M, expected_theta_norm2, s)
    report = _closed_form_report(kind, q, s, inversion.gap, inversion.lambda_star)
    report.notes = {
        "printed_gap": printed,
        "closed_form_agrees": abs(inversion.gap - printed) <= 1e-8 * max(1.0, printed),
    }
    return report


def logsobolev_oracle_bound(q: BoundQuery, C: float, expected_grad_norm2: float) -> BoundReport:
    """emp + sqrt(2 C E_rho[||grad_x loss||^2] s)."""
    _require_nonnegative(C=C, expected_grad_norm2=expected_grad_norm2)
    kind = BoundKind.LOGSOBOLEV_ORACLE
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    s = complexity(q)
    gap = math.sqrt(2.0 * C * expected_grad_norm2 * s)
    return _closed_form_report(kind, q, s, gap, _quadratic_lambda_star(s, C * expected_grad_norm2))


def gradient_concentration(emp_grad_norm2: float, L: float, kl_div: float, n: int,
                           delta2: float) -> float:
    """E_rho[||grad||^2] <= emp + (L/sqrt 2) sqrt((KL + log(sqrt(n)/delta2)) / (n-1))."""
    _require_nonnegative(emp_grad_norm2=emp_grad_norm2, L=L, kl_div=kl_div)
    if int(n) != n or n < 2:
        raise BoundError(f"n={n!r} must be an integer >= 2")
    if not 0.0 < delta2 < 1.0:
        raise BoundError(f"delta2={delta2!r} must lie in (0, 1)")
    if math.isinf(kl_div):
        return math.inf
    radius = (kl_div + math.log(math.sqrt(n) / delta2)) / (n - 1)
    return emp_grad_norm2 + L / math.sqrt(2.0) * math.sqrt(radius)


def empirical_gradient_bound(q: BoundQuery, C: float, L: float,
                             expected_emp_grad_norm2: float) -> BoundReport:
    """emp + sqrt(2 C E K + sqrt(2) C L K^{3/2}) with K = (KL + log(2n/delta))/(n-1)."""
    _require_nonnegative(C=C, L=L, expected_emp_grad_norm2=expected_emp_grad_norm2)
    kind = BoundKind.EMPIRICAL_GRADIENT
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    K = complexity(q, ComplexityVariant.TWO_N_OVER_DELTA)
    gap = math.sqrt(2.0 * C * expected_emp_grad_norm2 * K + math.sqrt(2.0) * C * L * K ** 1.5)
    report = _closed_form_report(kind, q, K, gap, None)
    report.notes = {"delta_split": q.delta / 2.0}
    return report


def mcallester_bound(q: BoundQuery) -> BoundReport:
    """emp + sqrt((KL + log(2 sqrt(n)/delta)) / (2n))."""
    kind = BoundKind.MCALLESTER
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    s = (q.kl_div + math.log(2.0 * math.sqrt(q.n) / q.delta)) / (2.0 * q.n)
    return _closed_form_report(kind, q, s, math.sqrt(s), None)


def seeger_bound(q: BoundQuery) -> BoundReport:
    """Upper kl-inverse at radius (KL + log(2 sqrt(n)/delta)) / n."""
    kind = BoundKind.SEEGER
    if q.emp_gibbs_risk > 1.0:
        raise BoundError(f"emp_gibbs_risk={q.emp_gibbs_risk!r} must lie in [0, 1] for the 0-1 loss")
    if math.isinf(q.kl_div):
        return _infinite_report(kind, q)
    s = (q.kl_div + math.log(2.0 * math.sqrt(q.n) / q.delta)) / q.n
    value = binary_kl_upper_inverse(q.emp_gibbs_risk, s)
    return _closed_form_report(kind, q, s, value - q.emp_gibbs_risk, None)


def _require_rate(rate: Optional[RateFunction], kind: str) -> RateFunction:
    if rate is None:
        raise BoundError(f"bound kind {kind!r} requires a psi rate function")
    return rate


def _param(params: Dict[str, Any], name: str, kind: str) -> Any:
    if name not in params or params[name] is None:
        raise BoundError(f"bound kind {kind!r} requires parameter {name!r}")
    return params[name]


_DISPATCH: Dict[BoundKind, Callable[[BoundQuery, Optional[RateFunction], Dict[str, Any]], BoundReport]] = {
    BoundKind.PAC_BAYES_CHERNOFF: lambda q, r, p: pac_bayes_chernoff(
        q, _require_rate(r, "pac_bayes_chernoff")),
    BoundKind.FIXED_LAMBDA: lambda q, r, p: fixed_lambda_bound(
        q, _require_rate(r, "fixed_lambda"), float(_param(p, "lambda", "fixed_lambda")),
        LambdaNormalization(p.get("normalization", "chernoff"))),
    BoundKind.CHERNOFF_KL: lambda q, r, p: chernoff_binary_kl(q),
    BoundKind.SUBGAUSSIAN: lambda q, r, p: subgaussian_bound(
        q, float(_param(p, "expected_sigma2", "subgaussian"))),
    BoundKind.SUBGAMMA: lambda q, r, p: subgamma_bound(
        q, float(_param(p, "sigma2", "subgamma")), float(_param(p, "c", "subgamma"))),
    BoundKind.L2: lambda q, r, p: l2_bound(
        q, float(_param(p, "M", "l2")), float(_param(p, "expected_theta_norm2", "l2"))),
    BoundKind.LOGSOBOLEV_ORACLE: lambda q, r, p: logsobolev_oracle_bound(
        q, float(_param(p, "C", "logsobolev_oracle")),
        float(_param(p, "expected_grad_norm2", "logsobolev_oracle"))),
    BoundKind.EMPIRICAL_GRADIENT: lambda q, r, p: empirical_gradient_bound(
        q, float(_param(p, "C", "empirical_gradient")), float(_param(p, "L", "empirical_gradient")),
        float(_param(p, "expected_emp_grad_norm2", "empirical_gradient"))),
    BoundKind.MCALLESTER: lambda q, r, p: mcallester_bound(q),
    BoundKind.SEEGER: lambda q, r, p: seeger_bound(q),
}


def compute_bound(kind: str, q: BoundQuery, rate: Optional[RateFunction] = None,
                  params: Optional[Dict[str, Any]] = None) -> BoundReport:
    """Evaluate a bound by name; kind-specific parameters come from `params`."""
    try:
        bound_kind = BoundKind(kind)
    except ValueError as e:
        raise BoundError(f"unknown bound kind {kind!r}") from e
    evaluator = _DISPATCH.get(bound_kind)
    if evaluator is None:
        raise BoundError(f"bound kind {kind!r} needs an environment (oracle mode)")
    return evaluator(q, rate, params or {})
