"""
Finite model classes, discrete KL divergences and the optimal posterior.

For a fixed lambda the model-dependent bound is minimized in closed form by
rho*(theta) ~ pi(theta) exp{-(n-1) (lambda L_hat(theta) + psi(theta, lambda))};
optimize_bound searches lambda on top of that (golden section over log lambda
after a coarse log-grid bracket) and records the whole evaluation trace.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, rel_entr, softmax

from .bounds import (
    BoundQuery,
    BoundReport,
    LambdaNormalization,
    fixed_lambda_bound,
    pac_bayes_chernoff,
)
from .cgf import RateFunction, RateFunctionError, check_simplex, expected_rate, rate_from_spec
from .transform import BOUNDARY_MARGIN, golden_section_min

logger = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-6
LAMBDA_CEILING = 1e8
COARSE_GRID_POINTS = 81


class PosteriorError(ValueError):
    """Base exception for posterior and model-class errors."""
    pass


class SimplexError(PosteriorError):
    """Raised when a vector is not a probability vector."""
    pass


@dataclass(frozen=True)
class SimplexDistribution:
    """Probability vector over a finite model class (houses rho and pi)."""

    weights: np.ndarray

    def __post_init__(self):
        try:
            arr = check_simplex(np.asarray(self.weights, dtype=float).ravel(), "probability vector").copy()
        except RateFunctionError as e:
            raise SimplexError(str(e)) from e
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)

    def __len__(self) -> int:
        return int(self.weights.size)

    @classmethod
    def uniform(cls, size: int) -> "SimplexDistribution":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, size: int, index: int) -> "SimplexDistribution":
        weights = np.zeros(size)
        weights[index] = 1.0
        return cls(weights)

    @classmethod
    def from_unnormalized(cls, mass: Sequence[float]) -> "SimplexDistribution":
        arr = np.asarray(mass, dtype=float)
        total = float(arr.sum())
        if not (math.isfinite(total) and total > 0):
            raise SimplexError(f"unnormalized mass must have a positive finite total, got {total!r}")
        weights = arr / total
        return cls(weights / weights.sum())

    def expectation(self, values: Sequence[float]) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class ModelFeatures:
    theta_norm2: Optional[float] = None
    grad_norm2: Optional[float] = None
    sigma2: Optional[float] = None
    true_risk: Optional[float] = None


@dataclass(frozen=True)
class ModelEntry:
    emp_risk: float
    prior_mass: float
    psi: RateFunction
    features: ModelFeatures = field(default_factory=ModelFeatures)


@dataclass(frozen=True)
class FiniteModelClass:
    """Models with empirical risks computed from `n` samples, prior masses and psi envelopes."""

    models: Tuple[ModelEntry, ...]
    n: int

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise PosteriorError("model class is empty")
        if int(self.n) != self.n or self.n < 2:
            raise PosteriorError(f"n={self.n!r} must be an integer >= 2")
        for i, model in enumerate(models):
            if not (math.isfinite(model.emp_risk) and model.emp_risk >= 0):
                raise PosteriorError(f"models[{i}].emp_risk={model.emp_risk!r} must be finite and nonnegative")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "n", int(self.n))
        # validates the prior masses
        SimplexDistribution(np.array([m.prior_mass for m in models]))

    def __len__(self) -> int:
        return len(self.models)

    @property
    def emp_risks(self) -> np.ndarray:
        return np.array([m.emp_risk for m in self.models])

    @property
    def prior(self) -> SimplexDistribution:
        return SimplexDistribution(np.array([m.prior_mass for m in self.models]))

    @property
    def psis(self) -> List[RateFunction]:
        return [m.psi for m in self.models]

    @property
    def b_min(self) -> float:
        return min(m.psi.domain_sup for m in self.models)

    def psi_values(self, lam: float) -> np.ndarray:
        return np.array([m.psi.eval(lam) for m in self.models])

    def feature(self, name: str) -> np.ndarray:
        values = [getattr(m.features, name) for m in self.models]
        if any(v is None for v in values):
            raise PosteriorError(f"feature {name!r} missing for some models")
        return np.array(values, dtype=float)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "FiniteModelClass":
        """Build from an already shape-validated JSON document."""
        try:
            entries = tuple(
                ModelEntry(
                    emp_risk=float(m["emp_risk"]),
                    prior_mass=float(m["prior"]),
                    psi=rate_from_spec(m["psi"]),
                    features=ModelFeatures(**(m.get("features") or {})),
                )
                for m in doc["models"]
            )
        except RateFunctionError as e:
            raise PosteriorError(f"invalid psi in model class: {e}") from e
        return cls(entries, int(doc["n"]))


def load_model_class(path: Union[str, Path]) -> FiniteModelClass:
    """Load a model class file; JSON and schema errors propagate to the caller."""
    from .schemas import ModelClassSpec

    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = ModelClassSpec.model_validate(raw)
    return FiniteModelClass.from_dict(spec.model_dump())


def _as_distribution(rho: Union[SimplexDistribution, Sequence[float]]) -> SimplexDistribution:
    if isinstance(rho, SimplexDistribution):
        return rho
    return SimplexDistribution(np.asarray(rho, dtype=float))


def kl_discrete(rho: Union[SimplexDistribution, Sequence[float]],
                pi: Union[SimplexDistribution, Sequence[float]]) -> float:
    """KL(rho|pi) in nats with 0 ln 0 = 0; +inf when rho charges a pi-null model."""
    rho, pi = _as_distribution(rho), _as_distribution(pi)
    if len(rho) != len(pi):
        raise PosteriorError(f"length mismatch: rho has {len(rho)} entries, pi has {len(pi)}")
    return max(float(np.sum(rel_entr(rho.weights, pi.weights))), 0.0)


def _check_lambda(model_class: FiniteModelClass, lam: float) -> None:
    if math.isnan(lam) or not 0 < lam < model_class.b_min:
        raise PosteriorError(f"lambda={lam!r} outside (0, {model_class.b_min!r})")


def _log_prior(model_class: FiniteModelClass) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(model_class.prior.weights)


def _posterior_and_kl(model_class: FiniteModelClass, lam: float) -> Tuple[SimplexDistribution, float]:
    energy = lam * model_class.emp_risks + model_class.psi_values(lam)
    log_mass = _log_prior(model_class) - (model_class.n - 1) * energy
    log_z = logsumexp(log_mass)
    assert math.isfinite(log_z), "optimal posterior has no mass"
    weights = np.exp(log_mass - log_z)
    rho = SimplexDistribution(weights / weights.sum())
    # KL(rho*|pi) = -(n-1) E_rho*[lambda L_hat + psi] - ln Z
    kl = -(model_class.n - 1) * float(np.dot(rho.weights, energy)) - log_z
    return rho, max(kl, 0.0)


def optimal_posterior(model_class: FiniteModelClass, lam: float) -> SimplexDistribution:
    """rho* ~ pi exp{-(n-1)(lambda L_hat + psi(., lambda))}, normalized in the log domain."""
    _check_lambda(model_class, lam)
    rho, _ = _posterior_and_kl(model_class, lam)
    return rho


def gibbs_posterior(model_class: FiniteModelClass, beta: float) -> SimplexDistribution:
    """Gibbs posterior pi exp(-beta L_hat), normalized."""
    if math.isnan(beta) or beta < 0:
        raise PosteriorError(f"beta={beta!r} must be nonnegative")
    weights = softmax(_log_prior(model_class) - beta * model_class.emp_risks)
    return SimplexDistribution(weights / weights.sum())


def map_index(model_class: FiniteModelClass, lam: float) -> int:
    """argmin of L_hat + psi/lambda - ln(pi)/(lambda (n-1)); lowest index on ties."""
    _check_lambda(model_class, lam)
    objective = (
        model_class.emp_risks
        + model_class.psi_values(lam) / lam
        - _log_prior(model_class) / (lam * (model_class.n - 1))
    )
    return int(np.argmin(objective))


def bound_query(model_class: FiniteModelClass, rho: SimplexDistribution, delta: float,
                kl: Optional[float] = None) -> BoundQuery:
    return BoundQuery(
        emp_gibbs_risk=rho.expectation(model_class.emp_risks),
        kl_div=kl_discrete(rho, model_class.prior) if kl is None else kl,
        n=model_class.n,
        delta=delta,
    )


def parametric_bound(model_class: FiniteModelClass,
                     rho: Union[SimplexDistribution, Sequence[float]],
                     lam: float, delta: float) -> BoundReport:
    """Model-dependent bound at fixed lambda: emp + (KL + ln(n/delta))/(lambda(n-1)) + E_rho[psi]/lambda."""
    rho = _as_distribution(rho)
    _check_lambda(model_class, lam)
    q = bound_query(model_class, rho, delta)
    return fixed_lambda_bound(q, expected_rate(rho.weights, model_class.psis), lam,
                              LambdaNormalization.CHERNOFF)


def _profile_value(model_class: FiniteModelClass, lam: float, delta: float) -> float:
    """Bound at rho*(lambda) and lambda, with KL from the log-partition identity."""
    rho, kl = _posterior_and_kl(model_class, lam)
    q = bound_query(model_class, rho, delta, kl=kl)
    rate = expected_rate(rho.weights, model_class.psis)
    return fixed_lambda_bound(q, rate, lam, LambdaNormalization.CHERNOFF).value


def _lambda_range(model_class: FiniteModelClass) -> Tuple[float, float]:
    b = model_class.b_min
    upper = LAMBDA_CEILING if math.isinf(b) else b - BOUNDARY_MARGIN * b
    lower = min(LAMBDA_FLOOR, 1e-3 * upper)
    return lower, upper


@dataclass
class PosteriorOptimum:
    """Best posterior found, the lambda that defines it, and its bound report."""

    rho: SimplexDistribution
    lam: float
    report: BoundReport
    map_index: int
    trace: List[Tuple[float, float]] = field(default_factory=list)


def optimize_bound(model_class: FiniteModelClass, delta: float) -> PosteriorOptimum:
    """
    Minimize the model-dependent bound jointly over rho and lambda.

    The inner minimization over rho is exact (optimal_posterior); the outer
    search over log lambda is a coarse grid followed by golden section. The
    returned report re-optimizes lambda for the selected rho, so its value is
    never above the profile value at the returned lambda.
    """
    if not 0.0 < delta < 1.0:
        raise PosteriorError(f"delta={delta!r} must lie in (0, 1)")

    if len(model_class) == 1:
        rho = SimplexDistribution.point_mass(1, 0)
        report = pac_bayes_chernoff(bound_query(model_class, rho, delta, kl=0.0),
                                    model_class.models[0].psi)
        return PosteriorOptimum(rho=rho, lam=report.lambda_star, report=report, map_index=0)

    lower, upper = _lambda_range(model_class)
    trace: List[Tuple[float, float]] = []

    def objective(log_lam: float) -> float:
        lam = math.exp(log_lam)
        value = _profile_value(model_class, lam, delta)
        trace.append((lam, value))
        return value

    grid = np.linspace(math.log(lower), math.log(upper), COARSE_GRID_POINTS)
    values = [objective(x) for x in grid]
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    search = golden_section_min(objective, lo, hi, xtol=1e-12, ftol=1e-10)

    if search.fx < values[best]:
        best_lam = math.exp(search.x)
    else:
        best_lam = math.exp(grid[best])
    logger.debug(
        f"optimize_bound: {len(trace)} evaluations, lambda={best_lam!r}, "
        f"converged={search.converged}"
    )

    rho, kl = _posterior_and_kl(model_class, best_lam)
    report = pac_bayes_chernoff(bound_query(model_class, rho, delta, kl=kl),
                                expected_rate(rho.weights, model_class.psis))
    report.notes["profile_lambda"] = best_lam
    return PosteriorOptimum(
        rho=rho,
        lam=best_lam,
        report=report,
        map_index=map_index(model_class, best_lam),
        trace=trace,
    )


def grid_cross_check(model_class: FiniteModelClass, delta: float,
                     points: int = 10_000) -> Tuple[float, float]:
    """Best (lambda, value) of the profile bound on a log-spaced lambda grid."""
    lower, upper = _lambda_range(model_class)
    lams = np.exp(np.linspace(math.log(lower), math.log(upper), points))
    values = np.array([_profile_value(model_class, float(lam), delta) for lam in lams])
    best = int(np.argmin(values))
    return float(lams[best]), float(values[best])
