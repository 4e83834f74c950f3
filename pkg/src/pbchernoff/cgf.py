"""
Cumulant generating functions and their convex upper bounds.

Every rate function here is a convex, nonnegative function of lambda on [0, b)
with value and derivative zero at the origin. Closed-form kinds cover the exact
CGFs of (scaled) Bernoulli losses and the psi-envelopes used by the bounds
(sub-Gaussian, sub-gamma, L2 and log-Sobolev); the empirical kind is the
plug-in CGF of a loss sample; the mixture kind is a posterior average.

All instances are immutable, so evaluation is safe from any thread.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

SIMPLEX_TOL = 1e-12


class RateFunctionError(ValueError):
    """Base exception for rate-function errors."""
    pass


class RateDomainError(RateFunctionError):
    """Raised when lambda lies outside [0, b)."""
    pass


class LossSampleError(RateFunctionError):
    """Raised when a loss sample is unusable."""
    pass


def _as_array(lam: ArrayLike) -> np.ndarray:
    return np.asarray(lam, dtype=float)


def _unwrap(values: np.ndarray, scalar: bool) -> Union[float, np.ndarray]:
    return float(values) if scalar else values


@dataclass(frozen=True)
class RateFunction:
    """
    Convex rate function psi: [0, b) -> R+ with psi(0) = psi'(0) = 0.

    Subclasses implement `_value` and `_deriv` on float arrays; the public
    `eval`/`eval_deriv` add the domain check and accept scalars or arrays.
    """

    kind: ClassVar[str] = "abstract"

    @property
    def domain_sup(self) -> float:
        """Supremum b of the domain [0, b); +inf when unbounded."""
        return math.inf

    @property
    def is_degenerate(self) -> bool:
        """True when the function is identically zero on its domain."""
        return False

    def _value(self, lam: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _deriv(self, lam: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, lam: np.ndarray) -> None:
        if np.any(np.isnan(lam)):
            raise RateDomainError(f"{self.kind}: lambda is NaN")
        if np.any(lam < 0):
            raise RateDomainError(f"{self.kind}: lambda={np.min(lam)!r} is negative")
        if np.any(lam >= self.domain_sup):
            raise RateDomainError(
                f"{self.kind}: lambda={np.max(lam)!r} outside domain [0, {self.domain_sup!r})"
            )

    def eval(self, lam: ArrayLike) -> Union[float, np.ndarray]:
        """Value psi(lambda); raises RateDomainError outside [0, b)."""
        arr = _as_array(lam)
        self._check(arr)
        return _unwrap(self._value(arr), arr.ndim == 0)

    def eval_deriv(self, lam: ArrayLike) -> Union[float, np.ndarray]:
        """Derivative psi'(lambda); raises RateDomainError outside [0, b)."""
        arr = _as_array(lam)
        self._check(arr)
        return _unwrap(self._deriv(arr), arr.ndim == 0)

    def __call__(self, lam: ArrayLike) -> Union[float, np.ndarray]:
        return self.eval(lam)

    def to_spec(self) -> Dict[str, Any]:
        """JSON-ready descriptor understood by `rate_from_spec`."""
        raise NotImplementedError


@dataclass(frozen=True)
class BernoulliCGF(RateFunction):
    """Exact CGF of a {0,1} loss with risk p: lambda*p + ln(1 - p + p*e^-lambda)."""

    p: float
    kind: ClassVar[str] = "bernoulli"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise RateFunctionError(f"bernoulli: p={self.p!r} must lie in [0, 1]")

    @property
    def is_degenerate(self) -> bool:
        return self.p in (0.0, 1.0)

    def _value(self, lam):
        return lam * self.p + np.log1p(self.p * np.expm1(-lam))

    def _deriv(self, lam):
        denom = 1.0 + self.p * np.expm1(-lam)
        return self.p * (1.0 - self.p) * -np.expm1(-lam) / denom

    def to_spec(self):
        return {"kind": self.kind, "p": self.p}


@dataclass(frozen=True)
class ScaledBernoulliCGF(RateFunction):
    """Exact CGF of a loss taking values {0, B} with P(loss = B) = p."""

    p: float
    B: float
    kind: ClassVar[str] = "scaled_bernoulli"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise RateFunctionError(f"scaled_bernoulli: p={self.p!r} must lie in [0, 1]")
        if not self.B > 0:
            raise RateFunctionError(f"scaled_bernoulli: B={self.B!r} must be positive")

    @property
    def is_degenerate(self) -> bool:
        return self.p in (0.0, 1.0)

    def _value(self, lam):
        return lam * self.B * self.p + np.log1p(self.p * np.expm1(-lam * self.B))

    def _deriv(self, lam):
        denom = 1.0 + self.p * np.expm1(-lam * self.B)
        return self.B * self.p * (1.0 - self.p) * -np.expm1(-lam * self.B) / denom

    def to_spec(self):
        return {"kind": self.kind, "p": self.p, "B": self.B}


@dataclass(frozen=True)
class SubGaussianPsi(RateFunction):
    """psi(lambda) = lambda^2 sigma^2 / 2."""

    sigma2: float
    kind: ClassVar[str] = "subgaussian"

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise RateFunctionError(f"subgaussian: sigma2={self.sigma2!r} must be nonnegative")

    @property
    def is_degenerate(self) -> bool:
        return self.sigma2 == 0.0

    def _value(self, lam):
        return 0.5 * self.sigma2 * lam ** 2

    def _deriv(self, lam):
        return self.sigma2 * lam

    def to_spec(self):
        return {"kind": self.kind, "sigma2": self.sigma2}


@dataclass(frozen=True)
class SubGammaPsi(RateFunction):
    """psi(lambda) = lambda^2 sigma^2 / (2 (1 - c lambda)) on [0, 1/c)."""

    sigma2: float
    c: float
    kind: ClassVar[str] = "subgamma"

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise RateFunctionError(f"subgamma: sigma2={self.sigma2!r} must be nonnegative")
        if not self.c >= 0:
            raise RateFunctionError(f"subgamma: c={self.c!r} must be nonnegative")

    @property
    def domain_sup(self) -> float:
        return 1.0 / self.c if self.c > 0 else math.inf

    @property
    def is_degenerate(self) -> bool:
        return self.sigma2 == 0.0

    def _value(self, lam):
        return self.sigma2 * lam ** 2 / (2.0 * (1.0 - self.c * lam))

    def _deriv(self, lam):
        one_minus = 1.0 - self.c * lam
        return self.sigma2 * lam * (2.0 - self.c * lam) / (2.0 * one_minus ** 2)

    def to_spec(self):
        return {"kind": self.kind, "sigma2": self.sigma2, "c": self.c}


@dataclass(frozen=True)
class L2Psi(RateFunction):
    """Parameter-norm envelope psi(lambda) = 2 M lambda^2 ||theta||^2."""

    M: float
    theta_norm2: float
    kind: ClassVar[str] = "l2"

    def __post_init__(self):
        if not self.M > 0:
            raise RateFunctionError(f"l2: M={self.M!r} must be positive")
        if not self.theta_norm2 >= 0:
            raise RateFunctionError(f"l2: theta_norm2={self.theta_norm2!r} must be nonnegative")

    @property
    def is_degenerate(self) -> bool:
        return self.theta_norm2 == 0.0

    def _value(self, lam):
        return 2.0 * self.M * self.theta_norm2 * lam ** 2

    def _deriv(self, lam):
        return 4.0 * self.M * self.theta_norm2 * lam

    def to_spec(self):
        return {"kind": self.kind, "M": self.M, "theta_norm2": self.theta_norm2}


@dataclass(frozen=True)
class LogSobolevPsi(RateFunction):
    """Input-gradient envelope psi(lambda) = (C/2) lambda^2 E||grad_x loss||^2."""

    C: float
    grad_norm2: float
    kind: ClassVar[str] = "logsobolev"

    def __post_init__(self):
        if not self.C >= 0:
            raise RateFunctionError(f"logsobolev: C={self.C!r} must be nonnegative")
        if not self.grad_norm2 >= 0:
            raise RateFunctionError(f"logsobolev: grad_norm2={self.grad_norm2!r} must be nonnegative")

    @property
    def is_degenerate(self) -> bool:
        return self.C == 0.0 or self.grad_norm2 == 0.0

    def _value(self, lam):
        return 0.5 * self.C * self.grad_norm2 * lam ** 2

    def _deriv(self, lam):
        return self.C * self.grad_norm2 * lam

    def to_spec(self):
        return {"kind": self.kind, "C": self.C, "grad_norm2": self.grad_norm2}


@dataclass(frozen=True)
class LossSampleSet:
    """Nonnegative, finite loss values (at least two)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size < 2:
            raise LossSampleError(f"need at least 2 loss samples, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise LossSampleError("loss samples contain NaN or infinite values")
        if np.any(values < 0):
            raise LossSampleError(f"loss samples must be nonnegative, min={values.min()!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def zero_variance(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "LossSampleSet":
        """Load a one-column CSV, one loss per line, header optional."""
        frame = read_numeric_csv(path, columns=1)
        return cls(frame.iloc[:, 0].to_numpy())


@dataclass(frozen=True)
class LossGradientPairs:
    """Per-sample losses with the squared input-gradient norm at each sample."""

    losses: LossSampleSet
    grad_norm2: np.ndarray

    def __post_init__(self):
        grads = np.array(self.grad_norm2, dtype=float).ravel()
        if grads.size != self.losses.size:
            raise LossSampleError(
                f"{self.losses.size} losses but {grads.size} gradient norms"
            )
        if not np.all(np.isfinite(grads)) or np.any(grads < 0):
            raise LossSampleError("gradient norms must be finite and nonnegative")
        grads.setflags(write=False)
        object.__setattr__(self, "grad_norm2", grads)

    @classmethod
    def from_arrays(cls, losses: Sequence[float], grad_norm2: Sequence[float]) -> "LossGradientPairs":
        return cls(LossSampleSet(np.asarray(losses, dtype=float)), np.asarray(grad_norm2, dtype=float))


def load_loss_gradient_pairs(path: Union[str, Path]) -> LossGradientPairs:
    """Load a two-column (loss, grad_norm2) CSV, header optional."""
    frame = read_numeric_csv(path, columns=2)
    return LossGradientPairs.from_arrays(frame.iloc[:, 0].to_numpy(), frame.iloc[:, 1].to_numpy())


def read_numeric_csv(path: Union[str, Path], columns: int) -> pd.DataFrame:
    """
    Read a headerless-or-headed numeric CSV with exactly `columns` columns.

    A first row that does not parse as numbers is taken as the header.
    """
    frame = pd.read_csv(path, header=None, encoding="utf-8", skip_blank_lines=True)
    if frame.shape[1] != columns:
        raise LossSampleError(f"{path}: expected {columns} column(s), found {frame.shape[1]}")
    first = frame.iloc[0].apply(pd.to_numeric, errors="coerce")
    if first.isna().any():
        frame = frame.iloc[1:]
    try:
        frame = frame.apply(pd.to_numeric, errors="raise").reset_index(drop=True)
    except (ValueError, TypeError) as e:
        raise LossSampleError(f"{path}: non-numeric value in CSV body: {e}") from e
    if frame.empty:
        raise LossSampleError(f"{path}: no data rows")
    return frame


@dataclass(frozen=True)
class EmpiricalCGF(RateFunction):
    """
    Plug-in CGF of a loss sample, centred at the sample mean.

    value(lambda) = lambda*mean(l) + ln mean(e^{-lambda l}), computed with
    logsumexp so large lambda never underflows. Finite for every lambda >= 0.
    """

    samples: LossSampleSet
    kind: ClassVar[str] = "empirical"

    @property
    def is_degenerate(self) -> bool:
        return self.samples.zero_variance

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples.values))

    @property
    def variance(self) -> float:
        """Plug-in variance (ddof=0), the curvature of the CGF at zero."""
        return float(np.var(self.samples.values))

    def _value(self, lam):
        losses = self.samples.values
        log_m = math.log(losses.size)
        flat = np.atleast_1d(lam)
        out = np.array([
            l * self.mean + logsumexp(-l * losses) - log_m for l in flat
        ])
        if self.is_degenerate:
            out = np.zeros_like(out)
        return out.reshape(np.shape(lam))

    def _deriv(self, lam):
        losses = self.samples.values
        flat = np.atleast_1d(lam)
        out = np.array([
            self.mean - float(np.dot(softmax(-l * losses), losses)) for l in flat
        ])
        if self.is_degenerate:
            out = np.zeros_like(out)
        return out.reshape(np.shape(lam))

    def to_spec(self):
        return {"kind": self.kind, "samples": self.samples.values.tolist()}


@dataclass(frozen=True)
class MixtureRate(RateFunction):
    """Weighted average of member rate functions (a posterior expectation)."""

    weights: tuple
    members: tuple
    kind: ClassVar[str] = "mixture"
    _active: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        members = tuple(self.members)
        if len(weights) != len(members):
            raise RateFunctionError(
                f"mixture: {len(weights)} weights for {len(members)} members"
            )
        if not members:
            raise RateFunctionError("mixture: no members")
        check_simplex(weights, "mixture weights")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "members", members)
        object.__setattr__(
            self, "_active", tuple((w, m) for w, m in zip(weights, members) if w > 0)
        )

    @property
    def domain_sup(self) -> float:
        return min(m.domain_sup for _, m in self._active)

    @property
    def is_degenerate(self) -> bool:
        return all(m.is_degenerate for _, m in self._active)

    def _value(self, lam):
        return sum(w * m._value(lam) for w, m in self._active)

    def _deriv(self, lam):
        return sum(w * m._deriv(lam) for w, m in self._active)

    def to_spec(self):
        return {
            "kind": self.kind,
            "weights": list(self.weights),
            "members": [m.to_spec() for m in self.members],
        }


def check_simplex(weights: Sequence[float], what: str = "weights") -> np.ndarray:
    """Validate a probability vector: nonnegative entries summing to 1 within 1e-12."""
    arr = np.asarray(weights, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise RateFunctionError(f"{what}: expected a non-empty vector")
    if not np.all(np.isfinite(arr)):
        raise RateFunctionError(f"{what}: non-finite entry")
    if np.any(arr < 0):
        raise RateFunctionError(f"{what}: negative entry {arr.min()!r}")
    total = float(arr.sum())
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise RateFunctionError(f"{what}: sum is {total!r}, expected 1")
    return arr


def empirical_cgf(samples: Union[LossSampleSet, Sequence[float], np.ndarray]) -> EmpiricalCGF:
    """Build the plug-in CGF of a loss sample (domain [0, inf))."""
    if not isinstance(samples, LossSampleSet):
        samples = LossSampleSet(np.asarray(samples, dtype=float))
    if samples.zero_variance:
        logger.info(f"Empirical CGF of {samples.size} constant losses is identically zero")
    return EmpiricalCGF(samples)


def expected_rate(weights: Sequence[float], members: Sequence[RateFunction]) -> MixtureRate:
    """E_rho[psi(theta, .)] for a probability vector over the members."""
    return MixtureRate(tuple(weights), tuple(members))


_FACTORIES = {
    "bernoulli": lambda s: BernoulliCGF(float(s["p"])),
    "scaled_bernoulli": lambda s: ScaledBernoulliCGF(float(s["p"]), float(s["B"])),
    "subgaussian": lambda s: SubGaussianPsi(float(s["sigma2"])),
    "subgamma": lambda s: SubGammaPsi(float(s["sigma2"]), float(s["c"])),
    "l2": lambda s: L2Psi(float(s["M"]), float(s["theta_norm2"])),
    "logsobolev": lambda s: LogSobolevPsi(float(s["C"]), float(s["grad_norm2"])),
    "empirical": lambda s: empirical_cgf(s["samples"]),
    "mixture": lambda s: expected_rate(
        s["weights"], [rate_from_spec(m) for m in s["members"]]
    ),
}


def rate_from_spec(spec: Dict[str, Any]) -> RateFunction:
    """
    Create a rate function from a JSON descriptor such as
    {"kind": "subgaussian", "sigma2": 0.25}.
    """
    kind = spec.get("kind")
    factory = _FACTORIES.get(kind)
    if factory is None:
        raise RateFunctionError(f"unknown rate-function kind {kind!r}")
    try:
        return factory(spec)
    except KeyError as e:
        raise RateFunctionError(f"{kind}: missing parameter {e.args[0]!r}") from e


def known_kinds() -> List[str]:
    return sorted(_FACTORIES)
