"""
Synthetic environments with known risks for Monte Carlo validation.

Every environment is a finite family of models scored on the same data
distribution. Losses of all models on a dataset come back as an
(models, n) matrix. Randomness is counter-based: a (seed, block, stream)
triple selects an independent Philox stream, so trials can run in any order
on any number of workers and still reproduce bit for bit.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .bounds import BoundKind
from .cgf import (
    BernoulliCGF,
    L2Psi,
    RateFunction,
    ScaledBernoulliCGF,
    SubGaussianPsi,
)
from .posterior import FiniteModelClass, ModelEntry, ModelFeatures, SimplexDistribution

logger = logging.getLogger(__name__)

STREAM_DATA = 0
STREAM_MODEL = 1
STREAM_ORACLE = 2
STREAM_DIRECT = 3

ORACLE_SAMPLES = 1_000_000
ORACLE_SEED = 20240501
ORACLE_CHUNK = 100_000

# bound kinds that assume losses in [0, 1]
UNIT_LOSS_KINDS = {BoundKind.CHERNOFF_KL, BoundKind.MCALLESTER, BoundKind.SEEGER}
# bound kinds evaluated with the environment's default psi
DEFAULT_PSI_KINDS = UNIT_LOSS_KINDS | {BoundKind.PAC_BAYES_CHERNOFF, BoundKind.FIXED_LAMBDA}


class EnvironmentSpecError(ValueError):
    """Raised for invalid environment parameters or unsupported combinations."""
    pass


class Coupling(str, Enum):
    COMONOTONE = "comonotone"
    INDEPENDENT = "independent"


def trial_rng(seed: int, block: int, stream: int) -> np.random.Generator:
    """Independent Philox generator for (seed, block, stream)."""
    if seed < 0 or block < 0 or stream < 0:
        raise EnvironmentSpecError(f"seed/block/stream must be nonnegative, got {(seed, block, stream)}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block), int(stream)))
    return np.random.Generator(np.random.Philox(sequence))


def _as_tuple(values: Sequence[float], name: str) -> Tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not out:
        raise EnvironmentSpecError(f"{name} must contain at least one model")
    return out


def _check_n(n: int) -> None:
    if int(n) != n or n < 2:
        raise EnvironmentSpecError(f"n={n!r} must be an integer >= 2")


@dataclass(frozen=True)
class Environment:
    """A finite model family on a common data distribution."""

    kind: ClassVar[str] = "abstract"

    @property
    def num_models(self) -> int:
        raise NotImplementedError

    @property
    def true_risks(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def true_risk_se(self) -> np.ndarray:
        """Standard error of the true risks (zero when they are analytic)."""
        return np.zeros(self.num_models)

    @property
    def has_exact_cgf(self) -> bool:
        return False

    @property
    def unit_bounded(self) -> bool:
        """True when every loss lies in [0, 1]."""
        return True

    def exact_cgf(self, index: int) -> RateFunction:
        raise EnvironmentSpecError(f"{self.kind} environment has no exact CGF")

    def subgaussian_sigma2(self) -> np.ndarray:
        raise NotImplementedError

    def default_psis(self) -> List[RateFunction]:
        if self.has_exact_cgf:
            return [self.exact_cgf(i) for i in range(self.num_models)]
        return [SubGaussianPsi(s) for s in self.subgaussian_sigma2()]

    def l2_psis(self) -> List[RateFunction]:
        raise EnvironmentSpecError(f"bound kind 'l2' needs parameter norms; {self.kind} has none")

    def psi_for(self, bound_kind: str) -> List[RateFunction]:
        """Per-model psi matched to a bound kind."""
        try:
            kind = BoundKind(bound_kind)
        except ValueError as e:
            raise EnvironmentSpecError(f"unknown bound kind {bound_kind!r}") from e
        if kind in UNIT_LOSS_KINDS and not self.unit_bounded:
            raise EnvironmentSpecError(
                f"bound kind {kind.value!r} needs losses in [0, 1]; {self.kind} losses are unbounded by 1"
            )
        if kind in DEFAULT_PSI_KINDS:
            return self.default_psis()
        if kind is BoundKind.SUBGAUSSIAN:
            return [SubGaussianPsi(s) for s in self.subgaussian_sigma2()]
        if kind is BoundKind.L2:
            return self.l2_psis()
        raise EnvironmentSpecError(f"bound kind {kind.value!r} is not supported on {self.kind}")

    def bound_params(self, bound_kind: str, weights: np.ndarray) -> Dict[str, float]:
        """Posterior-averaged parameters required by closed-form bound kinds."""
        kind = BoundKind(bound_kind)
        if kind is BoundKind.SUBGAUSSIAN:
            return {"expected_sigma2": float(np.dot(weights, self.subgaussian_sigma2()))}
        return {}

    def features(self, index: int) -> ModelFeatures:
        return ModelFeatures(
            sigma2=float(self.subgaussian_sigma2()[index]),
            true_risk=float(self.true_risks[index]),
        )

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Loss matrix of shape (num_models, n)."""
        raise NotImplementedError

    def sample_emp_risks(self, indices: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        """Empirical risk of model indices[t] on an independent dataset of size n, per t."""
        raise NotImplementedError

    def model_class(self, losses: np.ndarray, bound_kind: str,
                    prior: Optional[SimplexDistribution] = None) -> FiniteModelClass:
        """Finite model class from a loss matrix, with psi chosen for `bound_kind`."""
        m, n = losses.shape
        prior = prior or SimplexDistribution.uniform(m)
        if len(prior) != m:
            raise EnvironmentSpecError(f"prior has {len(prior)} entries for {m} models")
        emp = losses.mean(axis=1)
        psis = self.psi_for(bound_kind)
        entries = tuple(
            ModelEntry(float(emp[i]), float(prior.weights[i]), psis[i], self.features(i))
            for i in range(m)
        )
        return FiniteModelClass(entries, n)

    def to_spec(self) -> Dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class BernoulliEnsemble(Environment):
    """Models with {0,1} losses of risk p_i."""

    p: Tuple[float, ...]
    coupling: Coupling = Coupling.COMONOTONE
    kind: ClassVar[str] = "bernoulli_ensemble"

    def __post_init__(self):
        p = _as_tuple(self.p, "p")
        for i, value in enumerate(p):
            if not 0.0 <= value <= 1.0:
                raise EnvironmentSpecError(f"p[{i}]={value!r} must lie in [0, 1]")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "coupling", Coupling(self.coupling))

    @property
    def scale(self) -> np.ndarray:
        return np.ones(len(self.p))

    @property
    def num_models(self) -> int:
        return len(self.p)

    @property
    def true_risks(self) -> np.ndarray:
        return self.scale * np.array(self.p)

    @property
    def has_exact_cgf(self) -> bool:
        return True

    @property
    def unit_bounded(self) -> bool:
        return bool(np.all(self.scale <= 1.0))

    def exact_cgf(self, index: int) -> RateFunction:
        return BernoulliCGF(self.p[index])

    def subgaussian_sigma2(self) -> np.ndarray:
        return self.scale ** 2 / 4.0

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_n(n)
        p = np.array(self.p)[:, None]
        if self.coupling is Coupling.COMONOTONE:
            u = rng.random(n)[None, :]
        else:
            u = rng.random((len(self.p), n))
        return self.scale[:, None] * (u < p).astype(float)

    def sample_emp_risks(self, indices: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_n(n)
        indices = np.asarray(indices, dtype=int)
        counts = rng.binomial(n, np.array(self.p)[indices])
        return self.scale[indices] * counts / n

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "p": list(self.p), "coupling": self.coupling.value}


@dataclass(frozen=True)
class ScaledBernoulliEnsemble(BernoulliEnsemble):
    """Models with losses in {0, B_i}, P(loss = B_i) = p_i."""

    B: Tuple[float, ...] = ()
    kind: ClassVar[str] = "scaled_bernoulli_ensemble"

    def __post_init__(self):
        super().__post_init__()
        B = tuple(float(b) for b in self.B)
        if len(B) != len(self.p):
            raise EnvironmentSpecError(f"B has {len(B)} entries for {len(self.p)} models")
        for i, value in enumerate(B):
            if not value > 0:
                raise EnvironmentSpecError(f"B[{i}]={value!r} must be positive")
        object.__setattr__(self, "B", B)

    @property
    def scale(self) -> np.ndarray:
        return np.array(self.B)

    def exact_cgf(self, index: int) -> RateFunction:
        return ScaledBernoulliCGF(self.p[index], self.B[index])

    def to_spec(self) -> Dict[str, Any]:
        return {**super().to_spec(), "B": list(self.B)}


def sample_ball(rng: np.random.Generator, size: int, dim: int, radius: float) -> np.ndarray:
    """Points uniform in the centred ball of the given radius, shape (size, dim)."""
    directions = rng.standard_normal((size, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(size) ** (1.0 / dim)
    return directions * radii[:, None]


@dataclass(frozen=True)
class SigmoidLinear(Environment):
    """
    loss(x, theta) = sigmoid(theta . x) with x uniform in the radius-R ball of R^dim.

    Input gradients are sigmoid'(theta.x) theta, so ||grad_x||^2 <= ||theta||^2/16;
    parameter gradients are sigmoid'(theta.x) x, so ||grad_theta||^2 <= R^2/16.
    True risks come from an oracle run of `oracle_samples` points.
    """

    dim: int
    radius: float
    weights: Tuple[Tuple[float, ...], ...]
    oracle_samples: int = ORACLE_SAMPLES
    oracle_seed: int = ORACLE_SEED
    kind: ClassVar[str] = "sigmoid_linear"

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise EnvironmentSpecError(f"dim={self.dim!r} must be a positive integer")
        if not self.radius > 0:
            raise EnvironmentSpecError(f"radius={self.radius!r} must be positive")
        weights = tuple(tuple(float(w) for w in row) for row in self.weights)
        if not weights:
            raise EnvironmentSpecError("weights must contain at least one model")
        for i, row in enumerate(weights):
            if len(row) != self.dim:
                raise EnvironmentSpecError(f"weights[{i}] has {len(row)} entries, expected {self.dim}")
        if self.oracle_samples < 2:
            raise EnvironmentSpecError(f"oracle_samples={self.oracle_samples!r} must be >= 2")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.weights)

    @property
    def num_models(self) -> int:
        return len(self.weights)

    @property
    def theta_norm2(self) -> np.ndarray:
        return np.sum(self.theta ** 2, axis=1)

    @property
    def lipschitz_M(self) -> float:
        return self.radius ** 2 / 16.0

    @property
    def gradient_bounds(self) -> np.ndarray:
        """Per-model L_i = ||theta_i||^2 / 16."""
        return self.theta_norm2 / 16.0

    @cached_property
    def _oracle(self) -> Tuple[np.ndarray, np.ndarray]:
        rng = trial_rng(self.oracle_seed, 0, STREAM_ORACLE)
        total = np.zeros(self.num_models)
        total_sq = np.zeros(self.num_models)
        remaining = self.oracle_samples
        while remaining > 0:
            size = min(ORACLE_CHUNK, remaining)
            losses = self.losses_at(sample_ball(rng, size, self.dim, self.radius))
            total += losses.sum(axis=1)
            total_sq += (losses ** 2).sum(axis=1)
            remaining -= size
        count = self.oracle_samples
        mean = total / count
        var = np.maximum(total_sq / count - mean ** 2, 0.0) * count / (count - 1)
        logger.info(
            f"sigmoid_linear oracle: {count} samples, seed {self.oracle_seed}, "
            f"max SE {float(np.max(np.sqrt(var / count))):.3e}"
        )
        return mean, np.sqrt(var / count)

    @property
    def true_risks(self) -> np.ndarray:
        return self._oracle[0]

    @property
    def true_risk_se(self) -> np.ndarray:
        return self._oracle[1]

    def subgaussian_sigma2(self) -> np.ndarray:
        return np.full(self.num_models, 0.25)

    def l2_psis(self) -> List[RateFunction]:
        return [L2Psi(self.lipschitz_M, float(n2)) for n2 in self.theta_norm2]

    def bound_params(self, bound_kind: str, weights: np.ndarray) -> Dict[str, float]:
        if BoundKind(bound_kind) is BoundKind.L2:
            return {
                "M": self.lipschitz_M,
                "expected_theta_norm2": float(np.dot(weights, self.theta_norm2)),
            }
        return super().bound_params(bound_kind, weights)

    def features(self, index: int) -> ModelFeatures:
        return ModelFeatures(
            theta_norm2=float(self.theta_norm2[index]),
            sigma2=0.25,
            true_risk=float(self.true_risks[index]),
        )

    def losses_at(self, x: np.ndarray) -> np.ndarray:
        """Loss matrix (num_models, points) at input points x of shape (points, dim)."""
        return expit(self.theta @ x.T)

    def input_gradient_norm2(self, x: np.ndarray) -> np.ndarray:
        s = self.losses_at(x)
        return (s * (1.0 - s)) ** 2 * self.theta_norm2[:, None]

    def parameter_gradient_norm2(self, x: np.ndarray) -> np.ndarray:
        s = self.losses_at(x)
        return (s * (1.0 - s)) ** 2 * np.sum(x ** 2, axis=1)[None, :]

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_n(n)
        return self.losses_at(sample_ball(rng, n, self.dim, self.radius))

    def sample_emp_risks(self, indices: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_n(n)
        indices = np.asarray(indices, dtype=int)
        out = np.empty(indices.size)
        for t, index in enumerate(indices):
            x = sample_ball(rng, n, self.dim, self.radius)
            out[t] = float(np.mean(expit(x @ self.theta[index])))
        return out

    def to_spec(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "radius": self.radius,
            "weights": [list(row) for row in self.weights],
            "oracle_samples": self.oracle_samples,
            "oracle_seed": self.oracle_seed,
        }


def draw_dataset(env: Environment, n: int, seed: int, trial: int = 0) -> np.ndarray:
    """Per-model loss matrix (models, n) for one trial; a pure function of (seed, trial)."""
    return env.draw(n, trial_rng(seed, trial, STREAM_DATA))


def environment_from_spec(spec: Dict[str, Any]) -> Environment:
    """Build an environment from a JSON descriptor keyed by "kind"."""
    kind = spec.get("kind")
    try:
        if kind == BernoulliEnsemble.kind:
            return BernoulliEnsemble(tuple(spec["p"]), spec.get("coupling") or Coupling.COMONOTONE)
        if kind == ScaledBernoulliEnsemble.kind:
            return ScaledBernoulliEnsemble(
                tuple(spec["p"]), spec.get("coupling") or Coupling.COMONOTONE, B=tuple(spec["B"])
            )
        if kind == SigmoidLinear.kind:
            return SigmoidLinear(
                dim=int(spec["dim"]),
                radius=float(spec["radius"]),
                weights=tuple(tuple(row) for row in spec["weights"]),
                oracle_samples=int(spec.get("oracle_samples") or ORACLE_SAMPLES),
                oracle_seed=int(spec.get("oracle_seed") if spec.get("oracle_seed") is not None else ORACLE_SEED),
            )
    except KeyError as e:
        raise EnvironmentSpecError(f"{kind}: missing field {e.args[0]!r}") from e
    except ValueError as e:
        if isinstance(e, EnvironmentSpecError):
            raise
        raise EnvironmentSpecError(f"{kind}: {e}") from e
    raise EnvironmentSpecError(f"unknown environment kind {kind!r}")
