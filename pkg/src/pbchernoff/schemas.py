"""
Pydantic models for JSON documents read by the command line.

These validate shape and types only. Mathematical preconditions (simplex
priors, parameter domains, confidence levels) are checked by the domain
types so they surface as domain errors.
"""

from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_validator


class RateSpec(BaseModel):
    """{"kind": "...", <kind parameters>} as understood by rate_from_spec."""

    model_config = ConfigDict(extra="allow")

    kind: str


class BoundConfig(BaseModel):
    """Input of `bound compute` / `bound compare`."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    emp_gibbs_risk: float = Field(validation_alias=AliasChoices("emp_gibbs_risk", "risk"))
    kl_div: float = Field(validation_alias=AliasChoices("kl_div", "kl"))
    n: int
    delta: float
    psi: Optional[RateSpec] = None
    kind: str = "pac_bayes_chernoff"
    kinds: Optional[List[str]] = None
    params: Dict[str, Any] = Field(default_factory=dict)


class FeaturesSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    theta_norm2: Optional[float] = None
    grad_norm2: Optional[float] = None
    sigma2: Optional[float] = None
    true_risk: Optional[float] = None


class ModelSpec(BaseModel):
    emp_risk: float
    prior: float
    psi: RateSpec
    features: Optional[FeaturesSpec] = None


class ModelClassSpec(BaseModel):
    """Finite model class file: {"n": int, "models": [...]}."""

    n: int
    models: List[ModelSpec] = Field(min_length=1)


class EnvironmentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["bernoulli_ensemble", "scaled_bernoulli_ensemble", "sigmoid_linear"]
    p: Optional[List[float]] = None
    B: Optional[List[float]] = None
    coupling: Literal["comonotone", "independent"] = "comonotone"
    dim: Optional[int] = None
    radius: Optional[float] = None
    weights: Optional[List[List[float]]] = None
    oracle_samples: Optional[int] = None
    oracle_seed: Optional[int] = None


class PosteriorRuleSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["prior", "fixed", "gibbs", "prop9"]
    weights: Optional[List[float]] = None
    beta: Optional[float] = None


class ExperimentConfig(BaseModel):
    """Common part of every `validate` config."""

    model_config = ConfigDict(extra="forbid")

    environment: EnvironmentSpec
    n: int
    trials: int
    seed: Optional[int] = Field(default=None, ge=0, lt=2 ** 64)


class CoverageConfig(ExperimentConfig):
    bound_kind: str = "chernoff_kl"
    posterior_rule: PosteriorRuleSpec = PosteriorRuleSpec(name="prior")
    delta: float = 0.05
    prior: Optional[List[float]] = None
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("posterior_rule", mode="before")
    @classmethod
    def _rule_from_name(cls, value: Union[str, Dict[str, Any]]) -> Any:
        if isinstance(value, str):
            return {"name": value}
        return value


class Lemma2Config(ExperimentConfig):
    model_index: int = 0
    c_grid: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0, 2.0, 3.0])


class ExpMomentConfig(ExperimentConfig):
    model_index: int = 0
    m: float
