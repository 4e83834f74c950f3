"""
Monte Carlo validation: coverage of the bounds, the exponential tail of the
scaled Cramer transform of the generalization gap, the exponential-moment
bound, the log-Sobolev ratio and the oracle exponential moment.

Trials (or blocks of trials) are independent tasks keyed by a counter-based
generator. They run on worker threads through asyncio.to_thread under a
semaphore and are aggregated in index order, so every count is identical
for any number of workers.
"""

import asyncio
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, TypeVar, Union

import numpy as np
from scipy import stats

from .bounds import BoundKind, BoundQuery, BoundReport, compute_bound
from .cgf import (
    LossGradientPairs,
    RateDomainError,
    RateFunction,
    empirical_cgf,
    expected_rate,
)
from .config import get_settings
from .environments import (
    STREAM_DATA,
    STREAM_DIRECT,
    STREAM_MODEL,
    BernoulliEnsemble,
    Coupling,
    Environment,
    EnvironmentSpecError,
    SigmoidLinear,
    draw_dataset,
    sample_ball,
    trial_rng,
)
from .logging_config import RunLogger
from .posterior import (
    SimplexDistribution,
    bound_query,
    gibbs_posterior,
    optimize_bound,
)
from .transform import legendre

logger = logging.getLogger(__name__)

T = TypeVar("T")

SE_MULTIPLIER = 3.0
BLOCK_SIZE = 10_000
KS_ALPHA = 0.01
DEFAULT_LOGSOBOLEV_GRID = np.geomspace(1e-2, 10.0, 61)


class HarnessError(ValueError):
    """Base exception for harness errors."""
    pass


class HarnessConfigError(HarnessError):
    """Raised when an experiment combines incompatible pieces."""
    pass


class PreconditionError(HarnessError):
    """Raised when a check is asked outside its validity range."""
    pass


async def _gather_indexed(tasks: Sequence[Callable[[], T]], workers: int) -> List[T]:
    """Run blocking callables on worker threads; results come back in task order."""
    semaphore = asyncio.Semaphore(max(1, workers))

    async def run_one(task: Callable[[], T]) -> T:
        async with semaphore:
            return await asyncio.to_thread(task)

    return list(await asyncio.gather(*(run_one(t) for t in tasks)))


def _run_sync(coro: Awaitable[T]) -> T:
    return asyncio.run(coro)


def _workers(workers: Optional[int]) -> int:
    return workers if workers is not None else get_settings().workers


def _blocks(trials: int, block_size: int = BLOCK_SIZE) -> List[int]:
    full, rest = divmod(trials, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _check_trials(trials: int) -> None:
    if int(trials) != trials or trials < 1:
        raise PreconditionError(f"trials={trials!r} must be a positive integer")


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise PreconditionError(f"delta={delta!r} must lie in (0, 1)")


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorRule:
    """How each trial forms rho: prior, fixed weights, Gibbs, or the optimal posterior."""

    name: str
    weights: Optional[tuple] = None
    beta: Optional[float] = None

    RULES = ("prior", "fixed", "gibbs", "prop9")

    def __post_init__(self):
        if self.name not in self.RULES:
            raise HarnessConfigError(f"posterior_rule {self.name!r} not in {self.RULES}")
        if self.name == "fixed" and self.weights is None:
            raise HarnessConfigError("posterior_rule 'fixed' needs weights")
        if self.beta is not None and not self.beta >= 0:
            raise HarnessConfigError(f"posterior_rule beta={self.beta!r} must be nonnegative")

    @classmethod
    def parse(cls, rule: Union[str, Dict[str, Any], "PosteriorRule"]) -> "PosteriorRule":
        if isinstance(rule, PosteriorRule):
            return rule
        if isinstance(rule, str):
            return cls(rule)
        weights = rule.get("weights")
        return cls(
            rule.get("name") or rule.get("rule"),
            tuple(weights) if weights is not None else None,
            rule.get("beta"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "weights": list(self.weights) if self.weights is not None else None,
            "beta": self.beta,
        }


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    bound: float
    gibbs_true_risk: float
    gibbs_emp_risk: float
    violated: bool


@dataclass
class CoverageReport:
    """Violation count of a bound over independent trials."""

    trials: int
    violations: int
    delta: float
    bound_kind: str
    posterior_rule: str
    risk_tolerance: float = 0.0
    records: List[TrialRecord] = field(default_factory=list)

    def __post_init__(self):
        assert 0 <= self.violations <= self.trials, "violations exceed trials"

    @property
    def violation_rate(self) -> float:
        return self.violations / self.trials

    @property
    def binomial_se(self) -> float:
        """Standard error of the violation rate at the nominal level delta."""
        return math.sqrt(self.delta * (1.0 - self.delta) / self.trials)

    @property
    def threshold(self) -> float:
        return self.delta + SE_MULTIPLIER * self.binomial_se

    @property
    def passed(self) -> bool:
        return self.violation_rate <= self.threshold

    def summary(self) -> Dict[str, Any]:
        return {
            "trials": self.trials,
            "violations": self.violations,
            "violation_rate": self.violation_rate,
            "binomial_se": self.binomial_se,
            "threshold": self.threshold,
            "risk_tolerance": self.risk_tolerance,
            "passed": self.passed,
            "bound_kind": self.bound_kind,
            "posterior_rule": self.posterior_rule,
        }


def _select_posterior(env: Environment, model_class, rule: PosteriorRule, delta: float) -> SimplexDistribution:
    if rule.name == "prior":
        return model_class.prior
    if rule.name == "fixed":
        weights = SimplexDistribution(np.asarray(rule.weights, dtype=float))
        if len(weights) != env.num_models:
            raise HarnessConfigError(
                f"fixed posterior has {len(weights)} weights for {env.num_models} models"
            )
        return weights
    if rule.name == "gibbs":
        beta = rule.beta if rule.beta is not None else float(model_class.n)
        return gibbs_posterior(model_class, beta)
    return optimize_bound(model_class, delta).rho


def _coverage_trial(env: Environment, bound_kind: str, rule: PosteriorRule, n: int, delta: float,
                    seed: int, trial: int, params: Dict[str, Any],
                    prior: Optional[SimplexDistribution], risk_tolerance: float) -> TrialRecord:
    losses = draw_dataset(env, n, seed, trial)
    model_class = env.model_class(losses, bound_kind, prior)
    rho = _select_posterior(env, model_class, rule, delta)
    q = bound_query(model_class, rho, delta)
    rate = expected_rate(rho.weights, model_class.psis)
    report = compute_bound(bound_kind, q, rate, {**env.bound_params(bound_kind, rho.weights), **params})
    true_risk = rho.expectation(env.true_risks)
    return TrialRecord(
        trial_id=trial,
        bound=report.value,
        gibbs_true_risk=true_risk,
        gibbs_emp_risk=q.emp_gibbs_risk,
        violated=bool(report.value < true_risk - risk_tolerance),
    )


def _validate_coverage_setup(env: Environment, bound_kind: str, rule: PosteriorRule,
                             prior: Optional[SimplexDistribution]) -> None:
    try:
        kind = BoundKind(bound_kind)
    except ValueError as e:
        raise HarnessConfigError(f"unknown bound kind {bound_kind!r}") from e
    if kind is BoundKind.ORACLE:
        raise HarnessConfigError("oracle bounds are evaluated with oracle_bound, not run_coverage")
    try:
        env.psi_for(kind.value)
    except EnvironmentSpecError as e:
        raise HarnessConfigError(str(e)) from e
    if prior is not None and len(prior) != env.num_models:
        raise HarnessConfigError(f"prior has {len(prior)} entries for {env.num_models} models")


async def run_coverage_async(env: Environment, bound_kind: str,
                             posterior_rule: Union[str, Dict[str, Any], PosteriorRule],
                             n: int, delta: float, trials: int, seed: int,
                             workers: Optional[int] = None,
                             params: Optional[Dict[str, Any]] = None,
                             prior: Optional[SimplexDistribution] = None,
                             run_logger: Optional[RunLogger] = None) -> CoverageReport:
    """
    Count trials where the bound falls below E_rho[true risk].

    For environments whose true risks come from an oracle run, a trial only
    counts as a violation when the bound is below the true risk by more than
    three oracle standard errors.
    """
    _check_trials(trials)
    _check_delta(delta)
    rule = PosteriorRule.parse(posterior_rule)
    _validate_coverage_setup(env, bound_kind, rule, prior)
    params = dict(params or {})
    risk_tolerance = SE_MULTIPLIER * float(np.max(env.true_risk_se))
    run_tag = run_logger.run_id if run_logger else "-"

    logger.info(
        f"[{run_tag}] coverage: {env.kind}, bound={bound_kind}, rule={rule.name}, "
        f"n={n}, delta={delta}, trials={trials}"
    )
    tasks = [
        (lambda t=t: _coverage_trial(env, bound_kind, rule, n, delta, seed, t, params, prior, risk_tolerance))
        for t in range(trials)
    ]
    records = await _gather_indexed(tasks, _workers(workers))

    report = CoverageReport(
        trials=trials,
        violations=sum(r.violated for r in records),
        delta=delta,
        bound_kind=bound_kind,
        posterior_rule=rule.name,
        risk_tolerance=risk_tolerance,
        records=records,
    )
    if run_logger:
        for record in records:
            run_logger.log_trial(asdict(record))
        run_logger.log_check("coverage", report.summary())
    logger.info(
        f"[{run_tag}] coverage: {report.violations}/{trials} violations "
        f"(rate {report.violation_rate:.4f}, threshold {report.threshold:.4f})"
    )
    return report


def run_coverage(env: Environment, bound_kind: str,
                 posterior_rule: Union[str, Dict[str, Any], PosteriorRule],
                 n: int, delta: float, trials: int, seed: int, **kwargs) -> CoverageReport:
    return _run_sync(run_coverage_async(env, bound_kind, posterior_rule, n, delta, trials, seed, **kwargs))


# ---------------------------------------------------------------------------
# Tail and moment checks on a single model
# ---------------------------------------------------------------------------


def _exact_cgf(env: Environment, model_index: int) -> RateFunction:
    if not env.has_exact_cgf:
        raise HarnessConfigError(f"{env.kind} environment has no exact CGF")
    if not 0 <= model_index < env.num_models:
        raise HarnessConfigError(f"model index {model_index} out of range [0, {env.num_models})")
    return env.exact_cgf(model_index)


def _scaled_transform_samples(env: Environment, model_index: int, n: int, trials: int,
                              seed: int, workers: Optional[int]) -> np.ndarray:
    """n * Lambda*(true risk - empirical risk) for `trials` independent datasets."""
    rate = _exact_cgf(env, model_index)
    true_risk = float(env.true_risks[model_index])

    def block(index: int, size: int) -> np.ndarray:
        rng = trial_rng(seed, index, STREAM_DATA)
        emp = env.sample_emp_risks(np.full(size, model_index), n, rng)
        gaps = true_risk - emp
        # few distinct empirical risks; transform each once
        unique, inverse = np.unique(gaps, return_inverse=True)
        values = np.array([legendre(rate, float(a)) for a in unique])
        return n * values[inverse]

    tasks = [(lambda i=i, s=s: block(i, s)) for i, s in enumerate(_blocks(trials))]
    return np.concatenate(_run_sync(_gather_indexed(tasks, _workers(workers))))


@dataclass(frozen=True)
class TailRow:
    c: float
    survival: float
    bound: float
    se: float

    @property
    def passed(self) -> bool:
        return self.survival <= self.bound + SE_MULTIPLIER * self.se


@dataclass
class TailReport:
    model_index: int
    n: int
    trials: int
    rows: List[TailRow]

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def summary(self) -> Dict[str, Any]:
        return {
            "model_index": self.model_index,
            "n": self.n,
            "trials": self.trials,
            "passed": self.passed,
            "rows": [{**asdict(r), "passed": r.passed} for r in self.rows],
        }


def check_lemma2(env: Environment, model_index: int, n: int, c_grid: Sequence[float],
                 trials: int, seed: int, workers: Optional[int] = None) -> TailReport:
    """
    Survival P(n Lambda*(gen) >= c) against the Exp(1) tail e^{-c} on a grid.

    Lambda* is the Cramer transform of the model's exact CGF (zero for
    nonpositive gaps). SE at each c is the binomial SE at level e^{-c}.
    """
    _check_trials(trials)
    c_grid = [float(c) for c in c_grid]
    if any(math.isnan(c) or c < 0 for c in c_grid):
        raise PreconditionError(f"c_grid must be nonnegative, got {c_grid}")
    statistics = _scaled_transform_samples(env, model_index, n, trials, seed, workers)
    rows = []
    for c in c_grid:
        tail = math.exp(-c)
        rows.append(TailRow(
            c=c,
            survival=float(np.mean(statistics >= c)),
            bound=tail,
            se=math.sqrt(tail * (1.0 - tail) / trials),
        ))
    report = TailReport(model_index, n, trials, rows)
    logger.info(f"check_lemma2: {env.kind}[{model_index}], n={n}, trials={trials}, passed={report.passed}")
    return report


@dataclass
class MomentReport:
    estimate: float
    se: float
    bound: float
    trials: int
    stability_warning: bool = False
    exact: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.estimate <= self.bound + SE_MULTIPLIER * self.se

    def summary(self) -> Dict[str, Any]:
        return {**asdict(self), "passed": self.passed}


def check_exp_moment(env: Environment, model_index: int, n: int, m: float, trials: int,
                     seed: int, workers: Optional[int] = None) -> MomentReport:
    """Monte Carlo mean of exp(m Lambda*(gen)) against n/(n-m)."""
    _check_trials(trials)
    if math.isnan(m) or m < 0:
        raise PreconditionError(f"m={m!r} must be nonnegative")
    if m >= n:
        raise PreconditionError(f"m={m!r} must be below n={n}; the dominating Pareto has no finite mean")
    bound = n / (n - m)
    if m == 0:
        _exact_cgf(env, model_index)
        return MomentReport(estimate=1.0, se=0.0, bound=bound, trials=trials)

    unstable = m > n / 3.0
    if unstable:
        logger.warning(
            f"check_exp_moment: m={m} > n/3={n / 3:.3g}; the dominating Pareto has infinite "
            "variance and the standard error is unreliable"
        )
    statistics = _scaled_transform_samples(env, model_index, n, trials, seed, workers)
    values = np.exp((m / n) * statistics)
    se = float(np.std(values, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    report = MomentReport(
        estimate=float(np.mean(values)),
        se=se,
        bound=bound,
        trials=trials,
        stability_warning=unstable,
    )
    logger.info(
        f"check_exp_moment: estimate {report.estimate:.6g} +- {se:.2g} vs bound {bound:.6g}"
    )
    return report


def estimate_exponential_moment_oracle(env: Environment, pi: Union[SimplexDistribution, Sequence[float]],
                                       n: int, lam: float, trials: int, seed: int,
                                       workers: Optional[int] = None) -> MomentReport:
    """
    Monte Carlo estimate of E_pi E_D[exp(lambda n (L - L_hat))].

    Models are drawn from pi and datasets from the environment. For
    environments with exact CGFs the closed value sum_i pi_i exp(n Lambda_i(lambda))
    is returned alongside. The moment has no a priori upper bound, so
    `bound` is +inf.
    """
    _check_trials(trials)
    pi = pi if isinstance(pi, SimplexDistribution) else SimplexDistribution(np.asarray(pi, dtype=float))
    if len(pi) != env.num_models:
        raise HarnessConfigError(f"pi has {len(pi)} entries for {env.num_models} models")
    if math.isnan(lam) or lam < 0:
        raise PreconditionError(f"lambda={lam!r} must be nonnegative")

    exact = None
    if env.has_exact_cgf:
        try:
            cgf_values = np.array([env.exact_cgf(i).eval(lam) for i in range(env.num_models)])
        except RateDomainError as e:
            raise PreconditionError(str(e)) from e
        exact = float(np.dot(pi.weights, np.exp(n * cgf_values)))

    true_risks = env.true_risks

    def block(index: int, size: int) -> np.ndarray:
        models = trial_rng(seed, index, STREAM_MODEL).choice(env.num_models, size=size, p=pi.weights)
        emp = env.sample_emp_risks(models, n, trial_rng(seed, index, STREAM_DATA))
        return np.exp(lam * n * (true_risks[models] - emp))

    tasks = [(lambda i=i, s=s: block(i, s)) for i, s in enumerate(_blocks(trials))]
    values = np.concatenate(_run_sync(_gather_indexed(tasks, _workers(workers))))
    se = float(np.std(values, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return MomentReport(estimate=float(np.mean(values)), se=se, bound=math.inf,
                        trials=trials, exact=exact)


def oracle_bound(q: BoundQuery, lam: float, moment: float) -> BoundReport:
    """Oracle baseline emp + (KL + ln(f/delta)) / (lambda n) for a known exponential moment f."""
    if not lam > 0:
        raise PreconditionError(f"lambda={lam!r} must be positive")
    if not moment > 0:
        raise PreconditionError(f"exponential moment {moment!r} must be positive")
    s = (q.kl_div + math.log(moment / q.delta)) / q.n
    gap = s / lam
    return BoundReport(
        kind=BoundKind.ORACLE,
        value=q.emp_gibbs_risk + gap,
        lambda_star=lam,
        complexity_s=s,
        empirical_risk=q.emp_gibbs_risk,
        gap_term=gap,
    )


# ---------------------------------------------------------------------------
# log-Sobolev ratio
# ---------------------------------------------------------------------------


@dataclass
class LogSobolevCurve:
    lambdas: np.ndarray
    ratios: np.ndarray
    limit: float
    empirical_C: float
    assumption_failure: bool = False

    def summary(self) -> Dict[str, Any]:
        return {
            "limit": self.limit,
            "empirical_C": self.empirical_C,
            "assumption_failure": self.assumption_failure,
            "curve": [[float(l), float(r)] for l, r in zip(self.lambdas, self.ratios)],
        }


def logsobolev_ratio(pairs: LossGradientPairs, lambda_grid: Optional[Sequence[float]] = None) -> LogSobolevCurve:
    """
    Ratio of the empirical CGF to 0.5 lambda^2 mean(grad_norm2) on a grid.

    The lambda -> 0 limit is var(loss) / mean(grad_norm2) (plug-in variance);
    the empirical log-Sobolev constant is the sup of the curve, taken over the
    grid and that limit.
    """
    lambdas = np.asarray(DEFAULT_LOGSOBOLEV_GRID if lambda_grid is None else lambda_grid, dtype=float)
    if lambdas.size == 0 or np.any(~np.isfinite(lambdas)) or np.any(lambdas <= 0):
        raise PreconditionError("lambda_grid must be a non-empty set of positive values")

    rate = empirical_cgf(pairs.losses)
    mean_grad = float(np.mean(pairs.grad_norm2))
    variance = rate.variance

    if rate.is_degenerate:
        ratios = np.zeros_like(lambdas)
        return LogSobolevCurve(lambdas, ratios, 0.0, 0.0)
    if mean_grad == 0.0:
        logger.warning("logsobolev_ratio: zero mean gradient norm with nonzero loss variance")
        ratios = np.full_like(lambdas, math.inf)
        return LogSobolevCurve(lambdas, ratios, math.inf, math.inf, assumption_failure=True)

    ratios = np.asarray(rate.eval(lambdas)) / (0.5 * lambdas ** 2 * mean_grad)
    limit = variance / mean_grad
    return LogSobolevCurve(
        lambdas=lambdas,
        ratios=ratios,
        limit=limit,
        empirical_C=max(limit, float(np.max(ratios))),
    )


# ---------------------------------------------------------------------------
# Environment sanity checks
# ---------------------------------------------------------------------------


@dataclass
class MarginalCheck:
    statistic: float
    pvalue: float
    alpha: float = KS_ALPHA

    @property
    def passed(self) -> bool:
        return self.pvalue >= self.alpha


def check_comonotone_marginals(env: BernoulliEnsemble, model_index: int, n: int, trials: int,
                               seed: int) -> MarginalCheck:
    """Two-sample KS test: empirical risks from shared loss matrices vs direct binomial draws."""
    if not isinstance(env, BernoulliEnsemble) or env.coupling is not Coupling.COMONOTONE:
        raise HarnessConfigError("marginal check needs a comonotone (scaled) Bernoulli ensemble")
    _check_trials(trials)
    shared = np.array([draw_dataset(env, n, seed, t)[model_index].mean() for t in range(trials)])
    direct = env.sample_emp_risks(np.full(trials, model_index), n, trial_rng(seed, 0, STREAM_DIRECT))
    result = stats.ks_2samp(shared, direct)
    return MarginalCheck(statistic=float(result.statistic), pvalue=float(result.pvalue))


@dataclass
class GradientCheck:
    points: int
    max_input_ratio: float
    max_parameter_ratio: float

    @property
    def passed(self) -> bool:
        return self.max_input_ratio <= 1.0 + 1e-12 and self.max_parameter_ratio <= 1.0 + 1e-12


def check_sigmoid_gradients(env: SigmoidLinear, points: int, seed: int) -> GradientCheck:
    """Largest sampled ||grad_x||^2 / L_i and ||grad_theta||^2 / M over random inputs."""
    if not isinstance(env, SigmoidLinear):
        raise HarnessConfigError("gradient check needs a sigmoid_linear environment")
    _check_trials(points)
    x = sample_ball(trial_rng(seed, 0, STREAM_DATA), points, env.dim, env.radius)
    bounds = env.gradient_bounds
    with np.errstate(divide="ignore", invalid="ignore"):
        input_ratio = np.where(bounds[:, None] > 0, env.input_gradient_norm2(x) / bounds[:, None], 0.0)
    parameter_ratio = env.parameter_gradient_norm2(x) / env.lipschitz_M
    return GradientCheck(
        points=points,
        max_input_ratio=float(np.max(input_ratio)),
        max_parameter_ratio=float(np.max(parameter_ratio)),
    )
