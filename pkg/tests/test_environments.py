"""
Tests for synthetic environments and counter-based random streams.
"""

import numpy as np
import pytest

from pbchernoff.cgf import BernoulliCGF, L2Psi, ScaledBernoulliCGF, SubGaussianPsi
from pbchernoff.environments import (
    STREAM_DATA,
    STREAM_MODEL,
    BernoulliEnsemble,
    Coupling,
    EnvironmentSpecError,
    ScaledBernoulliEnsemble,
    SigmoidLinear,
    draw_dataset,
    environment_from_spec,
    sample_ball,
    trial_rng,
)
from pbchernoff.posterior import SimplexDistribution


@pytest.fixture
def small_sigmoid():
    """Two-model sigmoid environment with a cheap oracle."""
    return SigmoidLinear(dim=2, radius=2.0, weights=((1.0, 0.0), (0.0, -2.0)), oracle_samples=20_000)


class TestTrialRng:
    """(seed, block, stream) addressing."""

    def test_reproducible(self):
        """Same triple, same numbers."""
        a = trial_rng(42, 3, STREAM_DATA).random(5)
        b = trial_rng(42, 3, STREAM_DATA).random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        """Different block or stream gives different numbers."""
        base = trial_rng(42, 3, STREAM_DATA).random(5)
        assert not np.array_equal(base, trial_rng(42, 4, STREAM_DATA).random(5))
        assert not np.array_equal(base, trial_rng(42, 3, STREAM_MODEL).random(5))

    def test_negative_rejected(self):
        """Negative coordinates are rejected."""
        with pytest.raises(EnvironmentSpecError):
            trial_rng(-1, 0, 0)


class TestBernoulliEnsemble:
    """{0,1} losses with known risks."""

    def test_validation(self):
        """Risks must lie in [0, 1] and the ensemble must be non-empty."""
        with pytest.raises(EnvironmentSpecError):
            BernoulliEnsemble((0.5, 1.2))
        with pytest.raises(EnvironmentSpecError):
            BernoulliEnsemble(())

    def test_comonotone_draw_is_nested(self):
        """Comonotone losses are ordered by risk on every sample."""
        env = BernoulliEnsemble((0.1, 0.3, 0.6))
        losses = draw_dataset(env, 1000, seed=1)
        assert losses.shape == (3, 1000)
        assert np.all(losses[0] <= losses[1])
        assert np.all(losses[1] <= losses[2])
        assert set(np.unique(losses)) <= {0.0, 1.0}

    def test_independent_draw(self):
        """Independent coupling breaks the nesting."""
        env = BernoulliEnsemble((0.5, 0.5), coupling=Coupling.INDEPENDENT)
        losses = draw_dataset(env, 1000, seed=1)
        assert not np.array_equal(losses[0], losses[1])

    def test_draw_is_pure_in_seed_and_trial(self):
        """Same (seed, trial) gives the same dataset."""
        env = BernoulliEnsemble((0.2, 0.4))
        np.testing.assert_array_equal(draw_dataset(env, 50, 7, trial=9), draw_dataset(env, 50, 7, trial=9))
        assert not np.array_equal(draw_dataset(env, 50, 7, trial=9), draw_dataset(env, 50, 7, trial=10))

    def test_marginal_mean(self):
        """Empirical risk concentrates on p."""
        env = BernoulliEnsemble((0.2, 0.4))
        losses = draw_dataset(env, 200_000, seed=3)
        np.testing.assert_allclose(losses.mean(axis=1), [0.2, 0.4], atol=0.005)

    def test_exact_cgf_and_sigma2(self):
        """Bernoulli CGF and sigma^2 = 1/4."""
        env = BernoulliEnsemble((0.2, 0.4))
        assert env.has_exact_cgf
        assert env.exact_cgf(1) == BernoulliCGF(0.4)
        np.testing.assert_allclose(env.subgaussian_sigma2(), 0.25)

    def test_sample_emp_risks(self):
        """Fresh empirical risks are multiples of 1/n."""
        env = BernoulliEnsemble((0.2, 0.4))
        risks = env.sample_emp_risks(np.array([0, 1, 1]), 10, trial_rng(1, 0, 3))
        assert risks.shape == (3,)
        np.testing.assert_allclose(risks * 10, np.round(risks * 10))

    def test_small_n_rejected(self):
        """n >= 2."""
        with pytest.raises(EnvironmentSpecError):
            BernoulliEnsemble((0.2,)).draw(1, trial_rng(0, 0, 0))

    def test_model_class(self):
        """Loss matrix to model class with per-kind psi."""
        env = BernoulliEnsemble((0.2, 0.4))
        losses = draw_dataset(env, 100, seed=5)
        model_class = env.model_class(losses, "subgaussian")
        assert model_class.n == 100
        np.testing.assert_allclose(model_class.emp_risks, losses.mean(axis=1))
        assert model_class.psis == [SubGaussianPsi(0.25), SubGaussianPsi(0.25)]
        assert env.model_class(losses, "pac_bayes_chernoff").psis[0] == BernoulliCGF(0.2)
        assert model_class.models[1].features.true_risk == 0.4

    def test_model_class_prior_length(self):
        """Prior must match the number of models."""
        env = BernoulliEnsemble((0.2, 0.4))
        with pytest.raises(EnvironmentSpecError):
            env.model_class(np.zeros((2, 10)), "chernoff_kl", prior=SimplexDistribution.uniform(3))

    def test_unknown_kind(self):
        """Unknown bound kinds are rejected."""
        with pytest.raises(EnvironmentSpecError):
            BernoulliEnsemble((0.2,)).psi_for("nonsense")

    def test_l2_unsupported(self):
        """Bernoulli models have no parameter norms."""
        with pytest.raises(EnvironmentSpecError):
            BernoulliEnsemble((0.2,)).psi_for("l2")

    def test_bound_params(self):
        """Posterior-averaged sigma^2 for the sub-Gaussian bound."""
        env = BernoulliEnsemble((0.2, 0.4))
        assert env.bound_params("subgaussian", np.array([0.5, 0.5])) == {"expected_sigma2": 0.25}
        assert env.bound_params("chernoff_kl", np.array([0.5, 0.5])) == {}


class TestScaledBernoulliEnsemble:
    """{0, B} losses."""

    def test_losses_and_risks(self):
        """Losses take values in {0, B} and risks are B p."""
        env = ScaledBernoulliEnsemble((0.3, 0.5), B=(2.0, 1.0))
        losses = draw_dataset(env, 500, seed=2)
        assert set(np.unique(losses[0])) <= {0.0, 2.0}
        np.testing.assert_allclose(env.true_risks, [0.6, 0.5])
        np.testing.assert_allclose(env.subgaussian_sigma2(), [1.0, 0.25])
        assert env.exact_cgf(0) == ScaledBernoulliCGF(0.3, 2.0)

    def test_unit_loss_kinds_rejected(self):
        """binary-kl bounds need losses in [0, 1]."""
        env = ScaledBernoulliEnsemble((0.3,), B=(2.0,))
        assert not env.unit_bounded
        with pytest.raises(EnvironmentSpecError, match=r"\[0, 1\]"):
            env.psi_for("chernoff_kl")

    def test_length_mismatch(self):
        """B must match p."""
        with pytest.raises(EnvironmentSpecError):
            ScaledBernoulliEnsemble((0.3, 0.5), B=(2.0,))


class TestSigmoidLinear:
    """sigmoid(theta . x) on a ball."""

    def test_sample_ball_radius(self):
        """All points lie inside the ball."""
        x = sample_ball(trial_rng(0, 0, 0), 1000, 3, 2.5)
        assert x.shape == (1000, 3)
        assert np.all(np.linalg.norm(x, axis=1) <= 2.5 + 1e-12)

    def test_losses_in_unit_interval(self, small_sigmoid):
        """Losses lie strictly inside (0, 1)."""
        losses = draw_dataset(small_sigmoid, 100, seed=1)
        assert losses.shape == (2, 100)
        assert np.all((losses > 0) & (losses < 1))

    def test_oracle_risk_is_half_by_symmetry(self, small_sigmoid):
        """The ball is symmetric, so the true risk is 1/2 up to oracle error."""
        np.testing.assert_allclose(small_sigmoid.true_risks, 0.5, atol=5 * small_sigmoid.true_risk_se.max())
        assert np.all(small_sigmoid.true_risk_se > 0)

    def test_oracle_is_deterministic(self):
        """Oracle risks depend only on the oracle seed."""
        make = lambda: SigmoidLinear(dim=2, radius=1.0, weights=((1.0, 1.0),), oracle_samples=1000)
        np.testing.assert_array_equal(make().true_risks, make().true_risks)

    def test_gradient_bounds(self, small_sigmoid):
        """||grad_x||^2 <= ||theta||^2/16 and ||grad_theta||^2 <= R^2/16 pointwise."""
        x = sample_ball(trial_rng(0, 0, 0), 5000, 2, 2.0)
        assert np.all(small_sigmoid.input_gradient_norm2(x) <= small_sigmoid.gradient_bounds[:, None] + 1e-15)
        assert np.all(small_sigmoid.parameter_gradient_norm2(x) <= small_sigmoid.lipschitz_M + 1e-15)

    def test_l2_psis(self, small_sigmoid):
        """L2 psi uses M = R^2/16 and the squared parameter norm."""
        psis = small_sigmoid.psi_for("l2")
        assert psis == [L2Psi(0.25, 1.0), L2Psi(0.25, 4.0)]
        params = small_sigmoid.bound_params("l2", np.array([0.5, 0.5]))
        assert params == {"M": 0.25, "expected_theta_norm2": 2.5}

    def test_features(self, small_sigmoid):
        """Model features carry the norm and the oracle risk."""
        features = small_sigmoid.features(1)
        assert features.theta_norm2 == 4.0
        assert features.sigma2 == 0.25

    def test_dimension_mismatch(self):
        """Weight rows must have dim entries."""
        with pytest.raises(EnvironmentSpecError):
            SigmoidLinear(dim=3, radius=1.0, weights=((1.0, 0.0),))


class TestEnvironmentFromSpec:
    """JSON descriptors."""

    @pytest.mark.parametrize("env", [
        BernoulliEnsemble((0.1, 0.2)),
        BernoulliEnsemble((0.1, 0.2), coupling=Coupling.INDEPENDENT),
        ScaledBernoulliEnsemble((0.1, 0.2), B=(1.0, 3.0)),
        SigmoidLinear(dim=1, radius=1.0, weights=((2.0,),), oracle_samples=100, oracle_seed=5),
    ])
    def test_descriptor_rebuilds(self, env):
        """to_spec output rebuilds an equal environment."""
        assert environment_from_spec(env.to_spec()) == env

    def test_missing_field(self):
        """Missing fields are named."""
        with pytest.raises(EnvironmentSpecError, match="'p'"):
            environment_from_spec({"kind": "bernoulli_ensemble"})

    def test_unknown_kind(self):
        """Unknown kinds are rejected."""
        with pytest.raises(EnvironmentSpecError, match="unknown"):
            environment_from_spec({"kind": "gaussian"})
