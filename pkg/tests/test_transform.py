"""
Tests for Legendre transforms, inverse rates and the binary kl.
"""

import math

import numpy as np
import pytest

from pbchernoff.cgf import (
    BernoulliCGF,
    L2Psi,
    LogSobolevPsi,
    ScaledBernoulliCGF,
    SubGammaPsi,
    SubGaussianPsi,
    empirical_cgf,
    expected_rate,
)
from pbchernoff.transform import (
    TransformError,
    binary_kl,
    binary_kl_upper_inverse,
    golden_section_min,
    inverse_rate,
    legendre,
)


class TestLegendre:
    """sup over lambda >= 0 of lambda*a - psi(lambda)."""

    def test_subgaussian_closed_form(self):
        """a^2 / (2 sigma^2)."""
        assert legendre(SubGaussianPsi(0.5), 0.3) == pytest.approx(0.09, rel=1e-10)

    def test_nonpositive_argument(self):
        """Zero for a <= 0."""
        assert legendre(SubGaussianPsi(1.0), 0.0) == 0.0
        assert legendre(BernoulliCGF(0.3), -0.2) == 0.0

    def test_bernoulli_is_binary_kl(self):
        """Cramer transform of the Bernoulli(p) CGF at a is kl(p - a, p)."""
        assert legendre(BernoulliCGF(0.5), 0.2) == pytest.approx(binary_kl(0.3, 0.5), abs=1e-9)
        assert legendre(BernoulliCGF(0.5), 0.2) == pytest.approx(0.082283, abs=1e-6)

    def test_bernoulli_at_risk(self):
        """At a = p the transform is -ln(1 - p), reached only in the limit."""
        assert legendre(BernoulliCGF(0.5), 0.5) == pytest.approx(math.log(2.0), abs=1e-6)

    def test_bernoulli_beyond_risk(self):
        """Gaps above p are impossible: +inf."""
        assert math.isinf(legendre(BernoulliCGF(0.5), 0.6))

    def test_degenerate_rate(self):
        """Zero rate gives +inf for positive a."""
        assert math.isinf(legendre(SubGaussianPsi(0.0), 0.1))

    def test_nan_rejected(self):
        """NaN argument raises TransformError."""
        with pytest.raises(TransformError):
            legendre(SubGaussianPsi(1.0), float("nan"))


class TestInverseRate:
    """inf over lambda of (s + psi(lambda)) / lambda."""

    def test_subgaussian_example(self):
        """sigma^2=0.25, s=0.0811085: gap sqrt(2 sigma^2 s), lambda* sqrt(2 s / sigma^2)."""
        result = inverse_rate(SubGaussianPsi(0.25), 0.0811085)
        assert result.gap == pytest.approx(0.201379, rel=1e-4)
        assert result.lambda_star == pytest.approx(0.805523, rel=1e-5)
        assert abs(result.residual) <= 1e-10

    def test_subgamma_example(self):
        """sigma^2=1, c=0.5, s=0.5: gap 1 + 0.25, lambda* 2/3."""
        result = inverse_rate(SubGammaPsi(1.0, 0.5), 0.5)
        assert result.gap == pytest.approx(1.25, rel=1e-10)
        assert result.lambda_star == pytest.approx(2.0 / 3.0, rel=1e-8)

    def test_closed_forms_on_random_parameters(self):
        """Numeric inverse matches sub-Gaussian and sub-gamma closed forms to 1e-8."""
        rng = np.random.default_rng(7)
        for _ in range(1000):
            sigma2 = rng.uniform(0.01, 10.0)
            c = rng.uniform(0.0, 2.0)
            s = rng.uniform(1e-3, 10.0)
            gaussian = inverse_rate(SubGaussianPsi(sigma2), s)
            assert gaussian.gap == pytest.approx(math.sqrt(2 * sigma2 * s), rel=1e-8)
            gamma = inverse_rate(SubGammaPsi(sigma2, c), s)
            assert gamma.gap == pytest.approx(math.sqrt(2 * sigma2 * s) + c * s, rel=1e-8)

    def test_stationarity_residual(self):
        """Residual of the stationarity condition below 1e-10 max(1, s)."""
        for p in (0.05, 0.3, 0.5, 0.9):
            # interior optimum needs s below -ln(1 - p)
            for fraction in (0.01, 0.3, 0.9):
                s = -fraction * math.log1p(-p)
                result = inverse_rate(BernoulliCGF(p), s)
                assert not result.at_boundary
                assert abs(result.residual) <= 1e-10 * max(1.0, s)

    def test_bernoulli_saturates_at_risk(self):
        """Above -ln(1 - p) the gap tends to p at the domain edge."""
        result = inverse_rate(BernoulliCGF(0.3), 1.0)
        assert result.at_boundary
        assert result.gap == pytest.approx(0.3, abs=1e-9)

    def test_minimizes_the_objective(self):
        """No lambda on a grid beats lambda*."""
        rate = BernoulliCGF(0.3)
        s = 0.1
        result = inverse_rate(rate, s)
        grid = np.linspace(0.01, 30.0, 3000)
        objective = (s + rate.eval(grid)) / grid
        assert result.gap <= objective.min() + 1e-12

    def test_zero_level(self):
        """s = 0 gives gap 0 at lambda* = 0."""
        result = inverse_rate(SubGaussianPsi(1.0), 0.0)
        assert result.gap == 0.0
        assert result.lambda_star == 0.0

    def test_degenerate_rate(self):
        """Identically zero psi gives gap 0 with an infinite optimizer."""
        result = inverse_rate(SubGaussianPsi(0.0), 0.3)
        assert result.gap == 0.0
        assert math.isinf(result.lambda_star)

    def test_mixture(self):
        """Mixture of sub-Gaussians inverts like the averaged variance."""
        mix = expected_rate([0.5, 0.5], [SubGaussianPsi(0.1), SubGaussianPsi(0.4)])
        assert inverse_rate(mix, 0.2).gap == pytest.approx(math.sqrt(2 * 0.25 * 0.2), rel=1e-9)

    def test_negative_level(self):
        """Negative s raises TransformError."""
        with pytest.raises(TransformError):
            inverse_rate(SubGaussianPsi(1.0), -0.1)

    @pytest.mark.parametrize("rate", [
        BernoulliCGF(0.3),
        ScaledBernoulliCGF(0.2, 3.0),
        SubGaussianPsi(0.25),
        SubGammaPsi(1.0, 0.5),
        L2Psi(1.0, 2.0),
        LogSobolevPsi(0.01, 839.0),
        empirical_cgf([0.0, 0.5, 1.0, 3.0, 3.0]),
        expected_rate([0.4, 0.6], [BernoulliCGF(0.2), SubGammaPsi(0.5, 0.25)]),
    ], ids=lambda rate: rate.kind)
    def test_gap_nondecreasing_in_level(self, rate):
        """The gap never decreases along 100 levels s in [0, 5]."""
        gaps = np.array([inverse_rate(rate, float(s)).gap for s in np.linspace(0.0, 5.0, 100)])
        assert gaps[0] == 0.0
        assert np.all(np.isfinite(gaps))
        assert np.all(np.diff(gaps) >= -1e-9 * np.maximum(1.0, gaps[1:]))


class TestGoldenSection:
    """One-dimensional bracketed minimization."""

    def test_quadratic(self):
        """Minimum of (x - 2)^2 on [0, 5]."""
        result = golden_section_min(lambda x: (x - 2.0) ** 2, 0.0, 5.0)
        assert result.x == pytest.approx(2.0, abs=1e-5)
        assert result.converged
        assert len(result.trace) >= result.iterations

    def test_empty_bracket(self):
        """lo >= hi is rejected."""
        with pytest.raises(TransformError):
            golden_section_min(lambda x: x, 1.0, 1.0)


class TestBinaryKl:
    """Binary kl and its upper inverse."""

    def test_values(self):
        """Direct evaluation."""
        assert binary_kl(0.3, 0.5) == pytest.approx(0.082283, abs=1e-6)
        assert binary_kl(0.1, 0.3) == pytest.approx(0.116322, abs=1e-6)
        assert binary_kl(0.4, 0.4) == 0.0

    def test_zero_log_zero(self):
        """0 ln 0 = 0 and kl(a, 0) = inf for a > 0."""
        assert binary_kl(0.0, 0.5) == pytest.approx(math.log(2.0))
        assert math.isinf(binary_kl(0.5, 0.0))

    def test_endpoints_and_log_form(self):
        """Both endpoints follow 0 ln 0 = 0; interior values match the log form."""
        assert binary_kl(1.0, 0.5) == pytest.approx(math.log(2.0))
        assert math.isinf(binary_kl(0.0, 1.0))
        assert binary_kl(0.0, 0.0) == 0.0
        for a in (0.05, 0.3, 0.7):
            for b in (0.1, 0.5, 0.95):
                expected = a * math.log(a / b) + (1 - a) * math.log((1 - a) / (1 - b))
                assert binary_kl(a, b) == pytest.approx(expected, rel=1e-12, abs=1e-15)
        assert isinstance(binary_kl(0.3, 0.5), float)

    def test_out_of_range(self):
        """Arguments outside [0, 1] are rejected."""
        with pytest.raises(TransformError):
            binary_kl(1.2, 0.5)

    def test_inverse_round_trip(self):
        """kl(a, inverse(a, s)) = s to 1e-8 on random queries."""
        rng = np.random.default_rng(11)
        for _ in range(1000):
            a = rng.uniform(0.0, 0.5)
            s = rng.uniform(1e-4, 1.0)
            b = binary_kl_upper_inverse(a, s)
            assert b >= a
            assert abs(binary_kl(a, b) - s) <= 1e-8

    def test_inverse_edge_cases(self):
        """s = 0, a = 0 closed form, a = 1 and s = inf."""
        assert binary_kl_upper_inverse(0.2, 0.0) == 0.2
        assert binary_kl_upper_inverse(0.0, 0.3) == pytest.approx(1.0 - math.exp(-0.3), rel=1e-14)
        assert binary_kl_upper_inverse(1.0, 0.3) == 1.0
        assert binary_kl_upper_inverse(0.2, math.inf) == 1.0

    def test_pinsker(self):
        """inverse(a, s) <= a + sqrt(s / 2)."""
        for a in np.linspace(0.0, 0.9, 10):
            for s in (1e-3, 0.01, 0.1, 0.5):
                assert binary_kl_upper_inverse(float(a), s) <= a + math.sqrt(s / 2.0) + 1e-12
