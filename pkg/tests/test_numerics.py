"""Tests for the shared numerical layer."""
import math

import numpy as np
import pytest
from scipy import special, stats

from mesochain.numerics import (
    DEFAULT_QUADRATURE,
    QuadratureError,
    QuadratureSpec,
    RngStream,
    elliptic_K,
    gamma_moment,
    integrate_1d,
    integrate_2d_unit_square,
    log_gamma,
    sample_gamma,
)


def K_direct(m: float, n: int = 200_001) -> float:
    # composite Simpson on the defining integral; independent of the AGM path
    theta = np.linspace(0.0, math.pi / 2, n)
    y = 1.0 / np.sqrt(1.0 - (m * np.sin(theta)) ** 2)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((theta[1] - theta[0]) / 3.0 * (w @ y))


class TestEllipticK:
    def test_zero_modulus(self):
        assert elliptic_K(0.0) == pytest.approx(math.pi / 2, abs=1e-15)

    def test_half_sqrt_two(self):
        assert elliptic_K(1 / math.sqrt(2)) == pytest.approx(
            1.8540746773013719, rel=1e-13
        )

    def test_near_one_grows(self):
        assert elliptic_K(0.999999) > 7.0

    def test_against_direct_integration(self):
        # defining-integral agreement on the pinned modulus grid
        for m in np.arange(0.0, 0.95, 0.1):
            assert elliptic_K(float(m)) == pytest.approx(K_direct(float(m)), abs=1e-10)

    def test_against_scipy(self):
        # scipy takes the parameter m = k^2
        for k in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.9999]:
            assert elliptic_K(k) == pytest.approx(
                float(special.ellipk(k * k)), rel=1e-12
            )

    def test_domain(self):
        with pytest.raises(ValueError):
            elliptic_K(1.0)
        with pytest.raises(ValueError):
            elliptic_K(-0.1)


class TestLogGamma:
    def test_values(self):
        assert log_gamma(1.0) == 0.0
        assert log_gamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), rel=1e-15)
        assert log_gamma(7.0) == pytest.approx(math.log(720.0), rel=1e-14)

    def test_domain(self):
        with pytest.raises(ValueError):
            log_gamma(0.0)
        with pytest.raises(ValueError):
            log_gamma(-2.5)

    def test_gamma_moment(self):
        # E[X^p] for X ~ Gamma(a, 1)
        assert gamma_moment(1.5, 1.0) == pytest.approx(1.5, rel=1e-14)
        assert gamma_moment(1.0, 2.0) == pytest.approx(2.0, rel=1e-14)


class TestIntegrate1d:
    def test_polynomial(self):
        r = integrate_1d(lambda x: x * x, 0.0, 1.0)
        assert r.converged
        assert r.value == pytest.approx(1 / 3, abs=1e-14)

    def test_empty_interval(self):
        r = integrate_1d(lambda x: x, 2.0, 2.0)
        assert r.value == 0.0 and r.converged

    def test_reversed_interval(self):
        r = integrate_1d(lambda x: x * x, 1.0, 0.0)
        assert r.value == pytest.approx(-1 / 3, abs=1e-13)

    def test_interior_inverse_sqrt_singularity(self):
        r = integrate_1d(lambda x: np.abs(x) ** -0.5, -1.0, 1.0)
        assert r.converged
        assert r.value == pytest.approx(4.0, abs=5e-9)

    def test_explicit_split_point(self):
        r = integrate_1d(lambda x: np.abs(x) ** -0.5, -1.0, 1.0, points=[0.0])
        assert r.converged
        assert r.value == pytest.approx(4.0, abs=5e-9)

    def test_endpoint_log_singularity(self):
        r = integrate_1d(lambda x: np.log(x), 0.0, 1.0)
        assert r.converged
        assert r.value == pytest.approx(-1.0, abs=1e-9)

    def test_elliptic_weighted_singularity(self):
        # K(sqrt(x))/sqrt(x); oracle by substitution x = u^2
        from mesochain.numerics import _elliptic_K_array

        def f(x):
            x = np.asarray(x, float)
            return _elliptic_K_array(np.sqrt(x)) / np.sqrt(x)

        r = integrate_1d(f, 0.0, 1.0)
        oracle = 2.0 * integrate_1d(lambda u: _elliptic_K_array(np.asarray(u)), 0.0, 1.0).value
        assert r.converged
        assert r.value == pytest.approx(oracle, abs=2e-9)

    def test_scalar_only_integrand(self):
        r = integrate_1d(lambda x: math.sin(float(x)), 0.0, math.pi)
        assert r.converged
        assert r.value == pytest.approx(2.0, abs=1e-12)

    def test_nonconvergence_is_flagged(self):
        # starve the budget; the result must say so rather than lie
        spec = QuadratureSpec(abs_tol=1e-10, rel_tol=1e-10, max_subdivisions=8)
        r = integrate_1d(lambda x: np.abs(x - 0.123456789) ** -0.5, 0.0, 1.0, spec)
        assert not r.converged

    def test_pole_at_panel_node_raises_eventually(self):
        # non-integrable pole: must raise, not return a finite lie
        with pytest.raises(QuadratureError):
            integrate_1d(lambda x: 1.0 / np.abs(x), -1.0, 1.0).value


class TestIntegrate2d:
    def test_constant(self):
        r = integrate_2d_unit_square(lambda a, b: np.ones_like(np.asarray(b, float)))
        assert r.converged
        assert r.value == pytest.approx(1.0, abs=1e-12)

    def test_sqrt_min_all_four(self):
        def f(a, b):
            b = np.asarray(b, float)
            return np.sqrt(np.minimum(np.minimum(a, 1 - a), np.minimum(b, 1 - b)))

        r = integrate_2d_unit_square(
            f, singular_curves=("diagonal", "anti-diagonal", "midlines")
        )
        assert r.converged
        assert r.value == pytest.approx(4 * math.sqrt(2) / 15, abs=2e-9)

    def test_antisymmetric_cancels(self):
        def f(a, b):
            b = np.asarray(b, float)
            return (a - b) ** 3

        r = integrate_2d_unit_square(f, singular_curves=("diagonal",))
        assert abs(r.value) < 10 * DEFAULT_QUADRATURE.abs_tol

    def test_separable_oracle(self):
        def f(a, b):
            b = np.asarray(b, float)
            return math.sqrt(a) * b * b

        r = integrate_2d_unit_square(f)
        assert r.converged
        assert r.value == pytest.approx(2 / 9, abs=1e-9)

    def test_unknown_curve_rejected(self):
        with pytest.raises(ValueError):
            integrate_2d_unit_square(lambda a, b: 1.0, singular_curves=("ridge",))


class TestRngStream:
    def test_determinism(self):
        a = RngStream(seed=12345).generator.random(8)
        b = RngStream(seed=12345).generator.random(8)
        assert np.array_equal(a, b)

    def test_stream_separation(self):
        a = RngStream(seed=12345, stream_id=0).generator.random(8)
        b = RngStream(seed=12345, stream_id=1).generator.random(8)
        assert not np.array_equal(a, b)

    def test_substreams_reproducible_and_distinct(self):
        s = RngStream(seed=9)
        a1 = s.substream(4).generator.random(8)
        a2 = RngStream(seed=9).substream(4).generator.random(8)
        b = s.substream(5).generator.random(8)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)

    def test_gamma_sampler_distribution(self):
        # pinned: KS distance < 0.002 at one million draws
        rng = RngStream(seed=777)
        x = sample_gamma(1.5, 1.0, rng, size=1_000_000)
        d, _ = stats.kstest(x, "gamma", args=(1.5,))
        assert d < 0.002

    def test_gamma_scale(self):
        rng = RngStream(seed=5)
        x = sample_gamma(2.0, 3.0, rng, size=200_000)
        assert np.mean(x) == pytest.approx(6.0, rel=0.02)


class TestQuadratureSpec:
    def test_defaults(self):
        s = QuadratureSpec()
        assert s.abs_tol == 1e-10 and s.rel_tol == 1e-10
        assert s.max_subdivisions == 2**16 and s.rule_order == 15

    def test_validation(self):
        with pytest.raises(ValueError):
            QuadratureSpec(abs_tol=-1.0)
        with pytest.raises(ValueError):
            QuadratureSpec(rule_order=0)
