import math

import numpy as np
import pytest
from scipy import integrate

from goldnet import numcore as nc
from goldnet.errors import DegenerateInputError


def adaptive_simpson(f, a, b, tol=1e-12):
    """Independent oracle: recursive adaptive Simpson quadrature."""
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (rec(a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(m, b, fm, frm, fb, right, tol / 2.0, depth - 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = simpson(fa, fm, fb, a, b)
    return rec(a, b, fa, fm, fb, whole, tol, 48)


class TestRngStream:
    def test_same_seed_identical_sequence(self):
        a = nc.RngStream(42).complex_normal(0.5, 1000)
        b = nc.RngStream(42).complex_normal(0.5, 1000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = nc.RngStream(1).normal(1.0, 100)
        b = nc.RngStream(2).normal(1.0, 100)
        assert not np.array_equal(a, b)

    def test_spawn_streams_independent_and_reproducible(self):
        kids1 = nc.RngStream(7).spawn(3)
        kids2 = nc.RngStream(7).spawn(3)
        for k1, k2 in zip(kids1, kids2):
            assert np.array_equal(k1.normal(1.0, 16), k2.normal(1.0, 16))
        assert not np.array_equal(kids1[0].normal(1.0, 16),
                                  kids1[1].normal(1.0, 16))


class TestSampleComplexGaussian:
    def test_zero_variance_degenerate(self):
        z = nc.sample_complex_gaussian(nc.RngStream(0), 0.0, 10)
        assert np.all(z == 0)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            nc.sample_complex_gaussian(nc.RngStream(0), -1.0)

    def test_component_variance(self):
        # law-of-large-numbers oracle at fixed seed, 1e5 samples
        z = nc.sample_complex_gaussian(nc.RngStream(2024), 0.5, 100_000)
        assert 0.49 < z.real.var() < 0.51
        assert 0.49 < z.imag.var() < 0.51
        assert abs(np.mean(z.real * z.imag)) < 0.01


class TestRadialQuadrature:
    def test_gaussian_normalization(self):
        rule = nc.radial_rule()
        got = rule.integrate(lambda u: np.exp(-u * u))
        assert abs(got - math.sqrt(math.pi) / 2.0) < 1e-10

    def test_weight_normalization(self):
        assert abs(nc.integrate_radial(lambda u: np.ones_like(u)) - 1.0) < 1e-12

    def test_u_squared(self):
        assert abs(nc.integrate_radial(lambda u: u * u) - 1.0) < 1e-12

    @pytest.mark.parametrize("m", range(6))
    def test_odd_moments_match_gamma(self, m):
        # 2 int u^{2m+1} e^{-u^2} du = m!
        got = nc.integrate_radial(lambda u: u ** (2 * m))
        assert abs(got - math.factorial(m)) < 1e-10 * math.factorial(m)

    def test_tanh_squared_against_adaptive_simpson(self):
        got = nc.integrate_radial(lambda u: np.tanh(1.5 * u) ** 2)
        oracle = adaptive_simpson(
            lambda u: 2.0 * u * math.exp(-u * u) * math.tanh(1.5 * u) ** 2,
            0.0, 9.0, tol=1e-13)
        assert abs(got - oracle) / oracle < 1e-8

    def test_positive_weights(self):
        rule = nc.radial_rule()
        assert np.all(rule.weights > 0)

    def test_nan_integrand_raises(self):
        from goldnet.errors import NumericError
        with pytest.raises(NumericError):
            nc.integrate_radial(lambda u: np.where(u > 1, np.nan, u))


def i1_series_oracle(x, terms=40):
    """Independent power-series oracle sum (x/2)^{2m+1} / (m! (m+1)!)."""
    total = 0.0
    for m in range(terms):
        total += (x / 2.0) ** (2 * m + 1) / (math.factorial(m) * math.factorial(m + 1))
    return total


class TestBesselI1:
    def test_zero(self):
        assert nc.bessel_i1(0.0) == 0.0

    def test_series_oracle_at_one(self):
        assert abs(nc.bessel_i1(1.0) - i1_series_oracle(1.0)) < 1e-12

    def test_extended_precision_oracle_at_twenty(self):
        import mpmath as mp
        mp.mp.dps = 40
        ref = float(mp.besseli(1, 20))
        assert abs(nc.bessel_i1(20.0) - ref) / ref < 1e-10

    def test_crossover_region_against_oracle(self):
        import mpmath as mp
        mp.mp.dps = 40
        for x in np.linspace(12.0, 30.0, 40):
            ref = float(mp.besseli(1, float(x)) * mp.e ** (-float(x)))
            got = nc.bessel_i1_scaled(float(x))
            assert abs(got - ref) / ref < 1e-10

    def test_small_x_linearization(self):
        for x in (1e-8, 1e-6, 5e-5):
            assert abs(nc.bessel_i1(x) / (x / 2.0) - 1.0) < 1e-6

    def test_scaled_matches_plain(self):
        x = np.linspace(0.1, 30, 50)
        assert np.allclose(nc.bessel_i1_scaled(x), nc.bessel_i1(x) * np.exp(-x),
                           rtol=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            nc.bessel_i1(-1.0)
        with pytest.raises(ValueError):
            nc.bessel_i1(701.0)

    def test_scaled_large_argument_finite(self):
        got = nc.bessel_i1_scaled(5e4)
        assert 0 < got < 1


def svd_effective_rank(m):
    """Independent oracle via LAPACK SVD."""
    s = np.linalg.svd(np.asarray(m, float), compute_uv=False)
    s = s[s > 1e-12 * s.max()]
    p = s / s.sum()
    return math.exp(float(-(p * np.log(p)).sum()))


class TestEffectiveRank:
    def test_identity(self):
        for n in (2, 5, 9):
            assert abs(nc.effective_rank(np.eye(n)) - n) < 1e-12

    def test_rank_one(self):
        m = np.outer([1.0, -2.0, 3.0], [4.0, 5.0, 6.0, 7.0])
        assert nc.effective_rank(m) == 1.0

    def test_matches_svd_oracle(self, nprng):
        for _ in range(5):
            m = nprng.normal(size=(8, 8))
            assert abs(nc.effective_rank(m) - svd_effective_rank(m)) < 1e-8

    def test_orthogonal_invariance(self, nprng):
        m = nprng.normal(size=(10, 6))
        q, r = np.linalg.qr(nprng.normal(size=(10, 10)))
        o, r2 = np.linalg.qr(nprng.normal(size=(6, 6)))
        assert abs(nc.effective_rank(q @ m @ o) - nc.effective_rank(m)) < 1e-8

    def test_scale_invariance(self, nprng):
        m = nprng.normal(size=(7, 7))
        assert abs(nc.effective_rank(m) - nc.effective_rank(1e-20 * m)) < 1e-9

    def test_zero_matrix_rejected(self):
        with pytest.raises(DegenerateInputError):
            nc.effective_rank(np.zeros((4, 4)))

    def test_rectangular(self, nprng):
        m = nprng.normal(size=(12, 5))
        got = nc.effective_rank(m)
        assert 1.0 <= got <= 5.0
        assert abs(got - svd_effective_rank(m)) < 1e-8


class TestJacobiEigvals:
    def test_matches_lapack(self, nprng):
        a = nprng.normal(size=(9, 9))
        a = a + a.T
        got = nc.jacobi_eigvalsh(a)
        ref = np.linalg.eigvalsh(a)
        assert np.allclose(got, ref, atol=1e-10)

    def test_rejects_nonsymmetric(self, nprng):
        with pytest.raises(ValueError):
            nc.jacobi_eigvalsh(nprng.normal(size=(4, 4)))
