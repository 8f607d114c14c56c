import math

import numpy as np
import pytest

from goldnet import meanfield as mf
from goldnet.errors import DegenerateInputError


def mc_c_step(c, sigma_w, n_samples=10_000_000, seed=0):
    """Monte-Carlo oracle: E tanh^2|z| for z ~ CN(0, sigma_w^2 c).

    Returns (estimate, standard error)."""
    rng = np.random.default_rng(seed)
    scale = math.sqrt(sigma_w ** 2 * c / 2.0)
    out_sum, out_sq, n = 0.0, 0.0, 0
    for _ in range(n_samples // 1_000_000):
        z = rng.normal(0, scale, (1_000_000, 2))
        v = np.tanh(np.sqrt((z * z).sum(axis=1))) ** 2
        out_sum += v.sum()
        out_sq += (v * v).sum()
        n += v.size
    mean = out_sum / n
    se = math.sqrt((out_sq / n - mean ** 2) / n)
    return mean, se


def mc_delta_step(c, delta, phi, sigma_w, n_samples=4_000_000, seed=1):
    """Correlated-Gaussian oracle for the two-replica update.

    Draws (z1, z2) with E z_a conj(z_b) = sigma_w^2 * C_ab and averages
    phi(z1) conj(phi(z2)). Returns (complex estimate, standard error)."""
    rng = np.random.default_rng(seed)
    cov = sigma_w ** 2 * np.array([
        [c, delta * np.exp(1j * phi)],
        [delta * np.exp(-1j * phi), c]])
    chol = np.linalg.cholesky(cov)
    acc, acc_sq, n = 0.0 + 0.0j, 0.0, 0
    for _ in range(n_samples // 500_000):
        zeta = (rng.normal(0, math.sqrt(0.5), (500_000, 2))
                + 1j * rng.normal(0, math.sqrt(0.5), (500_000, 2)))
        z = zeta @ chol.T  # rows: E z z^dagger = cov
        m = np.abs(z)
        f = np.tanh(m) / (m + 1e-300) * z
        prod = f[:, 0] * np.conj(f[:, 1])
        acc += prod.sum()
        acc_sq += (np.abs(prod) ** 2).sum()
        n += prod.size
    mean = acc / n
    se = math.sqrt(max(0.0, acc_sq / n - abs(mean) ** 2) / n)
    return mean, se


class TestCStep:
    def test_zero_fixed_point(self):
        assert mf.c_step(0.0, mf.MeanFieldParams(1.5)) == 0.0

    def test_small_c_linearization(self):
        # c' = sigma_w^2 c + O(c^2)
        p = mf.MeanFieldParams(0.9)
        for c in (1e-8, 1e-6):
            assert abs(mf.c_step(c, p) / c - 0.81) < 1e-4

    @pytest.mark.slow
    def test_monte_carlo_oracle(self):
        p = mf.MeanFieldParams(1.5)
        got = mf.c_step(0.5, p)
        est, se = mc_c_step(0.5, 1.5)
        assert abs(got - est) < 3.0 * se

    def test_maps_unit_interval_into_itself_and_monotone(self):
        p = mf.MeanFieldParams(1.7)
        cs = np.linspace(0.0, 0.999, 40)
        outs = np.array([mf.c_step(float(c), p) for c in cs])
        assert np.all(outs >= 0.0) and np.all(outs < 1.0)
        assert np.all(np.diff(outs) > 0.0)


class TestCFixedPoint:
    def test_subcritical_returns_zero(self):
        for sig in (0.5, 0.8, 0.9, 0.95, 1.0):
            assert mf.c_fixed_point(mf.MeanFieldParams(sig)) == 0.0

    def test_supercritical_against_bisection_oracle(self):
        from scipy import integrate, optimize

        def c_step_oracle(c, sig):
            f = lambda u: 2 * u * math.exp(-u * u) * math.tanh(u * sig * math.sqrt(c)) ** 2
            return integrate.quad(f, 0, 9, epsabs=1e-13, epsrel=1e-13)[0]

        for sig in (1.2, 1.5, 2.0):
            got = mf.c_fixed_point(mf.MeanFieldParams(sig))
            ref = optimize.brentq(lambda c: c_step_oracle(c, sig) - c,
                                  1e-9, 0.999999, xtol=1e-13)
            assert abs(got - ref) < 1e-9
            assert abs(mf.c_step(got, mf.MeanFieldParams(sig)) - got) < 1e-10

    def test_near_critical_expansion(self):
        # c*(sigma -> 1) ~ (3/4)(sigma^2 - 1)
        sig2 = 1.08
        got = mf.c_fixed_point(mf.MeanFieldParams(math.sqrt(sig2)))
        assert abs(got / (0.75 * (sig2 - 1.0)) - 1.0) < 0.15


class TestDeltaPhiStep:
    def setup_method(self):
        self.p = mf.MeanFieldParams(1.5)
        self.cstar = mf.c_fixed_point(self.p)

    def test_phi_bit_identical(self):
        s = mf.CovarianceState(0.4, 0.2, 0.123456789)
        out = mf.delta_phi_step(s, self.p)
        assert out.phi == s.phi
        for _ in range(50):
            prev = out.phi
            out = mf.delta_phi_step(out, self.p)
            assert out.phi == prev

    def test_delta_zero_stays_zero(self):
        out = mf.delta_phi_step(mf.CovarianceState(0.5, 0.0, 1.0), self.p)
        assert out.delta == 0.0

    def test_identical_inputs_limit_exact(self):
        s = mf.CovarianceState(self.cstar, self.cstar, -0.3)
        out = mf.delta_phi_step(s, self.p)
        assert out.delta == out.c

    def test_limit_approaches_c_step(self):
        # Delta -> c continuously reproduces the single-input recursion
        ratios = []
        for rho in (0.99, 0.999, 0.9999):
            s = mf.CovarianceState(self.cstar, rho * self.cstar, 0.0)
            out = mf.delta_phi_step(s, self.p)
            ratios.append(out.delta / out.c)
        assert ratios == sorted(ratios)
        assert abs(ratios[-1] - 1.0) < 2e-4

    @pytest.mark.slow
    def test_monte_carlo_oracle_mid_delta(self):
        delta = 0.3 * self.cstar
        s = mf.CovarianceState(self.cstar, delta, 0.7)
        out = mf.delta_phi_step(s, self.p)
        est, se = mc_delta_step(self.cstar, delta, 0.7, 1.5)
        # phase conserved by the sampler too, magnitude within 3 SE
        assert abs(abs(est) - out.delta) < 3.0 * se
        assert abs(math.atan2(est.imag, est.real) - 0.7) < 4.0 * se / out.delta

    def test_delta_bounded_by_c(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            c = float(rng.uniform(0.05, 0.9))
            rho = float(rng.uniform(0.0, 0.995))
            out = mf.delta_phi_step(mf.CovarianceState(c, rho * c, 0.1), self.p)
            assert out.delta <= out.c + 1e-8

    def test_iteration_decays_to_zero(self):
        # Delta = 0 is the only stable fixed point on both sides; right at
        # the critical point the approach is algebraic rather than
        # exponential, hence the looser bound there
        for sig in (0.5, 1.0, 1.5, 2.5):
            p = mf.MeanFieldParams(sig)
            s = mf.CovarianceState(0.5, 0.45, 0.0)
            for _ in range(300):
                s = mf.delta_phi_step(s, p)
                if s.c < 1e-12:
                    break
            bound = 1e-2 if sig == 1.0 else 1e-3
            if s.c > 1e-12:
                assert s.delta < bound * 0.45

    def test_degenerate_and_invalid(self):
        with pytest.raises(DegenerateInputError):
            mf.delta_phi_step(mf.CovarianceState(0.0, 0.0, 0.0), self.p)
        with pytest.raises(ValueError):
            mf.CovarianceState(0.3, 0.4, 0.0)


class TestXiDelta:
    def test_unbroken_phase_analytic(self):
        got = mf.xi_delta(mf.MeanFieldParams(0.9))
        assert abs(got - (-1.0 / math.log(0.81))) < 1e-12

    def test_slope_matches_finite_difference_small_background(self):
        # instantaneous slope at a small-c background approaches sigma^2
        p = mf.MeanFieldParams(0.9)
        c0, d0 = 1e-4, 1e-9
        out = mf.delta_phi_step(mf.CovarianceState(c0, d0, 0.0), p)
        assert abs(out.delta / d0 - 0.81) < 1e-2

    def test_slope_matches_finite_difference_at_cstar(self):
        p = mf.MeanFieldParams(1.5)
        cstar = mf.c_fixed_point(p)
        slope = mf.delta_map_slope(p)
        d0 = 1e-7 * cstar
        fd = mf.delta_phi_step(mf.CovarianceState(cstar, d0, 0.0), p).delta / d0
        assert abs(slope - fd) / slope < 1e-8

    def test_divergence_at_criticality(self):
        assert mf.xi_delta(mf.MeanFieldParams(1.0)) == math.inf

    def test_regression_oracle_on_iterated_map(self):
        # fit log Delta over layers 20..60 of the actual recursion
        p = mf.MeanFieldParams(1.5)
        cstar = mf.c_fixed_point(p)
        s = mf.CovarianceState(cstar, 1e-3 * cstar, 0.0)
        logs = []
        for layer in range(61):
            logs.append(math.log(s.delta))
            s = mf.delta_phi_step(s, p)
        ls = np.arange(20, 61)
        slope = np.polyfit(ls, np.array(logs)[20:61], 1)[0]
        xi_fit = -1.0 / slope
        xi = mf.xi_delta(p)
        assert abs(xi_fit - xi) / xi < 0.01


class TestPhaseDiagram:
    def test_subcritical_rows_zero(self):
        rows = mf.phase_diagram([0.5, 0.8])
        assert all(r[1] == 0.0 for r in rows)

    def test_transition_location(self):
        rows = mf.phase_diagram([0.9, 0.99, 1.0, 1.01, 1.1, 1.3])
        cs = [r[1] for r in rows]
        assert cs[0] == cs[1] == cs[2] == 0.0
        assert cs[3] > 0.0
        assert all(b >= a for a, b in zip(cs, cs[1:]))  # monotone

    def test_near_critical_slope(self):
        sig2 = np.linspace(1.01, 1.1, 7)
        rows = mf.phase_diagram(list(np.sqrt(sig2)))
        cs = np.array([r[1] for r in rows])
        slope = np.polyfit(sig2 - 1.0, cs, 1)[0]
        assert abs(slope - 0.75) < 0.075

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            mf.phase_diagram([])

    def test_csv_output(self, tmp_path):
        rows = mf.phase_diagram([0.5, 1.5])
        path = tmp_path / "phase.csv"
        mf.write_phase_csv(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "sigma_w,c_star,xi_delta"
        assert len(lines) == 3
        back = float(lines[2].split(",")[1])
        assert abs(back - rows[1][1]) < 1e-16


class TestWrapPhase:
    def test_principal_branch(self):
        assert mf.wrap_phase(math.pi) == math.pi
        assert mf.wrap_phase(-math.pi) == math.pi
        assert abs(mf.wrap_phase(3 * math.pi + 0.1) - (-math.pi + 0.1)) < 1e-12
        for phi in np.linspace(-10, 10, 101):
            w = mf.wrap_phase(float(phi))
            assert -math.pi < w <= math.pi
            assert abs(math.remainder(w - phi, 2 * math.pi)) < 1e-9
