import math

import numpy as np
import pytest

from goldnet import ensemble as es
from goldnet import meanfield as mf
from goldnet.layers import CapsuleState, init_weights
from goldnet.numcore import RngStream


class TestInputScale:
    def test_layer_zero_order_parameter(self):
        v0 = es.input_scale_for_c0(0.5)
        got = mf.integrate_radial(lambda u: np.tanh(u * math.sqrt(v0)) ** 2)
        assert abs(got - 0.5) < 1e-10

    def test_empirical_matches_target(self):
        v0 = es.input_scale_for_c0(0.5)
        z = es.sample_input(RngStream(0), 4096, v0, 64)
        c0 = (np.tanh(np.abs(z)) ** 2).mean()
        assert abs(c0 - 0.5) < 5e-3


class TestCProfile:
    def test_depth_zero_is_input_second_moment(self):
        cfg = es.EnsembleConfig(n_networks=40, depth=0, n_capsules=256, seed=3)
        mean, stderr = es.measure_c_profile(cfg)
        assert mean.shape == (1,)
        assert abs(mean[0] - 0.5) < 4 * max(stderr[0], 1e-3)

    def test_unbroken_phase_collapse(self):
        cfg = es.EnsembleConfig(n_networks=10, depth=100, n_capsules=16,
                                sigma_w=0.5, seed=4)
        mean, _ = es.measure_c_profile(cfg)
        assert mean[-1] < 1e-6

    def test_monotone_decay_below_transition(self):
        cfg = es.EnsembleConfig(n_networks=100, depth=40, n_capsules=16,
                                sigma_w=0.9, seed=5)
        mean, stderr = es.measure_c_profile(cfg)
        diffs = np.diff(mean[5:])
        # allow one non-monotone step at noise scale
        bad = (diffs > 2 * stderr[6:]).sum()
        assert bad <= 1

    @pytest.mark.slow
    def test_broken_phase_matches_theory(self):
        cfg = es.EnsembleConfig(n_networks=200, depth=100, n_capsules=16,
                                sigma_w=1.5, seed=6)
        mean, _ = es.measure_c_profile(cfg)
        cstar = mf.c_fixed_point(mf.MeanFieldParams(1.5))
        assert abs(mean[-30:].mean() - cstar) < 0.05

    @pytest.mark.slow
    def test_finite_size_discrepancy_shrinks_with_width(self):
        cstar = mf.c_fixed_point(mf.MeanFieldParams(1.5))
        errs = []
        for n, nets in ((16, 120), (64, 60), (256, 30)):
            cfg = es.EnsembleConfig(n_networks=nets, depth=60, n_capsules=n,
                                    sigma_w=1.5, seed=7)
            mean, _ = es.measure_c_profile(cfg)
            errs.append(abs(mean[-20:].mean() - cstar))
        assert errs[2] < errs[0]


class TestTwoInputCovariance:
    def test_rotated_pair_phase_exact_every_layer(self):
        beta = 0.9
        cfg = es.EnsembleConfig(n_networks=3, depth=100, n_capsules=8,
                                sigma_w=1.5, seed=8)
        prof = es.measure_two_input_cov(cfg, ("rotated", beta))
        # sign convention: off-diagonal is phi(z_a) conj(phi(z_b))
        assert np.abs(prof.phi - (-beta)).max() <= 1e-10
        assert np.abs(prof.delta - prof.c).max() <= 1e-10

    def test_identical_pair(self):
        cfg = es.EnsembleConfig(n_networks=3, depth=50, n_capsules=8,
                                sigma_w=1.2, seed=9)
        prof = es.measure_two_input_cov(cfg, "identical")
        assert np.abs(prof.phi).max() <= 1e-12
        assert np.abs(prof.delta - prof.c).max() <= 1e-12

    def test_independent_pairs_decorrelate(self):
        cfg = es.EnsembleConfig(n_networks=10, depth=30, n_capsules=128,
                                sigma_w=1.5, seed=10, n_pairs=8)
        prof = es.measure_two_input_cov(cfg, "independent")
        assert prof.delta[0] < 0.2 * prof.c[0]
        assert prof.sq[-1] < prof.sq[0]

    @pytest.mark.slow
    def test_contraction_scale_matches_theory_small(self):
        # quick version of the acceptance measurement, N = 1024
        cfg = es.EnsembleConfig(n_networks=6, depth=60, n_capsules=1024,
                                sigma_w=1.5, seed=11, n_pairs=32)
        prof = es.measure_two_input_cov(cfg, "independent")
        xi_fit = es.fit_contraction_scale(prof, 20, 60)
        xi = mf.xi_delta(mf.MeanFieldParams(1.5))
        assert abs(xi_fit - xi) / xi < 0.2


class TestProtectedJacobian:
    def test_identity_holds_across_depths_and_phases(self):
        rng = RngStream(12)
        v0 = es.input_scale_for_c0(0.5)
        worst = 0.0
        for depth in (1, 10, 100):
            for sig in (0.5, 1.5):
                stack = [init_weights("u1", 8, 2, sig, "gaussian", rng)
                         for _ in range(depth)]
                z0 = es.sample_input(rng, 8, v0)
                rep = es.protected_jacobian(stack, z0)
                worst = max(worst, rep.identity_err)
        assert worst < 1e-8

    def test_depth_zero_returns_input(self):
        rng = RngStream(13)
        z0 = es.sample_input(rng, 6, 1.0)
        rep = es.protected_jacobian([], z0)
        assert np.abs(rep.j - z0).max() < 1e-12

    def test_generic_family_skips_identity(self):
        rng = RngStream(14)
        stack = [init_weights("generic", 6, 2, 1.5, "gaussian", rng)
                 for _ in range(5)]
        z0 = es.sample_input(rng, 6, 1.0)
        rep = es.protected_jacobian(stack, z0)
        assert rep.identity_err is None
        assert rep.d_l > 0

    def test_zero_input_rejected(self):
        with pytest.raises(ValueError):
            es.protected_jacobian([], np.zeros(4, dtype=complex))

    @pytest.mark.slow
    def test_dl_matches_pre_activation_theory(self):
        rng = RngStream(15)
        v0 = es.input_scale_for_c0(0.5)
        vals = []
        for _ in range(40):
            stack = [init_weights("u1", 16, 2, 1.5, "gaussian", rng)
                     for _ in range(30)]
            z0 = es.sample_input(rng, 16, v0)
            vals.append(es.protected_jacobian(stack, z0).d_l)
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
        target = 1.5 ** 2 * mf.c_fixed_point(mf.MeanFieldParams(1.5))
        assert abs(mean - target) < 3 * se


class TestRankProfile:
    def test_needs_batch(self):
        rng = RngStream(16)
        x = CapsuleState(rng.complex_normal(0.5, (1, 8)), 8, 2)
        with pytest.raises(ValueError):
            es.rank_profile([], x)

    def test_layer_zero_full_rank_batch(self):
        rng = RngStream(17)
        batch = CapsuleState(rng.complex_normal(0.5, (12, 8)), 8, 2)
        prof = es.rank_profile([], batch)
        assert prof.shape == (1,)
        assert prof[0] > 8.0  # 12 x 16 real matrix, nearly full rank

    def test_generic_collapse_vs_ok_floor(self):
        rng = RngStream(18)
        n, k, depth = 16, 4, 60
        gen = [init_weights("generic", n, k, 0.5, "gaussian", rng)
               for _ in range(depth)]
        batch = CapsuleState(rng.normal(1.0, (12, n, k)), n, k)
        gen_prof = es.rank_profile(gen, batch)
        assert gen_prof[-1] < 2.0
        okw = [init_weights("ok", n, k, 2.0, "gaussian", rng)
               for _ in range(depth)]
        ok_prof = es.rank_profile(okw, batch)
        assert ok_prof[-1] >= k - 0.5
