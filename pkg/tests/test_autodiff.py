import numpy as np
import pytest

from goldnet import autodiff as ad
from conftest import grad_check


def weighted_sum(t, weights):
    return ad.sum_(ad.mul(t, ad.Tensor(weights)))


def weighted_abs2(t, weights):
    return ad.sum_(ad.mul(ad.abs2(t), ad.Tensor(weights)))


class TestPrimitiveGradients:
    """Every primitive against central differences at random points."""

    def test_add_mul_broadcast(self, nprng):
        a = nprng.normal(size=(4, 5))
        b = nprng.normal(size=(5,))
        r = nprng.normal(size=(4, 5))
        grad_check(lambda ts: weighted_sum(ad.mul(ts[0] + ts[1], ts[0]), r),
                   [a, b], nprng)

    def test_real_linear(self, nprng):
        x, w = nprng.normal(size=(3, 6)), nprng.normal(size=(4, 6))
        r = nprng.normal(size=(3, 4))
        grad_check(lambda ts: weighted_sum(ad.linear(ts[0], ts[1]), r),
                   [x, w], nprng)

    def test_complex_linear(self, nprng):
        x = nprng.normal(size=(3, 5)) + 1j * nprng.normal(size=(3, 5))
        w = nprng.normal(size=(4, 5)) + 1j * nprng.normal(size=(4, 5))
        r = nprng.normal(size=(3, 4))
        grad_check(lambda ts: weighted_abs2(ad.linear(ts[0], ts[1]), r),
                   [x, w], nprng)

    def test_complex_mul(self, nprng):
        a = nprng.normal(size=(6,)) + 1j * nprng.normal(size=(6,))
        b = nprng.normal(size=(6,)) + 1j * nprng.normal(size=(6,))
        r = nprng.normal(size=(6,))
        grad_check(lambda ts: weighted_abs2(ad.mul(ts[0], ts[1]), r),
                   [a, b], nprng)

    def test_real_times_complex_mul(self, nprng):
        gate = nprng.uniform(0.1, 0.9, size=(6,))
        h = nprng.normal(size=(6,)) + 1j * nprng.normal(size=(6,))
        r = nprng.normal(size=(6,))
        grad_check(lambda ts: weighted_abs2(ad.mul(ts[0], ts[1]), r),
                   [gate, h], nprng)

    def test_radial(self, nprng):
        z = nprng.normal(size=(4, 6)) + 1j * nprng.normal(size=(4, 6))
        r = nprng.normal(size=(4, 6))
        grad_check(lambda ts: weighted_abs2(ad.radial(ts[0]), r), [z], nprng)

    def test_radial_blocks(self, nprng):
        x = nprng.normal(size=(3, 5, 4))
        r = nprng.normal(size=(3, 5, 4))
        grad_check(lambda ts: weighted_sum(ad.radial_blocks(ts[0]), r), [x], nprng)

    def test_block_linear(self, nprng):
        x, a = nprng.normal(size=(2, 5, 3)), nprng.normal(size=(5, 5))
        r = nprng.normal(size=(2, 5, 3))
        grad_check(lambda ts: weighted_sum(ad.block_linear(ts[0], ts[1]), r),
                   [x, a], nprng)

    def test_conv2d_complex(self, nprng):
        h = nprng.normal(size=(2, 2, 5, 5)) + 1j * nprng.normal(size=(2, 2, 5, 5))
        k = nprng.normal(size=(2, 2, 3, 3)) + 1j * nprng.normal(size=(2, 2, 3, 3))
        r = nprng.normal(size=(2, 2, 5, 5))
        grad_check(lambda ts: weighted_abs2(ad.conv2d(ts[0], ts[1]), r),
                   [h, k], nprng, n_points=8)

    def test_sigmoid_tanh_relu(self, nprng):
        x = nprng.normal(size=(5, 5))
        r = nprng.normal(size=(5, 5))
        grad_check(lambda ts: weighted_sum(ad.sigmoid(ts[0]), r), [x], nprng)
        grad_check(lambda ts: weighted_sum(ad.tanh(ts[0]), r), [x], nprng)
        xr = x + np.sign(x) * 0.2  # keep away from the relu kink
        grad_check(lambda ts: weighted_sum(ad.relu(ts[0]), r), [xr], nprng)

    def test_magnitude(self, nprng):
        z = nprng.normal(size=(7,)) + 1j * nprng.normal(size=(7,))
        r = nprng.normal(size=(7,))
        grad_check(lambda ts: weighted_sum(ad.magnitude(ts[0]), r), [z], nprng)

    def test_complexify_and_views(self, nprng):
        re, im = nprng.normal(size=(3, 4)), nprng.normal(size=(3, 4))
        r = nprng.normal(size=(3, 8))
        grad_check(lambda ts: weighted_sum(
            ad.real_view(ad.complexify(ts[0], ts[1])), r), [re, im], nprng)
        x = nprng.normal(size=(3, 8))
        r2 = nprng.normal(size=(3, 4))
        grad_check(lambda ts: weighted_abs2(ad.complex_view(ts[0]), r2),
                   [x], nprng)

    def test_reshape_slice_stack(self, nprng):
        x = nprng.normal(size=(2, 4, 3))
        r = nprng.normal(size=(2, 4, 3))

        def build(ts):
            parts = [ad.tanh(ad.time_slice(ts[0], t)) for t in range(4)]
            return weighted_sum(ad.reshape(ad.stack_time(parts), (2, 4, 3)), r)

        grad_check(build, [x], nprng)

    def test_softmax_xent(self, nprng):
        logits = nprng.normal(size=(9, 5))
        labels = nprng.integers(0, 5, 9)
        grad_check(lambda ts: ad.softmax_xent(ts[0], labels), [logits], nprng)

    def test_mean_sum(self, nprng):
        x = nprng.normal(size=(4, 4))
        grad_check(lambda ts: ad.mean(ad.mul(ts[0], ts[0])), [x], nprng)


class TestBackwardContract:
    def test_quadratic_form_gradient(self):
        z = np.array([1.0 + 2.0j, -0.5 + 0.25j])
        t = ad.Tensor(z.copy())
        loss = ad.sum_(ad.abs2(t))
        ad.backward(loss)
        assert np.allclose(t.grad, 2.0 * z)  # d|z|^2 = (2 Re, 2 Im) packed

    def test_non_scalar_loss_rejected(self):
        t = ad.Tensor(np.ones(3))
        with pytest.raises(ValueError):
            ad.backward(ad.tanh(t))

    def test_backward_deterministic(self, nprng):
        w = nprng.normal(size=(6, 6)) + 1j * nprng.normal(size=(6, 6))
        z = nprng.normal(size=(2, 6)) + 1j * nprng.normal(size=(2, 6))

        def run():
            wt, zt = ad.Tensor(w.copy()), ad.Tensor(z.copy())
            loss = ad.sum_(ad.abs2(ad.linear(ad.radial(zt), wt)))
            ad.backward(loss)
            return wt.grad.copy()

        assert np.array_equal(run(), run())

    def test_gradient_set_shapes(self, nprng):
        w = ad.Tensor(nprng.normal(size=(3, 3)))
        unused = ad.Tensor(nprng.normal(size=(2,)))
        loss = ad.mean(ad.mul(w, w))
        ad.backward(loss)
        gs = ad.gradient_set({"w": w, "unused": unused})
        assert gs["w"].shape == (3, 3)
        assert np.all(gs["unused"] == 0)

    def test_deep_chain_finite_in_broken_phase(self):
        # 100 layers at sigma_w = 1.5, N = 16: gradients stay finite
        from goldnet.numcore import RngStream
        rng = RngStream(55)
        n, depth, sig = 16, 100, 1.5
        zt = ad.Tensor(rng.complex_normal(0.5, (1, n)))
        h = zt
        ws = []
        for _ in range(depth):
            w = ad.Tensor(rng.complex_normal(sig ** 2 / (2 * n), (n, n)))
            ws.append(w)
            h = ad.linear(ad.radial(h), w)
        loss = ad.mean(ad.abs2(h))
        ad.backward(loss)
        assert np.all(np.isfinite(zt.grad))
        assert all(np.all(np.isfinite(w.grad)) for w in ws)
        assert np.abs(zt.grad).max() > 0


class TestJacobianRows:
    def _u1_chain(self, rng, n, depth, sig=1.5):
        ws = [rng.complex_normal(sig ** 2 / (2 * n), (n, n)) for _ in range(depth)]
        z0 = rng.complex_normal(0.6, n)
        zin = ad.Tensor(z0.copy())
        h = zin
        for w in ws:
            h = ad.linear(ad.radial(h), ad.Tensor(w))
        return zin, h, z0, ws

    def test_zero_depth_identity(self):
        from goldnet.numcore import RngStream
        rng = RngStream(8)
        zin, out, z0, _ = self._u1_chain(rng, 5, 0)
        jz, jzbar = ad.jacobian_rows(out, zin)
        assert np.allclose(jz, np.eye(5))
        assert np.allclose(jzbar, 0)

    def test_three_layer_against_finite_differences(self):
        from goldnet.numcore import RngStream
        rng = RngStream(9)
        n = 5
        zin, out, z0, ws = self._u1_chain(rng, n, 3)
        jz, jzbar = ad.jacobian_rows(out, zin)

        def fwd(z):
            cur = z
            for w in ws:
                m = np.sqrt(cur.real ** 2 + cur.imag ** 2)
                cur = (np.tanh(m) / (m + 1e-8) * cur) @ w.T
            return cur

        h = 1e-6
        for i in range(n):
            for j in range(n):
                zp = z0.copy(); zp[j] += h
                d_re = (fwd(zp)[i] - fwd(z0)[i]) / h
                zp = z0.copy(); zp[j] += 1j * h
                d_im = (fwd(zp)[i] - fwd(z0)[i]) / h
                fd_jz = 0.5 * (d_re - 1j * d_im)
                fd_jzbar = 0.5 * (d_re + 1j * d_im)
                assert abs(fd_jz - jz[i, j]) < 1e-4 * max(1.0, abs(jz[i, j]))
                assert abs(fd_jzbar - jzbar[i, j]) < 1e-4 * max(1.0, abs(jzbar[i, j]))

    def test_single_layer_linear_regime(self):
        # tiny inputs: radial tanh is the identity, so J ~ W and Jbar ~ 0
        from goldnet.numcore import RngStream
        rng = RngStream(10)
        n = 4
        w = np.eye(n, dtype=complex)
        # |z| ~ 1e-3: tanh is linear and the eps regularizer (eps/|z| ~ 1e-5)
        # is below the check tolerance
        z0 = 1e-3 * rng.complex_normal(1.0, n)
        zin = ad.Tensor(z0.copy())
        out = ad.linear(ad.radial(zin), ad.Tensor(w))
        jz, jzbar = ad.jacobian_rows(out, zin)
        assert np.allclose(jz, np.eye(n), atol=1e-4)
        assert np.abs(jzbar).max() < 1e-4

    def test_wirtinger_helper(self):
        g = np.array([1.0 + 2.0j])
        dz, dzbar = ad.wirtinger(g)
        assert dz[0] == (1.0 - 2.0j) / 2.0
        assert dzbar[0] == (1.0 + 2.0j) / 2.0
