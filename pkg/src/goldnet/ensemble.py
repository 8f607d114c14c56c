"""Empirical ensembles of random networks vs. the mean-field theory.

Measurement conventions, fixed project-wide:

* The per-layer order parameter is the post-activation magnitude
  c^l = (1/N) sum_j |phi(z_j^l)|^2, averaged over the ensemble; layer 0 is
  set by the input distribution (capsules i.i.d. complex Gaussian, scaled so
  that c^0 equals a configurable target, 0.5 by default).
* The two-input covariance off-diagonal entry is
  O^l = (1/N) sum_j phi(z_{j,a}^l) conj(phi(z_{j,b}^l)); its phase is
  reported via atan2(Im O, Re O). Under this sign convention an input pair
  b = e^{i beta} a measures phi^l = -beta at every layer.
* The protected Jacobian component is J_i = sum_j (dz_i/dz_j z_j -
  dz_i/dz_j+ conj(z_j)), contracted with the layer-0 input; d_L is
  (1/N) sum |J_i|^2, whose ensemble mean sits at sigma_w^2 c* deep in the
  broken phase (the pre-activation second moment).

Finite-size note on Delta decay: for a single network, passing two inputs
through shared random weights injects spurious overlap of order c/sqrt(N)
per layer, which floors the decaying signal. The decay rate is therefore
estimated from the layer-to-layer contraction of the overlap pooled across
an ensemble of networks and input pairs, ratio = <Re O^{l+1} conj(O^l)> /
<|O^l|^2>, which is unbiased in the linear regime and uses every trajectory
fluctuation as signal; the phase-aligned mean trajectory is reported
alongside for plotting.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import (CapsuleState, EquivariantWeights, apply_layer, init_weights,
                     radial_profile, DEFAULT_EPS)
from .meanfield import integrate_radial
from .numcore import RngStream, effective_rank

__all__ = [
    "EnsembleConfig",
    "JacobianReport",
    "TwoInputProfile",
    "input_scale_for_c0",
    "sample_input",
    "measure_c_profile",
    "measure_two_input_cov",
    "fit_contraction_scale",
    "fit_aligned_decay",
    "protected_jacobian",
    "rank_profile",
    "random_network",
]


@dataclass(frozen=True)
class EnsembleConfig:
    """One ensemble of random networks at initialization."""

    n_networks: int
    depth: int
    n_capsules: int
    family: str = "u1"
    capsule_dim: int = 2
    sigma_w: float = 1.5
    input_c0: float = 0.5
    n_pairs: int = 1
    seed: int = 0
    eps: float = DEFAULT_EPS
    jobs: int = 1

    def __post_init__(self):
        for name in ("n_networks", "depth", "n_capsules", "n_pairs"):
            if getattr(self, name) < (0 if name == "depth" else 1):
                raise ValueError(f"{name} must be positive")


def input_scale_for_c0(c0: float) -> float:
    """Complex variance v with E tanh^2|z| = c0 for z ~ CN(0, v), by bisection."""
    if not 0.0 < c0 < 1.0:
        raise ValueError("layer-0 order parameter must lie in (0, 1)")

    def post(v):
        return integrate_radial(lambda u: np.tanh(u * math.sqrt(v)) ** 2)

    lo, hi = 1e-12, 1e-6
    while post(hi) < c0:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("no input scale reaches the requested c0")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if post(mid) < c0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_input(rng: RngStream, n: int, variance: float, size=None):
    shape = (n,) if size is None else (size, n)
    return rng.complex_normal(variance / 2.0, shape)


def random_network(cfg: EnsembleConfig, rng: RngStream) -> list[EquivariantWeights]:
    return [init_weights(cfg.family, cfg.n_capsules, cfg.capsule_dim,
                         cfg.sigma_w, "gaussian", rng)
            for _ in range(cfg.depth)]


def _post_mags2(z: np.ndarray, eps: float) -> np.ndarray:
    g = radial_profile(np.abs(z), eps)
    return np.abs(g * z) ** 2


def _c_profile_one(cfg: EnsembleConfig, seed_seq) -> np.ndarray:
    """Per-layer c^l of one random network on one random input."""
    rng = RngStream(cfg.seed, _seq=seed_seq)
    v0 = input_scale_for_c0(cfg.input_c0)
    z = sample_input(rng, cfg.n_capsules, v0)
    sd = cfg.sigma_w / math.sqrt(2 * cfg.n_capsules)
    out = np.empty(cfg.depth + 1)
    for layer in range(cfg.depth + 1):
        out[layer] = _post_mags2(z, cfg.eps).mean()
        if layer == cfg.depth:
            break
        w = rng.complex_normal(sd * sd, (cfg.n_capsules, cfg.n_capsules))
        g = radial_profile(np.abs(z), cfg.eps)
        z = w @ (g * z)
    return out


def _run_parallel(fn, cfg: EnsembleConfig, payloads):
    if cfg.jobs <= 1:
        return [fn(cfg, p) for p in payloads]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(fn, [cfg] * len(payloads), payloads))


def measure_c_profile(cfg: EnsembleConfig):
    """Per-layer mean and standard error of c^l over the ensemble.

    Only implemented for the u1 family (the mean-field recursion this is
    compared against is the U(1) one).
    """
    if cfg.family != "u1":
        raise ValueError("c-profile measurement is defined for the u1 family")
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_networks)
    rows = np.array(_run_parallel(_c_profile_one, cfg, seqs))
    mean = rows.mean(axis=0)
    stderr = rows.std(axis=0, ddof=1) / math.sqrt(cfg.n_networks) \
        if cfg.n_networks > 1 else np.zeros_like(mean)
    return mean, stderr


@dataclass
class TwoInputProfile:
    """Ensemble-averaged two-input covariance, layer by layer."""

    c: np.ndarray
    delta: np.ndarray
    phi: np.ndarray
    aligned_mean: np.ndarray      # phase-aligned mean overlap trajectory
    cross: np.ndarray             # <O^{l+1} conj(O^l)>, length depth
    sq: np.ndarray                # <|O^l|^2>, length depth + 1
    n_trajectories: int


def _pair_inputs(kind, rng: RngStream, n: int, n_pairs: int, v0: float):
    za = sample_input(rng, n, v0, n_pairs).T  # (n, P)
    if kind == "identical":
        zb = za.copy()
    elif kind == "independent":
        zb = sample_input(rng, n, v0, n_pairs).T
    elif isinstance(kind, tuple) and kind[0] == "rotated":
        zb = np.exp(1j * kind[1]) * za
    else:
        raise ValueError(f"unknown pair spec {kind!r}")
    return za, zb


def _two_input_one(cfg: EnsembleConfig, payload):
    kind, seq = payload
    rng = RngStream(cfg.seed, _seq=seq)
    n, P = cfg.n_capsules, cfg.n_pairs
    v0 = input_scale_for_c0(cfg.input_c0)
    za, zb = _pair_inputs(kind, rng, n, P, v0)
    sd = cfg.sigma_w / math.sqrt(2 * n)
    L = cfg.depth
    ov = np.empty((L + 1, P), complex)
    caa = np.empty((L + 1, P))
    cbb = np.empty((L + 1, P))
    a, b = za, zb
    for layer in range(L + 1):
        ga = radial_profile(np.abs(a), cfg.eps)
        gb = radial_profile(np.abs(b), cfg.eps)
        fa, fb = ga * a, gb * b
        ov[layer] = (fa * np.conj(fb)).sum(axis=0) / n
        caa[layer] = (np.abs(fa) ** 2).sum(axis=0) / n
        cbb[layer] = (np.abs(fb) ** 2).sum(axis=0) / n
        if layer == L:
            break
        w = rng.complex_normal(sd * sd, (n, n))
        a, b = w @ fa, w @ fb
    mag0 = np.abs(ov[0])
    safe = np.where(mag0 > 0, mag0, 1.0)
    phase0 = np.where(mag0 > 0, ov[0] / safe, 1.0 + 0j)
    return (ov.sum(axis=1), (caa + cbb).sum(axis=1) / 2.0,
            (ov * np.conj(phase0)[None, :]).sum(axis=1),
            (ov[1:] * np.conj(ov[:-1])).sum(axis=1),
            (np.abs(ov) ** 2).sum(axis=1))


def measure_two_input_cov(cfg: EnsembleConfig, pair="independent") -> TwoInputProfile:
    """Empirical (c, Delta, phi) per layer for a two-input ensemble.

    pair: "independent", "identical", or ("rotated", beta). Every network
    sees cfg.n_pairs freshly drawn pairs; the covariance entries are
    averaged over networks and pairs before Delta and phi are read off.
    """
    if cfg.family != "u1":
        raise ValueError("two-input covariance is defined for the u1 family")
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_networks)
    parts = _run_parallel(_two_input_one, cfg, [(pair, s) for s in seqs])
    n_traj = cfg.n_networks * cfg.n_pairs
    ov_sum = sum(p[0] for p in parts)
    c_sum = sum(p[1] for p in parts)
    aligned = sum(p[2] for p in parts)
    cross = sum(p[3] for p in parts)
    sq = sum(p[4] for p in parts)
    mean_ov = ov_sum / n_traj
    return TwoInputProfile(
        c=c_sum / n_traj,
        delta=np.abs(mean_ov),
        phi=np.arctan2(mean_ov.imag, mean_ov.real),
        aligned_mean=aligned / n_traj,
        cross=cross / n_traj,
        sq=sq / n_traj,
        n_trajectories=n_traj,
    )


def fit_contraction_scale(profile: TwoInputProfile, l0: int, l1: int) -> float:
    """Depth scale from the pooled layer-to-layer overlap contraction.

    ratio = sum_l Re<O^{l+1} conj(O^l)> / sum_l <|O^l|^2> over l in [l0, l1)
    estimates the linearized per-layer decay factor; returns -1/log(ratio).
    Unlike a fit to the mean trajectory, this pools the trajectory
    fluctuations themselves (which contract at the same rate), so it stays
    well conditioned when the mean has decayed into the shot-noise floor.
    """
    num = float(np.real(profile.cross[l0:l1]).sum())
    den = float(profile.sq[l0:l1].sum())
    ratio = num / den
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"contraction ratio {ratio} outside (0, 1)")
    return -1.0 / math.log(ratio)


def fit_aligned_decay(profile: TwoInputProfile, l0: int, l1: int) -> float:
    """Depth scale from an exponential fit to the phase-aligned mean overlap.

    Least squares in the linear domain (Re of the aligned mean), scanned
    over the decay rate; noisy when the mean is near the ensemble noise
    floor, reported for comparison with :func:`fit_contraction_scale`.
    """
    ls = np.arange(l0, l1 + 1)
    y = profile.aligned_mean[l0:l1 + 1].real

    def sse(rate):
        basis = np.exp(-rate * ls)
        amp = float(basis @ y) / float(basis @ basis)
        return float(((y - amp * basis) ** 2).sum())

    lo, hi = 1e-3, 1.0
    for _ in range(100):
        m1, m2 = lo + 0.382 * (hi - lo), lo + 0.618 * (hi - lo)
        if sse(m1) < sse(m2):
            hi = m2
        else:
            lo = m1
    return 1.0 / (0.5 * (lo + hi))


@dataclass
class JacobianReport:
    """Protected Jacobian component of one network on one input."""

    j: np.ndarray
    d_l: float
    z_l: np.ndarray
    identity_err: float | None


def _u1_forward_tensor(stack, z0: np.ndarray, eps: float):
    zin = ad.Tensor(z0)
    h = zin
    for w in stack:
        h = ad.linear(ad.radial(h, eps), ad.Tensor(w.matrix))
    return zin, h


def _generic_forward_tensor(stack, z0: np.ndarray, eps: float):
    zin = ad.Tensor(z0)
    h = zin
    for w in stack:
        flat = ad.real_view(ad.radial(h, eps))
        h = ad.complex_view(ad.linear(flat, ad.Tensor(w.matrix)))
    return zin, h


def protected_jacobian(stack: list[EquivariantWeights], z0: np.ndarray,
                       eps: float = DEFAULT_EPS) -> JacobianReport:
    """J_i from the full Wirtinger Jacobian contracted with the input.

    For a u1 bulk the per-sample identity J_i = z^L_i is checked and its
    max abs deviation reported; for the generic baseline the identity has no
    reason to hold and the check is skipped (identity_err None).
    """
    z0 = np.asarray(z0, dtype=complex)
    if not np.any(z0):
        raise ValueError("protected jacobian needs a nonzero input")
    family = stack[0].family if stack else "u1"
    if family == "u1":
        zin, out = _u1_forward_tensor(stack, z0, eps)
    elif family == "generic":
        if any(w.capsule_dim != 2 for w in stack):
            raise ValueError("complex view needs capsule_dim 2")
        zin, out = _generic_forward_tensor(stack, z0, eps)
    else:
        raise ValueError(f"protected jacobian undefined for family {family!r}")
    jz, jzbar = ad.jacobian_rows(out, zin)
    j = jz @ z0 - jzbar @ np.conj(z0)
    d_l = float((np.abs(j) ** 2).mean())
    err = float(np.abs(j - out.data).max()) if family == "u1" else None
    return JacobianReport(j=j, d_l=d_l, z_l=out.data.copy(), identity_err=err)


def rank_profile(stack: list[EquivariantWeights], batch: CapsuleState,
                 eps: float = DEFAULT_EPS) -> np.ndarray:
    """Effective rank of the (batch x real coordinates) state at each layer."""
    if batch.data.shape[0] < 2:
        raise ValueError("rank profile needs batch size > 1")
    state = batch
    out = [effective_rank(state.real_view())]
    for w in stack:
        state = apply_layer(w, state, eps)
        out.append(effective_rank(state.real_view()))
    return np.array(out)
