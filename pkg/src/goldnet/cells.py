"""Model assemblies: feedforward classifiers and recurrent cells.

All models expose ``params`` (name -> Tensor) plus a forward interface built
on the autodiff primitives. Equivariant cells carry no biases in their
symmetric parts (a constant offset would break the group commutation); the
general input embeddings and readouts do carry biases.

Initialization vocabulary (matching the recurrent experiments):

* recurrent init "identity" or "uniform" (U(-1/sqrt(N), 1/sqrt(N)));
  the classifier bulk instead uses the gaussian sigma_w^2/fan scaling that
  the mean-field theory is written for.
* encoder init "standard" (U(-1/sqrt(N), 1/sqrt(N))) or "lowvar"
  (N(0, variance 1e-3)); with "lowvar" on the copy task the read-in column
  for the blank token can be frozen to zero, preserving the hidden phase
  channel during the delay period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .layers import init_weights
from .numcore import RngStream

__all__ = [
    "NetworkSpec",
    "RecurrentCellSpec",
    "Classifier",
    "RecurrentModel",
    "make_cell",
]


@dataclass(frozen=True)
class NetworkSpec:
    """Feedforward classifier: embed -> L equivariant/generic layers -> affine."""

    family: str
    n_capsules: int
    depth: int
    input_dim: int
    output_dim: int
    capsule_dim: int = 2
    sigma_w: float = 1.5
    init_scheme: str = "gaussian"
    eps: float = 1e-8

    def __post_init__(self):
        if self.depth < 0 or min(self.n_capsules, self.input_dim,
                                 self.output_dim, self.capsule_dim) <= 0:
            raise ValueError("invalid network spec dimensions")


def _uniform(rng: RngStream, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, shape)


class Classifier:
    """Fully general input/output layers around an equivariant (or generic) bulk.

    Forward: x -> complex/capsule embedding (affine) -> L bulk layers of
    radial-then-linear -> radial -> flattened real affine readout. With
    depth 0 this is two affine maps around one radial nonlinearity.
    """

    def __init__(self, spec: NetworkSpec, rng: RngStream):
        self.spec = spec
        n, k, d = spec.n_capsules, spec.capsule_dim, spec.input_dim
        p: dict[str, ad.Tensor] = {}
        be = 1.0 / math.sqrt(d)
        if spec.family in ("u1", "generic") and k == 2:
            p["embed_re"] = ad.Tensor(_uniform(rng, be, (n, d)))
            p["embed_im"] = ad.Tensor(_uniform(rng, be, (n, d)))
            p["embed_b_re"] = ad.Tensor(np.zeros(n))
            p["embed_b_im"] = ad.Tensor(np.zeros(n))
        elif spec.family == "ok":
            p["embed"] = ad.Tensor(_uniform(rng, be, (n * k, d)))
            p["embed_b"] = ad.Tensor(np.zeros(n * k))
        else:
            raise ValueError(f"unsupported classifier family {spec.family!r}")
        for layer in range(spec.depth):
            w = init_weights(spec.family, n, k, spec.sigma_w, spec.init_scheme, rng)
            p[f"w{layer}"] = ad.Tensor(np.ascontiguousarray(w.matrix))
        br = 1.0 / math.sqrt(n * k)
        p["readout"] = ad.Tensor(_uniform(rng, br, (spec.output_dim, n * k)))
        p["readout_b"] = ad.Tensor(np.zeros(spec.output_dim))
        self.params = p

    def forward(self, x: np.ndarray) -> ad.Tensor:
        spec, p = self.spec, self.params
        xt = ad.Tensor(np.asarray(x, dtype=float))
        if spec.family == "ok":
            h = ad.linear(xt, p["embed"]) + p["embed_b"]
            h = ad.reshape(h, (x.shape[0], spec.n_capsules, spec.capsule_dim))
            for layer in range(spec.depth):
                h = ad.block_linear(ad.radial_blocks(h, spec.eps), p[f"w{layer}"])
            flat = ad.reshape(ad.radial_blocks(h, spec.eps),
                              (x.shape[0], spec.n_capsules * spec.capsule_dim))
        else:
            re = ad.linear(xt, p["embed_re"]) + p["embed_b_re"]
            im = ad.linear(xt, p["embed_im"]) + p["embed_b_im"]
            z = ad.complexify(re, im)
            for layer in range(spec.depth):
                if spec.family == "u1":
                    z = ad.linear(ad.radial(z, spec.eps), p[f"w{layer}"])
                else:
                    flat = ad.real_view(ad.radial(z, spec.eps))
                    z = ad.complex_view(ad.linear(flat, p[f"w{layer}"]))
            flat = ad.real_view(ad.radial(z, spec.eps))
        return ad.linear(flat, p["readout"]) + p["readout_b"]


@dataclass(frozen=True)
class RecurrentCellSpec:
    """One recurrent cell; gate fields apply to GRU kinds, grid fields to conv."""

    kind: str
    n_capsules: int
    input_dim: int
    output_dim: int
    capsule_dim: int = 2
    activation: str = "tanh"          # baseline cells: tanh | relu
    rec_init: str = "identity"        # identity | uniform
    encoder_init: str = "standard"    # standard | lowvar
    freeze_input_cols: tuple = ()     # encoder columns pinned to zero
    gate_bias_z: float = 2.0
    grid: tuple = ()                  # (channels, H, W) for conv2d_u1
    kernel_size: int = 3
    eps: float = 1e-8

    KINDS = ("rnn_generic", "rnn_u1", "rnn_ok", "gru_generic", "gru_u1",
             "conv2d_u1")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.kind == "conv2d_u1" and len(self.grid) != 3:
            raise ValueError("conv2d_u1 needs grid = (channels, H, W)")
        if self.kind.startswith("gru") or self.kind == "conv2d_u1":
            if self.activation not in ("tanh", "relu", "radial"):
                raise ValueError("bad activation")


def _encoder(rng: RngStream, spec: RecurrentCellSpec, rows: int) -> np.ndarray:
    if spec.encoder_init == "standard":
        e = _uniform(rng, 1.0 / math.sqrt(spec.n_capsules), (rows, spec.input_dim))
    elif spec.encoder_init == "lowvar":
        e = rng.normal(math.sqrt(1e-3), (rows, spec.input_dim))
    else:
        raise ValueError(f"unknown encoder init {spec.encoder_init!r}")
    for col in spec.freeze_input_cols:
        e[:, col] = 0.0
    return e


def _rec_matrix(rng: RngStream, spec: RecurrentCellSpec, n: int,
                complex_valued: bool) -> np.ndarray:
    if spec.rec_init == "identity":
        return np.eye(n, dtype=complex if complex_valued else float)
    if spec.rec_init == "uniform":
        b = 1.0 / math.sqrt(n)
        if complex_valued:
            return _uniform(rng, b, (n, n)) + 1j * _uniform(rng, b, (n, n))
        return _uniform(rng, b, (n, n))
    raise ValueError(f"unknown recurrent init {spec.rec_init!r}")


class RecurrentModel:
    """A recurrent cell plus its flattened-real affine readout."""

    def __init__(self, spec: RecurrentCellSpec, rng: RngStream):
        self.spec = spec
        n, d = spec.n_capsules, spec.input_dim
        p: dict[str, ad.Tensor] = {}
        kind = spec.kind
        if kind == "rnn_u1":
            p["e_re"] = ad.Tensor(_encoder(rng, spec, n))
            p["e_im"] = ad.Tensor(_encoder(rng, spec, n))
            p["w"] = ad.Tensor(_rec_matrix(rng, spec, n, True))
            width = 2 * n
        elif kind == "rnn_ok":
            k = spec.capsule_dim
            p["e"] = ad.Tensor(_encoder(rng, spec, n * k))
            p["a"] = ad.Tensor(_rec_matrix(rng, spec, n, False))
            width = n * k
        elif kind == "rnn_generic":
            p["w_x"] = ad.Tensor(_encoder(rng, spec, n))
            p["w_h"] = ad.Tensor(_rec_matrix(rng, spec, n, False))
            p["b"] = ad.Tensor(np.zeros(n))
            width = n
        elif kind == "gru_u1":
            p["e_re"] = ad.Tensor(_encoder(rng, spec, n))
            p["e_im"] = ad.Tensor(_encoder(rng, spec, n))
            p["w_h"] = ad.Tensor(_rec_matrix(rng, spec, n, True))
            bx = 1.0 / math.sqrt(n)
            for gate in ("r", "z"):
                p[f"w_x{gate}"] = ad.Tensor(_uniform(rng, bx, (n, d)))
                p[f"w_h{gate}"] = ad.Tensor(_rec_matrix(rng, spec, n, False))
            p["b_r"] = ad.Tensor(np.zeros(n))
            p["b_z"] = ad.Tensor(np.full(n, float(spec.gate_bias_z)))
            width = 2 * n
        elif kind == "gru_generic":
            bx = 1.0 / math.sqrt(n)
            for gate in ("r", "z"):
                p[f"w_x{gate}"] = ad.Tensor(_uniform(rng, bx, (n, d)))
                p[f"w_h{gate}"] = ad.Tensor(_rec_matrix(rng, spec, n, False))
            p["b_r"] = ad.Tensor(np.zeros(n))
            p["b_z"] = ad.Tensor(np.full(n, float(spec.gate_bias_z)))
            p["w_xn"] = ad.Tensor(_encoder(rng, spec, n))
            p["w_hn"] = ad.Tensor(_rec_matrix(rng, spec, n, False))
            p["b_xn"] = ad.Tensor(np.zeros(n))
            p["b_hn"] = ad.Tensor(np.zeros(n))
            width = n
        elif kind == "conv2d_u1":
            ch, gh, gw = spec.grid
            rows = ch * gh * gw
            p["e_re"] = ad.Tensor(_encoder(rng, spec, rows))
            p["e_im"] = ad.Tensor(_encoder(rng, spec, rows))
            ks = spec.kernel_size
            if spec.rec_init == "identity":
                kern = np.zeros((ch, ch, ks, ks), dtype=complex)
                for c in range(ch):
                    kern[c, c, ks // 2, ks // 2] = 1.0
            else:
                b = 1.0 / math.sqrt(ch * ks * ks)
                kern = (_uniform(rng, b, (ch, ch, ks, ks))
                        + 1j * _uniform(rng, b, (ch, ch, ks, ks)))
            p["kernel"] = ad.Tensor(kern)
            width = 2 * rows
        else:
            raise AssertionError(kind)
        br = 1.0 / math.sqrt(width)
        p["readout"] = ad.Tensor(_uniform(rng, br, (spec.output_dim, width)))
        p["readout_b"] = ad.Tensor(np.zeros(spec.output_dim))
        self.params = p

    # -- hidden state ------------------------------------------------------
    def init_state(self, batch: int) -> ad.Tensor:
        spec = self.spec
        kind = spec.kind
        if kind in ("rnn_u1", "gru_u1"):
            return ad.Tensor(np.zeros((batch, spec.n_capsules), dtype=complex))
        if kind == "rnn_ok":
            return ad.Tensor(np.zeros((batch, spec.n_capsules, spec.capsule_dim)))
        if kind == "conv2d_u1":
            ch, gh, gw = spec.grid
            return ad.Tensor(np.zeros((batch, ch, gh, gw), dtype=complex))
        return ad.Tensor(np.zeros((batch, spec.n_capsules)))

    def _embed(self, x: ad.Tensor) -> ad.Tensor:
        p = self.params
        return ad.complexify(ad.linear(x, p["e_re"]), ad.linear(x, p["e_im"]))

    def precompute(self, x_all: np.ndarray) -> dict:
        """Project a whole (batch, time, input_dim) block through the input
        maps in one shot; per-step work then only slices the results."""
        spec, p = self.spec, self.params
        xt = ad.Tensor(np.asarray(x_all, dtype=float))
        B, T = x_all.shape[0], x_all.shape[1]
        kind = spec.kind
        ctx: dict[str, ad.Tensor] = {}
        if kind in ("rnn_u1", "gru_u1", "conv2d_u1"):
            u = self._embed(xt)
            if kind == "conv2d_u1":
                ch, gh, gw = spec.grid
                u = ad.reshape(u, (B, T, ch, gh, gw))
            ctx["u"] = u
        if kind == "rnn_ok":
            ctx["u"] = ad.reshape(ad.linear(xt, p["e"]),
                                  (B, T, spec.n_capsules, spec.capsule_dim))
        if kind == "rnn_generic":
            ctx["u"] = ad.linear(xt, p["w_x"])
        if kind.startswith("gru"):
            ctx["gr"] = ad.linear(xt, p["w_xr"])
            ctx["gz"] = ad.linear(xt, p["w_xz"])
            if kind == "gru_generic":
                ctx["u"] = ad.linear(xt, p["w_xn"])
        return ctx

    def step_pre(self, h: ad.Tensor, ctx: dict | None, t: int) -> ad.Tensor:
        """One recurrent update; ctx None means autonomous (zero input)."""
        spec, p = self.spec, self.params

        def part(key):
            return None if ctx is None else ad.time_slice(ctx[key], t)

        kind = spec.kind
        if kind == "rnn_u1":
            pre = ad.linear(h, p["w"])
            u = part("u")
            return ad.radial(pre if u is None else u + pre, spec.eps)
        if kind == "rnn_ok":
            pre = ad.block_linear(h, p["a"])
            u = part("u")
            return ad.radial_blocks(pre if u is None else u + pre, spec.eps)
        if kind == "rnn_generic":
            pre = ad.linear(h, p["w_h"]) + p["b"]
            u = part("u")
            if u is not None:
                pre = u + pre
            return ad.tanh(pre) if spec.activation == "tanh" else ad.relu(pre)
        if kind == "gru_u1":
            hm = ad.magnitude(h)
            r = ad.linear(hm, p["w_hr"]) + p["b_r"]
            z = ad.linear(hm, p["w_hz"]) + p["b_z"]
            if ctx is not None:
                r = part("gr") + r
                z = part("gz") + z
            r, z = ad.sigmoid(r), ad.sigmoid(z)
            cand_pre = ad.linear(ad.mul(r, h), p["w_h"])
            u = part("u")
            cand = ad.radial(cand_pre if u is None else u + cand_pre, spec.eps)
            return ad.mul(z, h) + ad.mul(1.0 - z, cand)
        if kind == "gru_generic":
            r = ad.linear(h, p["w_hr"]) + p["b_r"]
            z = ad.linear(h, p["w_hz"]) + p["b_z"]
            if ctx is not None:
                r = part("gr") + r
                z = part("gz") + z
            r, z = ad.sigmoid(r), ad.sigmoid(z)
            cand_pre = ad.mul(r, ad.linear(h, p["w_hn"]) + p["b_hn"]) + p["b_xn"]
            u = part("u")
            if u is not None:
                cand_pre = u + cand_pre
            cand = ad.relu(cand_pre) if spec.activation == "relu" else ad.tanh(cand_pre)
            return ad.mul(z, h) + ad.mul(1.0 - z, cand)
        if kind == "conv2d_u1":
            pre = ad.conv2d(h, p["kernel"])
            u = part("u")
            return ad.radial(pre if u is None else u + pre, spec.eps)
        raise AssertionError(kind)

    def step(self, h: ad.Tensor, x: ad.Tensor | None) -> ad.Tensor:
        """One recurrent update from a raw input vector (None: zero input)."""
        if x is None:
            return self.step_pre(h, None, 0)
        ctx = self.precompute(x.data[:, None, :] if isinstance(x, ad.Tensor)
                              else np.asarray(x)[:, None, :])
        return self.step_pre(h, ctx, 0)

    def unroll(self, x_all: np.ndarray, h0: ad.Tensor | None = None) -> ad.Tensor:
        """Run the whole sequence; returns hidden states (batch, time, ...)."""
        ctx = self.precompute(x_all)
        h = self.init_state(x_all.shape[0]) if h0 is None else h0
        states = []
        for t in range(x_all.shape[1]):
            h = self.step_pre(h, ctx, t)
            states.append(h)
        return ad.stack_time(states)

    def readout(self, h: ad.Tensor) -> ad.Tensor:
        """Flattened-real affine map; accepts one state or a stacked unroll."""
        spec, p = self.spec, self.params
        kind = spec.kind
        if kind in ("rnn_u1", "gru_u1"):
            flat = ad.real_view(h)
        elif kind == "conv2d_u1":
            lead = 2 if h.data.ndim == 5 else 1
            flat = ad.real_view(ad.reshape(h, h.shape[:lead] + (-1,)))
        elif kind == "rnn_ok":
            lead = 2 if h.data.ndim == 4 else 1
            flat = ad.reshape(h, h.shape[:lead] + (-1,))
        else:
            flat = h
        return ad.linear(flat, p["readout"]) + p["readout_b"]

    def frozen_columns(self) -> list[tuple[str, int]]:
        """(param name, column) pairs pinned to zero throughout training."""
        out = []
        names = [n for n in ("e_re", "e_im", "w_x", "e", "w_xn") if n in self.params]
        for col in self.spec.freeze_input_cols:
            out.extend((nm, col) for nm in names)
        return out


def make_cell(spec: RecurrentCellSpec, seed: int) -> RecurrentModel:
    return RecurrentModel(spec, RngStream(seed))
