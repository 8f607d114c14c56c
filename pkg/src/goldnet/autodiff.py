"""Reverse-mode differentiation over a fixed primitive set.

Define-by-run tape: every operation returns a Tensor holding its forward
value and a closure that propagates cotangents to its parents. The graph is
rebuilt on every forward pass; backward walks an iteratively-built
topological order (no recursion, so 784-step unrolls are fine). Cotangents
are accumulated lazily: the first contribution is donated or copied in,
later ones are added in place.

Complex arrays are differentiated as two real channels packed into one
complex array: for a complex tensor z, ``z.grad`` stores
dL/d(Re z) + i dL/d(Im z). Under this convention a holomorphic linear map
y = W x has the pullbacks G_x = conj(W)^T G_y and G_W = G_y conj(x)^T, and
the Wirtinger pair (dL/dz, dL/dz+) is conj(grad)/2 and grad/2. The
:func:`jacobian_rows` helper reconstructs full Wirtinger Jacobian blocks of
a complex output from two seeded backward sweeps per output component.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "gradient_set",
    "jacobian_rows",
    "wirtinger",
    "add",
    "mul",
    "linear",
    "block_linear",
    "conv2d",
    "radial",
    "radial_blocks",
    "sigmoid",
    "tanh",
    "relu",
    "magnitude",
    "abs2",
    "complexify",
    "real_view",
    "complex_view",
    "reshape",
    "time_slice",
    "stack_time",
    "sum_",
    "mean",
    "softmax_xent",
]


class Tensor:
    """One node of the tape: forward value, cotangent, pullback closure."""

    __slots__ = ("data", "grad", "name", "_backward", "_prev")

    def __init__(self, data, prev=(), name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.name = name
        self._backward = None
        self._prev = prev

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_complex(self):
        return np.iscomplexobj(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name})"

    # light arithmetic sugar; constants become untracked leaves
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(_wrap(other), _wrap(-1.0)))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, _wrap(-1.0)))


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


def _acc(t: Tensor, g: np.ndarray, fresh: bool) -> None:
    """Accumulate a cotangent; `fresh` means g is ours to keep (no aliasing)."""
    if t.grad is None:
        t.grad = g if fresh else g.copy()
    else:
        t.grad += g


def _ensure_grad(t: Tensor) -> np.ndarray:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


def _topo_order(root: Tensor) -> list[Tensor]:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._prev:
            if id(child) not in visited:
                stack.append((child, False))
    return order


class Tape:
    """Topologically ordered view of the graph below one root.

    Supports repeated backward sweeps with different seed cotangents, which
    is what per-row Jacobian extraction needs.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.order = _topo_order(root)

    def backward(self, seed=None):
        if seed is None:
            if self.root.data.ndim != 0:
                raise ValueError("backward without a seed needs a scalar root")
            seed = np.ones_like(self.root.data)
        for node in self.order:
            node.grad = None
        self.root.grad = np.array(seed, copy=True)
        for node in reversed(self.order):
            if node._backward is not None and node.grad is not None:
                node._backward()


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; leaves gradients on every node."""
    Tape(loss).backward()


def gradient_set(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Snapshot named parameter gradients (zeros if a param was unused)."""
    return {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for k, p in params.items()}


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    nd = grad.ndim - len(shape)
    if nd > 0:
        grad = grad.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _maybe_conj(x: np.ndarray) -> np.ndarray:
    return np.conj(x) if np.iscomplexobj(x) else x


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def _bw():
        g = out.grad
        for x in (a, b):
            gx = g.real if (np.iscomplexobj(g) and not x.is_complex) else g
            gr = _unbroadcast(gx, x.shape)
            _acc(x, gr, fresh=gr is not gx and gr is not g)

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; real*real, real*complex, complex*complex."""
    out = Tensor(a.data * b.data, (a, b))

    def _bw():
        g = out.grad
        for x, y in ((a, b), (b, a)):
            if out.is_complex and not x.is_complex:
                gx = g.real * y.data.real + g.imag * y.data.imag
            elif x.is_complex and y.is_complex:
                gx = g * np.conj(y.data)
            else:
                gx = g * y.data
            gr = _unbroadcast(gx, x.shape)
            _acc(x, gr, fresh=True)

    out._backward = _bw
    return out


def linear(x: Tensor, w: Tensor) -> Tensor:
    """y = x @ w.T with x (..., fan_in) and w (fan_out, fan_in).

    One rule covers real and complex: the pullbacks conjugate the stored
    values, which is a no-op skipped for real arrays.
    """
    out = Tensor(x.data @ w.data.T, (x, w))

    def _bw():
        g = out.grad
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        gw = g2.T @ _maybe_conj(x2)
        gx = g @ _maybe_conj(w.data)
        _acc(w, gw if w.is_complex else gw.real, fresh=True)
        _acc(x, gx if x.is_complex else gx.real, fresh=True)

    out._backward = _bw
    return out


def block_linear(x: Tensor, a: Tensor) -> Tensor:
    """y_{..., alpha, k} = sum_beta A_{alpha beta} x_{..., beta, k}.

    The block-identical map of the ok family: mixes capsules, never the
    coordinates inside one capsule. A is real (N, N).
    """
    out = Tensor(np.einsum("ab,...bk->...ak", a.data, x.data), (x, a))

    def _bw():
        g = out.grad
        g3 = g.reshape(-1, *g.shape[-2:])
        x3 = x.data.reshape(-1, *x.data.shape[-2:])
        ga = np.einsum("nak,nbk->ab", g3, _maybe_conj(x3))
        _acc(a, ga if a.is_complex else ga.real, fresh=True)
        _acc(x, np.einsum("ab,...ak->...bk", _maybe_conj(a.data), g), fresh=True)

    out._backward = _bw
    return out


def conv2d(h: Tensor, k: Tensor) -> Tensor:
    """Zero-padded 'same' 2-D convolution with channel mixing.

    h (B, C_in, H, W), k (C_out, C_in, kh, kw) with odd kh == kw. Complex or
    real, same rule (pullbacks conjugate stored values).
    """
    kh, kw = k.data.shape[-2:]
    ph, pw = kh // 2, kw // 2
    pad = np.pad(h.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(pad, (kh, kw), axis=(2, 3))
    out = Tensor(np.einsum("ocij,bchwij->bohw", k.data, win), (h, k))

    def _bw():
        g = out.grad
        gk = np.einsum("bohw,bchwij->ocij", g, _maybe_conj(win))
        _acc(k, gk if k.is_complex else gk.real, fresh=True)
        gpad = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gwin = np.lib.stride_tricks.sliding_window_view(gpad, (kh, kw), axis=(2, 3))
        kflip = _maybe_conj(k.data)[:, :, ::-1, ::-1]
        gh = np.einsum("ocij,bohwij->bchw", kflip, gwin)
        _acc(h, gh if h.is_complex else gh.real, fresh=True)

    out._backward = _bw
    return out


def _radial_gain_deriv(m: np.ndarray, t: np.ndarray, eps: float) -> np.ndarray:
    """d/dm [tanh(m)/(m+eps)] given t = tanh(m); series below m = 1e-6."""
    denom = m + eps
    deriv = ((1.0 - t * t) * denom - t) / (denom * denom)
    small = m < 1e-6
    if small.any():
        ms = m[small]
        deriv[small] = (eps * (1.0 - ms * ms) - (2.0 / 3.0) * ms ** 3) \
            / (ms + eps) ** 2
    return deriv


def radial(z: Tensor, eps: float = 1e-8) -> Tensor:
    """Radial tanh on complex capsules: z -> tanh(|z|)/(|z|+eps) * z."""
    zr, zi = z.data.real, z.data.imag
    m = np.sqrt(zr * zr + zi * zi)
    t = np.tanh(m)
    g = t / (m + eps)
    out = Tensor(g * z.data, (z,))

    def _bw():
        G = out.grad
        proj = zr * G.real + zi * G.imag
        gp = _radial_gain_deriv(m, t, eps)
        safe = np.where(m > 0.0, m, 1.0)
        scale = np.where(m > 0.0, gp * proj / safe, 0.0)
        _acc(z, g * G + scale * z.data, fresh=True)

    out._backward = _bw
    return out


def radial_blocks(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Radial tanh on real k-vector capsules (last axis is the capsule)."""
    m = np.sqrt((x.data * x.data).sum(axis=-1))
    t = np.tanh(m)
    g = t / (m + eps)
    out = Tensor(g[..., None] * x.data, (x,))

    def _bw():
        G = out.grad
        proj = (x.data * G).sum(axis=-1)
        gp = _radial_gain_deriv(m, t, eps)
        safe = np.where(m > 0.0, m, 1.0)
        scale = np.where(m > 0.0, gp * proj / safe, 0.0)
        _acc(x, g[..., None] * G + scale[..., None] * x.data, fresh=True)

    out._backward = _bw
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, (x,))

    def _bw():
        _acc(x, s * (1.0 - s) * out.grad, fresh=True)

    out._backward = _bw
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, (x,))

    def _bw():
        _acc(x, (1.0 - t * t) * out.grad, fresh=True)

    out._backward = _bw
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), (x,))

    def _bw():
        _acc(x, (x.data > 0.0) * out.grad, fresh=True)

    out._backward = _bw
    return out


def magnitude(z: Tensor) -> Tensor:
    """Elementwise |z|: the phase-invariant feature feeding GRU gates."""
    zr, zi = z.data.real, z.data.imag
    m = np.sqrt(zr * zr + zi * zi)
    out = Tensor(m, (z,))

    def _bw():
        g = out.grad
        safe = np.where(m > 0.0, m, 1.0)
        _acc(z, np.where(m > 0.0, g / safe, 0.0) * z.data, fresh=True)

    out._backward = _bw
    return out


def abs2(z: Tensor) -> Tensor:
    """Elementwise |z|^2 (real output)."""
    out = Tensor((z.data * np.conj(z.data)).real, (z,))

    def _bw():
        _acc(z, 2.0 * out.grad * z.data, fresh=True)

    out._backward = _bw
    return out


def complexify(re: Tensor, im: Tensor) -> Tensor:
    val = np.empty(np.broadcast_shapes(re.shape, im.shape), dtype=complex)
    val.real, val.imag = re.data, im.data
    out = Tensor(val, (re, im))

    def _bw():
        _acc(re, out.grad.real, fresh=False)
        _acc(im, out.grad.imag, fresh=False)

    out._backward = _bw
    return out


def real_view(z: Tensor) -> Tensor:
    """Complex (..., N) -> real (..., 2N), capsule-major interleaved."""
    shp = z.data.shape[:-1] + (2 * z.data.shape[-1],)
    flat = np.empty(shp)
    flat[..., 0::2] = z.data.real
    flat[..., 1::2] = z.data.imag
    out = Tensor(flat, (z,))

    def _bw():
        _acc(z, out.grad[..., 0::2] + 1j * out.grad[..., 1::2], fresh=True)

    out._backward = _bw
    return out


def complex_view(x: Tensor) -> Tensor:
    """Real (..., 2N) interleaved -> complex (..., N); inverse of real_view."""
    out = Tensor(x.data[..., 0::2] + 1j * x.data[..., 1::2], (x,))

    def _bw():
        g = np.empty_like(x.data)
        g[..., 0::2] = out.grad.real
        g[..., 1::2] = out.grad.imag
        _acc(x, g, fresh=True)

    out._backward = _bw
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), (x,))

    def _bw():
        _acc(x, out.grad.reshape(x.data.shape), fresh=False)

    out._backward = _bw
    return out


def time_slice(x: Tensor, t: int) -> Tensor:
    """Select step t from a (batch, time, ...) tensor."""
    out = Tensor(x.data[:, t], (x,))

    def _bw():
        _ensure_grad(x)[:, t] += out.grad

    out._backward = _bw
    return out


def stack_time(ts: list[Tensor]) -> Tensor:
    """Stack per-step tensors (batch, ...) into (batch, time, ...)."""
    out = Tensor(np.stack([t.data for t in ts], axis=1), tuple(ts))

    def _bw():
        g = out.grad
        for i, t in enumerate(ts):
            _acc(t, g[:, i], fresh=False)

    out._backward = _bw
    return out


def sum_(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), (x,))

    def _bw():
        _acc(x, out.grad * np.ones_like(x.data), fresh=True)

    out._backward = _bw
    return out


def mean(x: Tensor) -> Tensor:
    out = Tensor(x.data.mean(), (x,))

    def _bw():
        _acc(x, (out.grad / x.data.size) * np.ones_like(x.data), fresh=True)

    out._backward = _bw
    return out


def softmax_xent(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over rows; labels are class indices.

    logits (R, C) real; returns a scalar. Fused forward/backward keeps the
    tape small for long sequence unrolls.
    """
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=-1, keepdims=True)
    rows = np.arange(z.shape[0])
    logp_y = (z - zmax - np.log(sez))[rows, labels]
    out = Tensor(np.asarray(-logp_y.mean()), (logits,))

    def _bw():
        p = ez / sez
        p[rows, labels] -= 1.0
        p *= float(out.grad) / z.shape[0]
        _acc(logits, p, fresh=True)

    out._backward = _bw
    return out


def wirtinger(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Convert a packed complex cotangent to (dL/dz, dL/dz+)."""
    return np.conj(grad) / 2.0, grad / 2.0


def jacobian_rows(output: Tensor, inputs: Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Full Wirtinger Jacobian blocks (dz_out/dz_in, dz_out/dz_in+).

    output and inputs are complex tensors; rows index output components.
    Runs two seeded backward sweeps per output component.
    """
    tape = Tape(output)
    oshape = output.data.shape
    flat_n = output.data.size
    jz = np.empty((flat_n, inputs.data.size), dtype=complex)
    jzbar = np.empty_like(jz)
    for i in range(flat_n):
        seed = np.zeros(oshape, dtype=complex)
        seed.flat[i] = 1.0
        tape.backward(seed)
        g_re = inputs.grad.ravel().copy()
        seed.flat[i] = 1.0j
        tape.backward(seed)
        g_im = inputs.grad.ravel().copy()
        jz[i] = 0.5 * ((g_re.real + g_im.imag) + 1j * (g_im.real - g_re.imag))
        jzbar[i] = 0.5 * ((g_re.real - g_im.imag) + 1j * (g_im.real + g_re.imag))
    return jz, jzbar
