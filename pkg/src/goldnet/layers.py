"""Equivariant layer families: forward maps, group actions, initialization.

Conventions, fixed project-wide:

* A capsule is one irreducibly-transforming block of coordinates. For the
  u1/so2 families (capsule_dim == 2) states are stored as complex arrays of
  shape (..., N); for ok/generic with capsule_dim k != 2 they are real arrays
  of shape (..., N, k). The generic family with k == 2 also uses the complex
  storage so that it differs from u1 only in the linear map.
* The real flattening of a complex state is [Re z_1, Im z_1, Re z_2, ...]
  (capsule-major, 2 coordinates per capsule); a real (N, k) state flattens
  row-major to length N*k.
* so2 weights (w, u) with the antisymmetric epsilon fixed to [[0, 1], [-1, 0]]
  are equivalent to the complex matrix w - i u acting on z = x1 + i x2.
* A layer application is nonlinearity followed by the linear map,
  z' = W phi(z); there are no biases inside equivariant (or generic bulk)
  layers, since any constant offset would break the group commutation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .numcore import RngStream

__all__ = [
    "FAMILIES",
    "CapsuleState",
    "EquivariantWeights",
    "GroupElement",
    "radial_nonlinearity",
    "radial_profile",
    "apply_layer",
    "apply_so2_realform",
    "group_act",
    "init_weights",
    "so2_to_complex",
    "random_group_element",
    "save_weights",
    "load_weights",
    "save_arrays",
    "load_arrays",
    "DEFAULT_EPS",
]

FAMILIES = ("u1", "so2", "ok", "generic")
DEFAULT_EPS = 1e-8


@dataclass
class CapsuleState:
    """Activations of one layer: N capsules of internal dimension k."""

    data: np.ndarray
    n_capsules: int
    capsule_dim: int

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.capsule_dim == 2:
            if not np.iscomplexobj(self.data):
                raise ValueError("capsule_dim 2 states are stored as complex arrays")
            if self.data.shape[-1] != self.n_capsules:
                raise ValueError("state shape does not match n_capsules")
        else:
            if self.data.shape[-2:] != (self.n_capsules, self.capsule_dim):
                raise ValueError("state shape does not match (N, k)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite entries in capsule state")

    @property
    def real_coords(self) -> int:
        return self.n_capsules * self.capsule_dim

    def real_view(self) -> np.ndarray:
        """Flatten to real coordinates, capsule-major."""
        if self.capsule_dim == 2:
            parts = np.stack([self.data.real, self.data.imag], axis=-1)
            return parts.reshape(self.data.shape[:-1] + (2 * self.n_capsules,))
        return self.data.reshape(self.data.shape[:-2] + (self.real_coords,))


def _capsule_mags(data: np.ndarray, capsule_dim: int) -> np.ndarray:
    if capsule_dim == 2:
        return np.abs(data)
    return np.sqrt((data * data).sum(axis=-1))


def radial_profile(m: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Scalar gain g(m) = tanh(m) / (m + eps) applied to capsule magnitudes."""
    return np.tanh(m) / (m + eps)


def radial_nonlinearity(x: CapsuleState, eps: float = DEFAULT_EPS) -> CapsuleState:
    """Map each capsule's magnitude through tanh, preserving its direction."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = _capsule_mags(x.data, x.capsule_dim)
    g = radial_profile(m, eps)
    if x.capsule_dim == 2:
        out = g * x.data
    else:
        out = g[..., None] * x.data
    return CapsuleState(out, x.n_capsules, x.capsule_dim)


@dataclass
class EquivariantWeights:
    """Variant weight container for one internal layer.

    u1:      matrix -- complex (N, N)
    so2:     matrix -- real (N, N) pair stacked as (2, N, N) = (w, u)
    ok:      matrix -- real (N, N), applied as A (x) I_k
    generic: matrix -- real (N*k, N*k) on the flattened coordinates
    """

    family: str
    n_capsules: int
    capsule_dim: int
    matrix: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        n, k = self.n_capsules, self.capsule_dim
        m = self.matrix
        if self.family == "u1":
            ok_shape = m.shape == (n, n) and np.iscomplexobj(m)
        elif self.family == "so2":
            ok_shape = m.shape == (2, n, n) and not np.iscomplexobj(m)
        elif self.family == "ok":
            ok_shape = m.shape == (n, n) and not np.iscomplexobj(m)
        else:
            ok_shape = m.shape == (n * k, n * k) and not np.iscomplexobj(m)
        if not ok_shape:
            raise ValueError(f"bad weight shape {m.shape} for family {self.family}")
        if self.family in ("u1", "so2") and k != 2:
            raise ValueError("u1/so2 require capsule_dim 2")

    @property
    def n_parameters(self) -> int:
        """Trainable real scalar count (complex entries count twice)."""
        if self.family == "u1":
            return 2 * self.n_capsules ** 2
        return self.matrix.size


def so2_to_complex(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Complex matrix equivalent of the (w, u) real pair: w - i u."""
    return w - 1j * u


def apply_layer(weights: EquivariantWeights, x: CapsuleState,
                eps: float = DEFAULT_EPS) -> CapsuleState:
    """One internal layer: z' = W phi(z) for the layer's family."""
    if (x.n_capsules, x.capsule_dim) != (weights.n_capsules, weights.capsule_dim):
        raise ValueError("state/weight shape mismatch")
    phi = radial_nonlinearity(x, eps)
    fam = weights.family
    if fam == "u1":
        out = phi.data @ weights.matrix.T
    elif fam == "so2":
        wc = so2_to_complex(weights.matrix[0], weights.matrix[1])
        out = phi.data @ wc.T
    elif fam == "ok":
        # (..., N, k) contracted on the capsule index only
        out = np.einsum("ab,...bk->...ak", weights.matrix, phi.data)
    else:
        flat = CapsuleState(phi.data, x.n_capsules, x.capsule_dim).real_view()
        flat = flat @ weights.matrix.T
        out = _unflatten(flat, x.n_capsules, x.capsule_dim)
    return CapsuleState(out, x.n_capsules, x.capsule_dim)


def apply_so2_realform(weights: EquivariantWeights, x_real: np.ndarray,
                       eps: float = DEFAULT_EPS) -> np.ndarray:
    """Apply an so2 layer directly in the real (.., N, 2) basis.

    Exists to exercise the change-of-basis equivalence with the complex form;
    epsilon_{ab} is [[0, 1], [-1, 0]].
    """
    if weights.family != "so2":
        raise ValueError("expected so2 weights")
    m = np.sqrt((x_real * x_real).sum(axis=-1))
    g = radial_profile(m, eps)
    phi = g[..., None] * x_real
    w, u = weights.matrix[0], weights.matrix[1]
    eps_mat = np.array([[0.0, 1.0], [-1.0, 0.0]])
    # y_{a alpha} = sum_beta (w delta + u eps)_{ab} phi_{beta b}
    y = np.einsum("ab,...bk->...ak", w, phi)
    y += np.einsum("ab,...bk,kl->...al", u, phi, eps_mat.T)
    return y


def _unflatten(flat: np.ndarray, n: int, k: int) -> np.ndarray:
    if k == 2:
        parts = flat.reshape(flat.shape[:-1] + (n, 2))
        return parts[..., 0] + 1j * parts[..., 1]
    return flat.reshape(flat.shape[:-1] + (n, k))


@dataclass
class GroupElement:
    """A symmetry transformation: a phase for u1/so2, an orthogonal k x k
    matrix for ok."""

    family: str
    angle: float | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.family in ("u1", "so2"):
            if self.angle is None:
                raise ValueError("u1/so2 group element needs an angle")
        elif self.family == "ok":
            o = np.asarray(self.matrix, dtype=float)
            if o.ndim != 2 or o.shape[0] != o.shape[1]:
                raise ValueError("ok group element needs a square matrix")
            if np.abs(o.T @ o - np.eye(o.shape[0])).max() > 1e-12:
                raise ValueError("matrix is not orthogonal to 1e-12")
            self.matrix = o
        else:
            raise ValueError(f"no group action for family {self.family!r}")


def group_act(g: GroupElement, x: CapsuleState) -> CapsuleState:
    """Apply the representation to every capsule identically."""
    if g.family in ("u1", "so2"):
        if x.capsule_dim != 2:
            raise ValueError("phase rotation needs capsule_dim 2")
        out = np.exp(1j * g.angle) * x.data
    else:
        if g.matrix.shape[0] != x.capsule_dim:
            raise ValueError("group element/capsule dimension mismatch")
        out = np.einsum("ab,...nb->...na", g.matrix, x.data)
    return CapsuleState(out, x.n_capsules, x.capsule_dim)


def random_group_element(family: str, capsule_dim: int, rng: RngStream) -> GroupElement:
    """Haar-ish random element: uniform angle, or QR-orthogonalized Gaussian."""
    if family in ("u1", "so2"):
        return GroupElement(family, angle=float(rng.uniform(-np.pi, np.pi)))
    a = rng.normal(1.0, (capsule_dim, capsule_dim))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return GroupElement("ok", matrix=q)


def init_weights(family: str, n_capsules: int, capsule_dim: int,
                 sigma_w: float = 1.0, scheme: str = "gaussian",
                 rng: RngStream | None = None) -> EquivariantWeights:
    """Sample one layer's weights.

    gaussian: every real parameter of the flattened real representation has
    variance sigma_w^2 / fan_in, where fan_in counts real input coordinates
    feeding one real output coordinate (2N for u1/so2, N for ok's block
    matrix, N*k for generic). With this normalization the mean-field
    recursion c^{l+1} ~ sigma_w^2 c^l holds for every family and the
    symmetry-breaking transition sits at sigma_w = 1.

    identity: the exact identity map.

    uniform: every real parameter ~ U(-1/sqrt(N), 1/sqrt(N)) (fan of the
    capsule index; N*k for generic), the conventional recurrent default.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if family in ("u1", "so2") and capsule_dim != 2:
        raise ValueError("u1/so2 require capsule_dim 2")
    n, k = n_capsules, capsule_dim
    meta = {"scheme": scheme, "sigma_w": sigma_w,
            "seed": getattr(rng, "seed", None)}

    if scheme == "identity":
        if family == "u1":
            m = np.eye(n, dtype=complex)
        elif family == "so2":
            m = np.stack([np.eye(n), np.zeros((n, n))])
        elif family == "ok":
            m = np.eye(n)
        else:
            m = np.eye(n * k)
        return EquivariantWeights(family, n, k, m, meta)

    if rng is None:
        raise ValueError(f"scheme {scheme!r} needs an rng")

    if scheme == "gaussian":
        if sigma_w <= 0:
            raise ValueError("sigma_w must be positive for gaussian init")
        if family == "u1":
            m = rng.complex_normal(sigma_w ** 2 / (2 * n), (n, n))
        elif family == "so2":
            m = rng.normal(sigma_w / np.sqrt(2 * n), (2, n, n))
        elif family == "ok":
            m = rng.normal(sigma_w / np.sqrt(n), (n, n))
        else:
            m = rng.normal(sigma_w / np.sqrt(n * k), (n * k, n * k))
        return EquivariantWeights(family, n, k, m, meta)

    if scheme == "uniform":
        bound = 1.0 / np.sqrt(n)
        if family == "u1":
            m = (rng.uniform(-bound, bound, (n, n))
                 + 1j * rng.uniform(-bound, bound, (n, n)))
        elif family == "so2":
            m = rng.uniform(-bound, bound, (2, n, n))
        elif family == "ok":
            m = rng.uniform(-bound, bound, (n, n))
        else:
            bound = 1.0 / np.sqrt(n * k)
            m = rng.uniform(-bound, bound, (n * k, n * k))
        return EquivariantWeights(family, n, k, m, meta)

    raise ValueError(f"unknown init scheme {scheme!r}")


_MAGIC = b"GNW1"


def save_weights(path, stack: list[EquivariantWeights]) -> None:
    """Serialize a list of layers: JSON header + flat little-endian doubles.

    Complex matrices are stored as interleaved (re, im) doubles.
    """
    header = {"version": 1, "layers": []}
    blobs = []
    for w in stack:
        arr = np.ascontiguousarray(w.matrix)
        if np.iscomplexobj(arr):
            flat = np.empty(arr.size * 2)
            flat[0::2] = arr.real.ravel()
            flat[1::2] = arr.imag.ravel()
            kind = "complex"
        else:
            flat = arr.astype(float).ravel()
            kind = "real"
        blobs.append(flat.astype("<f8").tobytes())
        header["layers"].append({
            "family": w.family, "n": w.n_capsules, "k": w.capsule_dim,
            "kind": kind, "shape": list(arr.shape), "doubles": flat.size,
            **{key: w.meta.get(key) for key in ("scheme", "sigma_w", "seed")},
        })
    head = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_weights(path) -> list[EquivariantWeights]:
    from .errors import FormatError

    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise FormatError(f"bad weight-file magic {magic!r}", offset=0)
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        out = []
        for spec in header["layers"]:
            raw = fh.read(spec["doubles"] * 8)
            if len(raw) != spec["doubles"] * 8:
                raise FormatError("truncated weight file", offset=fh.tell())
            flat = np.frombuffer(raw, dtype="<f8")
            if spec["kind"] == "complex":
                arr = (flat[0::2] + 1j * flat[1::2]).reshape(spec["shape"])
            else:
                arr = flat.reshape(spec["shape"]).copy()
            meta = {key: spec.get(key) for key in ("scheme", "sigma_w", "seed")}
            out.append(EquivariantWeights(spec["family"], spec["n"], spec["k"],
                                          arr, meta))
    return out


_ARRAY_MAGIC = b"GNA1"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Named-array container in the same style: JSON header + LE doubles.

    Used for model checkpoints (cell parameters plus optimizer state);
    complex arrays are stored as interleaved (re, im) doubles.
    """
    header = {"meta": meta or {}, "arrays": []}
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if np.iscomplexobj(arr):
            flat = np.empty(arr.size * 2)
            flat[0::2] = arr.real.ravel()
            flat[1::2] = arr.imag.ravel()
            kind = "complex"
        else:
            flat = arr.astype(float).ravel()
            kind = "real"
        blobs.append(flat.astype("<f8").tobytes())
        header["arrays"].append({"name": name, "kind": kind,
                                 "shape": list(arr.shape), "doubles": flat.size})
    head = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_ARRAY_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    from .errors import FormatError

    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _ARRAY_MAGIC:
            raise FormatError(f"bad array-file magic {magic!r}", offset=0)
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for spec in header["arrays"]:
            raw = fh.read(spec["doubles"] * 8)
            if len(raw) != spec["doubles"] * 8:
                raise FormatError("truncated array file", offset=fh.tell())
            flat = np.frombuffer(raw, dtype="<f8")
            if spec["kind"] == "complex":
                arr = (flat[0::2] + 1j * flat[1::2]).reshape(spec["shape"])
            else:
                arr = flat.reshape(spec["shape"]).copy()
            arrays[spec["name"]] = arr
    return arrays, header["meta"]
