"""Topological-defect analysis of 2-D phase fields.

A plaquette's winding number is the sum of the four edge phase differences,
each wrapped to the principal branch (-pi, pi], divided by 2*pi and rounded
to the nearest integer. Interior edges cancel pairwise, so the sum of all
plaquette windings equals the winding of the outer boundary loop (a
discrete Stokes identity, exact in integers); on a field whose boundary
winding vanishes, positive and negative vortices therefore come in equal
numbers.

Phases are meaningless where the field magnitude vanishes; sites below a
configurable magnitude threshold can be masked, zeroing any plaquette that
touches them (the Stokes identity is stated for unmasked analysis).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PhaseField",
    "VortexMap",
    "phase_field_from_complex",
    "wrap_angle",
    "winding_numbers",
    "boundary_winding",
    "vortex_timeseries",
    "write_vortex_csv",
    "write_grid_dump",
]

LOW_MAGNITUDE = 1e-6


def wrap_angle(d):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(d, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass
class PhaseField:
    """Phase and magnitude grids of one channel at one timestep."""

    theta: np.ndarray
    magnitude: np.ndarray
    channel: int = 0
    timestep: int = 0

    def __post_init__(self):
        self.theta = wrap_angle(self.theta)
        self.magnitude = np.asarray(self.magnitude, dtype=float)
        if self.theta.shape != self.magnitude.shape or self.theta.ndim != 2:
            raise ValueError("theta and magnitude must be matching 2-D grids")
        if not np.all(np.isfinite(self.magnitude)):
            raise ValueError("non-finite magnitudes")


def phase_field_from_complex(grid: np.ndarray, channel: int = 0,
                             timestep: int = 0) -> PhaseField:
    grid = np.asarray(grid)
    return PhaseField(np.angle(grid), np.abs(grid), channel, timestep)


@dataclass
class VortexMap:
    """Integer winding per plaquette plus signed counts."""

    winding: np.ndarray
    n_plus: int
    n_minus: int
    n_large: int = 0        # |winding| > 1, only on non-smooth fields

    @property
    def net(self) -> int:
        return int(self.winding.sum())


def _plaquette_sums(theta: np.ndarray) -> np.ndarray:
    """Counterclockwise loop sums of wrapped edge differences (radians)."""
    right = wrap_angle(theta[:, 1:] - theta[:, :-1])      # (H, W-1)
    down = wrap_angle(theta[1:, :] - theta[:-1, :])       # (H-1, W)
    # loop: (i,j)->(i,j+1)->(i+1,j+1)->(i+1,j)->(i,j)
    return (right[:-1, :] + down[:, 1:] - right[1:, :] - down[:, :-1])


def winding_numbers(f: PhaseField, mask_low_magnitude: bool = True,
                    threshold: float = LOW_MAGNITUDE) -> VortexMap:
    """Per-plaquette winding; low-|h| sites optionally mask their plaquettes."""
    if f.theta.shape[0] < 2 or f.theta.shape[1] < 2:
        raise ValueError("winding needs a grid of at least 2x2")
    w = np.rint(_plaquette_sums(f.theta) / (2.0 * np.pi)).astype(int)
    if mask_low_magnitude:
        low = f.magnitude < threshold
        corners = low[:-1, :-1] | low[:-1, 1:] | low[1:, :-1] | low[1:, 1:]
        w = np.where(corners, 0, w)
    return VortexMap(
        winding=w,
        n_plus=int((w > 0).sum()),
        n_minus=int((w < 0).sum()),
        n_large=int((np.abs(w) > 1).sum()),
    )


def boundary_winding(f: PhaseField) -> int:
    """Winding of the outer boundary loop (counterclockwise)."""
    th = f.theta
    top = wrap_angle(th[0, 1:] - th[0, :-1]).sum()
    right = wrap_angle(th[1:, -1] - th[:-1, -1]).sum()
    bottom = -wrap_angle(th[-1, 1:] - th[-1, :-1]).sum()
    left = -wrap_angle(th[1:, 0] - th[:-1, 0]).sum()
    return int(np.rint((top + right + bottom + left) / (2.0 * np.pi)))


@dataclass
class VortexTimeseries:
    maps: list
    n_plus: np.ndarray
    n_minus: np.ndarray
    annihilations: list    # steps where both signed counts drop together


def vortex_timeseries(trajectory, channel: int = 0,
                      mask_low_magnitude: bool = True,
                      threshold: float = LOW_MAGNITUDE) -> VortexTimeseries:
    """Winding maps and signed vortex counts along a hidden-state rollout.

    trajectory: iterable of complex grids, either (H, W) or (C, H, W) per
    step (the channel argument selects one in the latter case).
    """
    maps, npl, nmi = [], [], []
    for t, grid in enumerate(trajectory):
        grid = np.asarray(grid)
        if grid.ndim == 3:
            grid = grid[channel]
        f = phase_field_from_complex(grid, channel, t)
        vm = winding_numbers(f, mask_low_magnitude, threshold)
        maps.append(vm)
        npl.append(vm.n_plus)
        nmi.append(vm.n_minus)
    npl, nmi = np.array(npl), np.array(nmi)
    ann = [t for t in range(1, len(npl))
           if npl[t] < npl[t - 1] and nmi[t] < nmi[t - 1]]
    return VortexTimeseries(maps, npl, nmi, ann)


def write_vortex_csv(path, series: VortexTimeseries) -> None:
    with open(path, "w") as fh:
        fh.write("t,n_plus,n_minus\n")
        for t, (a, b) in enumerate(zip(series.n_plus, series.n_minus)):
            fh.write(f"{t},{a},{b}\n")


def write_grid_dump(path, grids: np.ndarray, meta: dict | None = None) -> None:
    """Flat little-endian binary + JSON header, for external plotting."""
    import json
    import struct

    arr = np.ascontiguousarray(grids)
    if np.iscomplexobj(arr):
        flat = np.empty(arr.size * 2)
        flat[0::2] = arr.real.ravel()
        flat[1::2] = arr.imag.ravel()
        kind = "complex"
    else:
        flat = arr.astype(float).ravel()
        kind = "real"
    header = json.dumps({"shape": list(arr.shape), "kind": kind,
                         **(meta or {})}).encode()
    with open(path, "wb") as fh:
        fh.write(b"GNG1")
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(flat.astype("<f8").tobytes())
