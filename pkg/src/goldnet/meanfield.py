"""Large-N covariance recursions for the phase-equivariant network.

Single-input order parameter: the layer map for the radial-tanh profile is

    c' = 2 int_0^inf du u e^{-u^2} tanh(u sigma_w sqrt(c))^2,

whose linearization c' = sigma_w^2 c puts the symmetry-breaking transition
at sigma_w = 1: below it the only fixed point is 0 (tanh^2(x) < x^2 makes
the map strictly contracting), above it a nontrivial c* appears.

Two-input covariance (c, Delta, phi): the relative phase phi is conserved
exactly layer to layer; the magnitude Delta evolves through a double radial
integral with a modified-Bessel kernel,

    Delta' = 4 (c^2 - Delta^2)/c^2 * int du1 du2 u1 u2 e^{-(u1^2+u2^2)}
             I1(2 u1 u2 Delta/c) tanh(u1/alpha) tanh(u2/alpha),

with alpha = sqrt(c) / (sigma_w sqrt(c^2 - Delta^2)). Near Delta -> c the
integrand's diagonal ridge e^{-2u^2(1 - Delta/c)} spreads like
1/sqrt(1 - Delta/c), so the integration domain is widened adaptively; the
exponentially scaled Bessel function keeps everything finite. The last
1e-4 sliver of Delta/c is bridged by interpolating to the exact
identical-inputs limit Delta' = c'.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, NumericError
from .numcore import QuadratureRule, bessel_i1_scaled, integrate_radial, radial_rule

__all__ = [
    "MeanFieldParams",
    "CovarianceState",
    "wrap_phase",
    "c_step",
    "c_fixed_point",
    "delta_phi_step",
    "delta_map_slope",
    "xi_delta",
    "phase_diagram",
    "write_phase_csv",
]

# Delta/c beyond which the two-replica integral is bridged to its exact limit
_RHO_DIRECT = 1.0 - 1e-4


def wrap_phase(phi: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(phi, 2.0 * math.pi)
    if w <= -math.pi:
        w = math.pi
    return w


@dataclass(frozen=True)
class MeanFieldParams:
    """Weight scale and quadrature rule; the activation is the radial tanh."""

    sigma_w: float
    rule: QuadratureRule = field(default_factory=radial_rule)

    def __post_init__(self):
        if self.sigma_w <= 0:
            raise ValueError("sigma_w must be positive")


@dataclass(frozen=True)
class CovarianceState:
    """(c, Delta, phi) of the two-replica covariance at one layer."""

    c: float
    delta: float
    phi: float

    def __post_init__(self):
        if not (self.c >= 0.0 and math.isfinite(self.c)):
            raise ValueError(f"c must be finite and >= 0, got {self.c}")
        if self.delta < 0.0:
            raise ValueError("delta must be >= 0")
        if self.delta > self.c * (1.0 + 1e-12) + 1e-300:
            raise ValueError("delta <= c violated (Cauchy-Schwarz)")
        object.__setattr__(self, "phi", wrap_phase(self.phi))


def c_step(c: float, p: MeanFieldParams) -> float:
    """One layer of the single-input order-parameter recursion."""
    if c < 0:
        raise ValueError("c must be >= 0")
    if c == 0.0:
        return 0.0
    amp = p.sigma_w * math.sqrt(c)
    return integrate_radial(lambda u: np.tanh(amp * u) ** 2, p.rule)


def c_fixed_point(p: MeanFieldParams, tol: float = 1e-12,
                  max_iter: int = 10_000) -> float:
    """Self-consistent c* with |c_step(c*) - c*| < tol.

    For sigma_w <= 1 the origin is the unique fixed point (tanh contracts),
    so 0 is returned exactly. Above the transition: damped iteration from
    c = 0.5, with a bisection fallback near criticality where the damped
    map's contraction rate degenerates.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if p.sigma_w <= 1.0:
        return 0.0
    c, lam = 0.5, 0.5
    for _ in range(max_iter):
        nxt = c_step(c, p)
        if abs(nxt - c) < tol:
            return c
        c = (1.0 - lam) * c + lam * nxt
    # bisection fallback on g(c) = c_step(c) - c; g(0+) > 0, g(1) < 0
    lo, hi = 1e-12, 1.0 - 1e-12
    glo = c_step(lo, p) - lo
    if glo <= 0:
        raise NumericError("fixed-point bracket failed near criticality")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = c_step(mid, p) - mid
        if abs(gm) < tol:
            return mid
        if gm > 0:
            lo = mid
        else:
            hi = mid
    raise NumericError("c fixed point did not converge")


def _panel_nodes(u_max: float, panel_width: float = 2.0,
                 nodes_per_panel: int = 16) -> tuple[np.ndarray, np.ndarray]:
    rule = radial_rule(u_max, panel_width, nodes_per_panel)
    return rule.nodes, rule.weights


def _delta_integral(c: float, rho: float, sigma_w: float) -> float:
    """The double radial integral of the Delta recursion at ratio rho = Delta/c."""
    inv_alpha = sigma_w * math.sqrt(c * (1.0 - rho * rho))
    u_max = max(8.0, math.sqrt(13.0 / (1.0 - rho)))
    nodes, weights = _panel_nodes(u_max)
    tn = np.tanh(inv_alpha * nodes)
    total = 0.0
    chunk = 256
    for start in range(0, nodes.size, chunk):
        a = nodes[start:start + chunk]
        wa = weights[start:start + chunk] * a * tn[start:start + chunk]
        x = (2.0 * rho) * np.outer(a, nodes)
        expo = np.exp(x - a[:, None] ** 2 - nodes[None, :] ** 2)
        ker = bessel_i1_scaled(x) * expo
        total += wa @ ker @ (weights * nodes * tn)
    return 4.0 * (1.0 - rho * rho) * total


def delta_phi_step(s: CovarianceState, p: MeanFieldParams) -> CovarianceState:
    """One layer of the two-replica recursion.

    phi is returned bit-identical; c advances by c_step; delta advances by
    the Bessel-kernel double integral. delta == c short-circuits to the
    exact identical-inputs limit delta' = c'.
    """
    if s.c <= 0.0:
        raise DegenerateInputError("two-replica step needs c > 0")
    if s.delta > s.c * (1.0 + 1e-12):
        raise ValueError("delta <= c violated")
    c_next = c_step(s.c, p)
    if s.delta == 0.0:
        return CovarianceState(c_next, 0.0, s.phi)
    rho = min(s.delta / s.c, 1.0)
    if rho >= 1.0:
        return CovarianceState(c_next, c_next, s.phi)
    if rho <= _RHO_DIRECT:
        d_next = _delta_integral(s.c, rho, p.sigma_w)
    else:
        # bridge the last sliver to the exact rho -> 1 limit
        d_at = _delta_integral(s.c, _RHO_DIRECT, p.sigma_w)
        t = (rho - _RHO_DIRECT) / (1.0 - _RHO_DIRECT)
        d_next = (1.0 - t) * d_at + t * c_next
    if not math.isfinite(d_next):
        raise NumericError("delta recursion produced a non-finite value")
    d_next = min(d_next, c_next)
    return CovarianceState(c_next, d_next, s.phi)


def delta_map_slope(p: MeanFieldParams, c_background: float | None = None) -> float:
    """d Delta'/d Delta at Delta = 0 on a fixed-c background.

    Linearizing the Bessel kernel I1(x) ~ x/2 factorizes the double integral
    into the square of a single radial moment:

        slope = (4 / c) * [ int_0^inf du u^2 e^{-u^2} tanh(u sigma_w sqrt(c)) ]^2,

    which tends to sigma_w^2 as c -> 0 (the unbroken-phase value).
    """
    c = c_fixed_point(p) if c_background is None else c_background
    if c == 0.0:
        return p.sigma_w ** 2
    amp = p.sigma_w * math.sqrt(c)
    u = p.rule.nodes
    moment = float(np.dot(p.rule.weights,
                          u * u * np.exp(-u * u) * np.tanh(amp * u)))
    return 4.0 / c * moment ** 2


def xi_delta(p: MeanFieldParams) -> float:
    """Depth scale of Delta decay: -1/log(slope) at the c* background.

    Diverges (returns inf) at the critical point sigma_w = 1 where the
    slope reaches 1.
    """
    slope = delta_map_slope(p)
    if not (0.0 < slope):
        raise NumericError("delta-map slope must be positive")
    if slope >= 1.0:
        return math.inf
    return -1.0 / math.log(slope)


def phase_diagram(sigma_grid, max_iter: int = 10_000) -> list[tuple[float, float, float]]:
    """(sigma_w, c*, xi_Delta) for each sigma in the grid."""
    grid = [float(s) for s in sigma_grid]
    if not grid:
        raise ValueError("sigma grid is empty")
    rows = []
    for sig in grid:
        p = MeanFieldParams(sig)
        cstar = c_fixed_point(p, max_iter=max_iter)
        rows.append((sig, cstar, xi_delta(p)))
    return rows


def write_phase_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("sigma_w,c_star,xi_delta\n")
        for sig, cstar, xi in rows:
            fh.write(f"{sig:.17g},{cstar:.17g},{xi:.17g}\n")
