"""Projection of a phase-space histogram into observable space and the likelihood.

For a datum at projected radius ``r_p`` with LOS velocity ``v3``, a cell
``E in [E1, E2), L in [L1, L2)`` contributes

    eta_cell = f_cell * 2 * int_0^{x3max} A(x3) dx3,

where ``A`` is the area of the cell's image in the (v1, v2) plane at the
point ``(r_p, x3)`` and the factor 2 accounts for the far side of the line
of sight.  Measurement errors are folded in by Gauss-Hermite convolution
over v3, and the likelihood divides each eta by the predicted number of
tracers inside the data window so that the per-datum densities integrate
to one.

The isotropic path (:class:`IsotropicProjector`) is exact: the velocity
area is ``2 pi (E - eps)`` with ``eps = Phi + v3^2 / 2`` and the
line-of-sight integral of Phi over a constant-density shell has a closed
form.  :func:`cell_contribution` is the generic quadrature route used for
two-integral DFs and as a cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .model import (Configuration, DfMode, EnergyAngularMomentumGrid, KinematicDatum,
                    ModelError, PhaseDensityHistogram, data_arrays)
from .potential import (PotentialProfile, enclosed_mass, invert_one, outer_turning_radius,
                        shell_piece)


class LikelihoodError(ModelError):
    """Invalid likelihood settings."""


@dataclass(frozen=True)
class LikelihoodSettings:
    x3_nodes: int = 32
    error_nodes: int = 8
    mass_constraint: int = 0
    M0: float = 0.0
    deltaM0: float = 1.0
    R_E: float = 0.0
    # r_p window for the normalization; None means the largest datum r_p
    window_radius: float | None = None
    phi_nodes: int = 64
    radial_nodes: int = 16

    def __post_init__(self):
        if self.x3_nodes < 2 or self.error_nodes < 2:
            raise LikelihoodError("quadrature node counts must be >= 2")
        if self.mass_constraint not in (0, 1):
            raise LikelihoodError("mass_constraint flag must be 0 or 1")
        if self.mass_constraint == 1:
            if not self.deltaM0 > 0:
                raise LikelihoodError("deltaM0 must be > 0 when the mass constraint is on")
            if not self.R_E > 0:
                raise LikelihoodError("R_E must be > 0 when the mass constraint is on")

    def window_for(self, r_p) -> float:
        if self.window_radius is not None:
            return float(self.window_radius)
        r_p = np.asarray(r_p, dtype=float)
        if r_p.size == 0:
            raise LikelihoodError("cannot infer a data window from an empty dataset")
        return float(r_p.max())


def _cell_edges(grid: EnergyAngularMomentumGrid):
    """Energy edges with the floor pushed to -inf (values below it clamp to bin 0)."""
    e = np.array(grid.energy_edges, dtype=float)
    lower = e[:-1].copy()
    lower[0] = -np.inf
    return lower, e[1:]


# --------------------------------------------------------------------------
# velocity-plane area

def _interval_moment(lo, hi, a, b):
    """``int v dv`` over ``[lo, hi] intersected with [a, b]``."""
    lo = np.maximum(lo, a)
    hi = np.minimum(hi, b)
    return np.where(hi > lo, 0.5 * (hi * hi - lo * lo), 0.0)


def _below_l(c2, alpha, beta, gamma, a, b):
    """``int v dv`` over ``{v in [a, b] : L(v)^2 < c2}``, L^2 = alpha v^2 - 2 beta v + gamma."""
    if np.isinf(c2):
        return _interval_moment(a, b, a, b)
    disc = beta * beta - alpha * (gamma - c2)
    degenerate = alpha <= 1e-300
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        v_lo = (beta - sq) / alpha
        v_hi = (beta + sq) / alpha
    quad = np.where(disc > 0, _interval_moment(v_lo, v_hi, a, b), 0.0)
    const = np.where(gamma < c2, _interval_moment(a, b, a, b), 0.0)
    return np.where(degenerate, const, quad)


def velocity_plane_area(E1, E2, L1, L2, r_p, x3, v3, p, mode=DfMode.ISOTROPIC, n_phi: int = 64):
    """Area in the (v1, v2) plane of ``E in [E1, E2), L in [L1, L2)`` at fixed position and v3.

    Isotropic mode ignores L and uses the closed-form annulus.  Two-integral
    mode evaluates L = |r x v| at the full 3-D point ``(r_p, 0, x3)``; for
    each of ``n_phi`` midpoint angles the radial extent in speed is solved
    exactly (L^2 is quadratic in the in-plane speed).  ``x3`` may be an array.
    """
    x3 = np.asarray(x3, dtype=float)
    r = np.sqrt(r_p * r_p + x3 * x3)
    eps = p.evaluate(r) + 0.5 * v3 * v3
    k1 = np.maximum(2.0 * (E1 - eps), 0.0)
    k2 = np.maximum(2.0 * (E2 - eps), 0.0)
    if DfMode(mode) is DfMode.ISOTROPIC:
        return np.pi * (k2 - k1)
    a = np.sqrt(k1)[..., None]
    b = np.sqrt(k2)[..., None]
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    xx = x3[..., None]
    alpha = xx * xx + (r_p * np.sin(phi)) ** 2
    beta = xx * r_p * v3 * np.cos(phi)
    gamma = (r_p * v3) ** 2 + 0 * xx
    upper = _below_l(L2 * L2, alpha, beta, gamma, a, b)
    lower = _below_l(L1 * L1, alpha, beta, gamma, a, b) if L1 > 0 else 0.0
    return np.sum(upper - lower, axis=-1) * (2 * np.pi / n_phi)


def cell_contribution(cell, datum: KinematicDatum, p: PotentialProfile,
                      s: LikelihoodSettings, mode=DfMode.ISOTROPIC, v3: float | None = None) -> float:
    """``f_cell * 2 * int_0^{x3max} area dx3`` by Gauss-Legendre quadrature.

    ``cell`` is ``(f_cell, E1, E2, L1, L2)``.  ``x3max`` follows from the
    outer turning radius at E2 (taken at L = 0, which bounds every L in the
    cell) and the grid edge.  ``v3`` overrides the datum's velocity.
    """
    f_cell, E1, E2, L1, L2 = cell
    if f_cell == 0:
        return 0.0
    v3 = datum.v3 if v3 is None else v3
    rp = datum.r_p
    r0 = outer_turning_radius(p, E2, 0.0, v3)
    if r0 is None or r0 <= rp:
        return 0.0
    x3max = math.sqrt(r0 * r0 - rp * rp)
    t, w = np.polynomial.legendre.leggauss(s.x3_nodes)
    x3 = 0.5 * x3max * (t + 1.0)
    area = velocity_plane_area(E1, E2, L1, L2, rp, x3, v3, p, mode, s.phi_nodes)
    return float(f_cell * 2.0 * 0.5 * x3max * np.dot(w, area))


def _hermite(n: int):
    t, w = np.polynomial.hermite.hermgauss(n)
    return t * math.sqrt(2.0), w / math.sqrt(math.pi)


def datum_probability(datum: KinematicDatum, theta: Configuration, p: PotentialProfile,
                      s: LikelihoodSettings) -> float:
    """Unnormalized projected density at one datum, error-convolved over v3.

    Uses the exact isotropic path when the DF has a single L bin.
    """
    df = theta.df
    if df.mode is DfMode.ISOTROPIC:
        proj = IsotropicProjector([datum], df.grid, s, window_radius=max(datum.r_p, 1e-12))
        return float(proj.kernel(p)[0] @ df.values[0])
    lower, upper = _cell_edges(df.grid)
    l_edges = df.grid.l_edges
    if datum.sigma_v3 > 0:
        t, w = _hermite(s.error_nodes)
        nodes = datum.v3 + datum.sigma_v3 * t
    else:
        nodes, w = np.array([datum.v3]), np.array([1.0])
    total = 0.0
    for v3, wk in zip(nodes, w):
        acc = 0.0
        for il in range(df.grid.n_l):
            for je in range(df.grid.n_e):
                cell = (df.values[il, je], lower[je], upper[je], l_edges[il], l_edges[il + 1])
                acc += cell_contribution(cell, datum, p, s, DfMode.TWO_INTEGRAL, v3=v3)
        total += wk * acc
    return total


# --------------------------------------------------------------------------
# window normalization

def _shell_phase_volume(K1, K2, t1, t2):
    """Velocity volume with ``v^2 in [K1, K2)`` and tangential speed in ``[t1, t2)``."""
    def P(K, t):
        K = np.maximum(K, 0.0)
        rest = np.maximum(K - t * t, 0.0)
        return (2.0 / 3.0) * (K**1.5 - rest**1.5)
    return 2 * np.pi * (P(K2, t2) - P(K2, t1) - P(K1, t2) + P(K1, t1))


def _radial_nodes(p: PotentialProfile, window: float, n: int):
    """Gauss-Legendre nodes on [0, r_max], split at shell edges and the window."""
    breaks = np.unique(np.concatenate([p.grid.edges, [min(window, p.r_max)]]))
    t, w = np.polynomial.legendre.leggauss(n)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    r = (0.5 * (hi - lo) * (t + 1) + lo).ravel()
    wr = (0.5 * (hi - lo) * w).ravel()
    return r, wr


def _window_fraction(r, window):
    """Fraction of a sphere of radius r that projects inside r_p <= window."""
    with np.errstate(invalid="ignore", divide="ignore"):
        cap = 1.0 - np.sqrt(np.maximum(1.0 - (window / r) ** 2, 0.0))
    return np.where(r <= window, 1.0, cap)


def window_weights(grid: EnergyAngularMomentumGrid, p: PotentialProfile, window: float,
                   n_nodes: int = 16) -> np.ndarray:
    """Predicted tracer count in ``r_p <= window`` per cell at unit f, shape (n_l, n_e).

    Tracers are confined to ``r <= r_max`` of the potential grid, the same
    truncation the projection uses.
    """
    r, wr = _radial_nodes(p, window, n_nodes)
    phi = p.evaluate(r)
    lower, upper = _cell_edges(grid)
    K1 = 2.0 * (lower[:, None] - phi[None, :])
    K2 = 2.0 * (upper[:, None] - phi[None, :])
    geom = 4 * np.pi * r * r * _window_fraction(r, window) * wr
    out = np.empty((grid.n_l, grid.n_e))
    l_edges = grid.l_edges
    for il in range(grid.n_l):
        t1 = l_edges[il] / r
        t2 = l_edges[il + 1] / r
        vol = _shell_phase_volume(K1, K2, t1[None, :], t2[None, :])
        out[il] = vol @ geom
    return out


def normalize_to_window(df: PhaseDensityHistogram, p: PotentialProfile, window: float,
                        n_nodes: int = 16) -> PhaseDensityHistogram:
    """Scale ``df`` so the predicted density over the data window integrates to 1."""
    from .model import normalize_df
    return normalize_df(df, window_weights(df.grid, p, window, n_nodes))


# --------------------------------------------------------------------------
# fast isotropic projector

@numba.njit(cache=True)
def _isotropic_cells(rp, y, phi_edges, edges, a, b, c):
    """Per-(datum, v3 node, energy bin) exact cell integrals, before the factor 2.

    The cumulative quantity ``2 pi int (y - Phi) dx3`` over ``r <= min(R, r_max)``
    is formed for each upper energy edge and differenced along energy.
    """
    n, m, n_e = y.shape
    n_r = edges.size - 1
    r_max = edges[-1]
    out = np.zeros((n, m, n_e))
    table = np.zeros(n_r + 1)
    for i in range(n):
        rpi = rp[i]
        for q in range(n_r):
            lo = max(edges[q], rpi)
            hi = max(edges[q + 1], rpi)
            table[q + 1] = table[q] + shell_piece(a[q], b[q], c[q], rpi, lo, hi)
        for k in range(m):
            prev = 0.0
            for j in range(n_e):
                yy = y[i, k, j]
                if yy >= phi_edges[-1]:
                    R = r_max
                elif yy <= phi_edges[0]:
                    R = 0.0
                else:
                    R = invert_one(yy, phi_edges, edges, a, b, c, 1e-13, 100)
                g = 0.0
                if R > rpi:
                    q = np.searchsorted(edges, R, side="left") - 1
                    q = min(max(q, 0), n_r - 1)
                    r_in = edges[q]
                    lo = max(r_in, rpi)
                    base = table[q] if r_in > rpi else 0.0
                    integral = base + shell_piece(a[q], b[q], c[q], rpi, lo, max(R, lo))
                    g = 2.0 * np.pi * (yy * np.sqrt(R * R - rpi * rpi) - integral)
                g = max(g, prev)
                out[i, k, j] = g - prev
                prev = g
    return out


class IsotropicProjector:
    """Exact per-datum, per-energy-bin projection kernels for an isotropic DF.

    ``kernel(p) @ f`` gives the error-convolved, unnormalized eta for every
    datum; ``window_weights(p) @ f`` the matching normalization.  The
    kernel is linear in f and depends on the potential only, so one call per
    proposed potential serves any f on the same energy grid.
    """

    def __init__(self, data: Sequence[KinematicDatum], grid: EnergyAngularMomentumGrid,
                 settings: LikelihoodSettings, window_radius: float | None = None):
        if grid.mode is not DfMode.ISOTROPIC:
            raise ModelError("IsotropicProjector needs a single angular-momentum bin")
        self.grid = grid
        self.settings = settings
        rp, v3, sig = data_arrays(data)
        self.rp = rp
        self.n = rp.size
        self.window = (settings.window_for(rp) if window_radius is None else float(window_radius))
        if np.any(sig > 0):
            t, w = _hermite(settings.error_nodes)
        else:
            t, w = np.zeros(1), np.ones(1)
        self.node_weights = w
        v3n = v3[:, None] + sig[:, None] * t[None, :]
        self.y = grid.energy_edges[1:][None, None, :] - 0.5 * v3n[:, :, None] ** 2

    def kernel(self, p: PotentialProfile) -> np.ndarray:
        """Matrix of shape (n_data, n_e) with eta_i = kernel[i] @ f."""
        if self.n == 0:
            return np.zeros((0, self.grid.n_e))
        cell = _isotropic_cells(self.rp, self.y, p.phi_edges, p.grid.edges,
                                p._a, p._b, p._c)
        return 2.0 * np.einsum("ikj,k->ij", cell, self.node_weights)

    def window_weights(self, p: PotentialProfile) -> np.ndarray:
        return window_weights(self.grid, p, self.window, self.settings.radial_nodes)[0]

    def log_eta(self, f: np.ndarray, p: PotentialProfile) -> np.ndarray:
        """Normalized per-datum log densities; -inf where f gives no support."""
        f = np.asarray(f, dtype=float).reshape(-1)
        z = float(self.window_weights(p) @ f)
        eta = self.kernel(p) @ f
        if not z > 0:
            return np.full(self.n, -np.inf)
        with np.errstate(divide="ignore"):
            return np.log(eta) - math.log(z)


# --------------------------------------------------------------------------
# likelihoods

def sum_log(eta) -> float:
    """``sum(log eta)``, exactly rounded so data order cannot change a bit; -inf if any eta is 0."""
    eta = np.asarray(eta, dtype=float).ravel()
    if np.any(eta <= 0):
        return -math.inf
    return math.fsum(np.log(eta).tolist())


def _sum_logs(log_eta) -> float:
    log_eta = np.asarray(log_eta, dtype=float).ravel()
    if np.any(log_eta == -math.inf):
        return -math.inf
    return math.fsum(log_eta.tolist())


def log_likelihood(data: Sequence[KinematicDatum], theta: Configuration, p: PotentialProfile,
                   s: LikelihoodSettings, projector: IsotropicProjector | None = None) -> float:
    """Sum of log normalized projected densities; -inf flags zero support.

    Each eta is divided by the predicted tracer count in the data window,
    so the result does not depend on the overall scale of f.
    """
    df = theta.df
    if df.mode is DfMode.ISOTROPIC:
        proj = projector or IsotropicProjector(data, df.grid, s)
        return _sum_logs(proj.log_eta(df.values[0], p))
    rp, _, _ = data_arrays(data)
    window = s.window_for(rp)
    z = float(np.sum(window_weights(df.grid, p, window, s.radial_nodes) * df.values))
    if not z > 0:
        return -math.inf
    eta = [datum_probability(d, theta, p, s) / z for d in data]
    return sum_log(eta)


def mass_penalty(p: PotentialProfile, s: LikelihoodSettings) -> float:
    """``alpha |M(<R_E) - M0| / (2 deltaM0)``."""
    if s.mass_constraint == 0:
        return 0.0
    return abs(enclosed_mass(p, s.R_E) - s.M0) / (2.0 * s.deltaM0)


def penalized_log_likelihood(data, theta: Configuration, p: PotentialProfile, s: LikelihoodSettings,
                             projector: IsotropicProjector | None = None) -> float:
    return log_likelihood(data, theta, p, s, projector) - mass_penalty(p, s)
