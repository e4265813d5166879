"""Gravitational potential of a shell-stratified density histogram.

Inside shell ``q`` (``r_{q-1} <= r <= r_q``) a constant density gives
``Phi(r) = a_q + b_q / r + c_q r^2`` exactly, with the gauge Phi(inf) = 0.
Everything here (evaluation, inversion, line-of-sight integrals) works
from those per-shell coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .model import G, ModelError, RadialDensityHistogram, RadialGrid


@dataclass(frozen=True, eq=False)
class PotentialProfile:
    grid: RadialGrid
    densities: np.ndarray
    masses: np.ndarray  # M(<r_q) at every edge, masses[0] == 0
    G: float = G

    def __post_init__(self):
        e = self.grid.edges
        rho = np.asarray(self.densities, dtype=float)
        r_in, r_out = e[:-1], e[1:]
        m_in = self.masses[:-1]
        # int_{r_q}^{r_max} rho r dr, outside shell q
        outer = np.concatenate([np.cumsum((rho * (r_out**2 - r_in**2) / 2)[::-1])[::-1][1:], [0.0]])
        a = -2 * np.pi * self.G * rho * r_out**2 - 4 * np.pi * self.G * outer
        b = -self.G * (m_in - 4 * np.pi / 3 * rho * r_in**3)
        c = 2 * np.pi / 3 * self.G * rho
        b[0] = 0.0  # exact cancellation at the centre
        for name, arr in (("_a", a), ("_b", b), ("_c", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        phi_edges = np.empty(e.size)
        phi_edges[0] = a[0]
        phi_edges[1:] = a + b / r_out + c * r_out**2
        phi_edges.setflags(write=False)
        object.__setattr__(self, "phi_edges", phi_edges)

    @property
    def r_max(self) -> float:
        return self.grid.r_max

    @property
    def total_mass(self) -> float:
        return float(self.masses[-1])

    @property
    def phi_min(self) -> float:
        return float(self.phi_edges[0])

    def _shell_index(self, r):
        """0-based shell index with ``r`` in ``(r_{q-1}, r_q]``; r = 0 maps to 0."""
        idx = np.searchsorted(self.grid.edges, r, side="left") - 1
        return np.clip(idx, 0, self.grid.n_bins - 1)

    def __call__(self, r):
        return self.evaluate(r)

    def evaluate(self, r):
        """Phi(r), exact inside and outside the outermost shell."""
        r = np.asarray(r, dtype=float)
        q = self._shell_index(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            inside = self._a[q] + np.where(self._b[q] != 0, self._b[q] / r, 0.0) + self._c[q] * r**2
            outside = -self.G * self.total_mass / r
        return np.where(r > self.r_max, outside, inside)

    def enclosed(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ModelError("radius must be >= 0")
        rr = np.minimum(r, self.r_max)
        q = self._shell_index(rr)
        e = self.grid.edges
        return self.masses[q] + 4 * np.pi / 3 * self.densities[q] * (rr**3 - e[q] ** 3)

    def derivative(self, r):
        """dPhi/dr = G M(<r) / r^2."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, self.G * self.enclosed(r) / r**2, 0.0)

    def inverse(self, y, tol: float = 1e-13, max_iter: int = 100):
        """Largest ``r`` in ``[0, r_max]`` with ``Phi(r) = y``, vectorized.

        Returns ``r_max`` where ``y >= Phi(r_max)`` (clamp) and 0 where
        ``y <= Phi(0)`` (nothing accessible).  Within the bracketing shell a
        Newton step is taken when it stays inside the current bracket and a
        bisection step otherwise, so convergence is unconditional.
        """
        y = np.asarray(y, dtype=float)
        e = self.grid.edges
        out = np.where(y >= self.phi_edges[-1], self.r_max, 0.0)
        mask = (y > self.phi_edges[0]) & (y < self.phi_edges[-1])
        if not np.any(mask):
            return out
        out[mask] = _invert_shells(y[mask], self.phi_edges, self.grid.edges,
                                   self._a, self._b, self._c, tol, max_iter)
        return out

    def edge_los_integrals(self, rp):
        """Table ``T[i, q] = int_0^{sqrt(r_q^2 - rp_i^2)} Phi dx3`` (0 where r_q <= rp_i)."""
        rp = np.asarray(rp, dtype=float)[:, None]
        e = self.grid.edges
        lo = np.maximum(e[None, :-1], rp)
        hi = np.maximum(e[None, 1:], rp)
        pieces = _shell_pieces(self._a, self._b, self._c, rp, lo, hi)
        table = np.zeros((rp.shape[0], e.size))
        table[:, 1:] = np.cumsum(pieces, axis=1)
        return table

    def los_integral(self, rp, R, table=None):
        """``int_0^{sqrt(R^2 - rp^2)} Phi(sqrt(rp^2 + x^2)) dx`` for ``R <= r_max``.

        ``rp`` is 1-d of length n; ``R`` has leading dimension n and any
        trailing shape.  ``table`` may be a precomputed
        :meth:`edge_los_integrals` result for the same ``rp``.
        """
        rp = np.asarray(rp, dtype=float)
        R = np.asarray(R, dtype=float)
        if table is None:
            table = self.edge_los_integrals(rp)
        extra = (1,) * (R.ndim - 1)
        rpb = rp.reshape(rp.shape + extra)
        q = self._shell_index(R)
        e = self.grid.edges
        r_in = e[q]
        lo = np.maximum(r_in, rpb)
        hi = np.maximum(R, lo)
        rows = np.arange(rp.size).reshape(rp.shape + extra)
        base = np.where(r_in > rpb, table[rows, q], 0.0)
        return base + _shell_pieces(self._a[q], self._b[q], self._c[q], rpb, lo, hi)


@numba.njit(cache=True)
def invert_one(y, phi_edges, edges, a_all, b_all, c_all, tol, max_iter):
    """Scalar root of ``Phi(r) = y`` for ``phi_edges[0] < y < phi_edges[-1]``."""
    q = np.searchsorted(phi_edges, y, side="right") - 1
    a, b, c = a_all[q], b_all[q], c_all[q]
    lo, hi = edges[q], edges[q + 1]
    frac = (y - phi_edges[q]) / (phi_edges[q + 1] - phi_edges[q])
    r = lo + (hi - lo) * min(max(frac, 0.05), 0.95)
    for _ in range(max_iter):
        h = a + b / r + c * r * r - y
        if h < 0:
            lo = r
        else:
            hi = r
        dh = -b / (r * r) + 2 * c * r
        step = r - h / dh if dh != 0 else np.nan
        if not (lo <= step <= hi):
            step = 0.5 * (lo + hi)
        if abs(step - r) <= tol * step:
            return step
        r = step
    return r


@numba.njit(cache=True)
def _invert_shells(ys, phi_edges, edges, a_all, b_all, c_all, tol, max_iter):
    out = np.empty(ys.size)
    for i in range(ys.size):
        out[i] = invert_one(ys[i], phi_edges, edges, a_all, b_all, c_all, tol, max_iter)
    return out


@numba.njit(cache=True)
def shell_piece(a, b, c, rp, lo, hi):
    """Scalar version of :func:`_shell_pieces`."""
    x_lo = np.sqrt(max(lo * lo - rp * rp, 0.0))
    x_hi = np.sqrt(max(hi * hi - rp * rp, 0.0))
    dx = x_hi - x_lo
    log_term = np.log((x_hi + hi) / (x_lo + lo)) if (b != 0 and hi > lo) else 0.0
    return a * dx + b * log_term + c * (rp * rp * dx + (x_hi**3 - x_lo**3) / 3.0)


def _shell_pieces(a, b, c, rp, lo, hi):
    """Exact ``int Phi dx3`` over the part of one shell between radii lo <= hi."""
    x_lo = np.sqrt(np.maximum(lo * lo - rp * rp, 0.0))
    x_hi = np.sqrt(np.maximum(hi * hi - rp * rp, 0.0))
    dx = x_hi - x_lo
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.where((b != 0) & (hi > lo), np.log((x_hi + hi) / (x_lo + lo)), 0.0)
    return a * dx + b * log_term + c * (rp * rp * dx + (x_hi**3 - x_lo**3) / 3.0)


def solve_potential(rho: RadialDensityHistogram, G_const: float = G) -> PotentialProfile:
    """Potential, enclosed masses and shell coefficients of a density histogram."""
    masses = np.concatenate([[0.0], np.cumsum(rho.shell_masses())])
    return PotentialProfile(rho.grid, rho.values.copy(), masses, G_const)


def enclosed_mass(p: PotentialProfile, r) -> float:
    """M(<r); constant beyond the outermost edge."""
    if np.any(np.asarray(r) < 0):
        raise ModelError("enclosed_mass: negative radius")
    out = p.enclosed(r)
    return float(out) if np.ndim(out) == 0 else out


def outer_turning_radius(p, E2: float, L: float = 0.0, v3: float = 0.0,
                         rtol: float = 1e-12) -> float | None:
    """Largest ``r0 <= r_max`` solving ``E2 = v3^2/2 + L^2/(2 r0^2) + Phi(r0)``.

    Returns ``r_max`` when the left-hand side is still below ``E2`` at the
    grid edge, and ``None`` when no radius is accessible at all.  ``p`` is
    any object with ``evaluate(r)`` and ``r_max``, normally a
    :class:`PotentialProfile`.
    """
    def rhs(r):
        with np.errstate(divide="ignore"):
            return 0.5 * v3 * v3 + (0.5 * L * L / (r * r) if L else 0.0) + float(p.evaluate(r))

    r_max = p.r_max
    if rhs(r_max) < E2:
        return r_max
    if L == 0:
        if rhs(0.0) >= E2:
            return None
        lo, hi = 0.0, r_max
    else:
        # g(r) is not monotone for L > 0: locate the outermost sign change on a scan
        scan = np.geomspace(r_max * 1e-7, r_max, 1024)
        grid = getattr(p, "grid", None)
        if grid is not None:
            scan = np.unique(np.concatenate([grid.edges[1:], scan]))
        g = np.array([rhs(r) for r in scan])
        below = np.nonzero(g < E2)[0]
        if below.size == 0:
            return None
        k = below[-1]
        lo, hi = scan[k], scan[k + 1]
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if rhs(mid) <= E2:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
