"""Discretized state objects shared by every other module.

Units throughout are kpc, km/s and solar masses.  Energies are per unit
mass, in (km/s)^2; angular momenta in kpc km/s.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Gravitational constant in kpc (km/s)^2 / M_sun.
G = 4.300917e-6


class ModelError(ValueError):
    """Raised when a state object is constructed from invalid input."""


def _frozen_array(values, ndim=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ModelError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Radial bin edges ``0 = r_0 < r_1 < ... < r_N`` in kpc."""

    edges: np.ndarray

    def __post_init__(self):
        edges = _frozen_array(self.edges, ndim=1)
        if edges.size < 2:
            raise ModelError("radial grid needs at least one bin")
        if edges[0] != 0.0:
            raise ModelError("first radial edge must be exactly 0")
        if not np.all(np.diff(edges) > 0):
            raise ModelError("radial edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def r_max(self) -> float:
        return float(self.edges[-1])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def shell_volumes(self) -> np.ndarray:
        return 4.0 * np.pi / 3.0 * np.diff(self.edges**3)


def log_radial_grid(r_min: float, r_max: float, n_bins: int = 20) -> RadialGrid:
    """Innermost bin ``[0, r_min]`` followed by logarithmic bins to ``r_max``."""
    if n_bins < 1:
        raise ModelError("n_bins must be >= 1")
    if not 0 < r_min < r_max:
        raise ModelError("need 0 < r_min < r_max")
    if n_bins == 1:
        return RadialGrid(np.array([0.0, r_max]))
    return RadialGrid(np.concatenate([[0.0], np.geomspace(r_min, r_max, n_bins)]))


def default_radial_grid(data: Sequence["KinematicDatum"], n_bins: int = 20,
                        r_max: float | None = None) -> RadialGrid:
    """20 log bins spanning the data's projected radii widened by [0.5, 2]."""
    rp = np.array([d.r_p for d in data], dtype=float)
    rp = rp[rp > 0]
    if rp.size == 0:
        raise ModelError("no positive projected radii to build a grid from")
    outer = 2.0 * rp.max() if r_max is None else float(r_max)
    return log_radial_grid(0.5 * rp.min(), outer, n_bins)


@dataclass(frozen=True, eq=False)
class RadialDensityHistogram:
    """Piecewise-constant mass density, one value per radial bin (M_sun/kpc^3)."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values, ndim=1)
        if values.size != self.grid.n_bins:
            raise ModelError(
                f"{values.size} density values for {self.grid.n_bins} radial bins")
        object.__setattr__(self, "values", values)

    def with_values(self, values) -> "RadialDensityHistogram":
        return RadialDensityHistogram(self.grid, values)

    def shell_masses(self) -> np.ndarray:
        return self.values * self.grid.shell_volumes


class DfMode(enum.Enum):
    ISOTROPIC = "isotropic"
    TWO_INTEGRAL = "two_integral"


@dataclass(frozen=True, eq=False)
class EnergyAngularMomentumGrid:
    """Cell edges in energy and angular momentum.

    In isotropic mode there is a single angular-momentum bin ``[0, inf)``.
    """

    energy_edges: np.ndarray
    l_edges: np.ndarray = field(default_factory=lambda: np.array([0.0, np.inf]))

    def __post_init__(self):
        e = _frozen_array(self.energy_edges, ndim=1)
        l_edges = _frozen_array(self.l_edges, ndim=1)
        if e.size < 2:
            raise ModelError("energy grid needs at least one bin")
        if not np.all(np.diff(e) > 0):
            raise ModelError("energy edges must be strictly increasing")
        if e[-1] > 0:
            raise ModelError("energy edges must all be <= 0 (bound states only)")
        if l_edges.size < 2 or l_edges[0] != 0.0:
            raise ModelError("angular-momentum edges must start at 0")
        if not np.all(np.diff(l_edges) > 0):
            raise ModelError("angular-momentum edges must be strictly increasing")
        object.__setattr__(self, "energy_edges", e)
        object.__setattr__(self, "l_edges", l_edges)

    @property
    def n_e(self) -> int:
        return self.energy_edges.size - 1

    @property
    def n_l(self) -> int:
        return self.l_edges.size - 1

    @property
    def mode(self) -> DfMode:
        return DfMode.ISOTROPIC if self.n_l == 1 else DfMode.TWO_INTEGRAL

    def energy_bin(self, energy: float) -> int:
        """Index of the bin holding ``energy``; energies below the floor clamp to 0."""
        idx = int(np.searchsorted(self.energy_edges, energy, side="right")) - 1
        return min(max(idx, 0), self.n_e - 1)


def linear_energy_grid(phi_min: float, n_bins: int = 15, n_l: int = 1,
                       l_max: float | None = None) -> EnergyAngularMomentumGrid:
    """Linear energy bins from ``phi_min`` to 0, optionally with ``n_l`` L bins."""
    if phi_min >= 0:
        raise ModelError("phi_min must be negative")
    e = np.linspace(phi_min, 0.0, n_bins + 1)
    if n_l == 1:
        return EnergyAngularMomentumGrid(e)
    if l_max is None or l_max <= 0:
        raise ModelError("two-integral grids need a positive l_max")
    return EnergyAngularMomentumGrid(e, np.linspace(0.0, l_max, n_l + 1))


@dataclass(frozen=True, eq=False)
class PhaseDensityHistogram:
    """Piecewise-constant phase-space density; ``values[l, e]`` per cell.

    Energies below the lowest edge take the value of the lowest bin.
    """

    grid: EnergyAngularMomentumGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape != (self.grid.n_l, self.grid.n_e):
            raise ModelError(
                f"df values of shape {values.shape} do not match grid "
                f"({self.grid.n_l}, {self.grid.n_e})")
        object.__setattr__(self, "values", _frozen_array(values, ndim=2))

    def with_values(self, values) -> "PhaseDensityHistogram":
        return PhaseDensityHistogram(self.grid, values)

    @property
    def mode(self) -> DfMode:
        return self.grid.mode

    def evaluate(self, energy, l=None) -> np.ndarray:
        """Look up f at arbitrary (E, L); zero for E >= top edge or L beyond grid."""
        energy = np.asarray(energy, dtype=float)
        e_edges = self.grid.energy_edges
        ie = np.clip(np.searchsorted(e_edges, energy, side="right") - 1, 0, self.grid.n_e - 1)
        if l is None:
            il = np.zeros_like(ie)
            inside_l = np.ones(energy.shape, dtype=bool)
        else:
            l = np.broadcast_to(np.asarray(l, dtype=float), energy.shape)
            il = np.clip(np.searchsorted(self.grid.l_edges, l, side="right") - 1,
                         0, self.grid.n_l - 1)
            inside_l = l < self.grid.l_edges[-1]
        out = self.values[il, ie]
        return np.where((energy < e_edges[-1]) & inside_l, out, 0.0)


@dataclass(frozen=True)
class KinematicDatum:
    """One tracer: projected radius (kpc), LOS velocity and its 1-sigma error (km/s)."""

    r_p: float
    v3: float
    sigma_v3: float = 0.0

    def __post_init__(self):
        if not (self.r_p >= 0):
            raise ModelError(f"r_p must be >= 0, got {self.r_p}")
        if not (self.sigma_v3 >= 0):
            raise ModelError(f"sigma_v3 must be >= 0, got {self.sigma_v3}")


def data_arrays(data: Iterable[KinematicDatum]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Columns ``(r_p, v3, sigma_v3)`` of a dataset as float arrays."""
    data = list(data)
    if not data:
        empty = np.zeros(0)
        return empty, empty.copy(), empty.copy()
    arr = np.array([(d.r_p, d.v3, d.sigma_v3) for d in data], dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2]


@dataclass(frozen=True, eq=False)
class Configuration:
    """A (df, density) pair plus its (penalized) log-likelihood, if computed."""

    df: PhaseDensityHistogram
    rho: RadialDensityHistogram
    log_likelihood: float | None = None

    def with_log_likelihood(self, value: float) -> "Configuration":
        return Configuration(self.df, self.rho, float(value))


def validate_density(h: RadialDensityHistogram) -> bool:
    """True iff the density is non-negative and non-increasing outward."""
    v = h.values
    return bool(np.all(v >= 0) and np.all(v[:-1] >= v[1:]))


def validate_df(h: PhaseDensityHistogram) -> bool:
    """True iff f >= 0 and, in every L row, f is non-increasing in E."""
    v = h.values
    return bool(np.all(v >= 0) and np.all(v[:, :-1] >= v[:, 1:]))


def validate_configuration(theta: Configuration) -> bool:
    return validate_density(theta.rho) and validate_df(theta.df)


def normalize_df(h: PhaseDensityHistogram, weights=None) -> PhaseDensityHistogram:
    """Rescale so that ``sum(weights * f) == 1``.

    With ``weights`` set to each cell's contribution to the predicted count
    inside the data window (see :func:`losmass.projection.window_weights`)
    this makes the projected density a proper pdf.  Without weights the
    cell values themselves sum to one, which is enough wherever the
    likelihood renormalizes internally.
    """
    w = np.ones_like(h.values) if weights is None else np.broadcast_to(weights, h.values.shape)
    total = float(np.sum(w * h.values))
    if not np.isfinite(total) or total <= 0:
        raise ModelError("degenerate df")
    return h.with_values(h.values / total)


def display_normalize(h: PhaseDensityHistogram, reference_energy: float = -1.0) -> PhaseDensityHistogram:
    """Rescale so the lowest-L cell containing ``reference_energy`` equals 1."""
    ref = h.values[0, h.grid.energy_bin(reference_energy)]
    if ref <= 0:
        raise ModelError("degenerate df: zero at the reference energy")
    return h.with_values(h.values / ref)
