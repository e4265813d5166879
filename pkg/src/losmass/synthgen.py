"""Synthetic kinematic samples from toy distribution functions.

The toy DFs live in a cored (Plummer) test potential ``-A / sqrt(r^2 + r_c^2)``
and are sampled by rejection in 6-D phase space, then projected onto
``(r_p, v3)`` with the line of sight along z.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import G, KinematicDatum, ModelError


class ToyKind(enum.Enum):
    GAUSS = "gauss"
    WD = "wd"
    MICHIE = "michie"


@dataclass(frozen=True)
class ToyDfSpec:
    kind: ToyKind
    sigma: float
    # enters as exp(-L^2 / (r_a sigma^2)), so r_a is in kpc^2
    r_a: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "kind", ToyKind(self.kind))
        if not self.sigma > 0:
            raise ModelError("toy df sigma must be > 0")
        if self.kind is not ToyKind.GAUSS and not self.r_a > 0:
            raise ModelError("r_a must be > 0 for WD and Michie dfs")


def eval_toy_df(spec: ToyDfSpec, E, L=0.0):
    """Evaluate the toy DF; zero for unbound energies."""
    E = np.asarray(E, dtype=float)
    L = np.asarray(L, dtype=float)
    s2 = spec.sigma**2
    norm = 1.0 / math.sqrt(2 * math.pi * s2)
    bound = E < 0
    Eb = np.where(bound, E, 0.0)
    if spec.kind is ToyKind.GAUSS:
        val = norm * np.exp(-Eb / s2)
    else:
        aniso = np.exp(-L * L / (spec.r_a * s2)) if math.isfinite(spec.r_a) else 1.0
        if spec.kind is ToyKind.WD:
            val = norm * aniso * np.exp(-Eb / s2)
        else:
            val = norm * aniso * np.expm1(-Eb / s2)
    return np.where(bound, val, 0.0)


@dataclass(frozen=True)
class TestPotentialSpec:
    """Plummer potential ``-A / sqrt(r^2 + r_c^2)``; ``A = G M_tot`` in kpc (km/s)^2."""

    __test__ = False  # keep pytest from collecting this as a test class

    amplitude: float
    core_radius: float

    def __post_init__(self):
        if not (self.amplitude > 0 and self.core_radius > 0):
            raise ModelError("test potential needs A > 0 and r_c > 0")

    def evaluate(self, r):
        return phi_test(self, r)

    def total_mass(self, G_const: float = G) -> float:
        return self.amplitude / G_const

    def enclosed_mass(self, r, G_const: float = G):
        r = np.asarray(r, dtype=float)
        rc = self.core_radius
        return self.total_mass(G_const) * r**3 / (r * r + rc * rc) ** 1.5

    def density(self, r, G_const: float = G):
        """Density whose Poisson potential is this one."""
        r = np.asarray(r, dtype=float)
        rc = self.core_radius
        return 3 * self.amplitude / (4 * np.pi * G_const) * rc * rc * (r * r + rc * rc) ** -2.5

    def shell_average_density(self, edges, G_const: float = G):
        """Mass-weighted mean density over each shell between ``edges``."""
        edges = np.asarray(edges, dtype=float)
        m = self.enclosed_mass(edges, G_const)
        return np.diff(m) / (4 * np.pi / 3 * np.diff(edges**3))


def phi_test(spec: TestPotentialSpec, r):
    r = np.asarray(r, dtype=float)
    return -spec.amplitude / np.sqrt(r * r + spec.core_radius**2)


def default_test_potential(core_radius: float = 5.0, mass: float = 4.06e11,
                           radius: float = 8.7) -> TestPotentialSpec:
    """Plummer test potential holding ``mass`` inside ``radius``."""
    rc = core_radius
    m_tot = mass * (radius**2 + rc**2) ** 1.5 / radius**3
    return TestPotentialSpec(G * m_tot, rc)


@dataclass(frozen=True)
class AnnulusPlan:
    """Projected annuli ``[0, r1], (r1, r2], (r2, r3]`` with draw counts."""

    edges: tuple[float, ...]
    counts: tuple[int, ...]
    target_dispersions: tuple[float, ...] | None = None

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        counts = tuple(int(n) for n in self.counts)
        if len(edges) != len(counts) or not edges:
            raise ModelError("annulus plan needs one count per annulus")
        if edges[0] <= 0 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ModelError("annulus edges must be positive and increasing")
        if any(n < 2 for n in counts):
            raise ModelError("each annulus needs at least 2 draws")
        if self.target_dispersions is not None and len(self.target_dispersions) != len(edges):
            raise ModelError("one target dispersion per annulus")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    def bounds(self, i: int) -> tuple[float, float]:
        return (0.0 if i == 0 else self.edges[i - 1], self.edges[i])


def annulus_index(r_p, edges) -> np.ndarray:
    """Annulus of each projected radius (-1 outside the last edge)."""
    r_p = np.asarray(r_p, dtype=float)
    idx = np.searchsorted(np.asarray(edges, dtype=float), r_p, side="left")
    return np.where(idx < len(edges), idx, -1)


@dataclass
class PhaseSpaceSample:
    positions: np.ndarray
    velocities: np.ndarray
    attempts: int

    def energies(self, pot: "TestPotentialSpec"):
        return 0.5 * np.sum(self.velocities**2, axis=1) + phi_test(pot, self.radii)

    @property
    def radii(self):
        return np.linalg.norm(self.positions, axis=1)


def _unit_vectors(k, rng):
    v = rng.normal(size=(k, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def rejection_batches(f_eval, phi, r_trunc: float, rng, batch: int, max_attempts: int,
                      n_shells: int = 256):
    """Yield accepted ``(x, v)`` arrays batch by batch for ``f_eval(E, L)`` in ``phi(r)``.

    Proposal: a radial shell ``k`` is picked with probability proportional
    to ``V_k * w(r_in_k)``, the position is uniform in that shell's volume
    and the velocity uniform in the sphere below escape speed, where
    ``w(r) = f(Phi(r), L=0) * v_esc(r)^3`` bounds ``f * v_esc^3`` at radius r.
    The envelope dominates on every shell whenever f is non-increasing in
    E and L and Phi increases outward, which holds for the toy DFs and for
    any valid histogram df.
    """
    edges = np.concatenate([[0.0], np.geomspace(r_trunc * 1e-3, r_trunc, n_shells)])
    phi_edges = phi(edges)
    if not np.all(phi_edges < 0):
        raise ModelError("potential must be negative inside the truncation radius")
    w_in = f_eval(phi_edges[:-1], np.zeros(n_shells)) * (-2 * phi_edges[:-1]) ** 1.5
    mass = np.diff(edges**3) * w_in
    if not np.any(mass > 0):
        raise ModelError("df vanishes everywhere inside the truncation radius")
    cdf = np.cumsum(mass) / mass.sum()
    attempts = 0
    while attempts < max_attempts:
        k = np.minimum(np.searchsorted(cdf, rng.random(batch), side="right"), n_shells - 1)
        lo3, hi3 = edges[k] ** 3, edges[k + 1] ** 3
        r = (lo3 + (hi3 - lo3) * rng.random(batch)) ** (1 / 3)
        x = _unit_vectors(batch, rng) * r[:, None]
        phi_r = phi(r)
        v_esc = np.sqrt(-2 * phi_r)
        v = _unit_vectors(batch, rng) * (v_esc * rng.random(batch) ** (1 / 3))[:, None]
        attempts += batch
        E = 0.5 * np.sum(v * v, axis=1) + phi_r
        L = np.linalg.norm(np.cross(x, v), axis=1)
        ratio = f_eval(E, L) * v_esc**3 / w_in[k]
        ok = rng.random(batch) < ratio
        yield x[ok], v[ok], attempts
    raise ModelError(f"rejection sampler exhausted after {attempts} proposals; "
                     "the target region has ~zero density")


def _accepted_batches(df: ToyDfSpec, pot: TestPotentialSpec, r_trunc: float, rng,
                      batch: int, max_attempts: int):
    return rejection_batches(lambda E, L: eval_toy_df(df, E, L), lambda r: phi_test(pot, r),
                             r_trunc, rng, batch, max_attempts)


def draw_phase_space(df: ToyDfSpec, pot: TestPotentialSpec, n: int, r_trunc: float, rng,
                     r_window: float | None = None, batch: int = 200_000,
                     max_attempts: int = 500_000_000) -> PhaseSpaceSample:
    """``n`` phase-space points from ``df`` with ``r <= r_trunc``.

    With ``r_window`` only points projecting inside ``r_p <= r_window`` count.
    """
    if n < 0:
        raise ModelError("n must be >= 0")
    xs, vs, got, attempts = [], [], 0, 0
    if n > 0:
        for x, v, attempts in _accepted_batches(df, pot, r_trunc, rng, batch, max_attempts):
            if r_window is not None:
                inside = np.hypot(x[:, 0], x[:, 1]) <= r_window
                x, v = x[inside], v[inside]
            xs.append(x)
            vs.append(v)
            got += len(x)
            if got >= n:
                break
    x = np.concatenate(xs)[:n] if xs else np.zeros((0, 3))
    v = np.concatenate(vs)[:n] if vs else np.zeros((0, 3))
    return PhaseSpaceSample(x, v, attempts)


def observe(x, v, noise_sigma: float, rng) -> list[KinematicDatum]:
    """Project onto (r_p, v3) and add Gaussian LOS noise."""
    r_p = np.hypot(x[:, 0], x[:, 1])
    v3 = v[:, 2].copy()
    if noise_sigma > 0:
        v3 += rng.normal(0.0, noise_sigma, size=len(r_p))
    return [KinematicDatum(float(a), float(b), float(noise_sigma)) for a, b in zip(r_p, v3)]


def draw_sample(df: ToyDfSpec, pot: TestPotentialSpec, plan: AnnulusPlan, noise_sigma: float,
                rng, r_trunc: float | None = None, batch: int = 200_000,
                max_attempts: int = 500_000_000) -> list[KinematicDatum]:
    """Exactly ``plan.counts[i]`` tracers in each projected annulus, ordered by annulus.

    Tracers are confined to ``r <= r_trunc`` (default: twice the outer
    annulus edge).  Gaussian noise of width ``noise_sigma`` is added to v3
    and recorded as each datum's error.
    """
    r_trunc = 2 * plan.edges[-1] if r_trunc is None else float(r_trunc)
    if r_trunc < plan.edges[-1]:
        raise ModelError("truncation radius inside the outer annulus")
    need = list(plan.counts)
    buckets: list[list] = [[] for _ in need]
    for x, v, attempts in _accepted_batches(df, pot, r_trunc, rng, batch, max_attempts):
        ann = annulus_index(np.hypot(x[:, 0], x[:, 1]), plan.edges)
        for i in range(len(need)):
            sel = np.nonzero(ann == i)[0][: need[i]]
            buckets[i].append((x[sel], v[sel]))
            need[i] -= sel.size
        if not any(need):
            break
    x = np.concatenate([c[0] for b in buckets for c in b])
    v = np.concatenate([c[1] for b in buckets for c in b])
    return observe(x, v, noise_sigma, rng)


def draw_natural(df: ToyDfSpec, pot: TestPotentialSpec, n: int, r_window: float,
                 noise_sigma: float, rng, r_trunc: float | None = None,
                 batch: int = 200_000) -> list[KinematicDatum]:
    """``n`` tracers inside ``r_p <= r_window`` at their natural projected abundance."""
    r_trunc = 2 * r_window if r_trunc is None else float(r_trunc)
    sample = draw_phase_space(df, pot, n, r_trunc, rng, r_window=r_window, batch=batch)
    return observe(sample.positions, sample.velocities, noise_sigma, rng)


def projected_dispersion(data, annulus: tuple[float, float]) -> tuple[float, float]:
    """Population std of v3 inside ``lo < r_p <= hi`` and its normal-theory error.

    The error is the standard error of a standard deviation, sigma_p / sqrt(2 N).
    The annulus starting at 0 includes r_p = 0.
    """
    lo, hi = annulus
    v3 = np.array([d.v3 for d in data if (d.r_p > lo or (lo == 0 and d.r_p >= 0)) and d.r_p <= hi])
    if v3.size < 2:
        raise ModelError(f"need >= 2 data in annulus ({lo}, {hi}], found {v3.size}")
    sigma_p = float(np.std(v3))
    return sigma_p, sigma_p / math.sqrt(2 * v3.size)
