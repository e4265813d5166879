"""Metropolis-Hastings with simulated annealing over (df, density) configurations.

Moves act on the differences between neighbouring bins, so that every
proposal is positive and non-increasing outward (in r for the density, in
E for the df) by construction.  The likelihood is flat-prior, so the
posterior ratio reduces to a likelihood ratio on the valid set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import (G, Configuration, DfMode, EnergyAngularMomentumGrid, KinematicDatum,
                    ModelError, PhaseDensityHistogram, RadialDensityHistogram, RadialGrid,
                    normalize_df, validate_configuration)
from .potential import PotentialProfile, enclosed_mass, solve_potential
from .projection import (IsotropicProjector, LikelihoodSettings, log_likelihood,
                         mass_penalty)

UPDATE_MODES = ("sequential", "simultaneous")


class SamplerError(ModelError):
    """Invalid sampler input or a chain that cannot start."""


@dataclass(frozen=True)
class SamplerSettings:
    """Knobs of one annealed chain.

    ``s1`` and ``s2`` set the shape- and scale-move widths: each move
    multiplies by ``exp(R / s)`` with ``R ~ U[-0.5, 0.5]``, so larger values
    mean smaller steps.  The temperature after ``k`` steps is
    ``max(T0 * cooling ** (k // steps_per_T), t_min)``.
    """

    s1: float = 20.0
    s2: float = 20.0
    T0: float = 1.0
    cooling: float = 0.9
    steps_per_T: int = 500
    total_steps: int = 10000
    seed: int = 0
    n_chains: int = 1
    data_fraction: float = 1.0
    t_min: float = 0.0
    burn_in: float = 0.3
    update: str = "sequential"

    def __post_init__(self):
        if not (self.s1 > 0 and self.s2 > 0):
            raise SamplerError("s1 and s2 must be > 0")
        if not 0 < self.cooling < 1:
            raise SamplerError("cooling factor must lie in (0, 1)")
        if not self.T0 > 0:
            raise SamplerError("T0 must be > 0")
        if self.t_min < 0:
            raise SamplerError("t_min must be >= 0")
        if self.steps_per_T < 1:
            raise SamplerError("steps_per_T must be >= 1")
        if self.total_steps < 0:
            raise SamplerError("total_steps must be >= 0")
        if self.n_chains < 1:
            raise SamplerError("n_chains must be >= 1")
        if not 0 < self.data_fraction <= 1:
            raise SamplerError("data_fraction must lie in (0, 1]")
        if not 0 <= self.burn_in < 1:
            raise SamplerError("burn_in must lie in [0, 1)")
        if self.update not in UPDATE_MODES:
            raise SamplerError(f"update must be one of {UPDATE_MODES}")

    def temperature(self, k: int) -> float:
        return max(self.T0 * self.cooling ** (k // self.steps_per_T), self.t_min)


@dataclass(frozen=True, eq=False)
class ChainStep:
    step: int
    config: Configuration
    log_likelihood: float  # penalized
    penalty: float
    accepted: bool
    temperature: float


@dataclass(eq=False)
class Chain:
    """Every state visited by one chain, the seed first (step 0)."""

    steps: list = field(default_factory=list)
    n_data: int = 0

    def __len__(self):
        return len(self.steps)

    def append(self, record: ChainStep):
        if self.steps and record.step <= self.steps[-1].step:
            raise SamplerError("chain step indices must be strictly increasing")
        self.steps.append(record)

    @property
    def log_likelihoods(self) -> np.ndarray:
        return np.array([s.log_likelihood for s in self.steps])

    @property
    def final(self) -> Configuration:
        return self.steps[-1].config

    def best(self, start: int = 0) -> ChainStep:
        """Highest-likelihood step from index ``start`` on (earliest wins ties)."""
        tail = self.steps[start:]
        if not tail:
            raise SamplerError("empty chain")
        k = int(np.argmax([s.log_likelihood for s in tail]))
        return tail[k]

    def retained(self, burn_in: float = 0.3) -> list:
        """Steps after discarding the first ``burn_in`` fraction."""
        return self.steps[int(math.floor(burn_in * len(self.steps))):]

    def acceptance_rate(self) -> float:
        moves = self.steps[1:]
        return float(np.mean([s.accepted for s in moves])) if moves else 0.0


# --------------------------------------------------------------------------
# proposals

def _uniform_r(rng, size):
    return rng.uniform(-0.5, 0.5, size)


def shape_update(values, R, s1: float, update: str = "sequential") -> np.ndarray:
    """Rescale the drops between neighbouring bins by ``exp(R / s1)``.

    ``values`` must be non-increasing along the last axis; a zero neighbour
    is implied past the final bin.  ``sequential`` builds the result from
    the outside in on already-updated neighbours, which keeps every
    output non-increasing and positive for any ``R``.  ``simultaneous``
    uses only the old neighbours and can break monotonicity when the draws
    differ between bins.
    """
    v = np.asarray(values, dtype=float)
    R = np.broadcast_to(np.asarray(R, dtype=float), v.shape)
    nxt = np.concatenate([v[..., 1:], np.zeros(v.shape[:-1] + (1,))], axis=-1)
    scaled = (v - nxt) * np.exp(R / s1)
    if update == "simultaneous":
        return nxt + scaled
    if update != "sequential":
        raise SamplerError(f"unknown update mode {update!r}")
    return np.cumsum(scaled[..., ::-1], axis=-1)[..., ::-1]


def propose_density_shape(h: RadialDensityHistogram, s1: float, rng,
                          update: str = "sequential") -> RadialDensityHistogram:
    """Shape move with one fresh ``R ~ U[-0.5, 0.5]`` per bin."""
    R = _uniform_r(rng, h.values.size)
    return h.with_values(shape_update(h.values, R, s1, update))


def propose_density_scale(h: RadialDensityHistogram, s2: float, rng) -> RadialDensityHistogram:
    """Multiply every bin by one shared ``exp(R / s2)``."""
    R = float(_uniform_r(rng, None))
    return h.with_values(h.values * math.exp(R / s2))


def propose_df(h: PhaseDensityHistogram, s1: float, s2: float, rng,
               update: str = "sequential") -> PhaseDensityHistogram:
    """Shape move along E in every L row, a shared scale move, then normalization."""
    R = _uniform_r(rng, h.values.shape)
    values = shape_update(h.values, R, s1, update)
    values = values * math.exp(float(_uniform_r(rng, None)) / s2)
    return normalize_df(h.with_values(values))


def propose(theta: Configuration, settings: SamplerSettings, rng) -> Configuration:
    """Density shape, density scale, then df move, in that fixed order."""
    rho = propose_density_shape(theta.rho, settings.s1, rng, settings.update)
    rho = propose_density_scale(rho, settings.s2, rng)
    df = propose_df(theta.df, settings.s1, settings.s2, rng, settings.update)
    return Configuration(df, rho)


def mh_step(current: Configuration, proposal: Configuration, T: float, rng):
    """Metropolis rule at temperature ``T``; invalid proposals are always rejected.

    Both configurations must carry their (penalized) log-likelihood.
    Returns ``(state, accepted)``.
    """
    if current.log_likelihood is None or not math.isfinite(current.log_likelihood):
        raise SamplerError("current configuration needs a finite log-likelihood")
    new = proposal.log_likelihood
    u = rng.random()
    if new is None or not math.isfinite(new) or not validate_configuration(proposal):
        return current, False
    delta = new - current.log_likelihood
    if delta >= 0 or u < math.exp(delta / T):
        return proposal, True
    return current, False


# --------------------------------------------------------------------------
# driving a chain

class LikelihoodEvaluator:
    """Penalized log-likelihood of configurations on one dataset.

    Isotropic configurations use the exact projector, built once per
    energy grid; two-integral configurations fall back to quadrature.
    """

    def __init__(self, data: Sequence[KinematicDatum], settings: LikelihoodSettings):
        self.data = list(data)
        self.settings = settings
        self._projectors = {}

    def _projector(self, grid: EnergyAngularMomentumGrid) -> IsotropicProjector:
        key = id(grid)
        if key not in self._projectors:
            self._projectors = {key: (grid, IsotropicProjector(self.data, grid, self.settings))}
        return self._projectors[key][1]

    def __call__(self, theta: Configuration):
        """Return ``(penalized log-likelihood, penalty, potential)``."""
        p = solve_potential(theta.rho)
        penalty = mass_penalty(p, self.settings)
        if theta.df.mode is DfMode.ISOTROPIC:
            proj = self._projector(theta.df.grid)
            ll = log_likelihood(self.data, theta, p, self.settings, proj)
        else:
            ll = log_likelihood(self.data, theta, p, self.settings)
        return ll - penalty, penalty, p


def subsample(data: Sequence[KinematicDatum], fraction: float, rng) -> list:
    """Seeded uniform subsample of ``round(fraction * n)`` data, original order kept."""
    data = list(data)
    if fraction >= 1 or not data:
        return data
    k = max(1, int(round(fraction * len(data))))
    idx = np.sort(rng.choice(len(data), size=k, replace=False))
    return [data[i] for i in idx]


def run_chain(data: Sequence[KinematicDatum], seed: Configuration, settings: SamplerSettings,
              likelihood: LikelihoodSettings, callback: Callable | None = None) -> Chain:
    """Anneal one chain from ``seed``; deterministic given ``settings.seed``.

    Step 0 is the seed itself.  ``callback(chain)`` is invoked after every
    step when given.
    """
    if not validate_configuration(seed):
        raise SamplerError("seed configuration violates the priors")
    rng = np.random.default_rng(settings.seed)
    used = subsample(data, settings.data_fraction, rng)
    if not used:
        raise SamplerError("no data to fit")
    evaluate = LikelihoodEvaluator(used, likelihood)
    ll, penalty, _ = evaluate(seed)
    if not math.isfinite(ll):
        raise SamplerError("seed configuration has zero support on the data; "
                           "use a broader seed (deeper potential or flatter df)")
    current = seed.with_log_likelihood(ll)
    chain = Chain(n_data=len(used))
    chain.append(ChainStep(0, current, ll, penalty, True, settings.temperature(0)))
    for k in range(1, settings.total_steps + 1):
        T = settings.temperature(k)
        trial = propose(current, settings, rng)
        if validate_configuration(trial):
            t_ll, t_pen, _ = evaluate(trial)
        else:
            t_ll, t_pen = -math.inf, math.nan
        current, accepted = mh_step(current, trial.with_log_likelihood(t_ll), T, rng)
        if accepted:
            penalty = t_pen
        chain.append(ChainStep(k, current, current.log_likelihood, penalty, accepted, T))
        if callback is not None:
            callback(chain)
    return chain


def run_chains(data, seeds: Sequence[Configuration], settings: SamplerSettings,
               likelihood: LikelihoodSettings) -> list:
    """One chain per seed; chain ``i`` uses random seed ``settings.seed + i``."""
    from dataclasses import replace
    return [run_chain(data, s, replace(settings, seed=settings.seed + i), likelihood)
            for i, s in enumerate(seeds)]


# --------------------------------------------------------------------------
# seeds

def isothermal_density(grid: RadialGrid, sigma: float, core_radius: float,
                       G_const: float = G) -> RadialDensityHistogram:
    """Cored isothermal ``sigma^2 / (2 pi G (r^2 + r_c^2))`` at the bin centres."""
    if not (sigma > 0 and core_radius > 0):
        raise SamplerError("sigma and core_radius must be > 0")
    r = grid.centers
    return RadialDensityHistogram(grid, sigma**2 / (2 * np.pi * G_const * (r * r + core_radius**2)))


def exponential_df(grid: EnergyAngularMomentumGrid, sigma: float) -> PhaseDensityHistogram:
    """``exp(-E / sigma^2)`` at the energy-bin centres, same in every L row."""
    e = grid.energy_edges
    mid = 0.5 * (e[1:] + e[:-1])
    row = np.exp(-(mid - mid[-1]) / sigma**2)
    return normalize_df(PhaseDensityHistogram(grid, np.tile(row, (grid.n_l, 1))))


def seed_configuration(radial: RadialGrid, energy: EnergyAngularMomentumGrid, sigma: float,
                       core_radius: float = 2.0, density_scale: float = 1.0,
                       df_sigma: float | None = None) -> Configuration:
    """Isothermal density (times ``density_scale``) with an exponential df."""
    rho = isothermal_density(radial, sigma, core_radius)
    rho = rho.with_values(rho.values * density_scale)
    return Configuration(exponential_df(energy, df_sigma or sigma), rho)


def support_scale(rho: RadialDensityHistogram, data: Sequence[KinematicDatum],
                  margin: float = 1.2) -> float:
    """Smallest factor (>= 1, times ``margin``) lifting escape speed above every ``|v3|``.

    Phi is linear in the density amplitude, so scaling ``rho`` by the
    returned factor puts each datum inside r_max at negative energy.
    """
    p = solve_potential(rho)
    rp = np.array([d.r_p for d in data], dtype=float)
    v3 = np.array([d.v3 for d in data], dtype=float)
    inside = rp < p.r_max
    if not np.any(inside):
        return 1.0
    depth = -2.0 * p.evaluate(rp[inside])
    if np.any(depth <= 0):
        raise SamplerError("seed potential is not bound at the data radii")
    need = float(np.max(v3[inside] ** 2 / depth))
    return max(1.0, margin * need)


def velocity_scale(data: Sequence[KinematicDatum]) -> float:
    """RMS line-of-sight velocity with the mean noise variance removed."""
    v = np.array([d.v3 for d in data])
    s = np.array([d.sigma_v3 for d in data])
    if v.size < 2:
        raise SamplerError("need at least two data to set a velocity scale")
    var = np.var(v) - np.mean(s * s)
    return float(math.sqrt(max(var, 0.25 * np.var(v))))


# --------------------------------------------------------------------------
# diagnostics

def log_enclosed_mass(radius: float) -> Callable[[Configuration], float]:
    """Scalar summary ``log M(<radius)`` of a configuration."""
    def scalar(theta: Configuration) -> float:
        return math.log(enclosed_mass(solve_potential(theta.rho), radius))
    return scalar


def potential_scale_reduction(draws) -> float:
    """R-hat of an (m chains, n draws) array.

    ``inf`` when the chains are individually constant but disagree, ``nan``
    when there is no variation at all.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise SamplerError("need >= 2 chains of >= 2 retained draws")
    m, n = x.shape
    means = x.mean(axis=1)
    W = float(np.mean(x.var(axis=1, ddof=1)))
    B = float(n * means.var(ddof=1))
    if W == 0:
        return math.inf if B > 0 else math.nan
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def gelman_rubin(chains: Sequence[Chain], scalar: Callable[[Configuration], float],
                 burn_in: float = 0.3) -> float:
    """R-hat of ``scalar`` over the post-burn-in part of equally long chains."""
    if len(chains) < 2:
        raise SamplerError("gelman_rubin needs >= 2 chains")
    kept = [c.retained(burn_in) for c in chains]
    if len({len(k) for k in kept}) != 1:
        raise SamplerError("chains must have equal retained length")
    cache = {}

    def value(cfg):
        key = id(cfg)
        if key not in cache:
            cache[key] = (cfg, scalar(cfg))
        return cache[key][1]

    return potential_scale_reduction([[value(s.config) for s in k] for k in kept])


@dataclass(frozen=True, eq=False)
class Envelope:
    """Best configuration and per-bin standard deviations of rho and f."""

    best: Configuration
    rho_sigma: np.ndarray
    df_sigma: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return self.best.rho.values

    @property
    def df(self) -> np.ndarray:
        return self.best.df.values

    def rho_band(self):
        return self.rho - self.rho_sigma, self.rho + self.rho_sigma

    def df_band(self):
        return self.df - self.df_sigma, self.df + self.df_sigma


def uncertainty_envelope(chain: Chain, burn_in: float = 0.3) -> Envelope:
    """±1 sigma bands from the spread of the retained states around the best one."""
    kept = chain.retained(burn_in)
    if len(kept) < 10:
        raise SamplerError(f"need >= 10 retained steps for an envelope, have {len(kept)}")
    rho = np.array([s.config.rho.values for s in kept])
    df = np.array([s.config.df.values for s in kept])
    best = kept[int(np.argmax([s.log_likelihood for s in kept]))].config
    return Envelope(best, rho.std(axis=0, ddof=1), df.std(axis=0, ddof=1))
