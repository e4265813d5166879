"""Nonparametric significance test of the isotropic (f = f(E)) hypothesis.

The converged isotropic solution is resampled into ``N`` synthetic
datasets, each refitted by its own chain.  The best per-datum posterior
over all of those refits defines the reference configuration ``theta*``;
the evidence then counts how often the chain on the real data does better.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .model import Configuration, DfMode, KinematicDatum, ModelError, validate_configuration
from .potential import solve_potential
from .projection import LikelihoodSettings
from .sampler import Chain, SamplerSettings, run_chain
from .synthgen import observe, rejection_batches


class FbstError(ModelError):
    pass


@dataclass(frozen=True)
class FbstSettings:
    """``n_runs`` resampled datasets of ``sample_size`` tracers, ``steps`` per refit.

    ``sample_size = 0`` means "as many as the original data".  Resampled
    velocities get Gaussian noise of width ``noise_sigma`` (``None``: the
    mean quoted error of the original data).
    """

    n_runs: int = 10
    sample_size: int = 0
    steps: int = 2000
    seed: int = 0
    noise_sigma: float | None = None
    burn_in: float = 0.3

    def __post_init__(self):
        if self.n_runs < 1:
            raise FbstError("n_runs must be >= 1")
        if self.sample_size < 0:
            raise FbstError("sample_size must be >= 1 (or 0 for the data size)")
        if self.steps < 0:
            raise FbstError("steps must be >= 0")
        if not 0 <= self.burn_in < 1:
            raise FbstError("burn_in must lie in [0, 1)")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise FbstError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class EvidenceReport:
    """Tangential-set counts and both readings of the evidence.

    ``ev_standard = 1 - X/Y`` is the usual FBST evidence for the null;
    ``pr_tangential = X/Y`` is the posterior mass of configurations that
    beat ``theta*``, which the alternative reading takes as the evidence.
    """

    X: int
    Y: int
    reference: float

    def __post_init__(self):
        if self.Y <= 0:
            raise FbstError("no steps to count (Y = 0)")
        if not 0 <= self.X <= self.Y:
            raise FbstError("need 0 <= X <= Y")

    @property
    def pr_tangential(self) -> float:
        return self.X / self.Y

    @property
    def ev_standard(self) -> float:
        return 1.0 - self.X / self.Y

    def as_dict(self) -> dict:
        return {
            "X": self.X,
            "Y": self.Y,
            "pr_T": self.pr_tangential,
            "ev_standard": self.ev_standard,
            "evidence_if_pr_T": self.pr_tangential,
            "evidence_if_one_minus_pr_T": self.ev_standard,
            "theta_star_per_datum": self.reference,
        }


@dataclass(frozen=True, eq=False)
class ThetaStar:
    config: Configuration
    per_datum: float
    run: int
    step: int


def per_datum_posterior(chain: Chain) -> np.ndarray:
    """Penalized log-likelihood of every step divided by the chain's data count."""
    if chain.n_data <= 0:
        raise FbstError("chain records no data count")
    return chain.log_likelihoods / chain.n_data


def resample_observables(theta: Configuration, n: int, rng, noise_sigma: float = 0.0,
                         window: float | None = None, batch: int = 100_000,
                         max_attempts: int = 200_000_000) -> list[KinematicDatum]:
    """``n`` mock (r_p, v3) data drawn from an isotropic configuration.

    Tracers fill ``r <= r_max`` of the density grid; with ``window`` only
    those projecting inside ``r_p <= window`` are kept.
    """
    if n < 0:
        raise FbstError("n must be >= 0")
    if theta.df.mode is not DfMode.ISOTROPIC:
        raise FbstError("resampling needs an isotropic configuration")
    if not validate_configuration(theta):
        raise FbstError("configuration violates the priors")
    if n == 0:
        return []
    if not np.any(theta.df.values > 0) or not np.any(theta.rho.values > 0):
        raise FbstError("configuration has zero support")
    p = solve_potential(theta.rho)
    df = theta.df

    def f_eval(E, L):
        return df.evaluate(E)

    xs, vs, got = [], [], 0
    for x, v, _ in rejection_batches(f_eval, p.evaluate, p.r_max, rng, batch, max_attempts):
        if window is not None:
            keep = np.hypot(x[:, 0], x[:, 1]) <= window
            x, v = x[keep], v[keep]
        xs.append(x)
        vs.append(v)
        got += len(x)
        if got >= n:
            break
    x = np.concatenate(xs)[:n]
    v = np.concatenate(vs)[:n]
    return observe(x, v, noise_sigma, rng)


def find_theta_star(runs: Sequence[Chain]) -> ThetaStar:
    """Best per-datum posterior over every step of every run; earliest (run, step) wins ties."""
    best = None
    for i, chain in enumerate(runs):
        if not len(chain):
            continue
        values = per_datum_posterior(chain)
        j = int(np.argmax(values))
        if best is None or values[j] > best.per_datum:
            best = ThetaStar(chain.steps[j].config, float(values[j]), i, chain.steps[j].step)
    if best is None:
        raise FbstError("no steps to search for theta*")
    return best


def evidence(main: Chain | Sequence[Chain], reference: float, burn_in: float = 0.3) -> EvidenceReport:
    """Count post-burn-in steps of the real-data chain(s) whose per-datum posterior exceeds ``reference``."""
    chains = [main] if isinstance(main, Chain) else list(main)
    X = Y = 0
    for chain in chains:
        values = per_datum_posterior(chain)
        kept = values[int(math.floor(burn_in * values.size)):]
        X += int(np.sum(kept > reference))
        Y += int(kept.size)
    return EvidenceReport(X, Y, float(reference))


@dataclass(eq=False)
class FbstResult:
    report: EvidenceReport
    theta_star: ThetaStar
    runs: list
    datasets: list


def run_fbst(data: Sequence[KinematicDatum], main: Chain, sampler: SamplerSettings,
             likelihood: LikelihoodSettings, settings: FbstSettings) -> FbstResult:
    """Resample the main chain's best configuration, refit each mock, and count.

    Every refit starts from the resampled configuration itself and runs
    ``settings.steps`` steps under the main chain's annealing schedule.
    """
    data = list(data)
    theta_hat = main.best().config
    n = settings.sample_size or main.n_data or len(data)
    if settings.noise_sigma is None:
        noise = float(np.mean([d.sigma_v3 for d in data])) if data else 0.0
    else:
        noise = settings.noise_sigma
    window = likelihood.window_radius
    if window is None and data:
        window = max(d.r_p for d in data)
    seed_cfg = Configuration(theta_hat.df, theta_hat.rho)
    runs, datasets = [], []
    for i in range(settings.n_runs):
        rng = np.random.default_rng([settings.seed, i])
        mock = resample_observables(theta_hat, n, rng, noise, window)
        run_settings = replace(sampler, total_steps=settings.steps, data_fraction=1.0,
                               seed=settings.seed * 100_003 + i)
        runs.append(run_chain(mock, seed_cfg, run_settings, replace(likelihood, window_radius=window)))
        datasets.append(mock)
    star = find_theta_star(runs)
    return FbstResult(evidence(main, star.per_datum, settings.burn_in), star, runs, datasets)
