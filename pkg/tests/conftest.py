import numpy as np
import pytest
from hypothesis import settings

from losmass.model import RadialDensityHistogram, RadialGrid, log_radial_grid
from losmass.potential import solve_potential
from losmass.synthgen import default_test_potential

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


class ExactPlummer:
    """Analytic Plummer potential with a hard outer edge, for oracle comparisons."""

    def __init__(self, spec, r_max):
        self.spec = spec
        self.r_max = float(r_max)

    def evaluate(self, r):
        return self.spec.evaluate(r)


class ConstantPotential:
    """Phi = phi0 everywhere inside ``r_max``."""

    def __init__(self, phi0, r_max):
        self.phi0 = float(phi0)
        self.r_max = float(r_max)

    def evaluate(self, r):
        return np.full(np.shape(r), self.phi0)


@pytest.fixture(scope="session")
def plummer():
    return default_test_potential()


@pytest.fixture(scope="session")
def plummer_grid():
    return log_radial_grid(0.2, 30.0, 20)


@pytest.fixture(scope="session")
def plummer_profile(plummer, plummer_grid):
    rho = RadialDensityHistogram(plummer_grid, plummer.shell_average_density(plummer_grid.edges))
    return solve_potential(rho)


def random_monotone(rng, n, scale=1.0):
    """Positive, non-increasing vector built from random drops."""
    drops = rng.exponential(scale, n)
    return np.cumsum(drops[::-1])[::-1]


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request):
    """``criterion(k, ok, detail)`` records one PASS/FAIL line for the terminal summary."""
    lines = request.config._acceptance_lines

    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
