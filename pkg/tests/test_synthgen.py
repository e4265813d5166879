import math

import numpy as np
import pytest
from scipy import integrate, special

from losmass.model import G, ModelError, RadialDensityHistogram, log_radial_grid
from losmass.potential import solve_potential
from losmass.synthgen import (AnnulusPlan, TestPotentialSpec, ToyDfSpec, default_test_potential,
                              draw_phase_space, draw_sample, eval_toy_df, phi_test,
                              projected_dispersion)
from losmass.model import KinematicDatum


class TestToyDf:
    @pytest.mark.parametrize("kind", ["gauss", "wd", "michie"])
    def test_unbound_is_zero(self, kind):
        assert eval_toy_df(ToyDfSpec(kind, 200.0, 5.0), 0.1, 3.0) == 0.0

    def test_michie_vanishes_at_zero(self):
        spec = ToyDfSpec("michie", 200.0, 5.0)
        assert eval_toy_df(spec, 0.0) == 0.0
        assert eval_toy_df(spec, -1e-9) == pytest.approx(0.0, abs=1e-12)

    def test_wd_isotropic_limit(self):
        E, L = -3.0e4, 1500.0
        assert eval_toy_df(ToyDfSpec("wd", 250.0, math.inf), E, L) == eval_toy_df(
            ToyDfSpec("gauss", 250.0), E, L)

    def test_gauss_value(self):
        assert eval_toy_df(ToyDfSpec("gauss", 1.0), -1.0) == pytest.approx(1.0844375514192275, rel=1e-12)

    def test_printed_anisotropy_exponent(self):
        spec = ToyDfSpec("wd", 2.0, 3.0)
        got = eval_toy_df(spec, -1.0, 1.5) / eval_toy_df(spec, -1.0, 0.0)
        assert got == pytest.approx(math.exp(-1.5**2 / (3.0 * 4.0)))

    def test_validation(self):
        with pytest.raises(ModelError):
            ToyDfSpec("gauss", 0.0)
        with pytest.raises(ModelError):
            ToyDfSpec("wd", 1.0, 0.0)


class TestTestPotential:
    def test_centre(self):
        spec = TestPotentialSpec(2.0e6, 4.0)
        assert phi_test(spec, 0.0) == -2.0e6 / 4.0

    def test_keplerian_asymptote(self):
        spec = TestPotentialSpec(2.0e6, 4.0)
        r = 400.0
        assert phi_test(spec, r) == pytest.approx(-2.0e6 / r, rel=0.01)

    def test_default_mass_normalization(self):
        pot = default_test_potential()
        assert pot.enclosed_mass(8.7) == pytest.approx(4.06e11, rel=1e-12)

    def test_density_pair_poisson(self):
        pot = default_test_potential()
        grid = log_radial_grid(0.01, 1000.0, 400)
        p = solve_potential(RadialDensityHistogram(grid, pot.density(grid.centers)))
        r = np.geomspace(0.1, 100.0, 200)
        np.testing.assert_allclose(p.evaluate(r), pot.evaluate(r), rtol=5e-3)

    def test_density_integrates_to_enclosed_mass(self):
        pot = default_test_potential()
        m, _ = integrate.quad(lambda x: 4 * math.pi * x * x * pot.density(x), 0, 8.7)
        assert m == pytest.approx(4.06e11, rel=1e-9)


def projected_cdf(pot, sigma, r_trunc, radii):
    """N(r_p < R) / N(r_p < r_trunc) for f_Gauss truncated at r <= r_trunc, by quadrature."""
    def nu(r):
        phi = float(phi_test(pot, r))
        ve = math.sqrt(-2 * phi)
        s = sigma
        # int_0^ve exp(-v^2/2s^2) v^2 dv
        inner = s**3 * (math.sqrt(math.pi / 2) * special.erf(ve / (math.sqrt(2) * s))
                        - (ve / s) * math.exp(-ve * ve / (2 * s * s)))
        return math.exp(-phi / s**2) * inner

    def count(R):
        def integrand(r):
            frac = 1.0 if r <= R else 1 - math.sqrt(1 - (R / r) ** 2)
            return nu(r) * r * r * frac
        return integrate.quad(integrand, 0, r_trunc, points=[R], limit=200)[0]

    total = count(r_trunc)
    return np.array([count(R) / total for R in radii])


class TestSampling:
    def test_gauss_isotropy_and_bound(self, plummer):
        rng = np.random.default_rng(4)
        s = draw_phase_space(ToyDfSpec("gauss", 350.0), plummer, 10_000, 30.0, rng)
        assert np.all(s.energies(plummer) < 0)
        v2 = s.velocities**2
        means = v2.mean(axis=0)
        se = v2.std(axis=0) / math.sqrt(len(v2))
        for i in range(3):
            for j in range(i + 1, 3):
                assert abs(means[i] - means[j]) < 3 * math.hypot(se[i], se[j])

    def test_projected_radius_distribution(self, plummer):
        rng = np.random.default_rng(8)
        s = draw_phase_space(ToyDfSpec("gauss", 350.0), plummer, 100_000, 30.0, rng)
        rp = np.sort(np.hypot(s.positions[:, 0], s.positions[:, 1]))
        grid = np.linspace(0.5, 29.5, 30)
        model = projected_cdf(plummer, 350.0, 30.0, grid)
        empirical = np.searchsorted(rp, grid) / rp.size
        assert np.max(np.abs(model - empirical)) < 0.02

    def test_wd_radial_bias(self, plummer):
        rng = np.random.default_rng(9)
        s = draw_phase_space(ToyDfSpec("wd", 350.0, 8.0), plummer, 100_000, 30.0, rng)
        x, v = s.positions, s.velocities
        rhat = x / np.linalg.norm(x, axis=1, keepdims=True)
        vr2 = np.sum(v * rhat, axis=1) ** 2
        vt2 = np.sum(v * v, axis=1) - vr2
        diff = vr2 - vt2 / 2
        assert diff.mean() > 3 * diff.std() / math.sqrt(diff.size)
        assert np.all(s.energies(plummer) < 0)

    def test_exact_annulus_counts(self, plummer):
        plan = AnnulusPlan((4.0, 9.0, 15.0), (50, 30, 20))
        data = draw_sample(ToyDfSpec("gauss", 350.0), plummer, plan, 10.0, np.random.default_rng(1))
        rp = np.array([d.r_p for d in data])
        counts = [(rp <= 4).sum(), ((rp > 4) & (rp <= 9)).sum(), ((rp > 9) & (rp <= 15)).sum()]
        assert counts == [50, 30, 20]
        assert all(d.sigma_v3 == 10.0 for d in data)

    def test_deterministic(self, plummer):
        plan = AnnulusPlan((4.0, 9.0, 15.0), (10, 10, 10))
        a = draw_sample(ToyDfSpec("wd", 350.0, 8.0), plummer, plan, 5.0, np.random.default_rng(2))
        b = draw_sample(ToyDfSpec("wd", 350.0, 8.0), plummer, plan, 5.0, np.random.default_rng(2))
        assert a == b

    def test_attempt_budget(self, plummer):
        plan = AnnulusPlan((1.0, 2.0, 29.0), (2, 2, 100_000))
        with pytest.raises(ModelError, match="exhausted"):
            draw_sample(ToyDfSpec("gauss", 350.0), plummer, plan, 0.0, np.random.default_rng(0),
                        r_trunc=30.0, batch=1000, max_attempts=5000)

    def test_plan_validation(self):
        with pytest.raises(ModelError):
            AnnulusPlan((4.0, 3.0), (5, 5))
        with pytest.raises(ModelError):
            AnnulusPlan((4.0, 5.0), (5, 1))


class TestDispersion:
    def test_constant(self):
        data = [KinematicDatum(1.0, 7.0)] * 5
        assert projected_dispersion(data, (0.0, 2.0))[0] == 0.0

    def test_pair(self):
        data = [KinematicDatum(1.0, -1.0), KinematicDatum(1.5, 1.0)]
        assert projected_dispersion(data, (0.0, 2.0))[0] == 1.0

    def test_error_formula(self):
        v = np.array([200.0, -200.0] * 25)
        data = [KinematicDatum(3.0, float(x)) for x in v]
        sigma, delta = projected_dispersion(data, (2.0, 4.0))
        assert sigma == pytest.approx(200.0)
        assert delta == pytest.approx(20.0)

    def test_too_few(self):
        with pytest.raises(ModelError):
            projected_dispersion([KinematicDatum(1.0, 0.0)], (0.0, 2.0))
