"""Nonparametric recovery of the phase-space density and mass profile of a
spherical system from line-of-sight velocities, with an isotropy test."""
from .model import (G, Configuration, DfMode, EnergyAngularMomentumGrid, KinematicDatum,
                    ModelError, PhaseDensityHistogram, RadialDensityHistogram, RadialGrid,
                    default_radial_grid, display_normalize, linear_energy_grid, log_radial_grid,
                    normalize_df, validate_configuration, validate_density, validate_df)
from .potential import PotentialProfile, enclosed_mass, outer_turning_radius, solve_potential
from .projection import (IsotropicProjector, LikelihoodSettings, datum_probability,
                         log_likelihood, mass_penalty, penalized_log_likelihood)
from .sampler import (Chain, SamplerSettings, gelman_rubin, mh_step, propose_density_scale,
                      propose_density_shape, propose_df, run_chain, run_chains, seed_configuration,
                      support_scale, uncertainty_envelope, velocity_scale)
from .fbst import (EvidenceReport, FbstSettings, evidence, find_theta_star, resample_observables,
                   run_fbst)
from .synthgen import (AnnulusPlan, TestPotentialSpec, ToyDfSpec, draw_natural, draw_sample, eval_toy_df,
                       phi_test, projected_dispersion)

__version__ = "0.1.0"
