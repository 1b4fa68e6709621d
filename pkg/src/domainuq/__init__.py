"""Uncertainty quantification for elliptic diffusion problems on randomly
deformed discs with rough random coefficients.

The package combines the domain mapping treatment of the random domain
with a first order perturbation treatment of the non-smooth random part
of the diffusion coefficient, and provides direct Monte Carlo sampling to
validate the quadratic accuracy of the perturbation estimator.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateDeformation, DomainUQError,
                     EigFailed, MeshMismatch, NonPositiveCoefficient,
                     NonPositiveData, NotPSD, OutOfHoldAll, SolverDiverged)
from .mesh import Mesh, build_disc_mesh, displace, refine
from .fem import (NodalField, assemble_load, assemble_mass,
                  assemble_perturbation_load, assemble_stiffness, h1_norm,
                  l2_norm, solve_dirichlet, w11_norm)
from .lowrank import (CovarianceOracle, DenseOracle, KLBasis, LowRankFactor,
                      mode_magnitudes, pivoted_cholesky, reduced_eigs,
                      truncate)
from .fields import (HoldAllGrid, Sample, ScalarFieldKL, VectorFieldKL,
                     build_coefficient_kl, build_vector_field_kl, draw_sample,
                     eval_coefficient, eval_displacement, g_hat, rng_stream,
                     sample_uniform)
from .perturb import (DeformedProblem, SampleSolve, delta_second_moment,
                      solve_delta_u, solve_sample, solve_transported,
                      solve_u0, solve_u_eps, taylor_remainder,
                      taylor_remainders)
from .uq import (QuadratureRule, Statistics, anisotropy_weights, field_error,
                 gauss_legendre_1d, mc_estimate, quadrature_estimate,
                 slope_fit, smolyak_rule)
from .config import ExperimentConfig, load_config, parse_config
