"""Hard-edge tail simulation for beta-Laguerre ensembles."""
from .asymptotics import (P1Table, build_p1_table, calibrate_kappa3, exit_probability,
                          leading_log_factor, lemma4_bound, sandwich_check, solve_p1_table,
                          tail_fit)
from .core import (DiffusionPath, DomainError, EnsembleParams, MonteCarloEstimate, PathStatus,
                   RngStream, SimConfig, TimeGrid, horizon_T, make_params,
                   sample_brownian_increments)
from .diffusion import (DriftSpec, ExplosionPolicy, coupled_y_family, estimate_p_direct,
                        integrate, sample_z_stationary, simulate_batch,
                        simulate_q_boundary_check)
from .girsanov import (GirsanovWeight, HFamily, estimate_e_lambda, estimate_p_importance, kappa,
                       kappa_from_h, log_R_closed, log_R_direct, nu, phi)
from .matrix_model import (BidiagonalMatrix, HardEdgeSample, empirical_survival,
                           sample_bidiagonal, sample_hard_edge, smallest_eigenvalue)
from .operator_model import (build_operator, largest_eigenvalue, riccati_sweep,
                             sample_operator_lambda)

__version__ = "0.1.0"
