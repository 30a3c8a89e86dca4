"""Stochastic Krylov estimators with randomized truncation and preconditioning.

Building blocks:

- ``operators``: SPD operators and dense reference oracles
- ``kernels``: RBF / Matern-3/2 gram matrices and hyperparameter derivatives
- ``krylov``: CG/PCG and Lanczos with windowed reorthogonalization
- ``truncation``: truncation-index distributions and Gamma-factor optimization
- ``precond``: pivoted-Cholesky low-rank-plus-shift preconditioner
- ``estimators``: TSS-Solve, TSS-LogQF, SS/RR baselines, SLQ, Hutchinson
- ``gp``: GP negative log marginal likelihood, exact and estimated
- ``optim``: softplus-reparameterized GD/Adam hyperparameter training
- ``harness``: experiment CLI and CSV emission
"""

from .estimators import (EnumeratedTss, TruncatedSolver, TssScalarResult,
                         TssSolveResult, TssSolver, VarianceBound,
                         enumerate_tss_scalar, enumerate_tss_solve,
                         hutchinson_trace_derivative, quad_form_estimate,
                         quad_form_grad_estimate, resolve_dist, rr_solve,
                         slq_logdet, ss_solve, tss_exact_moments, tss_invqf,
                         tss_logqf, tss_solve, variance_bound)
from .gp import (EstimatorConfig, GpModel, nlml_estimate, nlml_exact,
                 nlml_grad_estimate, nlml_grad_exact,
                 nlml_value_and_grad_estimate, sample_labels_from_prior)
from .kernels import Dataset, KernelSpec, gram_derivative, gram_matrix, kernel_eval
from .krylov import (FULL, CgTrace, LanczosTrace, ReorthPolicy, cg_run,
                     cg_to_tridiagonal, estimate_condition_number, lanczos_run)
from .operators import (DenseOracleResult, NotSpdError, SpdOperator,
                        condition_number_dense, dense_cholesky_oracle)
from .optim import (AdamState, TrainRecord, TrainResult, adam_step, chain_grad,
                    gd_step, softplus, softplus_inv, train)
from .precond import LowRankShiftPreconditioner, build_pivoted_cholesky, logdet_m
from .truncation import (DistSpec, GammaFactor, TruncationDistribution,
                         gamma_factor, gamma_optimal_value, make_exponential,
                         make_gamma_optimal, make_geometric,
                         minimize_weighted_sum, sample)

__version__ = "0.1.0"
