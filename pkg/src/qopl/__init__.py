"""Quantile-based offline policy learning under confounding.

Synthetic IV and negative-control generators, the closed-form minimax moment
loss, greedy and pessimistic policy learners, closed-form policy evaluation and a
deterministic Monte Carlo regret harness.
"""

from .dgp import (BETA_TRUE, AppendixConfig, DgpConfig, IvDataset, NcDataset, NcDgpConfig,
                  generate_appendix_dataset, generate_iv_dataset, generate_nc_dataset,
                  oracle_policy, structural_quantile, write_dataset_csv)
from .errors import (ConfigurationError, DataError, NumericalError, OptimizationError,
                     QoplError, UnsupportedModeError)
from .evaluation import (ContextDistribution, LinearPolicy, ValueEstimate, regret,
                         value_closed_form, value_monte_carlo)
from .features import (APPENDIX10, MAIN13, HypothesisParams, TestBasis, build_design_matrix,
                       custom_basis, hypothesis_features)
from .harness import (ExperimentConfig, RegretCurve, read_csv, run_experiment, write_csv)
from .learners import (FitConfig, FitResult, fit_alternating, fit_greedy, fit_nc_regularized,
                       fit_pessimistic_regularized, fit_solution_set, fit_spectral_risk)
from .loss import (LossConfig, MinimaxLoss, NcLoss, empirical_loss, excess_loss,
                   inner_maximize, loss_gradient, nc_loss)
from .plotting import plot_curves

__version__ = "0.1.0"
