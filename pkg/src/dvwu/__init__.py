"""Data value-weighted certified unlearning for convex linear models.

The package trains L2-regularized linear classifiers, values their training
samples (leave-one-out or exact k-NN Shapley), and removes batches of samples
with single weighted Newton steps whose strength per sample is set by its
value.  Gaussian output or objective perturbation plus a gradient-residual
certification check make the deletions (epsilon, delta)-certified, with exact
retraining as the fallback.  A harness runs continuous-deletion experiments
and efficiency benchmarks against retraining, influence-function, and
gradient-ascent baselines.
"""

__version__ = "0.1.0"

from .dataset import Dataset
from .errors import (BudgetExhaustedError, ConvergenceError, DataLoadError,
                     IllConditionedHessianError, InvalidArgumentError,
                     UnlearnError)
from .losses import LossKind
from .models import Metrics, ModelState, evaluate, full_gradient, full_hessian, \
    loss_value, per_sample_gradient, per_sample_hessian, train
from .valuation import (ValuationMethod, ValueProfile, dynamic_update, knn_sv,
                        loo_values, weights_from_values)
from .unlearn import (CertBudget, InfluenceUnlearner, NewtonUnlearner,
                      RoundOutcome, certify_or_retrain, dvwu_newton_step,
                      epsilon1_prime, epsilon2_prime, gauss_constant,
                      gradient_residual, hessian_downdate,
                      objective_perturb_setup, output_perturb, threshold0,
                      threshold1, unit_weights, unlearn_gradient_ascent,
                      unlearn_influence, unlearn_newton_unweighted,
                      weighted_gradient)
from .data_io import (SynthConfig, gen_synthetic, load_csv, norm_bound, split,
                      standardize)
from .harness import (ExperimentConfig, ExperimentReport, emit_report,
                      run_continuous_deletion, run_efficiency_bench)

__all__ = [name for name in dir() if not name.startswith("_")]
