"""Survey-weighted clustered-coefficients regression with concave fusion."""

__version__ = "0.1.0"

from .admm import (
    PairIndex,
    SolverState,
    build_pair_index,
    composite_weights,
    fit,
    initialize,
    objective,
    per_location_wls,
    primal_residual,
    update_beta_eta,
    update_v,
    update_zeta,
    weighted_loss,
)
from .grouping import extract_partition, group_estimates, location_estimates, refit_oracle, score_gradient
from .metrics import adjusted_rand_index, rand_index_counts, rmse_beta, rmse_mu
from .penalty import ScadSpec, group_soft_threshold, scad_derivative, scad_value, zeta_proximal
from .selection import BicVariant, LambdaPath, default_lambda_grid, modified_bic, normalized_weights, select_lambda
from .simulation import (
    McSummary,
    Population,
    ScenarioSpec,
    generate_mean_population,
    generate_regression_population,
    informative_probabilities,
    poisson_sample,
    run_monte_carlo,
)
from .types import (
    AdmmConfig,
    Dataset,
    FitResult,
    LocationBlock,
    Partition,
    SingularSystemError,
    ValidationError,
    make_dataset,
    validate,
)

__all__ = [
    "AdmmConfig", "BicVariant", "Dataset", "FitResult", "LambdaPath", "LocationBlock",
    "McSummary", "PairIndex", "Partition", "Population", "ScadSpec", "ScenarioSpec",
    "SingularSystemError", "SolverState", "ValidationError",
    "adjusted_rand_index", "build_pair_index", "composite_weights", "default_lambda_grid",
    "extract_partition", "fit", "generate_mean_population", "generate_regression_population",
    "group_estimates", "group_soft_threshold", "informative_probabilities", "initialize",
    "location_estimates", "make_dataset", "modified_bic", "normalized_weights", "objective",
    "per_location_wls", "poisson_sample", "primal_residual", "rand_index_counts",
    "refit_oracle", "rmse_beta", "rmse_mu", "run_monte_carlo", "scad_derivative",
    "scad_value", "score_gradient", "select_lambda", "update_beta_eta", "update_v",
    "update_zeta", "validate", "weighted_loss", "zeta_proximal",
]
