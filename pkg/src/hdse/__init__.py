"""State-equation toolkit for high-dimensional regression asymptotics.

Solves the scalar equation systems that pin down the limiting risk of
M-estimation, l1-regularized least squares, and logistic maximum likelihood,
verifies the parameter maps tying the systems of each family together, and
validates the predictions against Monte-Carlo simulation of the actual
estimators.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DivergenceError,
    HdseError,
    LikelyNonExistence,
    MleNonExistence,
    NonConvergence,
    NumericError,
    SingularJacobian,
    StateError,
)
from .expectations import (
    DistributionSpec,
    QuadratureRule,
    bernoulli_gaussian,
    expect_bivariate_gaussian,
    expect_noise_gaussian,
    expect_signal_gaussian,
    expect_zv,
    gauss_hermite,
    gaussian,
    point_mass,
    two_point,
)
from .losses import LossSpec, MoreauBundle, eval_loss, moreau_bundle, prox, soft_threshold
from .solving import SolverOptions, probe_uniqueness, solve_system
from .systems import ProblemSpec, SeSolution, SYSTEMS, mse_from_solution
from .transforms import EquivalenceReport, map_parameters, verify_equivalence

__all__ = [
    "ConfigError",
    "DistributionSpec",
    "DivergenceError",
    "EquivalenceReport",
    "HdseError",
    "LikelyNonExistence",
    "LossSpec",
    "MleNonExistence",
    "MoreauBundle",
    "NonConvergence",
    "NumericError",
    "ProblemSpec",
    "QuadratureRule",
    "SYSTEMS",
    "SeSolution",
    "SingularJacobian",
    "SolverOptions",
    "StateError",
    "bernoulli_gaussian",
    "eval_loss",
    "expect_bivariate_gaussian",
    "expect_noise_gaussian",
    "expect_signal_gaussian",
    "expect_zv",
    "gauss_hermite",
    "gaussian",
    "map_parameters",
    "moreau_bundle",
    "mse_from_solution",
    "point_mass",
    "probe_uniqueness",
    "prox",
    "soft_threshold",
    "solve_system",
    "two_point",
    "verify_equivalence",
]
