"""Exception types shared across the package."""


class HdseError(Exception):
    """Base class for all package errors."""


class ConfigError(HdseError):
    """Invalid configuration, unknown name, or unsupported combination."""


class StateError(HdseError):
    """Operation requested on an object in the wrong state."""


class NumericError(HdseError):
    """Numerical failure: non-finite values, failed decomposition, failed root find."""


class SingularJacobian(NumericError):
    """Finite-difference Jacobian is rank deficient beyond recovery."""


class NonConvergence(HdseError):
    """Iteration budget exhausted. Carries the best iterate seen."""

    def __init__(self, message, best=None, residual_norm=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm
        self.iterations = iterations


class LikelyNonExistence(NonConvergence):
    """A state-equation root appears to run away to infinity.

    For the logistic systems this is the signature of the maximum-likelihood
    phase transition: above the critical aspect ratio no finite root exists.
    """


class MleNonExistence(HdseError):
    """Finite-sample logistic likelihood has no minimizer (separable data)."""


class DivergenceError(HdseError):
    """Iterates of a fixed-point recursion blew up."""
