"""Newton solver, finite-difference Jacobian, fallback, and diagnostics."""

import numpy as np
import pytest

from hdse.errors import ConfigError, LikelyNonExistence, NonConvergence
from hdse.expectations import gaussian, point_mass
from hdse.losses import LossSpec
from hdse.solving import (
    SolverOptions,
    _fixed_point_2var,
    auto_init,
    evaluate_jacobian_fd,
    newton_solve,
    probe_uniqueness,
    solve_system,
)
from hdse.systems import ProblemSpec


def test_options_validation():
    with pytest.raises(ConfigError):
        SolverOptions(tol=2.0)
    with pytest.raises(ConfigError):
        SolverOptions(damping=0.0)
    with pytest.raises(ConfigError):
        SolverOptions(max_iter=0)


def test_jacobian_examples():
    J = evaluate_jacobian_fd(lambda x: np.array([x[0] ** 2, x[1]]), np.array([2.0, 3.0]), 1e-6)
    assert np.allclose(J, [[4.0, 0.0], [0.0, 1.0]], atol=1e-5)
    J = evaluate_jacobian_fd(lambda x: np.array([x[0] + x[1], x[0] - x[1]]),
                             np.array([0.3, -0.7]), 1e-6)
    assert np.allclose(J, [[1.0, 1.0], [1.0, -1.0]], atol=1e-9)
    # a linear residual gives a Jacobian independent of the step size
    J1 = evaluate_jacobian_fd(lambda x: np.array([3.0 * x[0]]), np.array([1.0]), 1e-4)
    J2 = evaluate_jacobian_fd(lambda x: np.array([3.0 * x[0]]), np.array([1.0]), 1e-8)
    assert np.allclose(J1, J2, atol=1e-6)


def test_scalar_newton_hook():
    x, info = newton_solve(lambda v: np.array([v[0] ** 2 - 4.0]), np.array([3.0]))
    assert x[0] == pytest.approx(2.0, abs=1e-8)
    assert info["residual_norm"] <= 1e-9


def test_solve_m_loo_auto_quadratic():
    spec = ProblemSpec("m_estimator", kappa=0.5, loss=LossSpec("quadratic"),
                       noise=gaussian(0.0, 1.0))
    sol = solve_system("m_loo", spec)
    assert sol.params["tau1"] == pytest.approx(1.0, abs=1e-8)
    assert sol.params["lam1"] == pytest.approx(1.0, abs=1e-8)
    assert sol.converged


def test_solve_lasso_amp_zero_penalty():
    spec = ProblemSpec("lasso", kappa=0.36, sigma_star=0.8, prior=point_mass(0.0),
                       noise=gaussian(0.0, 0.8), lambda_star=0.0)
    sol = solve_system("lasso_amp", spec)
    assert sol.params["tau1"] == pytest.approx(1.0, abs=1e-8)
    assert sol.params["gamma1"] == pytest.approx(0.0, abs=1e-8)


def test_deterministic_repeat():
    spec = ProblemSpec("m_estimator", kappa=0.3, loss=LossSpec("huber", delta=1.345),
                       noise=gaussian(0.0, 1.0))
    a = solve_system("m_loo", spec)
    b = solve_system("m_loo", spec)
    assert a.params == b.params
    assert a.residual_norm == b.residual_norm


def test_positive_roots_and_diagnostics():
    spec = ProblemSpec("logistic", kappa=0.1, r_star=1.0)
    sol = solve_system("logistic_loo", spec)
    assert all(v > 0 for v in sol.params.values())
    assert sol.jac_cond is not None and np.isfinite(sol.jac_cond)
    assert sol.iterations >= 1


def test_auto_init_unknown_system():
    spec = ProblemSpec("m_estimator", kappa=0.5, loss=LossSpec("quadratic"),
                       noise=gaussian(0.0, 1.0))
    with pytest.raises(ConfigError):
        solve_system("m_loo", spec, x0="bogus")
    with pytest.raises(ConfigError):
        solve_system("nosuch", spec)
    with pytest.raises(ConfigError):
        solve_system("lasso_amp", spec)  # model mismatch


def test_fixed_point_fallback_reaches_root():
    spec = ProblemSpec("m_estimator", kappa=0.3, loss=LossSpec("huber", delta=1.345),
                       noise=gaussian(0.0, 1.0))
    opts = SolverOptions(max_iter=400)
    x, info = _fixed_point_2var("m_loo", spec, auto_init("m_loo", spec, opts) * 3.0, opts)
    newton = solve_system("m_loo", spec)
    assert np.allclose(x, newton.vector(), atol=1e-6)


def test_probe_uniqueness_agreement():
    spec = ProblemSpec("m_estimator", kappa=0.3, loss=LossSpec("huber", delta=1.345),
                       noise=gaussian(0.0, 1.0))
    solutions, spread, multiple = probe_uniqueness("m_loo", spec)
    assert len(solutions) >= 3
    assert spread < 1e-6
    assert not multiple


def test_logistic_nonexistence_diagnosis():
    spec = ProblemSpec("logistic", kappa=0.9, r_star=5.0)
    with pytest.raises(LikelyNonExistence):
        solve_system("logistic_loo", spec)


def test_nonconvergence_attaches_best_iterate():
    # an unsolvable scalar residual: x^2 + 1 = 0 has no real root
    with pytest.raises(NonConvergence) as err:
        newton_solve(lambda v: np.array([v[0] ** 2 + 1.0]), np.array([2.0]),
                     SolverOptions(max_iter=50))
    assert err.value.best is not None
    assert err.value.residual_norm >= 1.0


def test_accepted_steps_never_increase_residual():
    # instrument the residual to record the norm at every accepted iterate
    spec = ProblemSpec("m_estimator", kappa=0.3, loss=LossSpec("huber", delta=1.345),
                       noise=gaussian(0.0, 1.0))
    from hdse.systems import residual_m_loo

    norms = []

    def residual(x):
        r = residual_m_loo(np.maximum(x, 1e-8), spec)
        return r

    def guard(x):
        norms.append(float(np.max(np.abs(residual(x)))))

    x0 = auto_init("m_loo", spec, SolverOptions()) * 4.0
    newton_solve(residual, x0, SolverOptions(), clamp=lambda v: np.maximum(v, 1e-8),
                 guard=guard)
    assert len(norms) >= 2
    assert all(b < a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
