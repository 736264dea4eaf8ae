"""Synthetic data and finite-sample estimators used to validate SE predictions.

Design entries are N(0, 1/n) for every model, so columns have unit norm in
expectation and sqrt(n) * X is a standard Gaussian matrix.  All randomness
flows through a counter-based generator keyed by (seed, replicate), which
makes replicates independent streams and results order-insensitive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .errors import ConfigError, MleNonExistence, NonConvergence
from .systems import ProblemSpec

DESIGN_VARIANCE = "1/n"


def make_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, replicate))))


@dataclass
class Dataset:
    """One synthetic instance: design, response, and the generating truth."""

    design: np.ndarray
    response: np.ndarray
    truth: np.ndarray
    spec: ProblemSpec
    seed: int

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]


@dataclass
class AmpState:
    """Iterate of the AMP recursion for the l1 problem."""

    beta: np.ndarray
    residual: np.ndarray
    gamma: float
    iter: int
    converged: bool = False
    diverged: bool = False


def _dimensions(spec: ProblemSpec, n: int) -> int:
    if n < 1:
        raise ConfigError("n must be at least 1")
    d = int(round(spec.kappa * n))
    if d < 1:
        raise ConfigError(f"kappa*n rounds to {d}; need at least one feature")
    return d


def gen_linear_data(spec: ProblemSpec, n: int, seed: int, replicate: int = 0) -> Dataset:
    """y = X beta* + eps with X entries N(0, 1/n), beta* ~ prior, eps ~ noise."""
    d = _dimensions(spec, n)
    rng = make_rng(seed, replicate)
    design = rng.normal(0.0, 1.0 / np.sqrt(n), (n, d))
    truth = spec.prior.sample(rng, d)
    eps = spec.noise.sample(rng, n)
    return Dataset(design, design @ truth + eps, truth, spec, seed)


def gen_logistic_data(spec: ProblemSpec, n: int, seed: int, replicate: int = 0) -> Dataset:
    """Labels +-1 with P(y = 1 | x) = sigmoid(x' beta*)."""
    from scipy.special import expit

    d = _dimensions(spec, n)
    rng = make_rng(seed, replicate)
    design = rng.normal(0.0, 1.0 / np.sqrt(n), (n, d))
    truth = spec.prior.sample(rng, d)
    probs = expit(design @ truth)
    response = np.where(rng.random(n) < probs, 1.0, -1.0)
    return Dataset(design, response, truth, spec, seed)


# ---------------------------------------------------------------------------
# Fits


def fit_m_estimator(data: Dataset, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Minimize sum_i loss(y_i - x_i' beta) by damped Newton from the OLS point.

    The Hessian uses the loss curvature with a 1e-6 identity floor so the
    piecewise-quadratic huber stays well posed across its knee.  The absolute
    loss has no curvature anywhere and its optimum does not satisfy a
    gradient certificate, so it is not fittable here.
    """
    loss = data.spec.loss
    if loss.kind == "absolute":
        raise ConfigError("absolute-loss fitting is not supported (no gradient certificate)")
    X, y = data.design, data.response
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    if loss.kind == "quadratic":
        return beta

    def objective(b):
        return float(np.sum(losses.eval_loss(loss, y - X @ b)))

    obj = objective(beta)
    for _ in range(max_iter):
        r = y - X @ beta
        grad = -X.T @ losses.loss_deriv(loss, r)
        if float(np.max(np.abs(grad))) < tol:
            return beta
        curv = losses.loss_curvature(loss, r)
        hess = X.T @ (curv[:, None] * X)
        hess[np.diag_indices_from(hess)] += 1e-6
        direction = np.linalg.solve(hess, -grad)
        step = 1.0
        while step > 1e-8:
            cand = beta + step * direction
            cand_obj = objective(cand)
            if cand_obj <= obj:
                beta, obj = cand, cand_obj
                break
            step *= 0.5
        else:
            break
    r = y - X @ beta
    grad_norm = float(np.max(np.abs(X.T @ losses.loss_deriv(loss, r))))
    if grad_norm >= tol:
        raise NonConvergence(f"m-estimator gradient stalled at {grad_norm:.3e}",
                             best=beta, residual_norm=grad_norm, iterations=max_iter)
    return beta


def fit_lasso_cd(data: Dataset, lambda_star: float, tol: float = 1e-10,
                 max_sweeps: int = 20000) -> np.ndarray:
    """Cyclic coordinate descent for 0.5||y - X beta||^2 + lambda*||beta||_1."""
    if lambda_star < 0:
        raise ConfigError("lambda_star must be nonnegative")
    X, y = data.design, data.response
    d = data.d
    col_sq = np.einsum("ij,ij->j", X, X)
    beta = np.zeros(d)
    resid = y.copy()
    for _ in range(max_sweeps):
        max_change = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            xj = X[:, j]
            old = beta[j]
            rho = xj @ resid + col_sq[j] * old
            new = np.sign(rho) * max(abs(rho) - lambda_star, 0.0) / col_sq[j]
            if new != old:
                resid -= (new - old) * xj
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol:
            break
    else:
        raise NonConvergence("coordinate descent did not converge", best=beta,
                             residual_norm=max_change, iterations=max_sweeps)
    kkt = kkt_residual_lasso(data, beta, lambda_star)
    if kkt >= 1e-8:
        raise NonConvergence(f"coordinate descent finished with KKT residual {kkt:.3e}",
                             best=beta, residual_norm=kkt, iterations=max_sweeps)
    return beta


def kkt_residual_lasso(data: Dataset, beta: np.ndarray, lambda_star: float) -> float:
    """Max violation of the first-order conditions of the l1 problem."""
    g = data.design.T @ (data.design @ beta - data.response)
    active = beta != 0.0
    viol_active = np.abs(lambda_star * np.sign(beta[active]) + g[active])
    viol_inactive = np.maximum(np.abs(g[~active]) - lambda_star, 0.0)
    worst = 0.0
    if viol_active.size:
        worst = float(np.max(viol_active))
    if viol_inactive.size:
        worst = max(worst, float(np.max(viol_inactive)))
    return worst


def amp_lasso(data: Dataset, lambda_star: float, tol: float = 1e-9,
              max_iter: int = 3000):
    """AMP recursion with the memory (Onsager) correction on the residual.

    The correction uses the average of the threshold derivative: the update
    reads z = y - X beta + kappa * z_prev * mean(eta'), which is the unique
    scaling whose fixed point satisfies the l1 optimality conditions.
    Divergence is reported on the returned state, not raised.

    Returns ``(state, trajectory)`` where trajectory rows are
    ``(iter, gamma, est_tau)`` and est_tau = ||z|| / sqrt(n).
    """
    if lambda_star <= 0:
        raise ConfigError("amp_lasso requires lambda_star > 0")
    X, y = data.design, data.response
    n = data.n
    kappa = data.d / n
    beta = np.zeros(data.d)
    z = y.copy()
    gamma = 0.0
    trajectory = [(0, gamma, float(np.linalg.norm(z) / np.sqrt(n)))]
    for it in range(1, max_iter + 1):
        pseudo = beta + X.T @ z
        thresh = lambda_star + gamma
        new_beta, deriv = losses.soft_threshold(pseudo, thresh)
        c = float(np.mean(deriv))
        new_gamma = kappa * thresh * c
        new_z = y - X @ new_beta + kappa * z * c
        change = float(np.max(np.abs(new_beta - beta)))
        beta, z, gamma = new_beta, new_z, new_gamma
        trajectory.append((it, gamma, float(np.linalg.norm(z) / np.sqrt(n))))
        if not np.isfinite(change) or np.linalg.norm(beta) > 1e8:
            return AmpState(beta, z, gamma, it, diverged=True), trajectory
        if change < tol:
            return AmpState(beta, z, gamma, it, converged=True), trajectory
    return AmpState(beta, z, gamma, max_iter), trajectory


def fit_logistic_mle(data: Dataset, tol: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """Damped Newton on the empirical logistic loss (1/n) sum ell(y_i x_i' beta).

    Raises MleNonExistence when the iterates run off to infinity while the
    gradient stays bounded away from zero, the finite-sample signature of
    separable data.
    """
    from scipy.special import expit

    X, y = data.design, data.response
    n = data.n
    beta = np.zeros(data.d)

    def objective(b):
        return float(np.mean(np.logaddexp(0.0, -(y * (X @ b)))))

    def check_separation(b, grad_norm):
        # A point classifying every sample with near-zero loss certifies that
        # the data are separable: any multiple of it decreases the objective,
        # so the vanishing gradient is the escape to infinity, not a root.
        margins = y * (X @ b)
        if np.all(margins > 0) and objective(b) < 1e-6:
            raise MleNonExistence(
                f"all margins positive with mean loss {objective(b):.3e} "
                f"(gradient {grad_norm:.1e}); data are separable")

    obj = objective(beta)
    for _ in range(max_iter):
        margins = y * (X @ beta)
        s = expit(margins)
        grad = X.T @ (y * (s - 1.0)) / n
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < tol:
            check_separation(beta, grad_norm)
            return beta
        if np.linalg.norm(beta) > 1e4:
            raise MleNonExistence(
                f"||beta|| = {np.linalg.norm(beta):.3e} with gradient {grad_norm:.3e}; "
                "data are (close to) separable")
        w = s * (1.0 - s)
        hess = X.T @ (w[:, None] * X) / n
        hess[np.diag_indices_from(hess)] += 1e-12
        direction = np.linalg.solve(hess, -grad)
        step = 1.0
        while step > 1e-10:
            cand = beta + step * direction
            cand_obj = objective(cand)
            if cand_obj <= obj:
                beta, obj = cand, cand_obj
                break
            step *= 0.5
        else:
            break
    margins = y * (X @ beta)
    grad = X.T @ (y * (expit(margins) - 1.0)) / n
    grad_norm = float(np.max(np.abs(grad)))
    if grad_norm >= tol:
        if np.linalg.norm(beta) > 1e3:
            raise MleNonExistence(
                f"Newton pushed ||beta|| to {np.linalg.norm(beta):.3e}; "
                "data are (close to) separable")
        raise NonConvergence(f"logistic Newton stalled at gradient {grad_norm:.3e}",
                             best=beta, residual_norm=grad_norm, iterations=max_iter)
    check_separation(beta, grad_norm)
    return beta


# ---------------------------------------------------------------------------
# Empirical summaries


def empirical_mse(beta_hat: np.ndarray, data: Dataset) -> float:
    """(1/n) || beta_hat - beta* ||^2, matching the SE normalization."""
    if beta_hat.shape != data.truth.shape:
        raise ConfigError("dimension mismatch between estimate and truth")
    return float(np.sum((beta_hat - data.truth) ** 2) / data.n)


def logistic_overlap(beta_hat: np.ndarray, data: Dataset) -> tuple[float, float]:
    """(inflation, orthogonal-noise scale) of a logistic fit.

    inflation = <beta_hat, beta*> / ||beta*||^2 and the noise scale is
    ||P_perp beta_hat|| / sqrt(d), the empirical counterparts of the LOO
    system's sigma and alpha1.
    """
    truth_sq = float(np.dot(data.truth, data.truth))
    if truth_sq == 0.0:
        raise ConfigError("overlap is undefined for a zero signal")
    inflation = float(np.dot(beta_hat, data.truth)) / truth_sq
    ortho_sq = float(np.dot(beta_hat, beta_hat)) - inflation ** 2 * truth_sq
    return inflation, float(np.sqrt(max(ortho_sq, 0.0) / data.d))
