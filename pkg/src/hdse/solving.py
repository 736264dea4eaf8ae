"""Root finding for the state-equation systems.

The workhorse is a damped Newton iteration on a finite-difference Jacobian
with positivity clamping; accepted steps never increase the residual
max-norm.  The two-parameter systems additionally have a damped fixed-point
fallback that mirrors the natural state-evolution iteration and is far more
forgiving about initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import losses
from .errors import (
    ConfigError,
    LikelyNonExistence,
    NonConvergence,
    NumericError,
    SingularJacobian,
)
from .expectations import expect_noise_sum
from .systems import ProblemSpec, SeSolution, SystemDef, system_for

DAMPING_FLOOR = 1.0 / 64.0
# A scale parameter this large on the way to max_iter is treated as a root
# escaping to infinity (the logistic phase transition).
BLOWUP_SCALE = 1e5


@dataclass(frozen=True)
class SolverOptions:
    """Newton solver knobs; defaults follow the acceptance tolerances."""

    tol: float = 1e-9
    max_iter: int = 200
    fd_step: float = 1e-6
    damping: float = 1.0
    positivity_floor: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ConfigError("tol must lie in (0, 1)")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be positive")
        if self.fd_step <= 0:
            raise ConfigError("fd_step must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")
        if self.positivity_floor <= 0:
            raise ConfigError("positivity_floor must be positive")


def evaluate_jacobian_fd(residual, x, fd_step: float) -> np.ndarray:
    """Central-difference Jacobian, step scaled per coordinate."""
    x = np.asarray(x, dtype=float)
    n = x.size
    cols = []
    for i in range(n):
        h = fd_step * max(abs(x[i]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        rp = np.asarray(residual(xp), dtype=float)
        rm = np.asarray(residual(xm), dtype=float)
        if not (np.all(np.isfinite(rp)) and np.all(np.isfinite(rm))):
            raise NumericError(f"non-finite residual while differencing coordinate {i}")
        cols.append((rp - rm) / (2.0 * h))
    return np.column_stack(cols)


def newton_solve(residual, x0, opts: SolverOptions | None = None, clamp=None, guard=None):
    """Damped Newton with monotone residual max-norm.

    ``clamp`` maps a candidate iterate back into the feasible region,
    ``guard`` may inspect each accepted iterate and raise.  Returns
    ``(x, info)`` with iteration count, final residual norm, and a condition
    estimate of the last Jacobian.
    """
    opts = opts or SolverOptions()
    x = np.asarray(x0, dtype=float).copy()
    if clamp is not None:
        x = clamp(x)
    r = np.asarray(residual(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise NumericError("residual not finite at the initial point")
    norm = float(np.max(np.abs(r)))
    jac_cond = None
    for it in range(1, opts.max_iter + 1):
        if norm <= opts.tol:
            return x, {"iterations": it - 1, "residual_norm": norm, "jac_cond": jac_cond}
        jac = evaluate_jacobian_fd(residual, x, opts.fd_step)
        jac_cond = float(np.linalg.cond(jac))
        if not np.isfinite(jac_cond) or jac_cond > 1e14:
            raise SingularJacobian(
                f"Jacobian condition {jac_cond:.3g} at iteration {it}")
        try:
            direction = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc

        step = opts.damping
        accepted = False
        while step >= DAMPING_FLOOR:
            cand = x + step * direction
            if clamp is not None:
                cand = clamp(cand)
            rc = np.asarray(residual(cand), dtype=float)
            nc = float(np.max(np.abs(rc))) if np.all(np.isfinite(rc)) else np.inf
            if nc < norm:
                x, r, norm = cand, rc, nc
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise NonConvergence(
                f"stalled at residual {norm:.3e} (damping floor reached)",
                best=x, residual_norm=norm, iterations=it)
        if guard is not None:
            guard(x)
    if norm <= opts.tol:
        return x, {"iterations": opts.max_iter, "residual_norm": norm, "jac_cond": jac_cond}
    raise NonConvergence(
        f"no convergence in {opts.max_iter} iterations, residual {norm:.3e}",
        best=x, residual_norm=norm, iterations=opts.max_iter)


# ---------------------------------------------------------------------------
# Auto-initialization


def _grid_search_logistic(sdef: SystemDef, spec: ProblemSpec, opts: SolverOptions):
    # alpha starts at 1 + kappa; the remaining scale is scanned coarsely.
    lam0 = spec.kappa / (1.0 - spec.kappa)
    grid = np.arange(1, 9) * 0.25
    best, best_norm = None, np.inf
    for g in grid:
        if sdef.name == "logistic_loo":
            cand = {"alpha1": 1.0 + spec.kappa, "sigma": g, "lam1": lam0}
        else:
            cand = {"alpha2": (1.0 + spec.kappa) * np.sqrt(spec.kappa),
                    "mu": spec.r_star * g, "lam2": lam0}
        vec = np.array([cand[n] for n in sdef.params])
        try:
            norm = float(np.max(np.abs(sdef.residual(vec, spec))))
        except (ValueError, NumericError):
            continue
        if norm < best_norm:
            best, best_norm = vec, norm
    if best is None:
        raise NumericError(f"no feasible initialization found for {sdef.name}")
    return best


def auto_init(system: str, spec: ProblemSpec, opts: SolverOptions | None = None) -> np.ndarray:
    """Initialization rules; the quadratic closed form anchors the m systems."""
    opts = opts or SolverOptions()
    sdef = system_for(system)
    k = spec.kappa
    if sdef.model == "m_estimator":
        tau0 = spec.sigma_star * np.sqrt(max(k, 0.1) / (1.0 - k))
        tau0 = max(tau0, opts.positivity_floor)
        lam0 = k / (1.0 - k)
        if system in ("m_loo", "m_amp"):
            return np.array([tau0, lam0])
        e_dt = expect_noise_sum(
            lambda s: losses.moreau_bundle(spec.loss, s, lam0).dm_dt,
            spec.noise, tau0, spec.rule(), kinks=losses.prox_kinks(spec.loss, lam0))
        mu0 = np.sqrt(max(-2.0 * e_dt, opts.positivity_floor))
        return np.array([tau0, lam0 * mu0, mu0])
    if system == "lasso_amp":
        tau0 = spec.sigma_star / np.sqrt(max(1.0 - k, 0.1))
        return np.array([max(tau0, opts.positivity_floor), spec.lambda_star])
    if system == "lasso_cgmt":
        # mapped from a solved lasso_amp point; the solve order is enforced here
        from .transforms import map_parameters
        amp = solve_system("lasso_amp", spec, opts=opts)
        mapped = map_parameters(amp, "lasso_cgmt", spec)
        return np.array([mapped[n] for n in sdef.params])
    return _grid_search_logistic(sdef, spec, opts)


def _clamp_for(sdef: SystemDef, floor: float):
    pos = [i for i, n in enumerate(sdef.params) if n in sdef.positive]
    nonneg = [i for i, n in enumerate(sdef.params) if n in sdef.nonnegative]

    def clamp(x):
        x = x.copy()
        for i in pos:
            x[i] = max(x[i], floor)
        for i in nonneg:
            x[i] = max(x[i], 0.0)
        return x

    return clamp


def _fixed_point_2var(system: str, spec: ProblemSpec, x0, opts: SolverOptions):
    """Damped natural iteration for the two-parameter systems.

    The variance equation updates tau; the threshold equation is solved for
    the second parameter by bracketed bisection at fixed tau.  Globally
    stable for these maps, if slow.
    """
    sdef = system_for(system)
    loss, rule = spec.loss, spec.rule()
    k = spec.kappa
    tau, second = float(x0[0]), float(x0[1])
    damping = 0.5

    def threshold_equation(tau_cur, lam):
        if system == "m_loo":
            kinks = losses.prox_kinks(loss, lam)
            return expect_noise_sum(lambda s: losses.prox_deriv(loss, s, lam),
                                    spec.noise, tau_cur, rule, kinks=kinks) - (1.0 - k)
        if system == "m_amp":
            kinks = losses.prox_kinks(loss, lam)
            return lam * expect_noise_sum(
                lambda s: losses.moreau_bundle(loss, s, lam).d2m_dx2,
                spec.noise, tau_cur, rule, kinks=kinks) - k
        # lasso_amp: solve for the threshold shift gamma
        from .systems import lasso_signal_moments
        mom = lasso_signal_moments(spec.prior, 1.0, tau_cur, spec.lambda_star + lam)
        return k * (spec.lambda_star + lam) * mom.eta_deriv - lam

    def solve_second(tau_cur, current):
        lo = 0.0 if system == "lasso_amp" else opts.positivity_floor
        hi = max(4.0 * max(current, 1e-3), 1.0)
        flo = threshold_equation(tau_cur, lo if lo > 0 else 1e-300)
        for _ in range(80):
            if threshold_equation(tau_cur, hi) * flo < 0:
                break
            hi *= 2.0
        else:
            raise NumericError(f"no bracket for the threshold equation of {system}")
        return brentq(lambda v: threshold_equation(tau_cur, v), lo if lo > 0 else 1e-300,
                      hi, xtol=1e-14, rtol=1e-15)

    def tau_update(lam):
        if system == "m_loo":
            kinks = losses.prox_kinks(loss, lam)
            e_sq = expect_noise_sum(lambda s: (s - losses.prox(loss, s, lam)) ** 2,
                                    spec.noise, tau, rule, kinks=kinks)
            return np.sqrt(e_sq / k)
        if system == "m_amp":
            kinks = losses.prox_kinks(loss, lam)
            e_dx2 = expect_noise_sum(lambda s: losses.moreau_bundle(loss, s, lam).dm_dx ** 2,
                                     spec.noise, tau, rule, kinks=kinks)
            return np.sqrt(lam * lam * e_dx2 / k)
        from .systems import lasso_signal_moments
        mom = lasso_signal_moments(spec.prior, 1.0, tau, spec.lambda_star + lam)
        return np.sqrt(spec.sigma_star ** 2 + k * mom.shift_sq)

    residual = sdef.residual
    for it in range(1, opts.max_iter + 1):
        second = solve_second(tau, second)
        tau_new = tau_update(second)
        tau = max((1.0 - damping) * tau + damping * tau_new, opts.positivity_floor)
        r = residual(np.array([tau, second]), spec)
        norm = float(np.max(np.abs(r)))
        if norm <= opts.tol:
            return np.array([tau, second]), {"iterations": it, "residual_norm": norm,
                                             "jac_cond": None}
    raise NonConvergence(f"fixed-point iteration stalled for {system}",
                         best=np.array([tau, second]), residual_norm=norm, iterations=it)


def _scaled_norm(sdef: SystemDef, r: np.ndarray, x: np.ndarray) -> float:
    # Residual components of the logistic systems grow polynomially with the
    # scale parameters, so comparisons across escalated starting points use a
    # normalized norm that stays O(1) along the escape direction.
    if sdef.name == "logistic_loo":
        alpha, lam = x[0], x[2]
        scale = np.array([1.0 + alpha ** 2 + lam ** 2, 1.0 + lam, 1.0])
    elif sdef.name == "logistic_cgmt":
        alpha, lam = x[0], x[2]
        scale = np.array([1.0, 1.0 + alpha ** 2 + lam ** 2, 1.0])
    else:
        scale = np.ones_like(r)
    return float(np.max(np.abs(r) / scale))


def _logistic_escalation_probe(sdef: SystemDef, spec: ProblemSpec, start, first_exc,
                               residual, clamp, opts: SolverOptions):
    """Decide between NonConvergence and a root escaping to infinity.

    Retries Newton with the scale parameters (alpha, lam) multiplied by
    increasing factors.  If no retry converges, the stall residual stays far
    from zero everywhere, and escalating the scales does not make the
    normalized residual worse, the system behaves as if its root lies at
    alpha = +infinity, which is the maximum-likelihood phase transition.
    """
    scale_idx = [i for i, n in enumerate(sdef.params)
                 if n.startswith("alpha") or n.startswith("lam")]

    def stall_norm(exc):
        best = exc.best if getattr(exc, "best", None) is not None else start
        best = clamp(np.asarray(best, dtype=float))
        return _scaled_norm(sdef, np.asarray(residual(best)), best)

    norms = [stall_norm(first_exc)]
    for factor in (10.0, 100.0):
        x0 = start.copy()
        for i in scale_idx:
            x0[i] *= factor
        try:
            return newton_solve(residual, x0, opts, clamp=clamp)
        except (SingularJacobian, NonConvergence) as exc:
            norms.append(stall_norm(exc))
    if min(norms) > 1e-3 and norms[-1] <= 3.0 * norms[0]:
        raise LikelyNonExistence(
            f"{sdef.name} stalls at normalized residual {min(norms):.3g} at every "
            "probed scale; the root appears to lie at infinity "
            "(maximum-likelihood phase transition)",
            best=first_exc.best, residual_norm=getattr(first_exc, "residual_norm", None),
            iterations=getattr(first_exc, "iterations", None)) from first_exc
    raise first_exc


def solve_system(system: str, spec: ProblemSpec, x0="auto",
                 opts: SolverOptions | None = None) -> SeSolution:
    """Solve one state-equation system to the requested residual max-norm.

    Raises NonConvergence with the best iterate attached when the budget runs
    out, SingularJacobian when even the fixed-point fallback cannot recover,
    and LikelyNonExistence when a logistic root runs away (the maximum
    likelihood phase transition).
    """
    opts = opts or SolverOptions()
    sdef = system_for(system)
    if sdef.model != spec.model:
        raise ConfigError(f"system {system} expects model {sdef.model}, spec has {spec.model}")
    if isinstance(x0, str):
        if x0 != "auto":
            raise ConfigError(f"unknown initialization {x0!r}")
        start = auto_init(system, spec, opts)
    elif isinstance(x0, dict):
        start = np.array([float(x0[n]) for n in sdef.params])
    else:
        start = np.asarray(x0, dtype=float)
        if start.size != len(sdef.params):
            raise ConfigError(f"x0 must have {len(sdef.params)} entries {sdef.params}")

    clamp = _clamp_for(sdef, opts.positivity_floor)
    start = clamp(start)
    scale_guard = None
    if sdef.model == "logistic":
        watched = [i for i, n in enumerate(sdef.params) if n.startswith("alpha")]

        def scale_guard(x):
            for i in watched:
                if x[i] > BLOWUP_SCALE:
                    raise LikelyNonExistence(
                        f"{sdef.params[i]} grew past {BLOWUP_SCALE:g}; "
                        "the system likely has no finite root",
                        best=x, residual_norm=None, iterations=None)

    def residual(x):
        # evaluate on the clamped point so finite differencing at the
        # positivity floor cannot step outside the domain
        return sdef.residual(clamp(np.asarray(x, dtype=float)), spec)

    try:
        x, info = newton_solve(residual, start, opts, clamp=clamp, guard=scale_guard)
    except (SingularJacobian, NonConvergence) as exc:
        if isinstance(exc, LikelyNonExistence):
            raise
        if sdef.model == "logistic":
            x, info = _logistic_escalation_probe(sdef, spec, start, exc, residual,
                                                 clamp, opts)
        elif len(sdef.params) == 2:
            fp_start = exc.best if isinstance(exc, NonConvergence) and exc.best is not None \
                else start
            x, info = _fixed_point_2var(system, spec, fp_start, opts)
        else:
            raise

    return SeSolution(system=system, params=dict(zip(sdef.params, map(float, x))),
                      residual_norm=info["residual_norm"], iterations=info["iterations"],
                      tol=opts.tol, jac_cond=info["jac_cond"])


def probe_uniqueness(system: str, spec: ProblemSpec, opts: SolverOptions | None = None,
                     factors=(0.5, 0.75, 1.0, 1.5, 2.0)):
    """Re-solve from spread initializations and report the solution scatter.

    Returns ``(solutions, max_spread, multiple)``; ``multiple`` flags runs
    that converged to visibly different roots, rather than assuming the
    root is unique.
    """
    opts = opts or SolverOptions()
    base = auto_init(system, spec, opts)
    solutions = []
    for factor in factors:
        try:
            solutions.append(solve_system(system, spec, x0=base * factor, opts=opts))
        except (NonConvergence, NumericError):
            continue
    if not solutions:
        raise NonConvergence(f"no initialization converged for {system}")
    vectors = np.array([s.vector() for s in solutions])
    max_spread = float(np.max(np.ptp(vectors, axis=0))) if len(vectors) > 1 else 0.0
    return solutions, max_spread, max_spread > 1e-6
