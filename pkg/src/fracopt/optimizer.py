"""Box-constrained minimization of the reduced cost and optimality checks.

The problem is min J(z) over z_a <= z <= z_b with
J(z) = 1/2 ||S(z) - u_d||^2 + mu/2 ||z||^2. Stationarity is the fixed
point z = clamp(-phi/mu), so every solver stops on

    ||z - clamp(-phi(z)/mu)||_inf <= tol.

Two solvers share that rule: a projected gradient method with
Barzilai-Borwein steps and Armijo backtracking, and a semismooth Newton
method on the fixed-point residual that falls back to a gradient step
whenever the Newton step fails to reduce the residual. On top of the
solvers sit diagnostics: the variational-inequality residual, strongly
active sets, projection onto the tau-critical cone, a smallest-curvature
probe of the reduced Hessian on the cone's linear hull, and a sampler
for the quadratic growth inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .grid import Box, GridFunction, inner, lp_norm, project_box
from .nonlinearity import Nonlinearity
from .sensitivity import (SensitivityContext, hessian_matrix, hessian_vec,
                          reduced_cost, reduced_gradient, solve_adjoint)
from .state import StateSolveError, two_norm_gap

ARMIJO_SLOPE = 1e-4
ARMIJO_BACKTRACK = 0.5
ARMIJO_MAX_BACKTRACKS = 30
BB_STEP_MIN = 1e-8
BB_STEP_MAX = 1e8
TAU_DEFAULTS = (0.0, 1e-3, 1e-2)


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControlProblem:
    """Operator, nonlinearity, tracking target, Tikhonov weight, and box."""

    op: object
    nl: Nonlinearity
    u_d: GridFunction
    mu: float
    box: Box
    state_tol: float = 1e-12

    def __post_init__(self):
        if self.mu <= 0:
            raise OptimizerError(f"mu must be > 0, got {self.mu}")
        if self.u_d.grid != self.op.grid:
            raise OptimizerError("u_d lives on a different grid than the operator")
        if self.box.grid != self.op.grid:
            raise OptimizerError("box lives on a different grid than the operator")

    def context(self, z: GridFunction, state_report=None) -> SensitivityContext:
        return SensitivityContext(self.op, self.nl, z, self.u_d, self.mu,
                                  state_tol=self.state_tol,
                                  state_report=state_report)


@dataclass
class OptimalityReport:
    z: GridFunction
    u: GridFunction
    phi: GridFunction
    kkt_residual: float
    iterations: int
    method: str
    converged: bool
    cost: float
    cost_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    active_sets: Optional[dict] = None
    ssc: Optional[dict] = None
    growth: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "cost": self.cost,
            "cost_history": list(self.cost_history),
            "residual_history": list(self.residual_history),
            "z": self.z.values.tolist(),
            "u": self.u.values.tolist(),
            "phi": self.phi.values.tolist(),
        }
        if self.active_sets is not None:
            out["active_sets"] = {("%.17g" % tau): [bool(b) for b in mask]
                                  for tau, mask in self.active_sets.items()}
        if self.ssc is not None:
            out["ssc"] = dict(self.ssc)
        if self.growth is not None:
            out["growth"] = dict(self.growth)
        return out


def kkt_residual(z: GridFunction, phi: GridFunction, mu: float, box: Box) -> float:
    """sup-norm distance of z from the clamped gradient fixed point."""
    target = project_box(GridFunction(z.grid, -phi.values / mu), box)
    return lp_norm(GridFunction(z.grid, z.values - target.values), math.inf)


def _active_masks(problem: ControlProblem, z: GridFunction, phi: GridFunction,
                  taus) -> dict:
    g = phi.values + problem.mu * z.values
    return {float(tau): np.abs(g) > tau for tau in taus}


def _armijo_step(problem: ControlProblem, z: GridFunction, g: GridFunction,
                 j_current: float, alpha: float, u_warm: GridFunction):
    """Backtrack alpha until the projected step satisfies sufficient decrease.

    Returns (z_new, state_report, j_new) or None when no progress is possible
    (the projected step degenerates to z itself). The decrease test carries a
    10 * state_tol slack: the cost of a trial point is only known to the
    noise floor of the inexact state solve, and insisting on decrease below
    that floor stalls the search before tight KKT tolerances are reached.
    """
    noise = 10.0 * problem.state_tol * (1.0 + abs(j_current))
    for _ in range(ARMIJO_MAX_BACKTRACKS + 1):
        trial = project_box(GridFunction(z.grid, z.values - alpha * g.values),
                            problem.box)
        step = GridFunction(z.grid, trial.values - z.values)
        slope = inner(g, step)
        if slope >= 0.0:
            if np.array_equal(trial.values, z.values):
                return None
            # projected direction is not a descent direction; shrink
            alpha *= ARMIJO_BACKTRACK
            continue
        j_trial, report = reduced_cost(problem.op, problem.nl, trial,
                                       problem.u_d, problem.mu,
                                       problem.state_tol, u0=u_warm)
        if j_trial <= j_current + ARMIJO_SLOPE * slope + noise:
            return trial, report, j_trial
        alpha *= ARMIJO_BACKTRACK
    return None


def projected_gradient(problem: ControlProblem, z0: GridFunction,
                       tol: float = 1e-8, max_iter: int = 500,
                       taus=TAU_DEFAULTS) -> OptimalityReport:
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking.

    The first iteration steps with 1/mu (the exact fixed-point map for the
    quadratic part); afterwards the BB1 ratio (s,s)/(s,y) is used, safeguarded
    to [1e-8, 1e8]. Every iterate solves the state equation afresh.
    """
    if tol <= 0:
        raise OptimizerError(f"tol must be > 0, got {tol}")
    z = project_box(z0, problem.box)
    ctx = problem.context(z)
    j_current = 0.5 * lp_norm(GridFunction(z.grid, ctx.u.values - problem.u_d.values), 2) ** 2 \
        + 0.5 * problem.mu * lp_norm(z, 2) ** 2
    cost_history = [j_current]
    residual_history = []
    prev_z = None
    prev_g = None
    converged = False
    iterations = 0
    for _ in range(max_iter + 1):
        phi = solve_adjoint(ctx)
        g = reduced_gradient(ctx)
        resid = kkt_residual(z, phi, problem.mu, problem.box)
        residual_history.append(resid)
        if resid <= tol:
            converged = True
            break
        if iterations >= max_iter:
            break
        alpha = 1.0 / problem.mu
        if prev_z is not None:
            s = z.values - prev_z
            y = g.values - prev_g
            sy = float(np.dot(s, y))
            if sy > 0 and math.isfinite(sy):
                alpha = float(np.dot(s, s)) / sy
        alpha = min(max(alpha, BB_STEP_MIN), BB_STEP_MAX)
        outcome = _armijo_step(problem, z, g, j_current, alpha, ctx.u)
        if outcome is None:
            break
        prev_z, prev_g = z.values, g.values
        z, state_report, j_current = outcome
        ctx = problem.context(z, state_report=state_report)
        cost_history.append(j_current)
        iterations += 1
    phi = solve_adjoint(ctx)
    return OptimalityReport(
        z=z, u=ctx.u, phi=phi,
        kkt_residual=kkt_residual(z, phi, problem.mu, problem.box),
        iterations=iterations, method="projected-gradient",
        converged=converged, cost=j_current,
        cost_history=cost_history, residual_history=residual_history,
        active_sets=_active_masks(problem, z, phi, taus),
    )


def semismooth_newton(problem: ControlProblem, z0: GridFunction,
                      tol: float = 1e-8, max_iter: int = 50,
                      taus=TAU_DEFAULTS) -> OptimalityReport:
    """Newton iteration on R(z) = z - clamp(-phi(z)/mu).

    The generalized derivative treats clamped nodes as frozen: there the step
    moves straight to the clamp value, on the inactive block it solves
    H_II d_I = -mu R_I - H_IA d_A with the dense reduced Hessian H. A step
    that fails to reduce ||R||_inf is replaced by a projected-gradient step.
    """
    if tol <= 0:
        raise OptimizerError(f"tol must be > 0, got {tol}")
    if problem.nl.differentiability_order < 2:
        raise OptimizerError("semismooth Newton needs a twice-differentiable "
                             "nonlinearity; use projected_gradient")
    z = project_box(z0, problem.box)
    ctx = problem.context(z)
    grid = z.grid
    box = problem.box
    mu = problem.mu
    cost_history = []
    residual_history = []
    converged = False
    iterations = 0
    j_current = 0.5 * lp_norm(GridFunction(grid, ctx.u.values - problem.u_d.values), 2) ** 2 \
        + 0.5 * mu * lp_norm(z, 2) ** 2
    cost_history.append(j_current)
    for _ in range(max_iter + 1):
        phi = solve_adjoint(ctx)
        w = -phi.values / mu
        target = np.minimum(box.z_b.values, np.maximum(box.z_a.values, w))
        r_vec = z.values - target
        resid = float(np.max(np.abs(r_vec)))
        residual_history.append(resid)
        if resid <= tol:
            converged = True
            break
        if iterations >= max_iter:
            break
        active = (w <= box.z_a.values) | (w >= box.z_b.values)
        inactive = ~active
        h_mat = hessian_matrix(ctx)
        d = np.empty(grid.size)
        d[active] = -r_vec[active]
        if inactive.any():
            rhs = -mu * r_vec[inactive]
            if active.any():
                rhs = rhs - h_mat[np.ix_(inactive, active)] @ d[active]
            d[inactive] = np.linalg.solve(h_mat[np.ix_(inactive, inactive)], rhs)
        trial = project_box(GridFunction(grid, z.values + d), box)
        j_trial, state_report = reduced_cost(problem.op, problem.nl, trial,
                                             problem.u_d, mu,
                                             problem.state_tol, u0=ctx.u)
        ctx_trial = problem.context(trial, state_report=state_report)
        phi_trial = solve_adjoint(ctx_trial)
        resid_trial = kkt_residual(trial, phi_trial, mu, box)
        if resid_trial < resid:
            z, ctx, j_current = trial, ctx_trial, j_trial
        else:
            g = reduced_gradient(ctx)
            outcome = _armijo_step(problem, z, g, j_current, 1.0 / mu, ctx.u)
            if outcome is None:
                break
            z, state_report, j_current = outcome
            ctx = problem.context(z, state_report=state_report)
        cost_history.append(j_current)
        iterations += 1
    phi = solve_adjoint(ctx)
    return OptimalityReport(
        z=z, u=ctx.u, phi=phi,
        kkt_residual=kkt_residual(z, phi, mu, box),
        iterations=iterations, method="semismooth-newton",
        converged=converged, cost=j_current,
        cost_history=cost_history, residual_history=residual_history,
        active_sets=_active_masks(problem, z, phi, taus),
    )


def first_order_residual(problem: ControlProblem, z: GridFunction,
                         n_directions: int = 100, seed: int = 0,
                         sign_threshold: float = 1e-6,
                         ctx: Optional[SensitivityContext] = None) -> dict:
    """Stationarity diagnostics at a feasible z.

    residual_linf is the clamped fixed-point defect; vi_min is the smallest
    inner(phi + mu z, v - z) over random feasible v, nonnegative at a
    minimizer; the sign pattern demands z at the matching bound wherever the
    multiplier phi + mu z exceeds sign_threshold in magnitude.
    """
    if ctx is None:
        ctx = problem.context(z)
    phi = solve_adjoint(ctx)
    g = phi.values + problem.mu * z.values
    resid = kkt_residual(z, phi, problem.mu, problem.box)
    rng = np.random.default_rng(seed)
    z_a = problem.box.z_a.values
    z_b = problem.box.z_b.values
    vi_min = math.inf
    g_fun = GridFunction(z.grid, g)
    for _ in range(n_directions):
        v = rng.uniform(z_a, z_b)
        vi = inner(g_fun, GridFunction(z.grid, v - z.values))
        vi_min = min(vi_min, vi)
    eps_act = 1e-9 * (1.0 + np.abs(z_b - z_a))
    bad_lower = (g > sign_threshold) & (np.abs(z.values - z_a) > eps_act)
    bad_upper = (g < -sign_threshold) & (np.abs(z.values - z_b) > eps_act)
    violations = int(np.count_nonzero(bad_lower | bad_upper))
    return {
        "residual_linf": resid,
        "vi_min": vi_min,
        "sign_pattern_ok": violations == 0,
        "sign_violations": violations,
        "n_directions": n_directions,
    }


def strongly_active_set(problem: ControlProblem, z: GridFunction, tau: float,
                        phi: Optional[GridFunction] = None) -> np.ndarray:
    """Boolean node mask of |phi + mu z| > tau; antitone in tau."""
    if tau < 0:
        raise OptimizerError(f"tau must be >= 0, got {tau}")
    if phi is None:
        phi = solve_adjoint(problem.context(z))
    return np.abs(phi.values + problem.mu * z.values) > tau


def critical_cone_project(problem: ControlProblem, z: GridFunction, tau: float,
                          v: GridFunction,
                          phi: Optional[GridFunction] = None) -> GridFunction:
    """Nodewise projection of v onto the tau-critical cone at z.

    Zero on the strongly active set, nonnegative part where z sits on the
    lower bound, nonpositive part on the upper bound (activity detected with
    eps_act = 1e-9 (1 + |z_b - z_a|) per node), unchanged elsewhere.
    Idempotent.
    """
    if phi is None:
        phi = solve_adjoint(problem.context(z))
    mask = strongly_active_set(problem, z, tau, phi=phi)
    z_a = problem.box.z_a.values
    z_b = problem.box.z_b.values
    eps_act = 1e-9 * (1.0 + np.abs(z_b - z_a))
    at_lower = np.abs(z.values - z_a) <= eps_act
    at_upper = np.abs(z.values - z_b) <= eps_act
    out = np.where(at_lower, np.maximum(v.values, 0.0), v.values)
    out = np.where(at_upper, np.minimum(out, 0.0), out)
    out = np.where(mask, 0.0, out)
    return GridFunction(z.grid, out)


def _lanczos_min_eig(apply_h, dim: int, iters: int, rng) -> float:
    """Smallest Ritz value of a symmetric operator on R^dim.

    Lanczos with full reorthogonalization; on breakdown the iteration
    restarts in the orthogonal complement, so iters = dim recovers the exact
    smallest eigenvalue (the collected blocks exhaust the space).
    """
    collected = 0
    basis = np.zeros((dim, 0))
    best = math.inf
    while collected < iters:
        q = rng.standard_normal(dim)
        if basis.shape[1]:
            q -= basis @ (basis.T @ q)
        norm_q = np.linalg.norm(q)
        if norm_q < 1e-13:
            break
        q /= norm_q
        alphas = []
        betas = []
        block = [q]
        while collected + len(alphas) < iters:
            w = apply_h(block[-1])
            a = float(np.dot(block[-1], w))
            alphas.append(a)
            w = w - a * block[-1]
            if len(block) > 1:
                w = w - betas[-1] * block[-2]
            # full reorthogonalization against everything seen so far
            if basis.shape[1]:
                w -= basis @ (basis.T @ w)
            for qprev in block:
                w -= np.dot(qprev, w) * qprev
            b = float(np.linalg.norm(w))
            if b < 1e-12 * max(1.0, abs(a)):
                break
            betas.append(b)
            block.append(w / b)
        if len(alphas) == 1:
            ritz_min = alphas[0]
        else:
            ritz_min = float(eigvalsh_tridiagonal(np.array(alphas),
                                                  np.array(betas[:len(alphas) - 1]))[0])
        best = min(best, ritz_min)
        basis = np.hstack([basis, np.column_stack(block)])
        collected += len(alphas)
        if basis.shape[1] >= dim:
            break
    return best


def ssc_probe(problem: ControlProblem, z: GridFunction, tau: float = 0.0,
              iters: Optional[int] = None, seed: int = 0,
              ctx: Optional[SensitivityContext] = None) -> dict:
    """Smallest curvature of the reduced Hessian on the cone's linear hull.

    The sign constraints of the critical cone are relaxed to the subspace of
    nodes outside the strongly active set; the Rayleigh minimum there lower
    bounds the minimum over the cone, so delta_est > 0 is a certificate. With
    the default iters (= subspace dimension) the Lanczos sweep is exact.
    """
    if ctx is None:
        ctx = problem.context(z)
    phi = solve_adjoint(ctx)
    mask = strongly_active_set(problem, z, tau, phi=phi)
    free = ~mask
    dim = int(np.count_nonzero(free))
    if dim == 0:
        return {"tau": tau, "cone_dimension": 0, "empty_cone": True}
    m = dim if iters is None else min(iters, dim)
    idx = np.nonzero(free)[0]
    grid = z.grid

    def apply_h(x_sub):
        full = np.zeros(grid.size)
        full[idx] = x_sub
        y = hessian_vec(ctx, GridFunction(grid, full))
        return y.values[idx]

    rng = np.random.default_rng(seed)
    delta = _lanczos_min_eig(apply_h, dim, m, rng)
    return {"tau": tau, "delta_est": delta, "cone_dimension": dim, "iters": m}


def quadratic_growth_sample(problem: ControlProblem, z_bar: GridFunction,
                            rho: float, beta: float, n_samples: int = 200,
                            seed: int = 0, tau: float = 1e-3,
                            ctx: Optional[SensitivityContext] = None) -> dict:
    """Sample the growth inequality J(z) >= J(z_bar) + beta ||z - z_bar||_2^2
    over feasible z in the rho-ball around z_bar.

    The ball is measured in the L^p norm chosen by the dimension/order rule
    (L^2 when N < 4s, sup norm otherwise). Half the draws are aligned with
    the tau-critical cone. The inequality carries a 10 * state_tol slack for
    solver error; violations counts failures against that slack, margin_min
    reports the raw worst quotient (J(z) - J(z_bar)) / ||z - z_bar||_2^2.
    """
    if rho <= 0:
        raise OptimizerError(f"rho must be > 0, got {rho}")
    if ctx is None:
        ctx = problem.context(z_bar)
    phi = solve_adjoint(ctx)
    j_bar = 0.5 * lp_norm(GridFunction(z_bar.grid, ctx.u.values - problem.u_d.values), 2) ** 2 \
        + 0.5 * problem.mu * lp_norm(z_bar, 2) ** 2
    grid = z_bar.grid
    p_tilde = two_norm_gap(grid.dimension, problem.op.s).p_tilde
    rng = np.random.default_rng(seed)
    violations = 0
    failed = 0
    degenerate = 0
    evaluated = 0
    margin_min = math.inf
    slack = 10.0 * problem.state_tol
    for i in range(n_samples):
        direction = GridFunction(grid, rng.standard_normal(grid.size))
        if i < n_samples // 2:
            direction = critical_cone_project(problem, z_bar, tau, direction,
                                              phi=phi)
        norm_dir = lp_norm(direction, p_tilde)
        if norm_dir == 0.0:
            degenerate += 1
            continue
        radius = rho * rng.uniform(0.0, 1.0)
        cand = GridFunction(grid, z_bar.values + (radius / norm_dir) * direction.values)
        zs = project_box(cand, problem.box)
        dist2 = lp_norm(GridFunction(grid, zs.values - z_bar.values), 2)
        if dist2 == 0.0:
            degenerate += 1
            continue
        try:
            j_s, _ = reduced_cost(problem.op, problem.nl, zs, problem.u_d,
                                  problem.mu, problem.state_tol, u0=ctx.u)
        except StateSolveError:
            failed += 1
            continue
        evaluated += 1
        margin = (j_s - j_bar) / dist2**2
        margin_min = min(margin_min, margin)
        if j_s < j_bar + beta * dist2**2 - slack:
            violations += 1
    return {
        "rho": rho,
        "beta": beta,
        "tau": tau,
        "samples": evaluated,
        "violations": violations,
        "failed_samples": failed,
        "degenerate_samples": degenerate,
        "margin_min": margin_min if evaluated else None,
        "p_tilde": "inf" if math.isinf(p_tilde) else "2",
    }
