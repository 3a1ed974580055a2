"""Derivatives of the control-to-state map and of the reduced cost.

For the state equation A u + f(x, u) = z with solution u = S(z):

    linearized:  (A + f_u(u)) u_zeta = zeta           (S'(z) zeta)
    second:      (A + f_u(u)) u_z1z2 = -f_uu(u) u_z1 u_z2
    adjoint:     (A + f_u(u)) phi    = u - u_d

The reduced cost is J(z) = 1/2 ||S(z) - u_d||^2 + mu/2 ||z||^2 (discrete
L^2). Its gradient is the nodal field phi + mu z and the Hessian acts as

    H zeta = mu zeta + (A + f_u(u))^(-1) [(1 - phi f_uu(u)) u_zeta].

A SensitivityContext freezes one (z, u) pair, factorizes the shifted
operator once, and caches the adjoint.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .grid import GridFunction, inner, lp_norm
from .nonlinearity import Nonlinearity, eval_field
from .state import StateSolveReport, solve_state, shifted_solver


class SensitivityError(RuntimeError):
    pass


class SensitivityContext:
    """One control z with its solved state; derivative solves share the factorization."""

    def __init__(self, op, nl: Nonlinearity, z: GridFunction, u_d: GridFunction,
                 mu: float, state_tol: float = 1e-12,
                 state_report: Optional[StateSolveReport] = None):
        if mu <= 0:
            raise SensitivityError(f"mu must be > 0, got {mu}")
        if nl.differentiability_order < 1:
            raise SensitivityError("sensitivities need differentiability_order >= 1")
        self.op = op
        self.nl = nl
        self.z = z
        self.u_d = u_d
        self.mu = float(mu)
        self.state_tol = state_tol
        if state_report is None:
            state_report = solve_state(op, nl, z, state_tol)
        self.state_report = state_report
        self.u = state_report.u
        w = np.asarray(eval_field(nl, self.u, 1).values, dtype=float)
        self.f_u_field = w
        self._solver = shifted_solver(op, w)
        self._phi: Optional[GridFunction] = None
        self._f_uu_field: Optional[np.ndarray] = None

    @property
    def f_uu_field(self) -> np.ndarray:
        if self._f_uu_field is None:
            if self.nl.differentiability_order < 2:
                raise SensitivityError("second derivatives need differentiability_order >= 2")
            self._f_uu_field = np.asarray(eval_field(self.nl, self.u, 2).values, dtype=float)
        return self._f_uu_field

    def solve_shifted(self, rhs: np.ndarray) -> np.ndarray:
        return self._solver.solve(rhs)

    def solve_shifted_matrix(self, rhs: np.ndarray) -> np.ndarray:
        return self._solver.solve_matrix(rhs)


def solve_linearized(ctx: SensitivityContext, zeta: GridFunction) -> GridFunction:
    """u_zeta with (A + f_u(u)) u_zeta = zeta; realizes S'(z) zeta."""
    return GridFunction(ctx.op.grid, ctx.solve_shifted(zeta.values))


def solve_second(ctx: SensitivityContext, zeta1: GridFunction,
                 zeta2: GridFunction) -> GridFunction:
    """u_{z1 z2} with (A + f_u(u)) u_{z1 z2} = -f_uu(u) u_z1 u_z2."""
    u1 = ctx.solve_shifted(zeta1.values)
    u2 = ctx.solve_shifted(zeta2.values)
    rhs = -ctx.f_uu_field * u1 * u2
    return GridFunction(ctx.op.grid, ctx.solve_shifted(rhs))


def solve_adjoint(ctx: SensitivityContext) -> GridFunction:
    """phi with (A + f_u(u)) phi = u - u_d; cached on the context."""
    if ctx._phi is None:
        rhs = ctx.u.values - ctx.u_d.values
        ctx._phi = GridFunction(ctx.op.grid, ctx.solve_shifted(rhs))
    return ctx._phi


def reduced_gradient(ctx: SensitivityContext) -> GridFunction:
    """Discrete-L^2 Riesz representative of J'(z): the nodal field phi + mu z."""
    phi = solve_adjoint(ctx)
    return GridFunction(ctx.op.grid, phi.values + ctx.mu * ctx.z.values)


def hessian_vec(ctx: SensitivityContext, zeta: GridFunction) -> GridFunction:
    """H zeta = mu zeta + (A + f_u)^(-1)[(1 - phi f_uu) u_zeta]."""
    phi = solve_adjoint(ctx)
    u1 = ctx.solve_shifted(zeta.values)
    rhs = (1.0 - phi.values * ctx.f_uu_field) * u1
    psi = ctx.solve_shifted(rhs)
    return GridFunction(ctx.op.grid, ctx.mu * zeta.values + psi)


def hessian_bilinear(ctx: SensitivityContext, zeta1: GridFunction,
                     zeta2: GridFunction) -> float:
    """J''(z)[z1, z2] assembled term by term from linearized states:
    int (S'z1 S'z2 - phi f_uu S'z1 S'z2) + mu int z1 z2."""
    phi = solve_adjoint(ctx)
    u1 = ctx.solve_shifted(zeta1.values)
    u2 = ctx.solve_shifted(zeta2.values)
    vol = ctx.op.grid.cell_volume
    first = vol * float(np.sum(u1 * u2))
    second = vol * float(np.sum(phi.values * ctx.f_uu_field * u1 * u2))
    third = ctx.mu * vol * float(np.dot(zeta1.values, zeta2.values))
    return first - second + third


def hessian_bilinear_via_second(ctx: SensitivityContext, zeta1: GridFunction,
                                zeta2: GridFunction) -> float:
    """J''(z)[z1, z2] through the second derivative of the state map:
    int (S'z1 S'z2 + (u - u_d) u_{z1 z2}) + mu int z1 z2."""
    u1 = ctx.solve_shifted(zeta1.values)
    u2 = ctx.solve_shifted(zeta2.values)
    u12 = solve_second(ctx, zeta1, zeta2)
    vol = ctx.op.grid.cell_volume
    first = vol * float(np.sum(u1 * u2))
    second = vol * float(np.sum((ctx.u.values - ctx.u_d.values) * u12.values))
    third = ctx.mu * vol * float(np.dot(zeta1.values, zeta2.values))
    return first + second + third


def hessian_matrix(ctx: SensitivityContext) -> np.ndarray:
    """Dense reduced Hessian mu I + B diag(1 - phi f_uu) B, B = (A + f_u)^(-1).

    Symmetrized to kill the last-bit asymmetry of the triangular solves.
    Desk-scale only: materializes B.
    """
    n = ctx.op.grid.size
    phi = solve_adjoint(ctx)
    B = ctx.solve_shifted_matrix(np.eye(n))
    c = 1.0 - phi.values * ctx.f_uu_field
    H = ctx.mu * np.eye(n) + B @ (c[:, None] * B)
    return 0.5 * (H + H.T)


def reduced_cost(op, nl: Nonlinearity, z: GridFunction, u_d: GridFunction,
                 mu: float, state_tol: float = 1e-12,
                 u0: Optional[GridFunction] = None):
    """J(z) and the state report behind it."""
    report = solve_state(op, nl, z, state_tol, u0=u0)
    diff = GridFunction(op.grid, report.u.values - u_d.values)
    value = 0.5 * lp_norm(diff, 2) ** 2 + 0.5 * mu * lp_norm(z, 2) ** 2
    return value, report


def gradient_fd_table(op, nl: Nonlinearity, z: GridFunction, u_d: GridFunction,
                      mu: float, zeta: GridFunction, steps=(1e-3, 1e-4),
                      state_tol: float = 1e-12) -> list[dict]:
    """Central-difference check of inner(grad J, zeta): rows of
    (h, fd_value, exact, rel_error, observed order vs previous row)."""
    ctx = SensitivityContext(op, nl, z, u_d, mu, state_tol)
    exact = inner(reduced_gradient(ctx), zeta)
    rows = []
    prev_err = None
    prev_h = None
    for h in steps:
        zp = GridFunction(op.grid, z.values + h * zeta.values)
        zm = GridFunction(op.grid, z.values - h * zeta.values)
        jp, _ = reduced_cost(op, nl, zp, u_d, mu, state_tol)
        jm, _ = reduced_cost(op, nl, zm, u_d, mu, state_tol)
        fd = (jp - jm) / (2 * h)
        err = abs(fd - exact) / max(1.0, abs(exact))
        row = {"h": h, "fd": fd, "exact": exact, "rel_error": err}
        if prev_err is not None and err > 0:
            row["observed_order"] = math.log(prev_err / err) / math.log(prev_h / h)
        rows.append(row)
        prev_err, prev_h = err, h
    return rows


def hessian_fd_table(op, nl: Nonlinearity, z: GridFunction, u_d: GridFunction,
                     mu: float, zeta: GridFunction, steps=(3e-2, 1e-2, 3e-3),
                     state_tol: float = 1e-12) -> list[dict]:
    """Second-difference check of inner(H zeta, zeta) against
    (J(z+h zeta) - 2 J(z) + J(z-h zeta)) / h^2."""
    ctx = SensitivityContext(op, nl, z, u_d, mu, state_tol)
    exact = inner(hessian_vec(ctx, zeta), zeta)
    j0, _ = reduced_cost(op, nl, z, u_d, mu, state_tol)
    rows = []
    prev_err = None
    prev_h = None
    for h in steps:
        zp = GridFunction(op.grid, z.values + h * zeta.values)
        zm = GridFunction(op.grid, z.values - h * zeta.values)
        jp, _ = reduced_cost(op, nl, zp, u_d, mu, state_tol)
        jm, _ = reduced_cost(op, nl, zm, u_d, mu, state_tol)
        fd = (jp - 2 * j0 + jm) / h**2
        err = abs(fd - exact) / max(1.0, abs(exact))
        row = {"h": h, "fd": fd, "exact": exact, "rel_error": err}
        if prev_err is not None and err > 0:
            row["observed_order"] = math.log(prev_err / err) / math.log(prev_h / h)
        rows.append(row)
        prev_err, prev_h = err, h
    return rows


def hessian_lipschitz_probe(op, nl: Nonlinearity, u_d: GridFunction, mu: float,
                            m_bound: float = 1.0, n_samples: int = 5,
                            seed: int = 0, state_tol: float = 1e-12) -> dict:
    """Empirical bound for |J''(z+h)[z1,z2] - J''(z)[z1,z2]| /
    (||h|| ||z1||_2 ||z2||_2) over sampled z, h, z1, z2 with
    ||z||_inf, ||h||_inf <= m_bound; the h-norm follows the p-tilde rule.
    Each sample is re-measured at h/2 to expose instability."""
    from .state import two_norm_gap

    grid = op.grid
    rng = np.random.default_rng(seed)
    p_tilde = two_norm_gap(grid.dimension, op.s).p_tilde
    ratios = []
    ratios_half = []
    for _ in range(n_samples):
        z_vals = rng.uniform(-m_bound, m_bound, grid.size)
        h_vals = rng.uniform(-m_bound, m_bound, grid.size)
        z1 = GridFunction(grid, rng.standard_normal(grid.size))
        z2 = GridFunction(grid, rng.standard_normal(grid.size))
        z = GridFunction(grid, z_vals)
        ctx0 = SensitivityContext(op, nl, z, u_d, mu, state_tol)
        base = hessian_bilinear(ctx0, z1, z2)
        for scale, sink in ((1.0, ratios), (0.5, ratios_half)):
            zh = GridFunction(grid, z_vals + scale * h_vals)
            ctxh = SensitivityContext(op, nl, zh, u_d, mu, state_tol)
            perturbed = hessian_bilinear(ctxh, z1, z2)
            h_gf = GridFunction(grid, scale * h_vals)
            h_norm = lp_norm(h_gf, p_tilde)
            denom = h_norm * lp_norm(z1, 2) * lp_norm(z2, 2)
            sink.append(abs(perturbed - base) / denom)
    return {
        "max_ratio": max(ratios),
        "max_ratio_half_step": max(ratios_half),
        "n_samples": n_samples,
        "m_bound": m_bound,
        "p_tilde": "inf" if math.isinf(p_tilde) else "2",
    }
