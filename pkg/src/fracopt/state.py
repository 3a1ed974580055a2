"""Semilinear state solves A u + f(x, u) = z and stability probes.

Works against either operator backend through the shared dense interface
(.dense(), .apply(), .energy_norm(), .dual_norm()). The solver is a damped
Newton method with the exact Jacobian A + diag(f_u(u)) and Armijo
backtracking on the residual norm, started from the linear solve A u0 = z.
Nonlinearities without derivatives fall back to a contractive fixed-point
iteration u <- (A + rho I)^(-1) (z - f(u) + rho u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import Grid, GridFunction, inner, lp_norm
from .linalg import ShiftedDenseSolver
from .nonlinearity import Nonlinearity, NonlinearityError, eval_field
from .spectral import SpectralOperator, hs_norm

ARMIJO_SLOPE = 1e-4
ARMIJO_BACKTRACK = 0.5
ARMIJO_MAX_BACKTRACKS = 30


class StateSolveError(RuntimeError):
    pass


@dataclass
class StateSolveReport:
    u: GridFunction
    iterations: int
    final_residual: float
    backend: str
    newton_history: list = field(default_factory=list)
    converged: bool = True
    method: str = "newton"

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "backend": self.backend,
            "method": self.method,
            "converged": self.converged,
            "newton_history": list(self.newton_history),
        }


def shifted_solver(op, potential: np.ndarray, residual_tol: float = 1e-11) -> ShiftedDenseSolver:
    return ShiftedDenseSolver(op.dense(), potential, residual_tol)


def _residual_vec(op, nl: Nonlinearity, u_vals: np.ndarray, z_vals: np.ndarray,
                  coords: np.ndarray) -> np.ndarray:
    f_vals = np.asarray(nl.f(coords, u_vals), dtype=float)
    if not np.all(np.isfinite(f_vals)):
        raise StateSolveError("NaN/inf in nonlinearity evaluation")
    return op.dense() @ u_vals + f_vals - z_vals


def solve_state(op, nl: Nonlinearity, z: GridFunction, tol: float = 1e-10,
                max_newton: int = 50, max_fixed_point: int = 10_000,
                u0: Optional[GridFunction] = None) -> StateSolveReport:
    """Solve A u + f(x, u) = z to ||residual||_2 <= tol * (1 + ||z||_2).

    The discrete L^2 norm is used on both sides. Non-convergence raises
    StateSolveError carrying the best iterate's report.
    """
    if tol <= 0:
        raise StateSolveError(f"tol must be > 0, got {tol}")
    grid = op.grid
    if z.grid != grid:
        raise StateSolveError("z does not live on the operator's grid")
    coords = grid.coords()
    f0 = np.asarray(nl.f(coords, np.zeros(grid.size)), dtype=float)
    if np.max(np.abs(f0)) > 1e-12:
        raise StateSolveError("nonlinearity violates f(x, 0) = 0")
    z_vals = z.values
    vol = grid.cell_volume
    l2 = lambda v: math.sqrt(vol * float(v @ v))
    target = tol * (1.0 + l2(z_vals))

    if nl.differentiability_order >= 1:
        return _newton(op, nl, z_vals, coords, target, max_newton, u0)
    return _fixed_point(op, nl, z_vals, coords, target, max_fixed_point, u0)


def _newton(op, nl, z_vals, coords, target, max_newton, u0) -> StateSolveReport:
    grid = op.grid
    vol = grid.cell_volume
    l2 = lambda v: math.sqrt(vol * float(v @ v))
    if u0 is None:
        u = shifted_solver(op, np.zeros(grid.size)).solve(z_vals)
    else:
        u = np.array(u0.values)
    res = _residual_vec(op, nl, u, z_vals, coords)
    rnorm = l2(res)
    history = [rnorm]
    for it in range(1, max_newton + 1):
        if rnorm <= target:
            return StateSolveReport(GridFunction(grid, u), it - 1, rnorm,
                                    op.backend, history, True, "newton")
        w = np.asarray(nl.f_u(coords, u), dtype=float)
        w = np.maximum(w, 0.0)
        delta = shifted_solver(op, w).solve(-res)
        step = 1.0
        accepted = False
        for _ in range(ARMIJO_MAX_BACKTRACKS + 1):
            trial = u + step * delta
            trial_res = _residual_vec(op, nl, trial, z_vals, coords)
            trial_norm = l2(trial_res)
            if trial_norm <= (1.0 - ARMIJO_SLOPE * step) * rnorm:
                accepted = True
                break
            step *= ARMIJO_BACKTRACK
        if not accepted:
            report = StateSolveReport(GridFunction(grid, u), it, rnorm,
                                      op.backend, history, False, "newton")
            raise StateSolveError(f"Newton line search stalled at residual {rnorm:.3e}")
        u, res, rnorm = trial, trial_res, trial_norm
        history.append(rnorm)
    if rnorm <= target:
        return StateSolveReport(GridFunction(grid, u), max_newton, rnorm,
                                op.backend, history, True, "newton")
    raise StateSolveError(
        f"Newton did not reach residual {target:.3e} in {max_newton} iterations "
        f"(best {rnorm:.3e})"
    )


def _fixed_point(op, nl, z_vals, coords, target, max_iter, u0) -> StateSolveReport:
    grid = op.grid
    vol = grid.cell_volume
    l2 = lambda v: math.sqrt(vol * float(v @ v))
    u = np.array(u0.values) if u0 is not None else shifted_solver(
        op, np.zeros(grid.size)).solve(z_vals)
    res = _residual_vec(op, nl, u, z_vals, coords)
    rnorm = l2(res)
    history = [rnorm]
    rho = _slope_bound(nl, coords, u)
    solver = shifted_solver(op, np.full(grid.size, rho))
    for it in range(1, max_iter + 1):
        if rnorm <= target:
            return StateSolveReport(GridFunction(grid, u), it - 1, rnorm,
                                    op.backend, history, True, "fixed-point")
        f_vals = np.asarray(nl.f(coords, u), dtype=float)
        u_new = solver.solve(z_vals - f_vals + rho * u)
        new_bound = _slope_bound(nl, coords, u_new)
        if new_bound > rho:
            rho = new_bound
            solver = shifted_solver(op, np.full(grid.size, rho))
        u = u_new
        res = _residual_vec(op, nl, u, z_vals, coords)
        rnorm = l2(res)
        history.append(rnorm)
    if rnorm <= target:
        return StateSolveReport(GridFunction(grid, u), max_iter, rnorm,
                                op.backend, history, True, "fixed-point")
    raise StateSolveError(
        f"fixed-point iteration did not reach residual {target:.3e} in {max_iter} steps"
    )


def _slope_bound(nl, coords, u_vals) -> float:
    """Estimated bound on the slope of f over the iterate's value range."""
    radius = 2.0 * float(np.max(np.abs(u_vals))) + 1.0
    t = np.linspace(-radius, radius, 101)
    m = coords.shape[0]
    idx = np.linspace(0, m - 1, min(m, 16)).astype(int)
    xs = coords[idx] if coords.ndim == 1 else coords[idx, :]
    slopes = []
    for x in (xs if coords.ndim == 1 else xs):
        xa = np.full(t.shape, x) if coords.ndim == 1 else np.tile(x, (t.size, 1))
        fv = np.asarray(nl.f(xa, t), dtype=float)
        slopes.append(np.max(np.abs(np.diff(fv) / np.diff(t))))
    return max(1e-8, float(np.max(slopes)))


@dataclass
class TwoNormGap:
    """p_tilde for the L^2 vs L^infinity neighborhood dichotomy, plus the
    exponent regime for the L^p -> L^infinity bound."""

    N: int
    s: float
    p_tilde: float
    regime: str
    p_threshold: Optional[float]

    def to_dict(self):
        d = {"N": self.N, "s": self.s,
             "p_tilde": "inf" if math.isinf(self.p_tilde) else "2",
             "regime": self.regime}
        if self.p_threshold is not None:
            d["p_threshold"] = self.p_threshold
        return d


def two_norm_gap(N: int, s: float) -> TwoNormGap:
    """p_tilde = 2 iff N < 4s strictly, else infinity; reports the p-regime."""
    if N not in (1, 2):
        raise ValueError(f"N must be 1 or 2, got {N}")
    if not (0.0 < s < 1.0):
        raise ValueError(f"s must lie in (0,1), got {s}")
    p_tilde = 2.0 if N < 4 * s else math.inf
    if N > 2 * s:
        return TwoNormGap(N, s, p_tilde, f"p > N/(2s) = {N / (2 * s):.17g}", N / (2 * s))
    if N == 2 * s:
        return TwoNormGap(N, s, p_tilde, "p > 1", 1.0)
    return TwoNormGap(N, s, p_tilde, "p = 1", None)


@dataclass
class LipschitzProbeReport:
    max_ratio_linf: float
    max_ratio_hs: Optional[float]
    pairs_used: int
    skipped: int

    def to_dict(self):
        d = {"max_ratio_linf": self.max_ratio_linf,
             "pairs_used": self.pairs_used, "skipped": self.skipped}
        if self.max_ratio_hs is not None:
            d["max_ratio_hs"] = self.max_ratio_hs
        return d


def lipschitz_probe(op, nl: Nonlinearity, pairs, p: float = 2.0,
                    tol: float = 1e-12) -> LipschitzProbeReport:
    """Solve both states per (z1, z2) pair and report the worst ratios.

    max_ratio_linf: ||u1-u2||_inf / ||z1-z2||_p.
    max_ratio_hs (spectral backend only): the fractional-energy ratio
    ||u1-u2||_{H^s} / ||z1-z2||_{H^-s}; monotonicity of f makes it <= 1,
    with equality in the linear case.
    """
    spectral = isinstance(op, SpectralOperator)
    max_linf = 0.0
    max_hs: Optional[float] = None
    used = skipped = 0
    for z1, z2 in pairs:
        dz = GridFunction(op.grid, z1.values - z2.values)
        if lp_norm(dz, 2) == 0.0:
            skipped += 1
            continue
        u1 = solve_state(op, nl, z1, tol).u
        u2 = solve_state(op, nl, z2, tol).u
        du = GridFunction(op.grid, u1.values - u2.values)
        max_linf = max(max_linf, lp_norm(du, math.inf) / lp_norm(dz, p))
        if spectral:
            ratio = hs_norm(op, du, op.s) / hs_norm(op, dz, -op.s)
            max_hs = ratio if max_hs is None else max(max_hs, ratio)
        used += 1
    return LipschitzProbeReport(max_linf, max_hs, used, skipped)


@dataclass
class LinfBoundProbeReport:
    max_ratio: float
    ratios: list
    samples_used: int
    skipped: int

    def to_dict(self):
        return {"max_ratio": self.max_ratio, "ratios": list(self.ratios),
                "samples_used": self.samples_used, "skipped": self.skipped}


def linf_bound_probe(op, nl: Nonlinearity, z_samples, p: float = 2.0,
                     tol: float = 1e-12) -> LinfBoundProbeReport:
    """Report max ||u||_inf / ||z||_p over the samples (z = 0 skipped)."""
    ratios = []
    skipped = 0
    for z in z_samples:
        denom = lp_norm(z, p)
        if denom == 0.0:
            skipped += 1
            continue
        u = solve_state(op, nl, z, tol).u
        ratios.append(lp_norm(u, math.inf) / denom)
    max_ratio = max(ratios) if ratios else 0.0
    return LinfBoundProbeReport(max_ratio, ratios, len(ratios), skipped)
