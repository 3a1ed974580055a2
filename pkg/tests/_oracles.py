"""Reference constructions the tests compare against.

Everything here is assembled independently of the package's own solve
paths: stencil matrices built by hand, a dense KKT system solved with
plain numpy, closed-form eigenpairs. Operators are cached because the
integral assembly at n = 256 is the one expensive build in the suite.
"""

import math

import numpy as np

from fracopt.grid import Box, Grid, GridFunction, interval, rectangle
from fracopt.integral import build_integral
from fracopt.nonlinearity import PowerLaw, ZeroNonlinearity
from fracopt.optimizer import ControlProblem
from fracopt.spectral import build_spectral
from fracopt.state import solve_state

_OPS = {}


def unit_grid(n: int) -> Grid:
    return Grid(interval(0.0, 1.0), n)


def square_grid(n: int) -> Grid:
    return Grid(rectangle(0.0, 1.0, 0.0, 1.0), n)


def spectral_op(n: int, s: float, grid: Grid = None):
    key = ("spectral", n, s, None if grid is None else grid.domain)
    if key not in _OPS:
        _OPS[key] = build_spectral(grid if grid is not None else unit_grid(n), s=s)
    return _OPS[key]


def integral_op(n: int, s: float, bounds=(0.0, 1.0), quad_order: int = 8):
    key = ("integral", n, s, bounds, quad_order)
    if key not in _OPS:
        grid = Grid(interval(*bounds), n)
        _OPS[key] = build_integral(grid, s, quad_order)
    return _OPS[key]


def stencil_1d(n: int, h: float, a: float = 1.0) -> np.ndarray:
    """Three-point matrix of -(a u')' with constant a, assembled by hand."""
    mat = np.zeros((n, n))
    np.fill_diagonal(mat, 2.0 * a / h**2)
    idx = np.arange(n - 1)
    mat[idx, idx + 1] = -a / h**2
    mat[idx + 1, idx] = -a / h**2
    return mat


def lq_kkt_solution(op, u_d: GridFunction, mu: float):
    """Dense solve of the unconstrained linear-quadratic optimality system.

    Unknowns stacked as (u, phi, z); the three block rows are the state
    equation A u = z, the adjoint equation A phi = u - u_d, and the
    gradient equation phi + mu z = 0.
    """
    n = op.size
    A = op.dense()
    I = np.eye(n)
    Z = np.zeros((n, n))
    K = np.block([
        [A, Z, -I],
        [-I, A, Z],
        [Z, I, mu * I],
    ])
    rhs = np.concatenate([np.zeros(n), -u_d.values, np.zeros(n)])
    sol = np.linalg.solve(K, rhs)
    grid = op.grid
    return (GridFunction(grid, sol[:n]),
            GridFunction(grid, sol[n:2 * n]),
            GridFunction(grid, sol[2 * n:]))


def const_box(grid: Grid, lo: float, hi: float) -> Box:
    return Box(grid.function(lo), grid.function(hi))


def lq_problem(n: int = 32, s: float = 0.5, mu: float = 0.1) -> ControlProblem:
    """Linear-quadratic instance with a box wide enough to stay inactive."""
    grid = unit_grid(n)
    op = spectral_op(n, s)
    u_d = grid.function(lambda x: np.sin(math.pi * x))
    return ControlProblem(op, ZeroNonlinearity(), u_d, mu, const_box(grid, -10.0, 10.0))


def constrained_problem(op, mu: float = 0.1, lo: float = -0.5, hi: float = 0.5) -> ControlProblem:
    """Cubic-law control problem whose box binds at the optimum.

    The target amplitude is large against mu, so the unconstrained
    stationary control would overshoot the box by a wide margin.
    """
    grid = op.grid
    if grid.dimension == 1:
        u_d = grid.function(lambda x: np.sin(math.pi * x))
    else:
        u_d = grid.function(lambda x: np.sin(math.pi * x[:, 0]) * np.sin(math.pi * x[:, 1]))
    return ControlProblem(op, PowerLaw(3.0), u_d, mu, const_box(grid, lo, hi))


def attainable_problem(op, z_target: GridFunction, lo: float, hi: float,
                       mu: float = 0.1) -> ControlProblem:
    """Cubic-law problem with u_d = S(z_target), z_target interior to the box."""
    nl = PowerLaw(3.0)
    u_d = solve_state(op, nl, z_target, tol=1e-12).u
    return ControlProblem(op, nl, u_d, mu, const_box(op.grid, lo, hi))


def shared_suite():
    """Control problems shared by the optimality and cross-solver tests."""
    suite = [("lq-spectral-s0.50-n32", lq_problem(32, 0.5))]
    for s in (0.25, 0.75):
        op = spectral_op(48, s)
        suite.append((f"pl3-spectral-s{s:.2f}-n48", constrained_problem(op)))
    suite.append(("pl3-integral-s0.50-n48", constrained_problem(integral_op(48, 0.5))))
    grid2 = square_grid(12)
    op2 = spectral_op(12, 0.4, grid2)
    suite.append(("pl3-2d-s0.40-n12", constrained_problem(op2, lo=-0.3, hi=0.3)))
    return suite


def l2_diff(u: GridFunction, v: GridFunction) -> float:
    vol = u.grid.cell_volume
    d = u.values - v.values
    return math.sqrt(vol * float(d @ d))


def linf_diff(u: GridFunction, v: GridFunction) -> float:
    return float(np.max(np.abs(u.values - v.values)))
