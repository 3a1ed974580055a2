"""Derivatives of the control-to-state map and of the reduced cost.

The oracles are central differences of full nonlinear solves; the
adjoint-based formulas must also agree with each other to roundoff.
"""

import math

import numpy as np
import pytest

from fracopt.grid import GridFunction, inner, lp_norm
from fracopt.linalg import SolveError
from fracopt.nonlinearity import Nonlinearity, PowerLaw
from fracopt.sensitivity import (
    SensitivityContext,
    SensitivityError,
    gradient_fd_table,
    hessian_bilinear,
    hessian_bilinear_via_second,
    hessian_fd_table,
    hessian_lipschitz_probe,
    hessian_matrix,
    hessian_vec,
    reduced_cost,
    reduced_gradient,
    solve_adjoint,
    solve_linearized,
    solve_second,
)
from fracopt.state import solve_state

from _oracles import integral_op, spectral_op

N = 24
MU = 0.1


def _ctx(op):
    grid = op.grid
    z = grid.function(lambda x: np.sin(2 * math.pi * x) + 0.3)
    u_d = grid.function(lambda x: x * (1.0 - x))
    return SensitivityContext(op, PowerLaw(3.0), z, u_d, MU)


def _smooth_direction(grid):
    return grid.function(lambda x: np.sin(math.pi * x) + 0.5 * np.sin(3 * math.pi * x))


@pytest.fixture(scope="module")
def ctx():
    return _ctx(spectral_op(N, 0.5))


def test_linearized_state_matches_central_difference(ctx):
    zeta = _smooth_direction(ctx.op.grid)
    h = 1e-4
    grid = ctx.op.grid
    zp = GridFunction(grid, ctx.z.values + h * zeta.values)
    zm = GridFunction(grid, ctx.z.values - h * zeta.values)
    up = solve_state(ctx.op, ctx.nl, zp, 1e-13).u
    um = solve_state(ctx.op, ctx.nl, zm, 1e-13).u
    fd = (up.values - um.values) / (2 * h)
    lin = solve_linearized(ctx, zeta)
    rel = np.max(np.abs(fd - lin.values)) / np.max(np.abs(lin.values))
    assert rel <= 1e-6


def test_second_state_matches_second_difference(ctx):
    zeta = _smooth_direction(ctx.op.grid)
    h = 1e-3
    grid = ctx.op.grid
    zp = GridFunction(grid, ctx.z.values + h * zeta.values)
    zm = GridFunction(grid, ctx.z.values - h * zeta.values)
    up = solve_state(ctx.op, ctx.nl, zp, 1e-13).u
    um = solve_state(ctx.op, ctx.nl, zm, 1e-13).u
    fd = (up.values - 2 * ctx.u.values + um.values) / h**2
    sec = solve_second(ctx, zeta, zeta)
    rel = np.max(np.abs(fd - sec.values)) / max(np.max(np.abs(sec.values)), 1e-30)
    assert rel <= 1e-3


def test_adjoint_duality_identity(ctx):
    # <S'(z) zeta, u - u_d> = <zeta, phi> exactly up to solver residuals
    rng = np.random.default_rng(0)
    grid = ctx.op.grid
    phi = solve_adjoint(ctx)
    resid = GridFunction(grid, ctx.u.values - ctx.u_d.values)
    for _ in range(5):
        zeta = grid.function(rng.standard_normal(grid.size))
        lhs = inner(solve_linearized(ctx, zeta), resid)
        rhs = inner(zeta, phi)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


def test_gradient_matches_directional_difference(ctx):
    zeta = _smooth_direction(ctx.op.grid)
    g = reduced_gradient(ctx)
    exact = inner(g, zeta)
    h = 1e-5
    grid = ctx.op.grid
    jp, _ = reduced_cost(ctx.op, ctx.nl, GridFunction(grid, ctx.z.values + h * zeta.values),
                         ctx.u_d, MU, 1e-13)
    jm, _ = reduced_cost(ctx.op, ctx.nl, GridFunction(grid, ctx.z.values - h * zeta.values),
                         ctx.u_d, MU, 1e-13)
    assert abs((jp - jm) / (2 * h) - exact) <= 1e-7 * max(1.0, abs(exact))


def test_gradient_fd_table_second_order(ctx):
    zeta = _smooth_direction(ctx.op.grid)
    rows = gradient_fd_table(ctx.op, ctx.nl, ctx.z, ctx.u_d, MU, zeta)
    assert len(rows) == 2
    assert "observed_order" not in rows[0]
    assert abs(rows[1]["observed_order"] - 2.0) <= 0.2
    assert rows[1]["rel_error"] <= 1e-5


def test_hessian_routes_agree(ctx):
    rng = np.random.default_rng(1)
    grid = ctx.op.grid
    for _ in range(3):
        z1 = grid.function(rng.standard_normal(grid.size))
        z2 = grid.function(rng.standard_normal(grid.size))
        direct = hessian_bilinear(ctx, z1, z2)
        flipped = hessian_bilinear(ctx, z2, z1)
        via_vec = inner(hessian_vec(ctx, z1), z2)
        via_second = hessian_bilinear_via_second(ctx, z1, z2)
        scale = max(1.0, abs(direct))
        assert abs(direct - flipped) <= 1e-10 * scale
        assert abs(direct - via_vec) <= 1e-10 * scale
        assert abs(direct - via_second) <= 1e-10 * scale


def test_hessian_vec_symmetry(ctx):
    rng = np.random.default_rng(2)
    grid = ctx.op.grid
    z1 = grid.function(rng.standard_normal(grid.size))
    z2 = grid.function(rng.standard_normal(grid.size))
    a = inner(hessian_vec(ctx, z1), z2)
    b = inner(z1, hessian_vec(ctx, z2))
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_hessian_matrix_consistent(ctx):
    H = hessian_matrix(ctx)
    np.testing.assert_array_equal(H, H.T)
    grid = ctx.op.grid
    rng = np.random.default_rng(3)
    v = rng.standard_normal(grid.size)
    hv = hessian_vec(ctx, GridFunction(grid, v))
    np.testing.assert_allclose(H @ v, hv.values, rtol=1e-9, atol=1e-12)
    # mu is a curvature floor here: the law is monotone and u_d is small
    assert np.linalg.eigvalsh(H)[0] >= MU - 1e-10


def test_hessian_fd_table_order(ctx):
    zeta = _smooth_direction(ctx.op.grid)
    rows = hessian_fd_table(ctx.op, ctx.nl, ctx.z, ctx.u_d, MU, zeta,
                            steps=(3e-2, 1e-2))
    assert abs(rows[1]["observed_order"] - 2.0) <= 0.3


def test_integral_backend_same_contracts():
    ctx = _ctx(integral_op(N, 0.5))
    zeta = _smooth_direction(ctx.op.grid)
    rows = gradient_fd_table(ctx.op, ctx.nl, ctx.z, ctx.u_d, MU, zeta)
    assert abs(rows[1]["observed_order"] - 2.0) <= 0.2
    rng = np.random.default_rng(4)
    z1 = ctx.op.grid.function(rng.standard_normal(N))
    z2 = ctx.op.grid.function(rng.standard_normal(N))
    a = inner(hessian_vec(ctx, z1), z2)
    b = inner(z1, hessian_vec(ctx, z2))
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_reduced_cost_value(ctx):
    value, report = reduced_cost(ctx.op, ctx.nl, ctx.z, ctx.u_d, MU)
    grid = ctx.op.grid
    diff = GridFunction(grid, report.u.values - ctx.u_d.values)
    manual = 0.5 * lp_norm(diff, 2) ** 2 + 0.5 * MU * lp_norm(ctx.z, 2) ** 2
    assert value == pytest.approx(manual, rel=1e-14)


def test_context_validation():
    op = spectral_op(8, 0.5)
    z = op.grid.function(0.0)
    u_d = op.grid.function(0.0)
    with pytest.raises(SensitivityError, match="mu"):
        SensitivityContext(op, PowerLaw(3.0), z, u_d, 0.0)
    nondiff = Nonlinearity(lambda x, t: np.asarray(t, dtype=float))
    with pytest.raises(SensitivityError, match="differentiability_order"):
        SensitivityContext(op, nondiff, z, u_d, MU)


def test_second_derivative_gate():
    op = spectral_op(8, 0.5)
    z = op.grid.function(1.0)
    u_d = op.grid.function(0.0)
    ctx = SensitivityContext(op, PowerLaw(1.5), z, u_d, MU)
    g = reduced_gradient(ctx)  # first order is fine
    assert g.values.shape == (8,)
    with pytest.raises(SensitivityError, match="second derivatives"):
        ctx.f_uu_field


def test_negative_slope_rejected():
    # a decreasing law breaks monotonicity; the shifted solve must name a node
    op = spectral_op(8, 0.5)
    down = Nonlinearity(lambda x, t: -0.5 * np.asarray(t, dtype=float),
                        f_u=lambda x, t: np.full(np.shape(t), -0.5))
    z = op.grid.function(lambda x: np.sin(math.pi * x))
    with pytest.raises(SolveError, match="negative at node"):
        SensitivityContext(op, down, z, op.grid.function(0.0), MU)


def test_hessian_lipschitz_probe_keys(ctx):
    out = hessian_lipschitz_probe(ctx.op, ctx.nl, ctx.u_d, MU, n_samples=2, seed=0)
    assert set(out) >= {"max_ratio", "max_ratio_half_step", "n_samples", "p_tilde"}
    assert out["n_samples"] == 2
    assert out["max_ratio"] >= 0.0
