"""Semilinear state solves: manufactured targets, warm starts, probes."""

import math

import numpy as np
import pytest

from fracopt.grid import GridFunction
from fracopt.nonlinearity import Nonlinearity, PowerLaw, ZeroNonlinearity
from fracopt.state import (
    StateSolveError,
    linf_bound_probe,
    lipschitz_probe,
    solve_state,
    two_norm_gap,
)

from _oracles import integral_op, linf_diff, spectral_op, unit_grid


def _manufactured(op, nl):
    """Pick u*, push it through the equation, and hand back (z, u*)."""
    grid = op.grid
    u_star = grid.function(lambda x: np.sin(math.pi * x) + 0.2 * np.sin(3 * math.pi * x))
    f_vals = np.asarray(nl.f(grid.coords(), u_star.values), dtype=float)
    z = GridFunction(grid, op.apply(u_star).values + f_vals)
    return z, u_star


def test_linear_solve_matches_dense():
    op = spectral_op(24, 0.5)
    rng = np.random.default_rng(0)
    z = op.grid.function(rng.standard_normal(24))
    rep = solve_state(op, ZeroNonlinearity(), z, tol=1e-12)
    direct = np.linalg.solve(op.dense(), z.values)
    np.testing.assert_allclose(rep.u.values, direct, atol=1e-12)
    assert rep.converged


@pytest.mark.parametrize("make_op", [lambda: spectral_op(32, 0.5),
                                     lambda: integral_op(32, 0.5)])
def test_manufactured_cubic(make_op):
    op = make_op()
    nl = PowerLaw(3.0)
    z, u_star = _manufactured(op, nl)
    rep = solve_state(op, nl, z, tol=1e-10)
    assert rep.converged
    assert rep.iterations <= 10
    assert linf_diff(rep.u, u_star) <= 1e-8
    assert rep.method == "newton"
    assert len(rep.newton_history) == rep.iterations + 1


def test_warm_start_skips_iterations():
    op = spectral_op(24, 0.5)
    nl = PowerLaw(3.0)
    z, _ = _manufactured(op, nl)
    rep = solve_state(op, nl, z, tol=1e-10)
    again = solve_state(op, nl, z, tol=1e-10, u0=rep.u)
    assert again.iterations == 0
    np.testing.assert_array_equal(again.u.values, rep.u.values)


def test_fixed_point_path_for_nonsmooth_law():
    # no derivative supplied: the solver must fall back to fixed-point sweeps
    op = spectral_op(16, 0.5)
    soft = Nonlinearity(lambda x, t: 0.5 * np.tanh(t), name="soft")
    assert soft.differentiability_order == 0
    z = op.grid.function(lambda x: np.sin(math.pi * x))
    rep = solve_state(op, soft, z, tol=1e-9)
    assert rep.converged
    assert rep.method == "fixed-point"
    resid = op.apply(rep.u).values + 0.5 * np.tanh(rep.u.values) - z.values
    vol = op.grid.cell_volume
    assert math.sqrt(vol * float(resid @ resid)) <= 1e-9 * 2


def test_input_validation():
    op = spectral_op(8, 0.5)
    z = op.grid.function(1.0)
    with pytest.raises(StateSolveError):
        solve_state(op, PowerLaw(3.0), z, tol=0.0)
    with pytest.raises(StateSolveError):
        solve_state(op, PowerLaw(3.0), unit_grid(9).function(1.0))
    bad = Nonlinearity(lambda x, t: np.asarray(t) + 1.0)
    with pytest.raises(StateSolveError, match="f\\(x, 0\\) = 0"):
        solve_state(op, bad, z)


def test_nonconvergence_raises():
    op = spectral_op(16, 0.5)
    z = op.grid.function(5.0)
    with pytest.raises(StateSolveError):
        solve_state(op, PowerLaw(3.0), z, tol=1e-12, max_newton=1)


def test_two_norm_gap_dichotomy():
    assert two_norm_gap(1, 0.3).p_tilde == 2.0
    assert math.isinf(two_norm_gap(2, 0.4).p_tilde)
    assert two_norm_gap(1, 0.3).to_dict()["p_tilde"] == "2"
    assert two_norm_gap(2, 0.4).to_dict()["p_tilde"] == "inf"
    # boundary N = 4s goes to the sup-norm side
    assert math.isinf(two_norm_gap(1, 0.25).p_tilde)
    # exponent regimes
    assert two_norm_gap(1, 0.3).p_threshold == pytest.approx(1 / 0.6)
    assert two_norm_gap(1, 0.5).regime == "p > 1"
    assert two_norm_gap(1, 0.75).p_threshold is None
    with pytest.raises(ValueError):
        two_norm_gap(3, 0.5)
    with pytest.raises(ValueError):
        two_norm_gap(1, 1.0)


def test_lipschitz_probe_linear_is_isometry():
    # zero nonlinearity: the fractional-energy ratio is exactly 1
    op = spectral_op(16, 0.5)
    rng = np.random.default_rng(1)
    pairs = [(op.grid.function(rng.standard_normal(16)),
              op.grid.function(rng.standard_normal(16))) for _ in range(5)]
    rep = lipschitz_probe(op, ZeroNonlinearity(), pairs)
    assert rep.max_ratio_hs == pytest.approx(1.0, abs=1e-10)
    assert rep.pairs_used == 5
    assert rep.skipped == 0


def test_lipschitz_probe_monotone_contracts():
    op = spectral_op(16, 0.5)
    rng = np.random.default_rng(2)
    z = op.grid.function(rng.standard_normal(16))
    pairs = [(z, z), (z, op.grid.function(0.0))]
    rep = lipschitz_probe(op, PowerLaw(3.0), pairs)
    assert rep.skipped == 1  # identical pair contributes nothing
    assert rep.pairs_used == 1
    assert rep.max_ratio_hs <= 1.0 + 1e-10


def test_lipschitz_probe_integral_has_no_hs_ratio():
    op = integral_op(16, 0.5)
    z1 = op.grid.function(lambda x: np.sin(math.pi * x))
    rep = lipschitz_probe(op, PowerLaw(3.0), [(z1, op.grid.function(0.0))])
    assert rep.max_ratio_hs is None
    assert "max_ratio_hs" not in rep.to_dict()


def test_linf_bound_probe():
    op = spectral_op(16, 0.5)
    zs = [op.grid.function(0.0), op.grid.function(lambda x: np.sin(math.pi * x))]
    rep = linf_bound_probe(op, PowerLaw(3.0), zs)
    assert rep.skipped == 1
    assert rep.samples_used == 1
    assert rep.max_ratio > 0
