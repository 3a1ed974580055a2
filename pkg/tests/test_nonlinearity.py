"""Power-law nonlinearity and the sampled structural checks."""

import math

import numpy as np
import pytest

from fracopt.grid import Grid, interval
from fracopt.nonlinearity import (
    Nonlinearity,
    NonlinearityError,
    PowerLaw,
    ZeroNonlinearity,
    check_delta2,
    check_growth,
    check_monotone_odd,
    eval_field,
    from_config,
)

GRID = Grid(interval(0.0, 1.0), 16)


def test_cubic_values():
    pl = PowerLaw(3.0)
    x = np.zeros(4)
    t = np.array([-2.0, -0.5, 0.0, 1.5])
    np.testing.assert_allclose(pl.f(x, t), t**3)
    np.testing.assert_allclose(pl.f_u(x, t), 3 * t**2)
    np.testing.assert_allclose(pl.f_uu(x, t), 6 * t)
    np.testing.assert_allclose(pl.F(x, t), t**4 / 4)
    assert pl.differentiability_order == 2
    assert pl.growth_c == pytest.approx(0.25)


def test_quadratic_law_keeps_sign():
    pl = PowerLaw(2.0)
    x = np.zeros(3)
    t = np.array([-1.5, 0.0, 2.0])
    np.testing.assert_allclose(pl.f(x, t), [-2.25, 0.0, 4.0])
    np.testing.assert_allclose(pl.f_uu(x, t), [-2.0, 0.0, 2.0])


def test_linear_law():
    pl = PowerLaw(1.0, b=2.5)
    x = np.zeros(2)
    t = np.array([-1.0, 3.0])
    np.testing.assert_allclose(pl.f(x, t), 2.5 * t)
    np.testing.assert_allclose(pl.f_uu(x, t), 0.0)
    assert pl.differentiability_order == 2
    assert pl.growth_c == 1.0


def test_fractional_exponent_has_order_one():
    pl = PowerLaw(1.5)
    assert pl.differentiability_order == 1
    with pytest.raises(NonlinearityError, match="singular"):
        pl.f_uu(np.zeros(2), np.array([0.5, 0.0]))
    # away from zero the formula is fine
    out = pl.f_uu(np.zeros(2), np.array([0.25, -0.25]))
    assert np.all(np.isfinite(out))


def test_parameter_validation():
    with pytest.raises(NonlinearityError):
        PowerLaw(0.5)
    with pytest.raises(NonlinearityError):
        PowerLaw(2.0, b=0.0)
    with pytest.raises(NonlinearityError):
        PowerLaw(2.0, b=GRID.function(lambda x: x - 0.5))
    with pytest.raises(NonlinearityError):
        Nonlinearity(lambda x, t: t, growth_c=1.5)
    with pytest.raises(NonlinearityError):
        Nonlinearity(lambda x, t: t, differentiability_order=1)


def test_nodal_coefficient_lookup():
    b = GRID.function(lambda x: 1.0 + x)
    pl = PowerLaw(3.0, b=b)
    u = GRID.function(1.0)
    np.testing.assert_allclose(eval_field(pl, u, 0).values, 1.0 + GRID.coords())
    off_domain = Grid(interval(0.0, 2.0), 16).function(1.0)
    with pytest.raises(NonlinearityError):
        eval_field(pl, off_domain, 0)


def test_eval_field_order_gating():
    u = GRID.function(0.5)
    pl15 = PowerLaw(1.5)
    with pytest.raises(NonlinearityError):
        eval_field(pl15, u, 2)
    with pytest.raises(NonlinearityError):
        eval_field(pl15, u, 3)
    zero = ZeroNonlinearity()
    assert np.all(eval_field(zero, u, 2).values == 0.0)


def test_growth_check_sharp_constant():
    for q in (2.0, 3.0, 5.0):
        pl = PowerLaw(q)
        c = 2.0 ** (1.0 - q)
        rep = check_growth(pl, GRID, c, sample_count=2000, seed=1)
        assert rep.passed, f"q={q} should satisfy its sharp constant"
        assert rep.worst_ratio >= c - 1e-12
        rep_bad = check_growth(pl, GRID, c + 0.05, sample_count=2000, seed=1)
        assert not rep_bad.passed
        assert rep_bad.witness is not None
        d = rep_bad.to_dict()
        assert set(d["witness"]) == {"x", "xi", "eta"}


def test_growth_check_validation():
    pl = PowerLaw(2.0)
    with pytest.raises(NonlinearityError):
        check_growth(pl, GRID, 0.0)
    with pytest.raises(NonlinearityError):
        check_growth(pl, GRID, 1.2)
    with pytest.raises(NonlinearityError):
        check_growth(pl, GRID, 0.5, m_range=-1.0)


def test_growth_check_deterministic():
    pl = PowerLaw(3.0)
    a = check_growth(pl, GRID, 0.25, sample_count=500, seed=3)
    b = check_growth(pl, GRID, 0.25, sample_count=500, seed=3)
    assert a.worst_ratio == b.worst_ratio


def test_monotone_odd_power_law():
    rep = check_monotone_odd(PowerLaw(3.0), GRID, sample_count=2000)
    assert rep.passed and rep.monotone_ok and rep.odd_ok and rep.zero_ok
    assert rep.witness is None


def test_monotone_odd_witnesses():
    # zero law is odd but not strictly increasing
    rep = check_monotone_odd(ZeroNonlinearity(), GRID, sample_count=500)
    assert not rep.passed
    assert rep.witness["kind"] == "monotone"
    # shifted law violates f(x, 0) = 0 and oddness
    shifted = Nonlinearity(lambda x, t: np.asarray(t) + 0.1)
    rep2 = check_monotone_odd(shifted, GRID, sample_count=500)
    assert not rep2.passed
    assert not rep2.odd_ok and not rep2.zero_ok


def test_delta2_identity():
    for q in (1.0, 2.5, 4.0):
        rep = check_delta2(PowerLaw(q), GRID, sample_count=2000)
        assert rep.passed
        assert rep.c1 == pytest.approx(1.0 / (q + 1))
        assert rep.max_rel_defect <= 1e-12
    with pytest.raises(NonlinearityError):
        check_delta2(ZeroNonlinearity(), GRID)


def test_from_config():
    pl = from_config({"type": "power_law", "q": 3.0, "b": 2.0})
    assert isinstance(pl, PowerLaw)
    assert pl.q == 3.0
    assert isinstance(from_config({"type": "zero"}), ZeroNonlinearity)
    with pytest.raises(NonlinearityError):
        from_config({"type": "sigmoid"})
