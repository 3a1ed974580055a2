"""Nonlinearities f(x, u), the built-in power law, and structural verifiers.

A nonlinearity is the triple (f, f_u, f_uu) of vectorized callables on
(coords, t) plus metadata: the claimed growth constant c and the
differentiability order actually available. The verifiers sample the
structural conditions (monotone odd with f(x,0)=0; the growth inequality
c |f(x, xi - eta)| <= |f(x, xi) - f(x, eta)|; the power-law Delta_2 identity
t f = (q+1) F) and report witnesses on failure. Sampling is seeded and
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid import Grid, GridFunction


class NonlinearityError(ValueError):
    pass


class Nonlinearity:
    """f(x, t) with optional u-derivatives; callables are vectorized and pure."""

    def __init__(self, f: Callable, f_u: Optional[Callable] = None,
                 f_uu: Optional[Callable] = None, growth_c: Optional[float] = None,
                 differentiability_order: Optional[int] = None, name: str = "custom"):
        self.f = f
        self.f_u = f_u
        self.f_uu = f_uu
        if growth_c is not None and not (0.0 < growth_c <= 1.0):
            raise NonlinearityError(f"growth constant must lie in (0,1], got {growth_c}")
        self.growth_c = growth_c
        if differentiability_order is None:
            differentiability_order = 2 if f_uu is not None else (1 if f_u is not None else 0)
        if differentiability_order >= 1 and f_u is None:
            raise NonlinearityError("differentiability_order >= 1 requires f_u")
        if differentiability_order >= 2 and f_uu is None:
            raise NonlinearityError("differentiability_order >= 2 requires f_uu")
        self.differentiability_order = differentiability_order
        self.name = name

    def __repr__(self):
        return f"Nonlinearity({self.name}, order={self.differentiability_order})"


class ZeroNonlinearity(Nonlinearity):
    """f identically zero: the linear problem. Smooth, not strictly increasing."""

    def __init__(self):
        zero = lambda x, t: np.zeros_like(np.asarray(t, dtype=float))
        super().__init__(zero, zero, zero, growth_c=None,
                         differentiability_order=2, name="zero")


class PowerLaw(Nonlinearity):
    """f(x, t) = b(x) |t|^(q-1) t with b > 0 and q >= 1.

    f_u = q b |t|^(q-1); f_uu = q (q-1) b |t|^(q-2) sign(t), set to 0 at t=0
    for q >= 2 (the limit value). For 1 < q < 2 the second derivative is
    unbounded at 0 and the law registers differentiability_order 1; second
    derivative evaluation at a node with t=0 is rejected as singular.
    The sharp growth constant is 2^(1-q). The primitive is
    F(x, t) = b(x) |t|^(q+1) / (q+1), giving t f = (q+1) F identically.
    """

    def __init__(self, q: float, b=1.0, b_grid: Optional[Grid] = None):
        if q < 1:
            raise NonlinearityError(f"power law needs q >= 1, got {q}")
        self.q = float(q)
        if isinstance(b, GridFunction):
            if np.any(b.values <= 0):
                raise NonlinearityError("power law needs b > 0 at every node")
            self._b_nodal = b
            self._b_const = None
        else:
            if float(b) <= 0:
                raise NonlinearityError(f"power law needs b > 0, got {b}")
            self._b_nodal = None
            self._b_const = float(b)

        q_ = self.q
        b_at = self._b_at

        def f(x, t):
            t = np.asarray(t, dtype=float)
            return b_at(x) * np.abs(t) ** (q_ - 1) * t

        def f_u(x, t):
            t = np.asarray(t, dtype=float)
            return q_ * b_at(x) * np.abs(t) ** (q_ - 1)

        def f_uu(x, t):
            t = np.asarray(t, dtype=float)
            if q_ == 1.0:
                return np.zeros_like(t)
            if q_ < 2.0 and np.any(t == 0.0):
                raise NonlinearityError(
                    f"singular second derivative: power law with q={q_} at t=0"
                )
            with np.errstate(divide="ignore", invalid="ignore"):
                out = q_ * (q_ - 1) * b_at(x) * np.abs(t) ** (q_ - 2) * np.sign(t)
            return np.where(t == 0.0, 0.0, out)

        order = 2 if (q_ >= 2.0 or q_ == 1.0) else 1
        super().__init__(f, f_u, f_uu, growth_c=2.0 ** (1.0 - q_),
                         differentiability_order=order, name=f"power_law(q={q_})")

    def _b_at(self, x) -> np.ndarray:
        if self._b_const is not None:
            n = np.shape(x)[0] if np.ndim(x) else 1
            return np.full(n, self._b_const)
        # Nodal b: map coordinates back to node indices on b's grid (exact
        # on the uniform grid this b was sampled on).
        grid = self._b_nodal.grid
        x = np.asarray(x, dtype=float)
        if grid.dimension == 1:
            a0, _ = grid.domain.bounds[0]
            idx = np.rint((x - a0) / grid.h[0]).astype(int) - 1
        else:
            a0, _ = grid.domain.bounds[0]
            a1, _ = grid.domain.bounds[1]
            ix = np.rint((x[:, 0] - a0) / grid.h[0]).astype(int) - 1
            iy = np.rint((x[:, 1] - a1) / grid.h[1]).astype(int) - 1
            idx = ix + grid.n * iy
        if np.any(idx < 0) or np.any(idx >= grid.size):
            raise NonlinearityError("coordinates do not match the grid carrying b")
        return self._b_nodal.values[idx]

    def F(self, x, t):
        t = np.asarray(t, dtype=float)
        return self._b_at(x) * np.abs(t) ** (self.q + 1) / (self.q + 1)


def eval_field(nl: Nonlinearity, u: GridFunction, order: int = 0) -> GridFunction:
    """Nodewise f / f_u / f_uu of a grid function."""
    if order not in (0, 1, 2):
        raise NonlinearityError(f"order must be 0, 1 or 2, got {order}")
    if order > nl.differentiability_order:
        raise NonlinearityError(
            f"order {order} requested but nonlinearity provides "
            f"differentiability_order {nl.differentiability_order}"
        )
    fn = (nl.f, nl.f_u, nl.f_uu)[order]
    x = u.grid.coords()
    return GridFunction(u.grid, fn(x, u.values))


def _sample_nodes(grid: Grid, count: int, rng: np.random.Generator):
    coords = grid.coords()
    idx = rng.integers(0, grid.size, size=count)
    return coords[idx] if grid.dimension == 1 else coords[idx, :]


@dataclass
class GrowthReport:
    passed: bool
    worst_ratio: float
    witness: Optional[tuple]
    c: float
    sample_count: int
    m_range: float

    def to_dict(self):
        d = {
            "passed": self.passed,
            "worst_ratio": self.worst_ratio,
            "c": self.c,
            "sample_count": self.sample_count,
            "m_range": self.m_range,
        }
        if self.witness is not None:
            d["witness"] = {"x": self.witness[0], "xi": self.witness[1], "eta": self.witness[2]}
        return d


def check_growth(nl: Nonlinearity, grid: Grid, c: float, sample_count: int = 10_000,
                 m_range: float = 10.0, seed: int = 0) -> GrowthReport:
    """Sample c |f(x, xi-eta)| <= |f(x, xi)-f(x, eta)| over nodes x [-M,M]^2.

    worst_ratio is the sampled infimum of |f(x,xi)-f(x,eta)| / |f(x,xi-eta)|
    (infinity where the denominator vanishes); the pass verdict allows a
    1e-12 * scale slack per sample.
    """
    if not (0.0 < c <= 1.0):
        raise NonlinearityError(f"growth constant must lie in (0,1], got {c}")
    if m_range <= 0:
        raise NonlinearityError(f"m_range must be > 0, got {m_range}")
    rng = np.random.default_rng(seed)
    x = _sample_nodes(grid, sample_count, rng)
    xi = rng.uniform(-m_range, m_range, size=sample_count)
    eta = rng.uniform(-m_range, m_range, size=sample_count)
    f_xi = np.asarray(nl.f(x, xi), dtype=float)
    f_eta = np.asarray(nl.f(x, eta), dtype=float)
    f_diff = np.asarray(nl.f(x, xi - eta), dtype=float)
    lhs = c * np.abs(f_diff)
    rhs = np.abs(f_xi - f_eta)
    scale = np.maximum(1.0, np.maximum(np.abs(f_xi), np.abs(f_eta)))
    violated = lhs > rhs + 1e-12 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(np.abs(f_diff) > 0, rhs / np.abs(f_diff), np.inf)
    worst = float(np.min(ratios)) if ratios.size else math.inf
    witness = None
    if np.any(violated):
        i = int(np.nonzero(violated)[0][0])
        wx = x[i] if np.ndim(x) == 1 else list(np.asarray(x[i], dtype=float))
        witness = (float(wx) if np.ndim(x) == 1 else wx, float(xi[i]), float(eta[i]))
    return GrowthReport(not bool(np.any(violated)), worst, witness, c, sample_count, m_range)


@dataclass
class MonotoneOddReport:
    passed: bool
    monotone_ok: bool
    odd_ok: bool
    zero_ok: bool
    witness: Optional[dict]

    def to_dict(self):
        d = {
            "passed": self.passed,
            "monotone_ok": self.monotone_ok,
            "odd_ok": self.odd_ok,
            "zero_ok": self.zero_ok,
        }
        if self.witness is not None:
            d["witness"] = self.witness
        return d


def check_monotone_odd(nl: Nonlinearity, grid: Grid, sample_count: int = 10_000,
                       m_range: float = 10.0, seed: int = 0) -> MonotoneOddReport:
    """Sampled strict monotonicity in t, oddness, and f(x, 0) = 0."""
    rng = np.random.default_rng(seed)
    x = _sample_nodes(grid, sample_count, rng)
    t1 = rng.uniform(-m_range, m_range, size=sample_count)
    t2 = rng.uniform(-m_range, m_range, size=sample_count)
    lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
    distinct = hi > lo
    f_lo = np.asarray(nl.f(x, lo), dtype=float)
    f_hi = np.asarray(nl.f(x, hi), dtype=float)
    mono_bad = distinct & (f_hi <= f_lo)
    f_pos = np.asarray(nl.f(x, hi), dtype=float)
    f_neg = np.asarray(nl.f(x, -hi), dtype=float)
    scale = np.maximum(1.0, np.abs(f_pos))
    odd_bad = np.abs(f_pos + f_neg) > 1e-12 * scale
    f0 = np.asarray(nl.f(x, np.zeros(sample_count)), dtype=float)
    zero_bad = np.abs(f0) > 1e-12

    witness = None
    if np.any(mono_bad):
        i = int(np.nonzero(mono_bad)[0][0])
        witness = {"kind": "monotone", "t1": float(lo[i]), "t2": float(hi[i]),
                   "f1": float(f_lo[i]), "f2": float(f_hi[i])}
    elif np.any(odd_bad):
        i = int(np.nonzero(odd_bad)[0][0])
        witness = {"kind": "odd", "t": float(hi[i]), "f_plus": float(f_pos[i]),
                   "f_minus": float(f_neg[i])}
    elif np.any(zero_bad):
        i = int(np.nonzero(zero_bad)[0][0])
        witness = {"kind": "zero", "f0": float(f0[i])}
    mono_ok = not bool(np.any(mono_bad))
    odd_ok = not bool(np.any(odd_bad))
    zero_ok = not bool(np.any(zero_bad))
    return MonotoneOddReport(mono_ok and odd_ok and zero_ok, mono_ok, odd_ok, zero_ok, witness)


@dataclass
class Delta2Report:
    passed: bool
    q: float
    c1: float
    max_rel_defect: float

    def to_dict(self):
        return {"passed": self.passed, "q": self.q, "c1": self.c1,
                "max_rel_defect": self.max_rel_defect}


def check_delta2(pl: PowerLaw, grid: Grid, sample_count: int = 10_000,
                 m_range: float = 10.0, seed: int = 0) -> Delta2Report:
    """Power-law identity t f(x,t) = (q+1) F(x,t); hence c1 = 1/(q+1) works."""
    if not isinstance(pl, PowerLaw):
        raise NonlinearityError("check_delta2 applies to the power law only")
    rng = np.random.default_rng(seed)
    x = _sample_nodes(grid, sample_count, rng)
    t = rng.uniform(-m_range, m_range, size=sample_count)
    tf = t * np.asarray(pl.f(x, t), dtype=float)
    qf = (pl.q + 1) * np.asarray(pl.F(x, t), dtype=float)
    scale = np.maximum(1.0, np.abs(tf))
    rel = np.abs(tf - qf) / scale
    worst = float(np.max(rel)) if rel.size else 0.0
    return Delta2Report(worst <= 1e-12, pl.q, 1.0 / (pl.q + 1), worst)


def from_config(spec: dict) -> Nonlinearity:
    """Build a nonlinearity from {type: "power_law", q, b} or {type: "zero"}."""
    kind = spec.get("type")
    if kind == "zero":
        return ZeroNonlinearity()
    if kind == "power_law":
        return PowerLaw(q=spec["q"], b=spec.get("b", 1.0))
    raise NonlinearityError(f"unknown nonlinearity type {kind!r}")
