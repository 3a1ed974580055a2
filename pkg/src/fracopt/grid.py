"""Discrete domains, grid functions, norms, and the box projection.

Domains are open intervals or open rectangles discretized by uniform interior
nodes; the boundary (and exterior) value is identically zero, so a grid
function stores interior node values only. Node ordering is lexicographic
with x running fastest; this is fixed once here and relied on everywhere.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """Open interval (kind='interval', N=1) or open rectangle (kind='rectangle', N=2).

    bounds holds one (a, b) pair per axis with a < b.
    """

    kind: str
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle"):
            raise GridError(f"unknown domain kind {self.kind!r}")
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        expected = {"interval": 1, "rectangle": 2}[self.kind]
        if len(bounds) != expected:
            raise GridError(
                f"domain kind {self.kind!r} needs {expected} axis bounds, got {len(bounds)}"
            )
        for axis, (a, b) in enumerate(bounds):
            if not (math.isfinite(a) and math.isfinite(b)):
                raise GridError(f"axis {axis}: bounds must be finite")
            if not a < b:
                raise GridError(f"axis {axis}: need a < b, got ({a}, {b})")

    @property
    def dimension(self) -> int:
        return len(self.bounds)


def interval(a: float, b: float) -> Domain:
    return Domain("interval", ((a, b),))


def rectangle(ax: float, bx: float, ay: float, by: float) -> Domain:
    return Domain("rectangle", ((ax, bx), (ay, by)))


@dataclass(frozen=True)
class Grid:
    """Uniform grid of n interior nodes per axis; spacing h = (b - a)/(n + 1).

    All nodes are strictly interior: the homogeneous Dirichlet (or exterior)
    condition is built into the discretization.
    """

    domain: Domain
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise GridError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((b - a) / (self.n + 1) for a, b in self.domain.bounds)

    @property
    def size(self) -> int:
        return self.n**self.dimension

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for h in self.h:
            vol *= h
        return vol

    def axis_coords(self, axis: int) -> np.ndarray:
        a, b = self.domain.bounds[axis]
        h = (b - a) / (self.n + 1)
        return a + h * np.arange(1, self.n + 1)

    def coords(self) -> np.ndarray:
        """Interior node coordinates, shape (size,) in 1D or (size, 2) in 2D.

        Lexicographic order, x fastest: node k = i + n*j sits at (x_i, y_j).
        """
        if self.dimension == 1:
            return self.axis_coords(0)
        x = self.axis_coords(0)
        y = self.axis_coords(1)
        xx = np.tile(x, self.n)
        yy = np.repeat(y, self.n)
        return np.column_stack([xx, yy])

    def function(self, data) -> "GridFunction":
        """Build a GridFunction from an array, a scalar, or a callable on coords."""
        if callable(data):
            values = np.asarray(data(self.coords()), dtype=float)
        elif np.isscalar(data):
            values = np.full(self.size, float(data))
        else:
            values = np.asarray(data, dtype=float)
        return GridFunction(self, values)


class GridFunction:
    """Real values at the interior nodes of a grid. Immutable after construction."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        vals = np.array(values, dtype=float).reshape(-1)
        if vals.shape[0] != grid.size:
            raise GridError(
                f"value vector has length {vals.shape[0]}, grid has {grid.size} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("grid function values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("GridFunction is immutable")

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __repr__(self):
        return f"GridFunction(n={self.grid.n}, dim={self.grid.dimension})"


def _require_same_grid(u: GridFunction, v: GridFunction):
    if u.grid != v.grid:
        raise GridError("grid functions live on different grids")


def lp_norm(u: GridFunction, p) -> float:
    """Discrete L^p norm: (sum h^N |u_i|^p)^(1/p); max |u_i| for p = inf."""
    if p == math.inf or p == "inf":
        return float(np.max(np.abs(u.values))) if u.values.size else 0.0
    p = float(p)
    if p < 1:
        raise GridError(f"lp_norm needs p >= 1, got {p}")
    vol = u.grid.cell_volume
    return float((vol * np.sum(np.abs(u.values) ** p)) ** (1.0 / p))


def inner(u: GridFunction, v: GridFunction) -> float:
    """Discrete L^2 pairing h^N sum(u_i v_i)."""
    _require_same_grid(u, v)
    return float(u.grid.cell_volume * np.dot(u.values, v.values))


@dataclass(frozen=True)
class Box:
    """Nodewise box constraints z_a <= z <= z_b."""

    z_a: GridFunction
    z_b: GridFunction

    def __post_init__(self):
        _require_same_grid(self.z_a, self.z_b)
        bad = np.nonzero(self.z_a.values > self.z_b.values)[0]
        if bad.size:
            i = int(bad[0])
            raise GridError(f"box infeasible: z_a > z_b at node {i}")

    @property
    def grid(self) -> Grid:
        return self.z_a.grid


def project_box(w: GridFunction, box: Box) -> GridFunction:
    """Nodewise clamp of w into [z_a, z_b]."""
    _require_same_grid(w, box.z_a)
    clipped = np.minimum(box.z_b.values, np.maximum(box.z_a.values, w.values))
    return GridFunction(w.grid, clipped)


# Serialization: CSV with node coordinates plus value, and a JSON envelope.

def function_to_csv(u: GridFunction) -> str:
    buf = io.StringIO()
    if u.grid.dimension == 1:
        buf.write("# columns: x, value\n")
        for x, v in zip(u.grid.coords(), u.values):
            buf.write(f"{x:.17g},{v:.17g}\n")
    else:
        buf.write("# columns: x, y, value\n")
        for (x, y), v in zip(u.grid.coords(), u.values):
            buf.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
    return buf.getvalue()


def function_to_json(u: GridFunction) -> str:
    envelope = {
        "domain": {
            "kind": u.grid.domain.kind,
            "bounds": [list(ab) for ab in u.grid.domain.bounds],
        },
        "n": u.grid.n,
        "values": [float(f"{v:.17g}") for v in u.values],
    }
    return json.dumps(envelope)


def function_from_json(text: str) -> GridFunction:
    env = json.loads(text)
    dom = Domain(env["domain"]["kind"], tuple(tuple(ab) for ab in env["domain"]["bounds"]))
    grid = Grid(dom, env["n"])
    return GridFunction(grid, env["values"])
