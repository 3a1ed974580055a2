"""Run configuration: schema, validation, and construction of live objects.

A run is described by one JSON document (TOML is accepted as an alternate
front-end and parsed into the same schema). Validation is strict: unknown
keys are rejected everywhere, and the statically checkable invariants of the
numeric types (s in (0,1), mu > 0, q >= 1, box feasibility per node) are
enforced before any computation starts.
"""

from __future__ import annotations

import math
from typing import Literal, Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .grid import Box, Grid, GridError, GridFunction, interval, rectangle
from .integral import build_integral
from .nonlinearity import Nonlinearity, PowerLaw, ZeroNonlinearity
from .spectral import EllipticCoefficient, build_spectral

EXPERIMENTS = (
    "solve-state",
    "solve-control",
    "check-gradient",
    "check-kkt",
    "check-ssc",
    "check-growth-quadratic",
    "check-growth-condition",
    "convergence-study",
    "operator-oracle",
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending config path."""


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_StrictModel):
    kind: Literal["interval", "rectangle"]
    bounds: list[float]
    n: int = Field(ge=1)

    @field_validator("bounds")
    @classmethod
    def _finite(cls, v):
        if any(not math.isfinite(x) for x in v):
            raise ValueError("bounds must be finite")
        return v


class OperatorConfig(_StrictModel):
    backend: Literal["spectral", "integral"]
    s: float = Field(gt=0.0, lt=1.0)
    coefficient: Optional[float] = None
    quad_order: Optional[int] = Field(default=None, ge=2)


class FieldConfig(_StrictModel):
    """Recipe for a nodal field: a constant, a boundary-vanishing sine mode,
    a polynomial bump, or explicit nodal values; offset shifts any of them."""

    type: Literal["constant", "sine", "bump", "values"]
    value: Optional[float] = None
    amplitude: float = 1.0
    frequency: Optional[list[int]] = None
    values: Optional[list[float]] = None
    offset: float = 0.0


FieldSpec = Union[float, int, FieldConfig]


class NonlinearityConfig(_StrictModel):
    type: Literal["power_law", "zero"]
    q: Optional[float] = Field(default=None, ge=1.0)
    b: Optional[FieldSpec] = None


class BoxConfig(_StrictModel):
    z_a: FieldSpec
    z_b: FieldSpec


class ProblemConfig(_StrictModel):
    grid: GridConfig
    operator: OperatorConfig
    nonlinearity: NonlinearityConfig = NonlinearityConfig(type="zero")
    mu: Optional[float] = Field(default=None, gt=0.0)
    u_d: Optional[FieldSpec] = None
    z: Optional[FieldSpec] = None
    box: Optional[BoxConfig] = None


class SolverConfig(_StrictModel):
    method: Literal["projected-gradient", "semismooth-newton"] = "semismooth-newton"
    tol: float = Field(default=1e-8, gt=0.0)
    max_iter: int = Field(default=200, ge=1)
    state_tol: float = Field(default=1e-12, gt=0.0)
    max_newton: int = Field(default=50, ge=1)


class CheckConfig(_StrictModel):
    taus: list[float] = [0.0, 1e-3, 1e-2]
    tau: float = Field(default=1e-3, ge=0.0)
    iters: Optional[int] = Field(default=None, ge=1)
    rho: float = Field(default=0.1, gt=0.0)
    beta: Optional[float] = None
    n_samples: int = Field(default=200, ge=1)
    c: Optional[float] = None
    sample_count: int = Field(default=10_000, ge=1)
    m_range: float = Field(default=10.0, gt=0.0)
    direction: Optional[FieldSpec] = None
    fd_steps: list[float] = [1e-3, 1e-4]
    hess_steps: list[float] = [3e-2, 1e-2, 3e-3]
    kkt_tol: float = Field(default=1e-8, gt=0.0)
    sign_threshold: float = Field(default=1e-6, gt=0.0)
    n_directions: int = Field(default=100, ge=1)
    max_rel_error: float = Field(default=1e-5, gt=0.0)
    order_band: list[float] = [1.8, 2.2]
    hess_order_band: list[float] = [1.7, 2.3]
    oracle_tol: float = Field(default=1e-10, gt=0.0)
    getoor_tol: float = Field(default=0.02, gt=0.0)
    study: Optional[Literal["getoor", "state-sine"]] = None
    ns: list[int] = [32, 64, 128, 256]
    mode: int = Field(default=1, ge=1)
    run_ssc: bool = False
    run_growth: bool = False


class RunConfig(_StrictModel):
    experiment: Literal["solve-state", "solve-control", "check-gradient",
                        "check-kkt", "check-ssc", "check-growth-quadratic",
                        "check-growth-condition", "convergence-study",
                        "operator-oracle"]
    problem: ProblemConfig
    solver: SolverConfig = SolverConfig()
    check: CheckConfig = CheckConfig()
    seed: int = 0
    output_dir: str = "."


def _validation_message(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(text: str, fmt: str = "json") -> RunConfig:
    """Parse and validate a config document; fmt is 'json' or 'toml'."""
    import json as _json

    if fmt == "json":
        try:
            raw = _json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    elif fmt == "toml":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from exc
    else:
        raise ConfigError(f"unknown config format {fmt!r} (expected json or toml)")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc)) from exc


def build_grid(cfg: GridConfig) -> Grid:
    want = 2 if cfg.kind == "interval" else 4
    if len(cfg.bounds) != want:
        raise ConfigError(f"problem.grid.bounds: {cfg.kind} needs {want} numbers, "
                          f"got {len(cfg.bounds)}")
    b = cfg.bounds
    try:
        if cfg.kind == "interval":
            domain = interval(b[0], b[1])
        else:
            domain = rectangle(b[0], b[1], b[2], b[3])
        return Grid(domain, cfg.n)
    except GridError as exc:
        raise ConfigError(f"problem.grid: {exc}") from exc


def build_field(grid: Grid, spec: FieldSpec, path: str) -> GridFunction:
    """Materialize a FieldSpec on the grid; errors name the config path."""
    if isinstance(spec, (int, float)):
        return grid.function(float(spec))
    if spec.type == "constant":
        if spec.value is None:
            raise ConfigError(f"{path}: constant field needs 'value'")
        return grid.function(spec.value + spec.offset)
    if spec.type == "values":
        if spec.values is None:
            raise ConfigError(f"{path}: values field needs 'values'")
        if len(spec.values) != grid.size:
            raise ConfigError(f"{path}: expected {grid.size} values, got {len(spec.values)}")
        return grid.function(np.asarray(spec.values, dtype=float) + spec.offset)
    dim = grid.dimension
    freq = spec.frequency if spec.frequency is not None else [1] * dim
    if spec.type == "sine" and len(freq) != dim:
        raise ConfigError(f"{path}: frequency needs {dim} entries, got {len(freq)}")
    coords = grid.coords()
    if dim == 1:
        coords = coords.reshape(-1, 1)
    vals = np.full(grid.size, spec.amplitude)
    for axis in range(dim):
        (a, b) = grid.domain.bounds[axis]
        t = (coords[:, axis] - a) / (b - a)
        if spec.type == "sine":
            vals = vals * np.sin(freq[axis] * math.pi * t)
        else:  # bump: parabola normalized to peak amplitude at the center
            vals = vals * 4.0 * t * (1.0 - t)
    return GridFunction(grid, vals + spec.offset)


def build_operator(grid: Grid, cfg: OperatorConfig):
    if cfg.backend == "spectral":
        if cfg.quad_order is not None:
            raise ConfigError("problem.operator.quad_order: only the integral "
                              "backend takes a quadrature order")
        coeff = EllipticCoefficient(cfg.coefficient) if cfg.coefficient is not None \
            else EllipticCoefficient(1.0)
        return build_spectral(grid, coeff=coeff, s=cfg.s)
    if cfg.coefficient is not None:
        raise ConfigError("problem.operator.coefficient: only the spectral "
                          "backend takes a coefficient")
    kwargs = {} if cfg.quad_order is None else {"quad_order": cfg.quad_order}
    try:
        return build_integral(grid, s=cfg.s, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"problem.operator: {exc}") from exc


def build_nonlinearity(grid: Grid, cfg: NonlinearityConfig) -> Nonlinearity:
    if cfg.type == "zero":
        if cfg.q is not None or cfg.b is not None:
            raise ConfigError("problem.nonlinearity: 'zero' takes neither q nor b")
        return ZeroNonlinearity()
    if cfg.q is None:
        raise ConfigError("problem.nonlinearity.q: required for power_law")
    if cfg.b is None:
        b = 1.0
    elif isinstance(cfg.b, (int, float)):
        b = float(cfg.b)
    else:
        b = build_field(grid, cfg.b, "problem.nonlinearity.b")
    return PowerLaw(cfg.q, b=b)


def build_box(grid: Grid, cfg: BoxConfig) -> Box:
    z_a = build_field(grid, cfg.z_a, "problem.box.z_a")
    z_b = build_field(grid, cfg.z_b, "problem.box.z_b")
    try:
        return Box(z_a, z_b)
    except GridError as exc:
        raise ConfigError(f"problem.box: {exc}") from exc


def require(value, name: str, experiment: str):
    if value is None:
        raise ConfigError(f"{name}: required for {experiment}")
    return value
