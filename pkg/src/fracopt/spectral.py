"""Spectral fractional diffusion operator by matrix transfer.

The second-order elliptic operator -(a u')' (1D) or -gamma*Laplace (2D) is
discretized by symmetric finite differences on the interior nodes; its full
eigendecomposition realizes arbitrary real powers

    A^sigma u = sum_k lambda_k^sigma <u, phi_k> phi_k,

with <.,.> the discrete L^2 inner product and {phi_k} the discrete
eigenfunctions, orthonormal in that inner product. For constant coefficients
the eigenpairs are closed-form discrete sine modes (analytic-sine backend);
a variable 1D coefficient goes through a dense tridiagonal eigensolve
(dense-eig backend). Fractional powers are exact at the discrete level:
no quadrature in an auxiliary variable is involved.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg

from .grid import Grid, GridFunction, GridError
from .linalg import ShiftedDenseSolver, SolveError

DENSE_CAP_1D = 1024
DENSE_CAP_2D = 64


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class EllipticCoefficient:
    """Scalar diffusion coefficient a(x) >= floor > 0.

    a is a positive constant, or in 1D a callable sampled at cell midpoints.
    2D supports constants only (the tensor sine basis requires it).
    """

    a: Union[float, Callable[[np.ndarray], np.ndarray]]
    floor: float = 1e-12

    def __post_init__(self):
        if self.floor <= 0:
            raise OperatorError(f"ellipticity floor must be > 0, got {self.floor}")
        if not callable(self.a) and float(self.a) < self.floor:
            raise OperatorError(f"constant coefficient {self.a} below floor {self.floor}")

    @property
    def is_constant(self) -> bool:
        return not callable(self.a)

    def sample(self, x: np.ndarray) -> np.ndarray:
        if self.is_constant:
            return np.full(np.shape(x)[0] if np.ndim(x) else 1, float(self.a))
        vals = np.asarray(self.a(x), dtype=float)
        if np.any(vals < self.floor):
            i = int(np.nonzero(vals < self.floor)[0][0])
            raise OperatorError(
                f"coefficient below ellipticity floor {self.floor} at sample {i}"
            )
        return vals


UNIT_COEFFICIENT = EllipticCoefficient(1.0)


class SpectralOperator:
    """Discrete fractional power A^s with full eigendecomposition.

    eigenvalues are ascending and positive; eigenvector columns are
    orthonormal under the discrete inner product (Phi^T Phi * h^N = I).
    Immutable after build.
    """

    def __init__(self, grid: Grid, s: float, eigenvalues: np.ndarray,
                 eigenvectors: np.ndarray, backend: str):
        self.grid = grid
        self.s = float(s)
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors
        self.backend = backend
        self.eigenvalues.flags.writeable = False
        self.eigenvectors.flags.writeable = False
        self._dense_cache: dict[float, np.ndarray] = {}

    @property
    def size(self) -> int:
        return self.grid.size

    def coefficients(self, u: GridFunction) -> np.ndarray:
        """Eigenbasis coefficients <u, phi_k>."""
        return self.grid.cell_volume * (self.eigenvectors.T @ u.values)

    def dense_power(self, sigma: float) -> np.ndarray:
        """Dense symmetric matrix of A^sigma acting on nodal values."""
        sigma = float(sigma)
        if sigma not in self._dense_cache:
            lam = self.eigenvalues**sigma
            mat = self.grid.cell_volume * (
                (self.eigenvectors * lam) @ self.eigenvectors.T
            )
            mat = 0.5 * (mat + mat.T)
            self._dense_cache[sigma] = mat
        return self._dense_cache[sigma]

    def dense(self) -> np.ndarray:
        return self.dense_power(self.s)

    def apply(self, u: GridFunction) -> GridFunction:
        return apply_power(self, u, self.s)

    def energy_norm(self, u: GridFunction) -> float:
        return hs_norm(self, u, self.s)

    def dual_norm(self, z: GridFunction) -> float:
        return hs_norm(self, z, -self.s)


def _check_s(s: float):
    if not (0.0 < s < 1.0):
        raise OperatorError(f"fractional order s must lie in (0,1), got {s}")


def _sine_modes_1d(grid: Grid) -> np.ndarray:
    # phi_k(x_i) = sqrt(2/L) sin(k pi i / (n+1)); exactly inner-orthonormal.
    n = grid.n
    a, b = grid.domain.bounds[0]
    i = np.arange(1, n + 1)
    k = np.arange(1, n + 1)
    return math.sqrt(2.0 / (b - a)) * np.sin(np.outer(i, k) * math.pi / (n + 1))


def _fd_sine_eigenvalues(grid: Grid, axis: int) -> np.ndarray:
    n = grid.n
    h = grid.h[axis]
    k = np.arange(1, n + 1)
    return (4.0 / h**2) * np.sin(k * math.pi / (2 * (n + 1))) ** 2


def build_spectral(grid: Grid, coeff: EllipticCoefficient = UNIT_COEFFICIENT,
                   s: float = 0.5, backend: Optional[str] = None,
                   dense_cap: Optional[int] = None) -> SpectralOperator:
    """Assemble the discrete elliptic operator and its eigendecomposition.

    1D uses the 3-point stencil with the coefficient sampled at cell
    midpoints; 2D uses the 5-point stencil with a constant coefficient.
    Constant coefficients select the analytic-sine backend (closed-form
    discrete sine eigenpairs); a callable 1D coefficient selects dense-eig.
    """
    _check_s(s)
    dim = grid.dimension
    cap = dense_cap if dense_cap is not None else (DENSE_CAP_1D if dim == 1 else DENSE_CAP_2D)
    if grid.n > cap:
        raise OperatorError(
            f"grid has n={grid.n} interior nodes per axis, above the dense cap {cap}"
        )

    if backend is None:
        backend = "analytic-sine" if coeff.is_constant else "dense-eig"

    if backend == "analytic-sine":
        if not coeff.is_constant:
            raise OperatorError("analytic-sine backend requires a constant coefficient")
        a_const = float(coeff.a)
        if dim == 1:
            lam = a_const * _fd_sine_eigenvalues(grid, 0)
            phi = _sine_modes_1d(grid)
            return SpectralOperator(grid, s, lam, phi, backend)
        # 2D tensor sine modes, lexicographic nodes (x fastest).
        lam_x = _fd_sine_eigenvalues(grid, 0)
        lam_y = _fd_sine_eigenvalues(grid, 1)
        n = grid.n
        lam_pairs = a_const * (np.add.outer(lam_y, lam_x).ravel())  # index l*n + k
        ax, bx = grid.domain.bounds[0]
        ay, by = grid.domain.bounds[1]
        sx = math.sqrt(2.0 / (bx - ax)) * np.sin(
            np.outer(np.arange(1, n + 1), np.arange(1, n + 1)) * math.pi / (n + 1)
        )
        sy = math.sqrt(2.0 / (by - ay)) * np.sin(
            np.outer(np.arange(1, n + 1), np.arange(1, n + 1)) * math.pi / (n + 1)
        )
        order = np.argsort(lam_pairs, kind="stable")
        lam = lam_pairs[order]
        phi = np.empty((n * n, n * n))
        for col, flat in enumerate(order):
            l, k = divmod(int(flat), n)
            # node index i + n*j carries phi(x_i, y_j) = sx[i,k] * sy[j,l]
            phi[:, col] = np.outer(sy[:, l], sx[:, k]).ravel()
        return SpectralOperator(grid, s, lam, phi, backend)

    if backend == "dense-eig":
        if dim != 1:
            raise OperatorError("dense-eig backend is 1D only (2D is constant-coefficient)")
        a0, _ = grid.domain.bounds[0]
        h = grid.h[0]
        mids = a0 + h * (np.arange(grid.n + 1) + 0.5)
        a_mid = coeff.sample(mids)
        if np.any(a_mid < coeff.floor):
            raise OperatorError("coefficient below ellipticity floor at a midpoint")
        diag = (a_mid[:-1] + a_mid[1:]) / h**2
        off = -a_mid[1:-1] / h**2
        try:
            lam, vec = scipy.linalg.eigh_tridiagonal(diag, off)
        except scipy.linalg.LinAlgError as err:
            raise OperatorError(f"eigensolver failure: {err}") from err
        if lam[0] <= 0:
            raise OperatorError(f"nonpositive eigenvalue {lam[0]} in elliptic operator")
        # Euclidean-orthonormal -> inner-orthonormal; fix signs for determinism.
        vec = vec / math.sqrt(h)
        flip = vec[0, :] < 0
        vec[:, flip] *= -1.0
        return SpectralOperator(grid, s, lam, vec, backend)

    raise OperatorError(f"unknown backend {backend!r}")


def apply_power(op: SpectralOperator, u: GridFunction, sigma: float) -> GridFunction:
    """A^sigma u = sum_k lambda_k^sigma <u, phi_k> phi_k."""
    if u.grid != op.grid:
        raise GridError("grid function does not live on the operator's grid")
    c = op.coefficients(u)
    return GridFunction(op.grid, op.eigenvectors @ (op.eigenvalues**float(sigma) * c))


def hs_norm(op: SpectralOperator, u: GridFunction, theta: float) -> float:
    """Fractional Sobolev-type norm (sum_k lambda_k^theta <u,phi_k>^2)^(1/2).

    theta may be negative (dual norm).
    """
    if u.grid != op.grid:
        raise GridError("grid function does not live on the operator's grid")
    c = op.coefficients(u)
    return float(np.sqrt(np.sum(op.eigenvalues**float(theta) * c**2)))


def solve_shifted(op: SpectralOperator, potential: GridFunction, rhs: GridFunction,
                  residual_tol: float = 1e-11) -> GridFunction:
    """Solve (A^s + diag(w)) v = r for nodewise w >= 0.

    Realized by factorizing the dense symmetric matrix; the returned v obeys
    ||A^s v + w v - r||_2 <= residual_tol * ||r||_2.
    """
    if rhs.grid != op.grid or potential.grid != op.grid:
        raise GridError("potential/rhs must live on the operator's grid")
    solver = ShiftedDenseSolver(op.dense(), potential.values, residual_tol)
    return GridFunction(op.grid, solver.solve(rhs.values))


def spectra_to_csv(op: SpectralOperator) -> str:
    buf = io.StringIO()
    buf.write("# columns: k, lambda\n")
    for k, lam in enumerate(op.eigenvalues, start=1):
        buf.write(f"{k},{lam:.17g}\n")
    return buf.getvalue()
