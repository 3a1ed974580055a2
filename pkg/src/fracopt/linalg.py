"""Shared dense symmetric positive definite solve with a residual contract."""

from __future__ import annotations

import numpy as np
import scipy.linalg


class SolveError(RuntimeError):
    pass


class ShiftedDenseSolver:
    """Factorization of (M + diag(w)) for a dense SPD matrix M and w >= 0.

    Factor once, solve many times. Every solve is checked against the
    residual contract ||M v + w v - r||_2 <= residual_tol * ||r||_2.
    """

    def __init__(self, matrix: np.ndarray, potential: np.ndarray, residual_tol: float = 1e-11):
        w = np.asarray(potential, dtype=float)
        if w.ndim == 0:
            w = np.full(matrix.shape[0], float(w))
        if np.any(w < 0):
            i = int(np.nonzero(w < 0)[0][0])
            raise SolveError(f"potential must be nodewise >= 0; negative at node {i}")
        self.matrix = matrix
        self.potential = w
        self.residual_tol = residual_tol
        shifted = matrix + np.diag(w)
        try:
            self._factor = scipy.linalg.cho_factor(shifted, lower=True)
        except scipy.linalg.LinAlgError as err:
            raise SolveError(f"shifted matrix is not positive definite: {err}") from err

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        r = np.asarray(rhs, dtype=float)
        v = scipy.linalg.cho_solve(self._factor, r)
        res = np.linalg.norm(self.matrix @ v + self.potential * v - r)
        bound = self.residual_tol * np.linalg.norm(r)
        if res > bound and np.linalg.norm(r) > 0:
            raise SolveError(
                f"solve residual {res:.3e} exceeds contract {bound:.3e}"
            )
        return v

    def solve_matrix(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for several right-hand sides (columns); no per-column residual check."""
        return scipy.linalg.cho_solve(self._factor, np.asarray(rhs, dtype=float))
