"""
Small dense symmetric positive-definite algebra used by every estimator.

Matrices are kept as plain ``numpy`` arrays; the ridge matrices themselves are
maintained (never their inverses) and solved on demand through a Cholesky
factorization.
"""

import logging

import numpy as np
from scipy import linalg as sla

from .exceptions import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

# Documented tolerances, not configurable.
SOLVE_RTOL = 1e-8
SYMMETRY_ATOL = 1e-9
QUADRATIC_FORM_ATOL = 1e-12


def as_vector(x, dim=None):
    vec = np.asarray(x, dtype=float).ravel()
    if dim is not None and vec.size != dim:
        raise ConfigurationError(f"Vector has dimension {vec.size}, expected {dim}.")
    if not np.all(np.isfinite(vec)):
        raise ConfigurationError("Vector entries must be finite.")
    return vec


def scaled_identity(dim, scale):
    if dim < 1:
        raise ConfigurationError(f"Matrix dimension must be positive, got {dim}.")
    return float(scale) * np.eye(dim)


def is_symmetric(matrix, atol=SYMMETRY_ATOL):
    matrix = np.asarray(matrix, dtype=float)
    return matrix.ndim == 2 and matrix.shape[0] == matrix.shape[1] and np.allclose(
        matrix, matrix.T, rtol=0.0, atol=atol
    )


def condition_number(matrix):
    try:
        return float(np.linalg.cond(matrix))
    except np.linalg.LinAlgError:
        return float("inf")


def _check_square(matrix, dim):
    if matrix.ndim != 2 or matrix.shape != (dim, dim):
        raise ConfigurationError(
            f"Matrix of shape {matrix.shape} does not match vector dimension {dim}."
        )


def rank_one_update(matrix, x, weight=1.0, inplace=False):
    """
    Return ``matrix + weight * x x^T``.

    With ``inplace=True`` the caller's array is updated and returned.
    """
    matrix = np.asarray(matrix, dtype=float)
    x = as_vector(x)
    _check_square(matrix, x.size)
    if weight < 0:
        raise ConfigurationError(f"Rank-one weight must be nonnegative, got {weight}.")
    target = matrix if inplace else matrix.copy()
    target += weight * np.outer(x, x)
    return target


class PsdFactor:
    """
    Cholesky factorization of a positive-definite matrix, reusable for many
    right-hand sides within one round.
    """

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ConfigurationError(f"Matrix must be square, got {self.matrix.shape}.")
        if not is_symmetric(self.matrix):
            raise NumericalError(
                f"Matrix is not symmetric (max asymmetry {np.max(np.abs(self.matrix - self.matrix.T)):.3e})."
            )
        try:
            self._factor = sla.cho_factor(self.matrix, lower=True, check_finite=True)
        except (sla.LinAlgError, ValueError) as exc:
            raise NumericalError(
                "Matrix is not positive-definite "
                f"(condition number {condition_number(self.matrix):.3e})."
            ) from exc

    @property
    def dim(self):
        return self.matrix.shape[0]

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.dim:
            raise ConfigurationError(
                f"Right-hand side of length {rhs.shape[0]} does not match dimension {self.dim}."
            )
        return sla.cho_solve(self._factor, rhs, check_finite=False)

    def inverse(self):
        return self.solve(np.eye(self.dim))


def solve_psd(matrix, rhs):
    """Return v with M v = b, checked against the documented residual tolerance."""
    factor = PsdFactor(matrix)
    rhs = np.asarray(rhs, dtype=float)
    solution = factor.solve(rhs)
    residual = np.linalg.norm(factor.matrix @ solution - rhs)
    if residual > SOLVE_RTOL * (1.0 + np.linalg.norm(rhs)):
        raise NumericalError(
            f"Solve residual {residual:.3e} exceeds tolerance "
            f"(condition number {condition_number(factor.matrix):.3e})."
        )
    return solution


def mahalanobis_norm(x, matrix, inverse=False):
    """
    ``sqrt(x^T M x)`` in direct mode, ``sqrt(x^T M^{-1} x)`` when ``inverse`` is set.
    """
    x = as_vector(x)
    matrix = np.asarray(matrix, dtype=float)
    _check_square(matrix, x.size)
    if inverse:
        quadratic = float(x @ PsdFactor(matrix).solve(x))
    else:
        quadratic = float(x @ matrix @ x)
    if quadratic < -QUADRATIC_FORM_ATOL:
        raise NumericalError(f"Quadratic form is negative ({quadratic:.3e}).")
    return float(np.sqrt(max(quadratic, 0.0)))


def sherman_morrison_forms(factor, points, updates):
    """
    ``y_i^T (M + x_j x_j^T)^{-1} y_i`` for every column y_i of ``points`` and
    every column x_j of ``updates`` (an n x m array), with M given by its factor.

    Sherman-Morrison: the updated form is y^T M^{-1} y - (y^T M^{-1} x)^2 / (1 + x^T M^{-1} x).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    updates = np.atleast_2d(np.asarray(updates, dtype=float))
    reduced = factor.solve(updates)
    current = column_quadratic_forms(points, factor.solve(points))
    cross = points.T @ reduced
    denominators = 1.0 + column_quadratic_forms(updates, reduced)
    return np.maximum(current[:, None] - cross**2 / denominators[None, :], 0.0)


def column_quadratic_forms(left, right):
    """Column-wise ``left[:, j] . right[:, j]`` for two equally shaped matrices."""
    return np.einsum("ij,ij->j", left, right)
