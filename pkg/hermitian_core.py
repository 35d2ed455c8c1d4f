#!/usr/bin/env python3
"""
Dense complex linear algebra for the projection filter toolkit
Hermitian eigensystems, exponentials, singular values and superoperator vectorization
"""

from functools import reduce
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg as sla

HERMITIAN_TOL = 1e-10
MAX_DIM = 256

Operator = np.ndarray

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class NotHermitianError(ValueError):
    """A Hermitian operand was required."""


class EigenSystem(NamedTuple):
    """Eigen-decomposition of a Hermitian operator (ascending eigenvalues)."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def as_operator(a):
    """
    Coerce input to a square complex128 matrix.

    Args:
        a: array-like, n x n

    Returns:
        np.ndarray of dtype complex128
    """
    op = np.asarray(a, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise DimensionError(f"operator must be square, got shape {op.shape}")
    if op.shape[0] == 0 or op.shape[0] > MAX_DIM:
        raise DimensionError(f"operator dimension {op.shape[0]} outside 1..{MAX_DIM}")
    return op


def same_dim(*ops):
    """Raise DimensionError unless every operator has the same shape."""
    shapes = {np.shape(op) for op in ops}
    if len(shapes) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(shapes)}")
    return ops[0].shape[0]


def is_hermitian(a, tol=HERMITIAN_TOL):
    a = np.asarray(a)
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def require_hermitian(a, tol=HERMITIAN_TOL, name="operator"):
    a = as_operator(a)
    if not is_hermitian(a, tol):
        residue = np.max(np.abs(a - a.conj().T))
        raise NotHermitianError(f"{name} is not Hermitian (max asymmetry {residue:.3e})")
    return a


def hermitian_part(a):
    return 0.5 * (a + a.conj().T)


def commutator(a, b):
    """
    Commutator AB - BA.

    Args:
        a: Operator
        b: Operator of the same dimension

    Returns:
        Operator; anti-Hermitian when both inputs are Hermitian
    """
    same_dim(a, b)
    return a @ b - b @ a


def herm_eig(a):
    """
    Eigen-decomposition of a Hermitian operator.

    LAPACK's heevd is deterministic for identical input, so repeated calls on
    the same matrix return the same eigenvector phases.

    Args:
        a: Hermitian operator

    Returns:
        EigenSystem with ascending eigenvalues and unitary eigenvectors

    Raises:
        NotHermitianError: if a is not Hermitian within HERMITIAN_TOL
    """
    a = require_hermitian(a)
    eigenvalues, eigenvectors = np.linalg.eigh(hermitian_part(a))
    return EigenSystem(eigenvalues, eigenvectors)


def herm_exp(a):
    """
    Exponential of a Hermitian operator through its eigensystem.

    Args:
        a: Hermitian operator

    Returns:
        Hermitian positive definite operator V diag(e^lambda) V^dagger
    """
    eigenvalues, v = herm_eig(a)
    return hermitian_part((v * np.exp(eigenvalues)) @ v.conj().T)


def singular_values(a):
    """Singular values in descending order."""
    return np.linalg.svd(np.asarray(a, dtype=complex), compute_uv=False)


def partial_singular_sums(a):
    """Cumulative sums of the descending singular values, s_1, s_1+s_2, ..."""
    return np.cumsum(singular_values(a))


def trace_product_bounds(a, b):
    """
    Quantities of the PSD trace inequality 0 <= Tr(AB) <= Tr(A)Tr(B).

    Returns:
        tuple: (Tr(AB) real part, Tr(A)Tr(B) real part)
    """
    same_dim(a, b)
    return float(np.trace(a @ b).real), float((np.trace(a) * np.trace(b)).real)


def kron(*ops):
    """Kronecker product of one or more operators, left to right."""
    if not ops:
        raise DimensionError("kron needs at least one operator")
    return reduce(np.kron, (np.asarray(op, dtype=complex) for op in ops))


def frobenius_norm(a):
    return float(np.linalg.norm(a, ord="fro"))


def vec(x):
    """Column-stacking vectorization."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(v, n):
    return np.asarray(v).reshape((n, n), order="F")


def matrix_unit(n, j, k):
    e = np.zeros((n, n), dtype=complex)
    e[j, k] = 1.0
    return e


def vectorize_superoperator(f: Callable[[Operator], Operator], n):
    """
    Matrix of a linear map on n x n operators, acting on column-stacked vectors.

    Column k*n + j holds vec(f(E_jk)), the position of E_jk under column
    stacking, so that M @ vec(X) == vec(f(X)) for every X.

    Args:
        f: linear map on operators (linearity is the caller's responsibility)
        n: operator dimension

    Returns:
        np.ndarray of shape (n*n, n*n)
    """
    m = np.empty((n * n, n * n), dtype=complex)
    for k in range(n):
        for j in range(n):
            m[:, k * n + j] = vec(f(matrix_unit(n, j, k)))
    return m


def superoperator_spectrum(m):
    """
    Eigenvalues of a (generally non-normal) superoperator matrix.

    Uses the LAPACK complex Schur/QR path; eigenvectors are never exposed.
    """
    return sla.eigvals(np.asarray(m, dtype=complex), check_finite=True)


# Export functions
__all__ = [
    'HERMITIAN_TOL',
    'Operator',
    'EigenSystem',
    'DimensionError',
    'NotHermitianError',
    'SIGMA_X',
    'SIGMA_Y',
    'SIGMA_Z',
    'IDENTITY_2',
    'as_operator',
    'same_dim',
    'is_hermitian',
    'require_hermitian',
    'hermitian_part',
    'commutator',
    'herm_eig',
    'herm_exp',
    'singular_values',
    'partial_singular_sums',
    'trace_product_bounds',
    'kron',
    'frobenius_norm',
    'vec',
    'unvec',
    'matrix_unit',
    'vectorize_superoperator',
    'superoperator_spectrum',
]
