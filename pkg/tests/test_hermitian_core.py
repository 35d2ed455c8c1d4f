#!/usr/bin/env python3
"""
Linear algebra tests
Hermitian checks, eigensystems, exponentials, singular values and vectorization
"""

import numpy as np
import pytest
from scipy.linalg import expm

from tests.helpers import random_density, random_hermitian
from hermitian_core import (
    DimensionError,
    NotHermitianError,
    as_operator,
    commutator,
    herm_eig,
    herm_exp,
    is_hermitian,
    kron,
    partial_singular_sums,
    singular_values,
    superoperator_spectrum,
    trace_product_bounds,
    unvec,
    vec,
    vectorize_superoperator,
)


class TestOperatorChecks:
    """Shape and Hermiticity preconditions"""

    def test_rejects_non_square(self):
        """A 2 x 3 array is not an operator"""
        with pytest.raises(DimensionError):
            as_operator(np.zeros((2, 3)))

    def test_commutator_dimension_mismatch(self):
        """Operands of different size raise DimensionError"""
        with pytest.raises(DimensionError):
            commutator(np.eye(2), np.eye(3))

    def test_is_hermitian(self, paulis):
        """Pauli matrices are Hermitian, sigma_x + i sigma_z is not"""
        sx, _, sz = paulis
        assert is_hermitian(sx)
        assert not is_hermitian(sx + 1j * sz)

    def test_herm_eig_rejects_non_hermitian(self):
        """Eigen-decomposition requires a Hermitian input"""
        with pytest.raises(NotHermitianError):
            herm_eig(np.array([[0, 1], [0, 0]]))


class TestHermEig:
    """Eigensystems and exponentials"""

    def test_pauli_z(self, paulis):
        """sigma_z has eigenvalues -1, 1"""
        eigenvalues, _ = herm_eig(paulis[2])
        np.testing.assert_allclose(eigenvalues, [-1.0, 1.0])

    def test_reconstruction(self, rng):
        """V diag(lambda) V^dag reproduces the input"""
        a = random_hermitian(rng, 5)
        np.testing.assert_allclose(herm_eig(a).reconstruct(), a, atol=1e-12)

    def test_repeatable(self, rng):
        """Identical input gives identical eigenvectors"""
        a = random_hermitian(rng, 4)
        np.testing.assert_array_equal(herm_eig(a).eigenvectors, herm_eig(a).eigenvectors)

    def test_herm_exp_matches_expm(self, rng):
        """Spectral exponential agrees with Pade expm"""
        a = random_hermitian(rng, 4, scale=0.7)
        np.testing.assert_allclose(herm_exp(a), expm(a), atol=1e-11)

    def test_herm_exp_zero_is_identity(self):
        np.testing.assert_allclose(herm_exp(np.zeros((3, 3))), np.eye(3))


class TestSingularValues:
    """Singular values and trace inequalities"""

    def test_descending(self):
        """diag(1, -3, 2) has singular values 3, 2, 1"""
        np.testing.assert_allclose(singular_values(np.diag([1.0, -3.0, 2.0])), [3.0, 2.0, 1.0])

    def test_partial_sums(self):
        np.testing.assert_allclose(partial_singular_sums(np.diag([1.0, -3.0, 2.0])), [3.0, 5.0, 6.0])

    def test_product_partial_sums_majorized(self, rng):
        """sum_{i<=k} s_i(AB) <= sum_{i<=k} s_i(A) s_i(B)"""
        for n in range(2, 7):
            for _ in range(5):
                a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
                b = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
                lhs = partial_singular_sums(a @ b)
                rhs = np.cumsum(singular_values(a) * singular_values(b))
                assert np.all(lhs <= rhs * (1 + 1e-12) + 1e-12)

    def test_psd_trace_bounds(self, rng):
        """0 <= Tr(AB) <= Tr(A) Tr(B) for positive semidefinite A, B"""
        for _ in range(20):
            a, b = random_density(rng, 4), 3.0 * random_density(rng, 4)
            tr_ab, product = trace_product_bounds(a, b)
            assert -1e-12 <= tr_ab <= product + 1e-12


class TestVectorization:
    """Column-stacking vectorization of superoperators"""

    def test_vec_unvec(self, rng):
        x = random_hermitian(rng, 3)
        np.testing.assert_array_equal(unvec(vec(x), 3), x)

    def test_sandwich_kron_identity(self, rng):
        """vec(A X B) = (B^T kron A) vec(X)"""
        a, b = random_hermitian(rng, 3), random_hermitian(rng, 3) + 1j * np.eye(3)
        m = vectorize_superoperator(lambda x: a @ x @ b, 3)
        np.testing.assert_allclose(m, np.kron(b.T, a), atol=1e-12)

    def test_applies_map(self, rng):
        """M vec(X) = vec(f(X)) for the commutator map"""
        h = random_hermitian(rng, 3)
        x = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        m = vectorize_superoperator(lambda y: commutator(h, y), 3)
        np.testing.assert_allclose(m @ vec(x), vec(commutator(h, x)), atol=1e-12)

    def test_spectrum_of_commutator_map(self, paulis):
        """X -> [sigma_z, X] has spectrum {0, 0, 2, -2}"""
        m = vectorize_superoperator(lambda y: commutator(paulis[2], y), 2)
        spectrum = np.sort_complex(superoperator_spectrum(m))
        np.testing.assert_allclose(spectrum, [-2, 0, 0, 2], atol=1e-12)

    def test_kron_order(self):
        """First operand is leftmost: |0> kron |1> is basis index 1"""
        zero, one = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
        np.testing.assert_array_equal(np.diag(kron(zero, one)).real, [0, 1, 0, 0])
