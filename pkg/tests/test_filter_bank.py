#!/usr/bin/env python3
"""
Filter tests
Quantum filters, manifold geometry and theta-filter steps
"""

import numpy as np
import pytest
from scipy.linalg import expm

from filter_bank import (
    THETA_GUARD,
    FilterState,
    ManifoldError,
    NearSingularMetric,
    StepFailure,
    ThetaState,
    TraceCollapse,
    UnnormalizedState,
    build_submanifold,
    default_submanifold,
    e_representation,
    fisher_gram,
    fisher_matrix,
    hamiltonian_drive,
    manifold_state,
    natural_basis,
    normalize,
    projection_filter_step_commuting,
    projection_filter_step_general,
    projection_filter_step_reduced,
    projection_op,
    quantum_filter_step,
    quantum_filter_step_kraus,
    quantum_fisher_metric,
    symmetrized_inner_product,
    unnormalized_filter_step,
    unnormalized_filter_step_stratonovich,
    xi_gamma,
)
from hermitian_core import SIGMA_X, SIGMA_Z, commutator, frobenius_norm, is_hermitian, kron
from sde_engine import make_grid, wiener_path
from system_model import ControlSignal, SystemModel
from tests.helpers import random_hermitian

P1 = np.diag([1.0, 0.0, 0.0, 0.0])
P2 = np.diag([0.0, 0.0, 0.0, 1.0])

COHERENT = kron(np.array([[0.75, 0.25], [0.25, 0.25]]), np.diag([0.5, 0.5]))
SIGMA_Z_PAIR = kron(SIGMA_Z, SIGMA_Z)


def dense_theta_field(anchor, generators, h, l, theta):
    """G^-1 Xi and G^-1 Gamma from dense traces at rho_bar = e^{S/2} anchor e^{S/2}"""
    e = expm(0.5 * sum(th * a for th, a in zip(theta, generators)))
    rb = e @ anchor @ e
    ld = l.conj().T
    s = l + ld
    g = np.array([[0.5 * np.trace(rb @ (a @ b + b @ a)).real for b in generators] for a in generators])
    xi = np.array([np.trace(rb @ (1j * (h @ a - a @ h) - 0.5 * (a @ s @ l + ld @ s @ a))).real
                   for a in generators])
    gamma = np.array([np.trace(rb @ (a @ l + ld @ a)).real for a in generators])
    return np.linalg.solve(g, xi), np.linalg.solve(g, gamma)


class TestSubmanifold:
    """Construction and validation of the exponential family"""

    def test_default_generators(self, default_sub):
        """Spectral projectors of J_z with eigenvalues (1, -1)"""
        assert default_sub.m == 2
        assert default_sub.dim == 4
        np.testing.assert_allclose(default_sub.generators[0], P1, atol=1e-12)
        np.testing.assert_allclose(default_sub.generators[1], P2, atol=1e-12)
        np.testing.assert_allclose(default_sub.coupling_eigenvalues, [1.0, -1.0])

    def test_origin_is_anchor(self, default_sub, rho0):
        np.testing.assert_allclose(manifold_state(default_sub, np.zeros(2)).rho_bar, rho0, atol=1e-14)

    def test_manifold_state_diagonal_scaling(self, default_sub, rho0):
        """Projector generators scale their block by e^theta_j"""
        rb = manifold_state(default_sub, [1.0, -2.0]).rho_bar
        expected = np.diag(rho0).real * np.array([np.e, 1.0, 1.0, np.exp(-2.0)])
        np.testing.assert_allclose(np.diag(rb).real, expected, rtol=1e-12)

    def test_degenerate_generator(self, rho0):
        """Identity plus a projector share an eigenbasis despite degeneracy"""
        sub = build_submanifold([np.eye(4), P1], rho0)
        rb = manifold_state(sub, [2.0, 0.0]).rho_bar
        np.testing.assert_allclose(rb, np.e ** 2 * rho0, rtol=1e-12)

    @pytest.mark.parametrize('generators,anchor', [
        ([SIGMA_X, SIGMA_Z], np.eye(2) / 2),
        ([SIGMA_Z], np.eye(2)),
        ([SIGMA_Z], np.diag([1.5, -0.5])),
        ([SIGMA_Z, 2 * SIGMA_Z], np.eye(2) / 2),
        ([], np.eye(2) / 2),
        ([np.diag([1.0, 0.0])], np.diag([0.0, 1.0])),
    ])
    def test_rejects_invalid(self, generators, anchor):
        """Non-commuting, bad trace, negative, dependent, empty and degenerate-tangent inputs"""
        with pytest.raises(ManifoldError):
            build_submanifold(generators, anchor)

    def test_mismatched_eigenvalue_count(self, rho0):
        with pytest.raises(ManifoldError):
            build_submanifold([P1, P2], rho0, coupling_eigenvalues=[1.0])

    def test_default_needs_self_adjoint_coupling(self):
        lowering = np.array([[0, 1], [0, 0]], dtype=complex)
        model = SystemModel(ControlSignal.zero(np.zeros((2, 2))), lowering)
        with pytest.raises(ManifoldError):
            default_submanifold(model, np.eye(2) / 2)

    def test_default_needs_nonzero_coupling(self):
        model = SystemModel(ControlSignal.zero(np.zeros((2, 2))), np.zeros((2, 2)))
        with pytest.raises(ManifoldError):
            default_submanifold(model, np.eye(2) / 2)


class TestGeometry:
    """Fisher metric, tangent vectors and projection"""

    def test_fisher_at_origin(self, default_sub):
        """G(0) = diag(0.375, 0.125)"""
        np.testing.assert_allclose(fisher_matrix(default_sub, np.zeros(2)), np.diag([0.375, 0.125]), atol=1e-14)

    def test_fisher_positive_definite(self, default_sub, rng):
        for theta in rng.uniform(-3, 3, size=(20, 2)):
            g = fisher_matrix(default_sub, theta)
            np.testing.assert_allclose(g, g.T)
            assert np.linalg.eigvalsh(g)[0] > 0

    def test_near_singular(self, default_sub):
        """A vanishing block drives the condition number past the limit"""
        with pytest.raises(NearSingularMetric):
            fisher_matrix(default_sub, np.array([-40.0, 0.0]))

    def test_natural_basis_at_origin(self, default_sub, rho0):
        d1, d2 = natural_basis(default_sub, np.zeros(2))
        np.testing.assert_allclose(d1, 0.375 * P1, atol=1e-14)
        np.testing.assert_allclose(d2, 0.125 * P2, atol=1e-14)
        assert symmetrized_inner_product(rho0, P1, P1) == pytest.approx(0.375)

    def test_natural_basis_central_difference(self, two_qubit_model):
        """Coherent anchor: tangent vectors agree with a central difference of rho_bar"""
        sub = default_submanifold(two_qubit_model, COHERENT)
        theta, eps = np.array([0.3, -0.4]), 1e-5
        for i, d in enumerate(natural_basis(sub, theta)):
            step = eps * np.eye(2)[i]
            upper = manifold_state(sub, theta + step).rho_bar
            lower = manifold_state(sub, theta - step).rho_bar
            np.testing.assert_allclose((upper - lower) / (2 * eps), d, atol=1e-8)

    def test_projection_fixes_tangent_vectors(self, default_sub):
        theta = np.array([0.4, -0.3])
        for d in natural_basis(default_sub, theta):
            np.testing.assert_allclose(projection_op(default_sub, theta, d), d, atol=1e-12)

    def test_projection_idempotent(self, default_sub, rng):
        theta = np.array([-0.2, 0.7])
        v = random_hermitian(rng, 4)
        once = projection_op(default_sub, theta, v)
        np.testing.assert_allclose(projection_op(default_sub, theta, once), once, atol=1e-12)

    def test_qubit_e_representation(self):
        """At I/2 the e-representation of sigma_x is 2 sigma_x"""
        rho = np.eye(2) / 2
        np.testing.assert_allclose(e_representation(rho, SIGMA_X), 2 * SIGMA_X, atol=1e-12)
        assert quantum_fisher_metric(rho, [SIGMA_X])[0, 0] == pytest.approx(4.0)
        assert fisher_gram(rho, [SIGMA_X])[0, 0] == pytest.approx(1.0)

    def test_xi_gamma_free_model(self, free_model, default_sub):
        """Xi_j = -2 lambda_j^2 g_jj, Gamma_j = 2 lambda_j g_jj at the origin"""
        xi, gamma = xi_gamma(default_sub, free_model, 0.0, np.zeros(2))
        np.testing.assert_allclose(xi, [-0.75, -0.25], atol=1e-14)
        np.testing.assert_allclose(gamma, [0.75, -0.25], atol=1e-14)

    def test_normalize(self, rho0):
        assert np.trace(normalize(UnnormalizedState(3.0 * rho0)).rho).real == pytest.approx(1.0)
        with pytest.raises(TraceCollapse):
            normalize(np.zeros((4, 4)))


class TestThetaFilters:
    """Projection filter steps"""

    def test_reduced_worked_example(self, free_model, default_sub):
        """lambda = (1, -1), dt = 1e-3, dY = 0.05, no Hamiltonian"""
        out = projection_filter_step_reduced(default_sub, free_model, ThetaState.origin(2), 0.0, 1e-3, 0.05)
        np.testing.assert_allclose(out.theta, [-2e-3 + 0.1, -2e-3 - 0.1], atol=1e-15)
        assert out.t == pytest.approx(1e-3)

    def test_general_matches_reduced(self, two_qubit_model, default_sub):
        """Diagonal anchor: the Hamiltonian term vanishes and both forms coincide"""
        path = wiener_path(4, make_grid(0.25, 64, 1))
        dt = 0.25 / 64
        general = reduced = ThetaState.origin(2)
        for k, dy in enumerate(path.coarse_increments):
            general = projection_filter_step_general(default_sub, two_qubit_model, general, dt, dy)
            reduced = projection_filter_step_reduced(default_sub, two_qubit_model, reduced, k * dt, dt, dy)
        np.testing.assert_allclose(general.theta, reduced.theta, atol=1e-9)

    def test_commuting_matches_reduced(self, commuting_model, default_sub):
        path = wiener_path(5, make_grid(0.5, 32, 1))
        dt = 0.5 / 32
        a = b = ThetaState.origin(2)
        for k, dy in enumerate(path.coarse_increments):
            a = projection_filter_step_commuting(default_sub, a, dt, dy)
            b = projection_filter_step_reduced(default_sub, commuting_model, b, k * dt, dt, dy)
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-12)

    def test_commuting_closed_form(self, default_sub):
        """theta_j(t) = 2 lambda_j Y_t - 2 lambda_j^2 t"""
        dys = wiener_path(6, make_grid(1.0, 128, 1)).coarse_increments
        state = ThetaState.origin(2)
        for dy in dys:
            state = projection_filter_step_commuting(default_sub, state, 1 / 128, dy)
        y = dys.sum()
        np.testing.assert_allclose(state.theta, [2 * y - 2.0, -2 * y - 2.0], atol=1e-12)

    def test_guard(self, default_sub):
        with pytest.raises(StepFailure):
            projection_filter_step_commuting(default_sub, ThetaState.origin(2), 0.0, THETA_GUARD)

    def test_reduced_needs_coupling_eigenvalues(self, free_model, rho0):
        sub = build_submanifold([P1, P2], rho0)
        with pytest.raises(ManifoldError):
            projection_filter_step_reduced(sub, free_model, ThetaState.origin(2), 0.0, 1e-3, 0.0)

    def test_general_step_dense_oracle(self, two_qubit_model):
        """Coherent anchor: the Hamiltonian term is live and a Heun step matches dense traces"""
        sub = default_submanifold(two_qubit_model, COHERENT)
        theta, t, dt, dy = np.array([0.3, -0.2]), 0.1, 1e-3, 0.02
        gens, l = sub.generators, two_qubit_model.L
        a0, b0 = dense_theta_field(COHERENT, gens, two_qubit_model.H(t), l, theta)
        bar = theta + a0 * dt + b0 * dy
        a1, b1 = dense_theta_field(COHERENT, gens, two_qubit_model.H(t + dt), l, bar)
        expected = theta + 0.5 * (a0 + a1) * dt + 0.5 * (b0 + b1) * dy
        out = projection_filter_step_general(sub, two_qubit_model, ThetaState(theta, t), dt, dy)
        np.testing.assert_allclose(out.theta, expected, rtol=1e-10, atol=1e-12)
        drive, _ = hamiltonian_drive(sub, two_qubit_model.hamiltonian.base, theta)
        assert np.max(np.abs(drive)) > 1e-3

    def test_reduced_drive_dense_oracle(self, two_qubit_model):
        """Eigenbasis drive equals Tr(i rho_bar [H, A_j]) / Tr(rho_bar A_j) for a coherent anchor"""
        sub = default_submanifold(two_qubit_model, COHERENT)
        theta, t, dt = np.array([0.3, -0.2]), 0.1, 1e-3
        rb = manifold_state(sub, theta).rho_bar
        h = two_qubit_model.H(t)
        drive = np.array([np.trace(1j * rb @ commutator(h, a)).real for a in sub.generators])
        g = np.array([np.trace(rb @ a).real for a in sub.generators])
        expected = theta + (drive / g - 2 * sub.coupling_eigenvalues ** 2) * dt
        out = projection_filter_step_reduced(sub, two_qubit_model, ThetaState(theta, t), t, dt, 0.0)
        np.testing.assert_allclose(out.theta, expected, rtol=1e-12, atol=1e-14)

    def test_drive_kernel_reused_per_operator(self, two_qubit_model, default_sub):
        base = two_qubit_model.hamiltonian.base
        kernel = default_sub.drive_kernel(base)
        assert default_sub.drive_kernel(base) is kernel
        other = default_sub.drive_kernel(SIGMA_Z_PAIR)
        assert other is not kernel
        np.testing.assert_allclose(np.diag(other), np.diag(default_sub.anchor_eig) * np.diag(
            default_sub.eigenbasis.conj().T @ SIGMA_Z_PAIR @ default_sub.eigenbasis))

    def test_reduced_near_singular_metric(self, two_qubit_model, default_sub):
        with pytest.raises(NearSingularMetric):
            projection_filter_step_reduced(default_sub, two_qubit_model, ThetaState(np.array([-80.0, 0.0])),
                                           0.0, 1e-3, 0.0)


class TestQuantumFilters:
    """Normalized and unnormalized stochastic master equations"""

    def test_normalized_step_keeps_density(self, two_qubit_model, rho0):
        state = FilterState(rho0)
        dys = wiener_path(8, make_grid(0.1, 100, 1)).coarse_increments
        for k, dy in enumerate(dys):
            state = quantum_filter_step(two_qubit_model, state, k * 1e-3, 1e-3, dy)
            assert np.trace(state.rho).real == pytest.approx(1.0, abs=1e-12)
            assert is_hermitian(state.rho)
        assert state.min_eigenvalue > -1e-6

    def test_normalized_step_dense_oracle(self, free_model):
        """One Ito step against the written-out update, H = 0"""
        rho = np.diag([0.125, 0.125, 0.375, 0.375]).astype(complex)
        l = free_model.L
        ld = l.conj().T
        dt, dy = 1 / 2048, 0.01
        e = np.trace((l + ld) @ rho).real
        expected = (rho + (l @ rho @ ld - 0.5 * (ld @ l @ rho + rho @ ld @ l)) * dt
                    + (l @ rho + rho @ ld - e * rho) * (dy - e * dt))
        expected = expected / np.trace(expected).real
        out = quantum_filter_step(free_model, FilterState(rho), 0.0, dt, dy)
        np.testing.assert_allclose(out.rho, expected, atol=1e-12)

    @pytest.mark.parametrize('step', [quantum_filter_step, quantum_filter_step_kraus])
    def test_pointer_state_is_fixed(self, step):
        """|0><0| is stationary under L = sigma_z for any record increment"""
        model = SystemModel(ControlSignal.zero(np.zeros((2, 2))), SIGMA_Z)
        pointer = np.diag([1.0, 0.0]).astype(complex)
        out = step(model, FilterState(pointer), 0.0, 1e-3, 0.07)
        np.testing.assert_allclose(out.rho, pointer, atol=1e-15)

    def test_kraus_step_matches_exponential_map(self, free_model, rho0):
        """H = 0: the Kraus operator agrees with exp(L dY - L^2 dt) to second order"""
        dt, dy = 1e-4, 0.01
        l = free_model.L
        k = expm(l * dy - l @ l * dt)
        exact = k @ rho0 @ k.conj().T
        exact = exact / np.trace(exact).real
        out = quantum_filter_step_kraus(free_model, FilterState(rho0), 0.0, dt, dy)
        assert frobenius_norm(out.rho - exact) < 1e-5

    def test_kraus_step_keeps_pure_state_positive(self, two_qubit_model):
        """Large record increments leave a pure state positive with unit trace"""
        psi = np.full(4, 0.5, dtype=complex)
        state = FilterState(np.outer(psi, psi.conj()))
        for k, dy in enumerate([0.4, -0.6, 0.5, 0.3]):
            state = quantum_filter_step_kraus(two_qubit_model, state, k * 0.01, 0.01, dy)
            assert state.min_eigenvalue >= -1e-12
            assert np.trace(state.rho).real == pytest.approx(1.0, abs=1e-12)
            assert is_hermitian(state.rho)

    def test_normalized_unnormalized_agree_as_step_shrinks(self, free_model, rho0):
        """Normalizing the unnormalized filter approaches the normalized filter as dt -> 0"""
        gaps = {}
        for r in (16, 1):
            worst_per_path = []
            for seed in range(4):
                dt = r / 4096
                full, bare = FilterState(rho0), UnnormalizedState(rho0)
                worst = 0.0
                for k, dy in enumerate(wiener_path(seed, make_grid(1.0, 4096, r)).coarse_increments):
                    full = quantum_filter_step(free_model, full, k * dt, dt, dy)
                    bare = unnormalized_filter_step(free_model, bare, k * dt, dt, dy)
                    worst = max(worst, frobenius_norm(normalize(bare).rho - full.rho))
                worst_per_path.append(worst)
            gaps[r] = np.mean(worst_per_path)
        assert gaps[1] < 0.5 * gaps[16]

    def test_zero_increment_without_coupling_noise(self, rho0):
        """L = 0 and H = 0 leave the state untouched"""
        model = SystemModel(ControlSignal.zero(np.zeros((4, 4))), np.zeros((4, 4)))
        out = quantum_filter_step(model, FilterState(rho0), 0.0, 0.01, 0.3)
        np.testing.assert_allclose(out.rho, rho0, atol=1e-15)

    def test_unnormalized_trace_increment(self, free_model, rho0):
        """Ito step: d Tr rho_bar = Tr(rho_bar (L + L^dag)) dY"""
        out = unnormalized_filter_step(free_model, UnnormalizedState(rho0), 0.0, 1e-3, 0.1)
        expected = 1.0 + 2 * np.trace(rho0 @ free_model.L).real * 0.1
        assert np.trace(out.rho_bar).real == pytest.approx(expected)

    def test_rescaling_preserves_log_trace(self, free_model, rho0):
        big = UnnormalizedState(1e13 * rho0)
        out = unnormalized_filter_step(free_model, big, 0.0, 0.0, 0.0)
        assert out.rescales == 1
        assert np.trace(out.rho_bar).real == pytest.approx(1.0)
        assert out.log_trace == pytest.approx(big.log_trace)

    def test_stratonovich_matches_closed_form(self, free_model, rho0):
        """Diagonal entries follow rho0_kk exp(2 l_k Y - 2 l_k^2 t) for L = J_z"""
        grid = make_grid(1.0, 4096, 1)
        dys = wiener_path(12, grid).coarse_increments
        state = UnnormalizedState(rho0)
        for k, dy in enumerate(dys):
            state = unnormalized_filter_step_stratonovich(free_model, state, k * grid.fine_step, grid.fine_step, dy)
        l = np.array([1.0, 0.0, 0.0, -1.0])
        exact = np.diag(rho0).real * np.exp(2 * l * dys.sum() - 2 * l ** 2)
        got = np.exp(state.log_scale) * np.diag(state.rho_bar).real
        np.testing.assert_allclose(got, exact, rtol=2e-2)

    def test_projection_exact_in_commuting_case(self, free_model, default_sub, rho0):
        """Manifold state of the commuting theta filter equals the closed-form unnormalized state"""
        dys = wiener_path(13, make_grid(1.0, 64, 1)).coarse_increments
        state = ThetaState.origin(2)
        for dy in dys:
            state = projection_filter_step_commuting(default_sub, state, 1 / 64, dy)
        l = np.array([1.0, 0.0, 0.0, -1.0])
        exact = np.diag(rho0).real * np.exp(2 * l * dys.sum() - 2 * l ** 2)
        np.testing.assert_allclose(np.diag(manifold_state(default_sub, state.theta).rho_bar).real, exact, rtol=1e-10)
