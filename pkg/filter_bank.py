#!/usr/bin/env python3
"""
Quantum filters and exponential-family projection filters
Normalized and unnormalized stochastic master equations, manifold geometry and
the reduced-order theta filters driven by the same photocurrent
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy import linalg as sla

from hermitian_core import (
    as_operator,
    commutator,
    hermitian_part,
    is_hermitian,
    require_hermitian,
)
from sde_engine import stratonovich_heun_step
from system_model import (
    innovation_gain,
    lindblad_adjoint,
    spectral_projectors,
    stratonovich_drift,
    stratonovich_drift_adjoint,
)

logger = logging.getLogger(__name__)

TRACE_FLOOR = 1e-12
TRACE_CEILING = 1e12
CONDITION_LIMIT = 1e12
THETA_GUARD = 50.0
COMMUTE_TOL = 1e-9


class StepFailure(RuntimeError):
    """A filter step could not produce a valid state."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class TraceCollapse(StepFailure):
    """Trace fell to or below the collapse floor."""


class NearSingularMetric(StepFailure):
    """Fisher matrix too ill-conditioned to solve against."""


class ManifoldError(ValueError):
    """Submanifold generators or anchor violate the exponential-family requirements."""


@dataclass(frozen=True)
class FilterState:
    """Normalized conditional density matrix."""
    rho: np.ndarray
    min_eigenvalue: Optional[float] = None


@dataclass(frozen=True)
class UnnormalizedState:
    """
    Unnormalized information state. The true state is exp(log_scale) * rho_bar;
    log_scale accumulates the trace rescalings applied against overflow.
    """
    rho_bar: np.ndarray
    log_scale: float = 0.0
    rescales: int = 0

    @property
    def log_trace(self):
        return self.log_scale + float(np.log(np.trace(self.rho_bar).real))


@dataclass(frozen=True)
class ThetaState:
    """Coordinates of the projection filter on the exponential family."""
    theta: np.ndarray
    t: float = 0.0

    @classmethod
    def origin(cls, m):
        return cls(np.zeros(m), 0.0)


@dataclass(frozen=True)
class Submanifold:
    """
    Exponential family e^{sum theta_i A_i / 2} rho0 e^{sum theta_i A_i / 2}
    over commuting Hermitian generators, with their shared eigenbasis.
    """
    generators: Tuple[np.ndarray, ...]
    anchor: np.ndarray
    eigenbasis: np.ndarray
    weights: np.ndarray
    coupling_eigenvalues: Optional[np.ndarray] = None
    _drive_kernels: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def m(self):
        return len(self.generators)

    @property
    def dim(self):
        return self.anchor.shape[0]

    @cached_property
    def anchor_eig(self):
        """rho0 in the shared eigenbasis of the generators."""
        return self.eigenbasis.conj().T @ self.anchor @ self.eigenbasis

    @cached_property
    def anchor_populations(self):
        return self.anchor_eig.diagonal().real.copy()

    def drive_kernel(self, base):
        """anchor_eig * (U^dag B U)^T for a fixed Hamiltonian direction B, computed once per operator."""
        hit = self._drive_kernels.get(id(base))
        if hit is None or hit[0] is not base:
            b = self.eigenbasis.conj().T @ base @ self.eigenbasis
            hit = (base, self.anchor_eig * b.T)
            self._drive_kernels[id(base)] = hit
        return hit[1]


def _joint_eigenbasis(generators, tol):
    """
    Shared eigenbasis of commuting Hermitian operators by successive refinement
    of degenerate eigenspaces.
    """
    n = generators[0].shape[0]
    blocks = [np.eye(n, dtype=complex)]
    for a in generators:
        refined = []
        for b in blocks:
            w, v = np.linalg.eigh(hermitian_part(b.conj().T @ a @ b))
            cols = b @ v
            start = 0
            for k in range(1, len(w) + 1):
                if k == len(w) or w[k] - w[k - 1] > tol:
                    refined.append(cols[:, start:k])
                    start = k
        blocks = refined
    return np.hstack(blocks)


def build_submanifold(generators, anchor, coupling_eigenvalues=None):
    """
    Validate generators and anchor and precompute the shared eigenbasis.

    Args:
        generators: sequence of commuting Hermitian operators A_1..A_m
        anchor: density matrix rho0
        coupling_eigenvalues: lambda_i when A_i are the spectral projectors of L

    Returns:
        Submanifold

    Raises:
        ManifoldError: on non-commuting generators, an invalid anchor, or a
            linearly dependent tangent basis at theta = 0
    """
    gens = tuple(require_hermitian(a, tol=1e-9, name=f"generator A_{i + 1}")
                 for i, a in enumerate(generators))
    if not gens:
        raise ManifoldError("submanifold needs at least one generator")
    anchor = as_operator(anchor)
    n = anchor.shape[0]
    if any(a.shape != (n, n) for a in gens):
        raise ManifoldError("generators and anchor have different dimensions")

    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            if np.max(np.abs(commutator(gens[i], gens[j]))) > COMMUTE_TOL:
                raise ManifoldError(f"generators A_{i + 1} and A_{j + 1} do not commute")

    if not is_hermitian(anchor, 1e-9):
        raise ManifoldError("anchor state is not Hermitian")
    anchor = hermitian_part(anchor)
    if abs(np.trace(anchor).real - 1.0) > 1e-10:
        raise ManifoldError(f"anchor trace is {np.trace(anchor).real:.12g}, expected 1")
    if np.linalg.eigvalsh(anchor)[0] < -1e-10:
        raise ManifoldError("anchor state is not positive semidefinite")

    tangent = [0.5 * (a @ anchor + anchor @ a) for a in gens]
    gram = np.array([[np.vdot(p, q).real for q in tangent] for p in tangent])
    if np.linalg.eigvalsh(gram)[0] <= 1e-10:
        raise ManifoldError("tangent basis at theta = 0 is linearly dependent")

    scale = max(1.0, max(np.max(np.abs(a)) for a in gens))
    u = _joint_eigenbasis(gens, 1e-9 * scale)
    weights = np.array([np.diag(u.conj().T @ a @ u).real for a in gens])
    for a, w in zip(gens, weights):
        if np.max(np.abs((u * w) @ u.conj().T - a)) > 1e-9 * scale:
            raise ManifoldError("generators could not be jointly diagonalized")

    lambdas = None if coupling_eigenvalues is None else np.asarray(coupling_eigenvalues, dtype=float)
    if lambdas is not None and lambdas.shape != (len(gens),):
        raise ManifoldError("one coupling eigenvalue per generator is required")
    return Submanifold(gens, anchor, u, weights, lambdas)


def default_submanifold(model, rho0):
    """
    Submanifold spanned by the spectral projectors of a self-adjoint coupling,
    one generator per distinct nonzero eigenvalue.
    """
    if not model.self_adjoint_coupling:
        raise ManifoldError("default submanifold needs a self-adjoint coupling operator")
    decomposition = spectral_projectors(model.L)
    if decomposition.n0 == 0:
        raise ManifoldError("coupling operator has no nonzero eigenvalue")
    return build_submanifold(decomposition.projectors, rho0, decomposition.eigenvalues)


def _theta(theta, m=None):
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise StepFailure("theta has non-finite entries")
    if m is not None and theta.shape != (m,):
        raise ValueError(f"theta must have shape ({m},), got {theta.shape}")
    return theta


def _rho_bar(sub, theta):
    exponent = 0.5 * (_theta(theta, sub.m) @ sub.weights)
    u = sub.eigenbasis
    e = (u * np.exp(exponent)) @ u.conj().T
    return hermitian_part(e @ sub.anchor @ e)


def manifold_state(sub, theta):
    """rho_bar_theta via the shared eigenbasis; theta = 0 returns rho0."""
    return UnnormalizedState(_rho_bar(sub, theta))


def natural_basis(sub, theta, rho_bar=None):
    """Tangent vectors d rho_bar / d theta_i = (A_i rho_bar + rho_bar A_i) / 2."""
    rb = _rho_bar(sub, theta) if rho_bar is None else rho_bar
    return [0.5 * (a @ rb + rb @ a) for a in sub.generators]


def symmetrized_inner_product(rho, a, b):
    """<<A, B>>_rho = Tr(rho A B + rho B A) / 2."""
    return 0.5 * float(np.trace(rho @ a @ b + rho @ b @ a).real)


def _gram(rho, ops):
    m = len(ops)
    g = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            g[i, j] = g[j, i] = symmetrized_inner_product(rho, ops[i], ops[j])
    return g


def _check_condition(g, t=None):
    cond = np.linalg.cond(g)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise NearSingularMetric(f"Fisher matrix condition number {cond:.3e} exceeds {CONDITION_LIMIT:.0e}", t)
    return g


def fisher_matrix(sub, theta, rho_bar=None, t=None):
    """
    Quantum Fisher matrix g_ij = Tr(rho_bar A_i A_j), symmetric positive definite
    for commuting generators.

    Raises:
        NearSingularMetric: condition number above CONDITION_LIMIT
    """
    rb = _rho_bar(sub, theta) if rho_bar is None else rho_bar
    return _check_condition(_gram(rb, sub.generators), t)


def fisher_gram(rho, e_basis):
    """Metric from e-representations: g_ij = <<e_i, e_j>>_rho."""
    return _gram(rho, [as_operator(e) for e in e_basis])


def e_representation(rho, x_m):
    """
    Hermitian X_e with <<X_e, A>>_rho = Tr(X_m A) for all Hermitian A, i.e. the
    solution of (rho X + X rho) / 2 = X_m. Requires rho > 0.
    """
    rho = require_hermitian(rho, tol=1e-9, name="rho")
    half = 0.5 * rho
    return hermitian_part(sla.solve_sylvester(half, half, as_operator(x_m)))


def quantum_fisher_metric(rho, m_basis):
    """Metric components g_ij = Tr(d_i^(m) d_j^(e)) for an m-representation basis."""
    m_ops = [as_operator(x) for x in m_basis]
    e_ops = [e_representation(rho, x) for x in m_ops]
    g = np.array([[np.trace(p @ q).real for q in e_ops] for p in m_ops])
    return 0.5 * (g + g.T)


def _solve_metric(g, rhs, t=None):
    try:
        factor = sla.cho_factor(g)
    except sla.LinAlgError as exc:
        raise NearSingularMetric(f"Fisher matrix is not positive definite: {exc}", t) from exc
    return sla.cho_solve(factor, rhs)


def normalize(state):
    """
    Trace-one density matrix from an unnormalized state (or raw operator).

    Raises:
        TraceCollapse: trace at or below TRACE_FLOOR
    """
    rb = state.rho_bar if isinstance(state, UnnormalizedState) else as_operator(state)
    tr = np.trace(rb).real
    if not tr > TRACE_FLOOR:
        raise TraceCollapse(f"cannot normalize state with trace {tr:.3e}")
    return FilterState(hermitian_part(rb) / tr)


def projection_op(sub, theta, v, rho_bar=None, t=None):
    """
    Orthogonal projection onto the tangent space at theta:
    sum_ij g^ij Tr(v A_j) d_i.
    """
    rb = _rho_bar(sub, theta) if rho_bar is None else rho_bar
    g = fisher_matrix(sub, theta, rho_bar=rb, t=t)
    pairing = np.array([np.trace(v @ a).real for a in sub.generators])
    coeff = _solve_metric(g, pairing, t)
    basis = natural_basis(sub, theta, rho_bar=rb)
    return sum(c * d for c, d in zip(coeff, basis))


def xi_gamma(sub, model, t, theta, rho_bar=None):
    """
    Drift and noise vectors of the theta equation:
    Xi_j = Tr(rho_bar (i[H, A_j] - S_L^dag(A_j))), Gamma_j = Tr(rho_bar (A_j L + L^dag A_j)).
    """
    rb = _rho_bar(sub, theta) if rho_bar is None else rho_bar
    h, l = model.H(t), model.L
    ld = l.conj().T
    xi = np.empty(sub.m)
    gamma = np.empty(sub.m)
    for j, a in enumerate(sub.generators):
        x = np.trace(rb @ (1j * commutator(h, a) - stratonovich_drift_adjoint(model, a)))
        y = np.trace(rb @ (a @ l + ld @ a))
        xi[j], gamma[j] = x.real, y.real
        if max(abs(x.imag), abs(y.imag)) > 1e-8 * max(1.0, abs(x), abs(y)):
            logger.debug("xi/gamma imaginary residue %.3e at t=%.6g", max(abs(x.imag), abs(y.imag)), t)
    return xi, gamma


def _guard(theta, t):
    if not np.all(np.isfinite(theta)):
        raise StepFailure("theta became non-finite", t)
    if np.max(np.abs(theta), initial=0.0) > THETA_GUARD:
        raise StepFailure(f"|theta| exceeded guard {THETA_GUARD}", t)
    return theta


def projection_filter_step_general(sub, model, state, dt, dY):
    """
    One Stratonovich Heun step of d theta = G^-1 (Xi dt + Gamma o dY).

    Raises:
        NearSingularMetric: Fisher matrix ill-conditioned at a stage
        StepFailure: theta non-finite or beyond THETA_GUARD
    """
    def drift(theta, t):
        rb = _rho_bar(sub, theta)
        g = fisher_matrix(sub, theta, rho_bar=rb, t=t)
        xi, _ = xi_gamma(sub, model, t, theta, rho_bar=rb)
        return _solve_metric(g, xi, t)

    def diffusion(theta, t):
        rb = _rho_bar(sub, theta)
        g = fisher_matrix(sub, theta, rho_bar=rb, t=t)
        _, gamma = xi_gamma(sub, model, t, theta, rho_bar=rb)
        return _solve_metric(g, gamma, t)

    theta = stratonovich_heun_step(drift, diffusion, _theta(state.theta, sub.m), dt, dY, t=state.t)
    return ThetaState(_guard(theta, state.t + dt), state.t + dt)


def _lambdas(sub):
    if sub.coupling_eigenvalues is None:
        raise ManifoldError("reduced theta filters need a submanifold built from the coupling spectrum")
    return sub.coupling_eigenvalues


def commuting_increment(lambdas, dt, dY):
    """-2 lambda^2 dt + 2 lambda dY; dY may be an array of increments (one per path)."""
    lambdas = np.asarray(lambdas, dtype=float)
    return -2.0 * lambdas ** 2 * dt + 2.0 * np.multiply.outer(dY, lambdas)


def hamiltonian_drive(sub, base, theta, t=None):
    """
    Tr(i rho_bar [B, A_j]) and g_jj = Tr(rho_bar A_j) for projector generators,
    evaluated in their shared eigenbasis without forming rho_bar.

    Returns:
        (drive, g) real m-vectors

    Raises:
        NearSingularMetric: a diagonal Fisher entry vanishes or their ratio exceeds CONDITION_LIMIT
    """
    e = np.exp(0.5 * (theta @ sub.weights))
    z = sub.weights @ (e * (sub.drive_kernel(base) @ e))
    g = sub.weights @ (e * e * sub.anchor_populations)
    low, high = np.min(g), np.max(g)
    if not (low > 0 and high <= CONDITION_LIMIT * low):
        raise NearSingularMetric(f"diagonal Fisher entries span [{low:.3e}, {high:.3e}]", t)
    return -2.0 * z.imag, g


def projection_filter_step_reduced(sub, model, state, t, dt, dY):
    """
    Euler step of d theta_j = Tr(i rho_bar [H, A_j]) / g_jj dt - 2 lambda_j^2 dt + 2 lambda_j dY.

    The noise coefficient is constant, so the Ito and Stratonovich readings agree.
    """
    lambdas = _lambdas(sub)
    theta = _theta(state.theta, sub.m)
    increment = commuting_increment(lambdas, dt, dY)
    u_t = model.hamiltonian.u(t)
    if u_t != 0.0:
        drive, g = hamiltonian_drive(sub, model.hamiltonian.base, theta, t)
        increment = increment + u_t * drive / g * dt
    return ThetaState(_guard(theta + increment, t + dt), t + dt)


def projection_filter_step_commuting(sub, state, dt, dY):
    """Exact update theta += -2 alpha dt + 2 beta dY when [H, L] = 0."""
    theta = np.asarray(state.theta, dtype=float) + commuting_increment(_lambdas(sub), dt, dY)
    return ThetaState(_guard(theta, state.t + dt), state.t + dt)


def quantum_filter_step(model, state, t, dt, dY):
    """
    Euler-Maruyama step of the normalized filter
    d rho = L^dag(rho) dt + D_L(rho) (dY - Tr(rho (L + L^dag)) dt),
    followed by Hermitian symmetrization and trace renormalization.

    Returns:
        FilterState carrying the minimum eigenvalue before renormalization

    Raises:
        TraceCollapse: trace <= TRACE_FLOOR before renormalization
    """
    rho = state.rho
    l = model.L
    expectation = np.trace(rho @ (l + l.conj().T)).real
    rho = rho + lindblad_adjoint(model, t, rho) * dt + innovation_gain(model, rho) * (dY - expectation * dt)
    rho = hermitian_part(rho)
    tr = np.trace(rho).real
    if not tr > TRACE_FLOOR:
        raise TraceCollapse(f"filter trace collapsed to {tr:.3e}", t)
    min_eig = float(np.linalg.eigvalsh(rho)[0]) / tr
    return FilterState(rho / tr, min_eig)


def quantum_filter_step_kraus(model, state, t, dt, dY):
    """
    Positivity-preserving step of the normalized filter,
    rho -> M rho M^dag / Tr(M rho M^dag) with
    M = I - i H dt - L^dag L dt / 2 + L dY + L^2 (dY^2 - dt) / 2.

    M agrees with exp(L dY - L^2 dt) to second order in dY, which gives strong
    order one against the Euler step's one half.

    Raises:
        TraceCollapse: trace <= TRACE_FLOOR before renormalization
    """
    l = model.L
    eye = np.eye(model.dim, dtype=complex)
    kraus = (eye - 1j * model.H(t) * dt - 0.5 * (l.conj().T @ l) * dt
             + l * dY + 0.5 * (l @ l) * (dY * dY - dt))
    rho = hermitian_part(kraus @ state.rho @ kraus.conj().T)
    tr = np.trace(rho).real
    if not tr > TRACE_FLOOR:
        raise TraceCollapse(f"filter trace collapsed to {tr:.3e}", t)
    min_eig = float(np.linalg.eigvalsh(rho)[0]) / tr
    return FilterState(rho / tr, min_eig)


def _rescaled(rho_bar, log_scale, rescales, t):
    tr = np.trace(rho_bar).real
    if not tr > 0:
        raise TraceCollapse(f"unnormalized trace became {tr:.3e}", t)
    if TRACE_FLOOR <= tr <= TRACE_CEILING:
        return UnnormalizedState(rho_bar, log_scale, rescales)
    logger.debug("Rescaling unnormalized state with trace %.3e at t=%.6g", tr, t)
    return UnnormalizedState(rho_bar / tr, log_scale + float(np.log(tr)), rescales + 1)


def unnormalized_filter_step(model, state, t, dt, dY):
    """Euler-Maruyama step of d rho_bar = L^dag(rho_bar) dt + (L rho_bar + rho_bar L^dag) dY."""
    rb = state.rho_bar
    l = model.L
    rb = rb + lindblad_adjoint(model, t, rb) * dt + (l @ rb + rb @ l.conj().T) * dY
    return _rescaled(hermitian_part(rb), state.log_scale, state.rescales, t)


def unnormalized_filter_step_stratonovich(model, state, t, dt, dY):
    """
    Heun step of the Stratonovich form
    d rho_bar = (-i[H, rho_bar] - S_L(rho_bar)) dt + (L rho_bar + rho_bar L^dag) o dY.
    """
    l = model.L
    ld = l.conj().T

    def drift(x, s):
        return -1j * commutator(model.H(s), x) - stratonovich_drift(model, x)

    def diffusion(x, s):
        return l @ x + x @ ld

    rb = stratonovich_heun_step(drift, diffusion, state.rho_bar, dt, dY, t=t)
    return _rescaled(hermitian_part(rb), state.log_scale, state.rescales, t)


# Export functions
__all__ = [
    'StepFailure',
    'TraceCollapse',
    'NearSingularMetric',
    'ManifoldError',
    'FilterState',
    'UnnormalizedState',
    'ThetaState',
    'Submanifold',
    'THETA_GUARD',
    'build_submanifold',
    'default_submanifold',
    'manifold_state',
    'natural_basis',
    'symmetrized_inner_product',
    'fisher_matrix',
    'fisher_gram',
    'e_representation',
    'quantum_fisher_metric',
    'normalize',
    'projection_op',
    'xi_gamma',
    'commuting_increment',
    'projection_filter_step_general',
    'hamiltonian_drive',
    'projection_filter_step_reduced',
    'projection_filter_step_commuting',
    'quantum_filter_step',
    'quantum_filter_step_kraus',
    'unnormalized_filter_step',
    'unnormalized_filter_step_stratonovich',
]
