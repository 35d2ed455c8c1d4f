#!/usr/bin/env python3
"""
Diagnostics for the projection filter
Prediction and correction residuals, mergeable Monte Carlo estimators, pointer-state
decomposition, reduced Lindblad spectra and Lyapunov stability certificates
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from scipy import linalg as sla

from filter_bank import manifold_state, projection_op
from hermitian_core import (
    as_operator,
    commutator,
    frobenius_norm,
    hermitian_part,
    singular_values,
    superoperator_spectrum,
    unvec,
    vec,
    vectorize_superoperator,
)
from system_model import stratonovich_drift

logger = logging.getLogger(__name__)

CERTIFICATE_TOL = 1e-8
ABSCISSA_TOL = 1e-10


class InfeasibleCertificate(ValueError):
    """No Lyapunov certificate exists for the requested margin."""


class ResidualReport(NamedTuple):
    """Norms of the vector-field components lost by projection at one time."""
    t: float
    prediction_norm: float
    correction1_norm: float
    correction2_norm: float


# ============================================================================
# Residuals
# ============================================================================

def prediction_residual(sub, model, t, theta):
    """
    Hamiltonian part of the filter vector field left after projection:
    -i[H, rho_bar] - Pi(-i[H, rho_bar]).
    """
    rb = manifold_state(sub, theta).rho_bar
    v = -1j * commutator(model.H(t), rb)
    return hermitian_part(v - projection_op(sub, theta, v, rho_bar=rb, t=t))


def prediction_residual_commuting(sub, model, t, theta):
    """
    Closed form e^Lambda X0 e^Lambda with Lambda = sum theta_i A_i / 2 and
    X0 = -i[H, rho0]; equals prediction_residual when [H, A_j] = 0 for all j.
    """
    u = sub.eigenbasis
    e = (u * np.exp(0.5 * (np.asarray(theta, dtype=float) @ sub.weights))) @ u.conj().T
    x0 = -1j * commutator(model.H(t), sub.anchor)
    return hermitian_part(e @ x0 @ e)


def correction_residuals(sub, model, theta):
    """
    Correction residuals c1 = -S_L(rho_bar) - Pi(-S_L(rho_bar)) and
    c2 = (L rho_bar + rho_bar L^dag) - Pi(L rho_bar + rho_bar L^dag).

    Both vanish identically for the submanifold spanned by the spectral
    projectors of a self-adjoint coupling.
    """
    rb = manifold_state(sub, theta).rho_bar
    l = model.L
    drift = -stratonovich_drift(model, rb)
    noise = l @ rb + rb @ l.conj().T
    c1 = drift - projection_op(sub, theta, drift, rho_bar=rb)
    c2 = noise - projection_op(sub, theta, noise, rho_bar=rb)
    return c1, c2


def residual_report(sub, model, t, theta):
    p = prediction_residual(sub, model, t, theta)
    c1, c2 = correction_residuals(sub, model, theta)
    return ResidualReport(float(t), frobenius_norm(p), frobenius_norm(c1), frobenius_norm(c2))


# ============================================================================
# Mergeable estimators
# ============================================================================

@dataclass
class RunningMoments:
    """
    Count, mean and sum of squared deviations of scalar or array samples.

    merge() combines two partial states with the pairwise update, so partial
    results from workers can be folded in any grouping.
    """
    count: int = 0
    mean: object = 0.0
    m2: object = 0.0

    @classmethod
    def from_samples(cls, samples):
        samples = np.asarray(samples, dtype=float)
        if samples.shape[0] == 0:
            return cls()
        mean = samples.mean(axis=0)
        return cls(int(samples.shape[0]), mean, ((samples - mean) ** 2).sum(axis=0))

    def push(self, x):
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)
        return self

    def merge(self, other):
        if other.count == 0:
            return RunningMoments(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningMoments(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = np.asarray(other.mean) - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / n)
        return RunningMoments(n, mean, m2)

    @property
    def variance(self):
        if self.count < 2:
            return np.zeros_like(np.asarray(self.mean, dtype=float))
        return np.asarray(self.m2) / (self.count - 1)

    @property
    def stderr(self):
        if self.count == 0:
            return np.full_like(np.asarray(self.mean, dtype=float), np.nan)
        return np.sqrt(self.variance / self.count)


class BoundEstimate(NamedTuple):
    """Per-checkpoint Monte Carlo estimate of E sqrt(Tr(P(t)^2)) against sqrt(Tr(X0^2))."""
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray

    def holds(self, bands=3.0):
        return bool(np.all(self.mean <= self.bound + bands * self.stderr + 1e-12))


def _commutes_with_generators(sub, h, tol=1e-9):
    return all(np.max(np.abs(commutator(h, a))) <= tol for a in sub.generators)


def _commuting_residual_norms(sub, model, thetas, times):
    u = sub.eigenbasis
    norms = np.empty(thetas.shape[:2])
    for k, t in enumerate(times):
        x0 = u.conj().T @ (-1j * commutator(model.H(t), sub.anchor)) @ u
        weight = np.abs(x0) ** 2
        s = thetas[:, k, :] @ sub.weights
        growth = np.exp(s[:, :, None] + s[:, None, :])
        norms[:, k] = np.sqrt(np.einsum('ab,pab->p', weight, growth))
    return norms


def residual_bound_estimate(sub, model, thetas, times):
    """
    Estimate E sqrt(Tr(P(t)^2)) at each checkpoint from an ensemble of theta paths.

    Args:
        sub: Submanifold of the theta filter
        model: SystemModel
        thetas: array (trajectories, checkpoints, m) of theta values
        times: checkpoint times, length checkpoints

    Returns:
        BoundEstimate with the constant sqrt(Tr(X0^2)) per checkpoint

    Raises:
        ValueError: on an empty ensemble or mismatched shapes
    """
    thetas = np.asarray(thetas, dtype=float)
    times = np.asarray(times, dtype=float)
    if thetas.ndim != 3 or thetas.shape[0] == 0:
        raise ValueError("residual bound estimate needs a non-empty (trajectories, checkpoints, m) array")
    if thetas.shape[1] != len(times) or thetas.shape[2] != sub.m:
        raise ValueError(f"theta array shape {thetas.shape} does not match {len(times)} checkpoints, m={sub.m}")

    if all(_commutes_with_generators(sub, model.H(t)) for t in times):
        norms = _commuting_residual_norms(sub, model, thetas, times)
    else:
        norms = np.array([[frobenius_norm(prediction_residual(sub, model, t, th))
                           for t, th in zip(times, path)] for path in thetas])
    moments = RunningMoments.from_samples(norms)
    bound = np.array([frobenius_norm(-1j * commutator(model.H(t), sub.anchor)) for t in times])
    return BoundEstimate(times, np.asarray(moments.mean), np.asarray(moments.stderr), bound)


# ============================================================================
# Pointer-state decomposition and reduced generator
# ============================================================================

@dataclass(frozen=True)
class PointerDecomposition:
    """
    Blocks of an operator split along H_S = span(|psi0>) and its complement H_R.

    x_s: S -> S (1 x 1), x_p: R -> S (1 x n-1), x_q: S -> R (n-1 x 1), x_r: R -> R.
    """
    pointer_index: int
    x_s: np.ndarray
    x_p: np.ndarray
    x_q: np.ndarray
    x_r: np.ndarray
    p_s: np.ndarray
    p_r: np.ndarray

    @property
    def dim(self):
        return self.p_s.shape[0]

    def rest(self):
        return [k for k in range(self.dim) if k != self.pointer_index]

    def reassemble(self):
        n, s, r = self.dim, self.pointer_index, self.rest()
        out = np.zeros((n, n), dtype=complex)
        out[s, s] = self.x_s[0, 0]
        out[s, r] = self.x_p[0]
        out[r, s] = self.x_q[:, 0]
        out[np.ix_(r, r)] = self.x_r
        return out


def pointer_decompose(x, pointer_index):
    """
    Split x into S, P, Q, R blocks around the basis vector pointer_index.

    Raises:
        IndexError: pointer_index outside 0..n-1
    """
    x = as_operator(x)
    n = x.shape[0]
    if not isinstance(pointer_index, (int, np.integer)) or not 0 <= pointer_index < n:
        raise IndexError(f"pointer_index must lie in 0..{n - 1}, got {pointer_index!r}")
    s = int(pointer_index)
    r = [k for k in range(n) if k != s]
    p_s = np.zeros((n, n), dtype=complex)
    p_s[s, s] = 1.0
    return PointerDecomposition(
        pointer_index=s,
        x_s=x[s:s + 1, s:s + 1].copy(),
        x_p=x[s:s + 1, r].copy(),
        x_q=x[r, s:s + 1].copy(),
        x_r=x[np.ix_(r, r)].copy(),
        p_s=p_s,
        p_r=np.eye(n, dtype=complex) - p_s,
    )


def reduced_generator_matrix(h_r, l_r):
    """
    Column-stacked matrix of X -> i[H_R, X] + L_R^dag X L_R - (L_R^dag L_R X + X L_R^dag L_R)/2.
    """
    h_r, l_r = as_operator(h_r), as_operator(l_r)
    ld = l_r.conj().T
    ldl = ld @ l_r

    def generator(x):
        return 1j * (h_r @ x - x @ h_r) + ld @ x @ l_r - 0.5 * (ldl @ x + x @ ldl)

    return vectorize_superoperator(generator, h_r.shape[0])


def generator_abscissa(m):
    """min(-Re lambda) over the spectrum of a vectorized generator."""
    return float(np.min(-superoperator_spectrum(m).real))


def _reduced_blocks(model, pointer_index):
    if model.dim < 2:
        raise ValueError("pointer decomposition needs dimension >= 2")
    h = pointer_decompose(model.H(0.0), pointer_index).x_r
    l = pointer_decompose(model.L, pointer_index).x_r
    return h, l


def spectral_abscissa(model, pointer_index=0):
    """
    Decay rate Delta0 of the reduced generator on H_R, with H sampled at t = 0.
    """
    return generator_abscissa(reduced_generator_matrix(*_reduced_blocks(model, pointer_index)))


# ============================================================================
# Lyapunov certificate and stability bound
# ============================================================================

@dataclass(frozen=True)
class StabilityCertificate:
    """
    K_R > 0 with L_R(K_R) <= -(delta0 - epsilon) K_R and lambda_min(K_R) = 1.

    bound_coefficients holds (Tr K_R, Tr K_R / (delta0 - epsilon)).
    """
    delta0: float
    epsilon: float
    k_r: np.ndarray
    bound_coefficients: Tuple[float, float]
    slack: float
    pointer_index: int = 0

    @property
    def rate(self):
        return self.delta0 - self.epsilon


def certificate_from_generator(m, epsilon=None, pointer_index=0):
    """
    Build a Lyapunov certificate for a vectorized generator on H_R.

    Solves (M + (delta0 - epsilon) I) vec(K) = -vec(I), symmetrizes K and
    scales it so that lambda_min(K) = 1.

    Args:
        m: (d*d, d*d) column-stacked generator matrix
        epsilon: margin in (0, delta0); defaults to delta0 / 2
        pointer_index: recorded with the certificate for the bound

    Returns:
        StabilityCertificate

    Raises:
        InfeasibleCertificate: when delta0 <= epsilon or the solve gives no
            positive definite K satisfying the inequality
    """
    m = np.asarray(m, dtype=complex)
    d = int(round(np.sqrt(m.shape[0])))
    if m.shape != (d * d, d * d):
        raise ValueError(f"generator matrix must be square with a perfect-square size, got {m.shape}")

    delta0 = generator_abscissa(m)
    if not delta0 > ABSCISSA_TOL * max(1.0, float(np.max(np.abs(m)))):
        raise InfeasibleCertificate(f"spectral abscissa {delta0:.3e} is not positive")
    if epsilon is None:
        epsilon = 0.5 * delta0
    if not 0 < epsilon < delta0:
        raise InfeasibleCertificate(f"need 0 < epsilon < delta0, got epsilon={epsilon}, delta0={delta0}")

    rate = delta0 - epsilon
    shifted = m + rate * np.eye(d * d)
    k = unvec(sla.lu_solve(sla.lu_factor(shifted), -vec(np.eye(d, dtype=complex))), d)
    k = hermitian_part(k)
    lam_min = np.linalg.eigvalsh(k)[0]
    if not lam_min > 0:
        raise InfeasibleCertificate(f"resolvent solution is not positive definite (lambda_min={lam_min:.3e})")
    k = k / lam_min

    applied = hermitian_part(unvec(m @ vec(k), d) + rate * k)
    slack = float(np.linalg.eigvalsh(applied)[-1])
    if slack > CERTIFICATE_TOL:
        raise InfeasibleCertificate(f"certificate inequality violated by {slack:.3e}")

    tr_k = float(np.trace(k).real)
    logger.debug("Certificate: delta0=%.6g epsilon=%.6g Tr K=%.6g slack=%.3e", delta0, epsilon, tr_k, slack)
    return StabilityCertificate(delta0, float(epsilon), k, (tr_k, tr_k / rate), slack, int(pointer_index))


def lyapunov_certificate(model, pointer_index=0, epsilon=None):
    """Certificate for the reduced generator of a model (H at t = 0)."""
    m = reduced_generator_matrix(*_reduced_blocks(model, pointer_index))
    return certificate_from_generator(m, epsilon, pointer_index)


def stability_bound(t, rho0, cert, x0):
    """
    Upper bound on Tr(P_R rho_bar_theta(t)):
    (c1 Tr(P_R rho0) - c2 s1(X0)) e^{-(delta0 - epsilon) t} + c2 s1(X0).
    """
    rho0 = as_operator(rho0)
    c1, c2 = cert.bound_coefficients
    p = cert.pointer_index
    tr_r = float(np.trace(rho0).real - rho0[p, p].real)
    s1 = float(singular_values(x0)[0])
    return (c1 * tr_r - c2 * s1) * np.exp(-cert.rate * t) + c2 * s1


class StabilityConditions(NamedTuple):
    commuting: bool
    delta0: float

    @property
    def positive_abscissa(self):
        return self.delta0 > ABSCISSA_TOL


def stability_conditions(model, pointer_index=0):
    """The [H, L] = 0 and Delta0 > 0 preconditions as plain booleans."""
    return StabilityConditions(model.commutes(0.0), spectral_abscissa(model, pointer_index))


# ============================================================================
# Error metrics
# ============================================================================

def _operator(state):
    return as_operator(getattr(state, 'rho', state))


def frobenius_error(rho, rho_tilde):
    """sqrt(Tr((rho - rho_tilde)^2)) between two states of the same dimension."""
    return frobenius_norm(_operator(rho) - _operator(rho_tilde))


def pointer_convergence_metrics(rhos, rho_bars, pointer_index=0):
    """
    Distance to the pointer block and the off-pointer weight of the manifold state.

    Args:
        rhos: sequence of normalized filter states
        rho_bars: sequence of unnormalized manifold states rho_bar_theta
        pointer_index: basis index of the pointer state

    Returns:
        (distance, off_pointer) arrays: Frobenius norm of rho - P_S rho P_S and
        Tr(P_R rho_bar_theta)
    """
    distance, off_pointer = [], []
    for rho, rb in zip(rhos, rho_bars):
        rho, rb = _operator(rho), _operator(rb)
        p = pointer_index
        blocked = np.zeros_like(rho)
        blocked[p, p] = rho[p, p]
        distance.append(frobenius_norm(rho - blocked))
        off_pointer.append(float(np.trace(rb).real - rb[p, p].real))
    return np.array(distance), np.array(off_pointer)


# Export functions
__all__ = [
    'InfeasibleCertificate',
    'ResidualReport',
    'prediction_residual',
    'prediction_residual_commuting',
    'correction_residuals',
    'residual_report',
    'RunningMoments',
    'BoundEstimate',
    'residual_bound_estimate',
    'PointerDecomposition',
    'pointer_decompose',
    'reduced_generator_matrix',
    'generator_abscissa',
    'spectral_abscissa',
    'StabilityCertificate',
    'certificate_from_generator',
    'lyapunov_certificate',
    'stability_bound',
    'StabilityConditions',
    'stability_conditions',
    'frobenius_error',
    'pointer_convergence_metrics',
]
