#!/usr/bin/env python3
"""
Invariant suites behind the `check` subcommand
Each suite exercises a scenario end to end and reports pass/fail with the measured quantity
"""

import logging
import time
from typing import Callable, Dict, NamedTuple

import numpy as np

from diagnostics import (
    InfeasibleCertificate,
    certificate_from_generator,
    frobenius_error,
    generator_abscissa,
    lyapunov_certificate,
    residual_bound_estimate,
    spectral_abscissa,
    stability_bound,
)
from filter_bank import (
    UnnormalizedState,
    default_submanifold,
    fisher_matrix,
    manifold_state,
    normalize,
    unnormalized_filter_step,
    unnormalized_filter_step_stratonovich,
)
from hermitian_core import commutator, hermitian_part
from runner import load_config, run_trajectory, simulate_theta_ensemble
from sde_engine import make_grid, noise_generator, wiener_path
from system_model import ControlSignal, SystemModel, build_spin_model, product_state

logger = logging.getLogger(__name__)

CHECK_SEED = 20240611
COHERENT_ANCHOR = np.kron(np.array([[0.75, 0.25], [0.25, 0.25]]), np.diag([0.5, 0.5]))


class SuiteResult(NamedTuple):
    name: str
    passed: bool
    measured: str
    seconds: float = 0.0

    def line(self):
        return f"{self.name} {'PASS' if self.passed else 'FAIL'} {self.measured} ({self.seconds:.2f}s)"


def check_hzero_exactness(quick=False):
    """H = 0: full filter and projection filter agree, error shrinking with the step."""
    errors = []
    for r in (4, 2, 1):
        cfg = load_config(preset='hzero', overrides={
            'N0': 8192, 'R': r, 'checkpoint_stride': (8 if quick else 2) * 4 // r, 'seed_base': CHECK_SEED,
            'filter_scheme': 'kraus'})
        record = run_trajectory(cfg, 0)
        if record.failed:
            return False, f"trajectory failed: {record.failure}"
        errors.append(float(np.max(record.frob_err)))
    factor = errors[0] / errors[2] if errors[2] > 0 else np.inf
    passed = errors[0] <= 5e-3 and factor >= 1.7
    return passed, f"max_err(dt=2^-11)={errors[0]:.3e} reduction_over_two_halvings={factor:.2f}"


def check_correction_residuals(quick=False):
    """Default submanifold: both correction residuals vanish along fig3 trajectories."""
    cfg = load_config(preset='fig3', overrides={'seed_base': CHECK_SEED})
    worst = 0.0
    for i in range(3 if quick else 10):
        record = run_trajectory(cfg, i)
        if record.failed:
            return False, f"trajectory {i} failed: {record.failure}"
        worst = max(worst, float(np.max(record.corr1)), float(np.max(record.corr2)))
    return worst <= 1e-8, f"max_correction_norm={worst:.3e}"


def _commuting_ensemble(quick, **overrides):
    cfg = load_config(preset='commuting', overrides={
        'n_trajectories': 500 if quick else 2000, 'seed_base': CHECK_SEED, **overrides})
    return simulate_theta_ensemble(cfg)


def check_martingale(quick=False):
    """Reference-measure commuting case: E e^{theta_i(T)} = 1 within 3 standard errors."""
    ensemble = _commuting_ensemble(quick)
    samples = np.exp(ensemble.thetas[:, -1, :])
    mean = samples.mean(axis=0)
    stderr = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    passed = bool(np.all(np.abs(mean - 1.0) <= 3.0 * stderr))
    shown = ' '.join(f"theta_{i + 1}:{m:.4f}+-{s:.4f}" for i, (m, s) in enumerate(zip(mean, stderr)))
    return passed, shown


def check_residual_bound(quick=False):
    """E sqrt(Tr(P(t)^2)) <= sqrt(Tr(X0^2)) at every checkpoint, diagonal and coherent anchors."""
    measured, passed = [], True
    for label, extra in (('diagonal', {}), ('coherent', {'initial_matrix': COHERENT_ANCHOR.tolist()})):
        ensemble = _commuting_ensemble(quick, **extra)
        estimate = residual_bound_estimate(ensemble.sub, ensemble.model, ensemble.thetas, ensemble.times)
        passed = passed and estimate.holds(3.0)
        gap = float(np.max(estimate.mean - estimate.bound))
        measured.append(f"{label}:max(mean-bound)={gap:.3e}")
    return passed, ' '.join(measured)


def check_ito_stratonovich(quick=False):
    """Ito Euler and Stratonovich Heun forms of the unnormalized filter converge together."""
    model = build_spin_model(2, 1.0, ControlSignal.exp_decay(5.0, 5.0), 'y')
    rho0 = product_state(np.diag([0.75, 0.25]), np.diag([0.5, 0.5]))
    fine = wiener_path(CHECK_SEED, make_grid(1.0, 2048, 1))
    gaps = []
    for r in (4, 2, 1):
        dt = r / 2048
        ito = strat = UnnormalizedState(rho0.copy())
        for k, dY in enumerate(fine.aggregated(r)):
            ito = unnormalized_filter_step(model, ito, k * dt, dt, dY)
            strat = unnormalized_filter_step_stratonovich(model, strat, k * dt, dt, dY)
        gaps.append(frobenius_error(normalize(ito), normalize(strat)))
    passed = gaps[1] <= 1.2 * gaps[0] and gaps[2] <= 1.2 * gaps[1]
    return passed, 'gaps=' + ','.join(f"{g:.3e}" for g in gaps)


def check_filter_sanity(quick=False):
    """Trace stays at one and eigenvalues stay nonnegative for every filter preset and full-filter step."""
    worst_trace, worst_eig = 0.0, np.inf
    for scheme in ('euler', 'kraus'):
        for preset in ('fig3', 'fig5', 'hzero'):
            cfg = load_config(preset=preset, overrides={
                'seed_base': CHECK_SEED, 'checkpoint_stride': 256, 'filter_scheme': scheme})
            for i in range(1 if quick else 3):
                record = run_trajectory(cfg, i)
                if record.failed:
                    return False, f"{preset}/{scheme} trajectory {i} failed: {record.failure}"
                worst_trace = max(worst_trace, record.max_trace_error)
                worst_eig = min(worst_eig, record.min_eigenvalue)
    passed = worst_trace <= 1e-10 and worst_eig >= -1e-6
    return passed, f"max|Tr-1|={worst_trace:.3e} min_eig={worst_eig:.3e}"


def check_fisher_structure(quick=False):
    """Default-submanifold Fisher matrix is diagonal with entries Tr(rho_bar A_j)."""
    model = build_spin_model(2, 1.0)
    sub = default_submanifold(model, product_state(np.diag([0.75, 0.25]), np.diag([0.5, 0.5])))
    rng = noise_generator(CHECK_SEED)
    off, mismatch = 0.0, 0.0
    for _ in range(100):
        theta = rng.uniform(-3.0, 3.0, sub.m)
        g = fisher_matrix(sub, theta)
        rb = manifold_state(sub, theta).rho_bar
        closed = np.diag([np.trace(rb @ a).real for a in sub.generators])
        off = max(off, float(np.max(np.abs(g - np.diag(np.diag(g))))))
        mismatch = max(mismatch, float(np.max(np.abs(g - closed))))
    return off <= 1e-10 and mismatch <= 1e-10, f"max_offdiag={off:.3e} max_mismatch={mismatch:.3e}"


def _random_hermitian(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return hermitian_part(a)


def brute_force_abscissa(h_r, l_r):
    """Kronecker-assembled reduced generator, diagonalized with numpy."""
    d = h_r.shape[0]
    eye = np.eye(d)
    ldl = l_r.conj().T @ l_r
    m = (1j * (np.kron(eye, h_r) - np.kron(h_r.T, eye))
         + np.kron(l_r.T, l_r.conj().T)
         - 0.5 * (np.kron(eye, ldl) + np.kron(ldl.T, eye)))
    return float(np.min(-np.linalg.eigvals(m).real))


def check_stability_machinery(quick=False):
    """Spectral abscissa against a brute-force oracle; certificate and bound on a decaying generator."""
    rng = noise_generator(CHECK_SEED + 8)
    worst = 0.0
    for k in range(20):
        n = 2 + k % 3
        h = _random_hermitian(rng, n)
        l = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        model = SystemModel(ControlSignal.constant(1.0, base=h), l)
        worst = max(worst, abs(spectral_abscissa(model, 0) - brute_force_abscissa(h[1:, 1:], l[1:, 1:])))

    rho0 = product_state(np.diag([0.75, 0.25]), np.diag([0.5, 0.5]))
    cert = certificate_from_generator(-0.7 * np.eye(9))
    x0 = -1j * commutator(build_spin_model(2, 1.0, ControlSignal.constant(1.0), 'y').H(0.0), rho0)
    off_pointer = float(np.trace(rho0).real - rho0[0, 0].real)
    bound0 = stability_bound(0.0, rho0, cert, x0)

    try:
        lyapunov_certificate(build_spin_model(2, 1.0), 0)
        model_gate = False
    except InfeasibleCertificate:
        model_gate = True

    passed = worst <= 1e-8 and cert.slack <= 1e-8 and bound0 >= off_pointer and model_gate
    return passed, (f"abscissa_err={worst:.3e} slack={cert.slack:.3e} "
                    f"bound(0)={bound0:.4f}>=Tr(P_R rho0)={off_pointer:.4f} "
                    f"delta0(-0.7 I)={generator_abscissa(-0.7 * np.eye(9)):.2f}")


SUITES: Dict[str, Callable] = {
    'A1': check_hzero_exactness,
    'A2': check_correction_residuals,
    'A3': check_martingale,
    'A4': check_residual_bound,
    'A5': check_ito_stratonovich,
    'A6': check_filter_sanity,
    'A7': check_fisher_structure,
    'A8': check_stability_machinery,
}


def run_checks(names=None, quick=False):
    """
    Run the named suites (all by default).

    Returns:
        list of SuiteResult in the order requested
    """
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    results = []
    for name in names:
        start = time.perf_counter()
        try:
            passed, measured = SUITES[name](quick=quick)
        except Exception as e:
            logger.exception(f"Suite {name} raised", extra={'suite': name, 'status': 'error'})
            passed, measured = False, f"error: {e}"
        result = SuiteResult(name, bool(passed), measured, time.perf_counter() - start)
        logger.info(result.line(), extra={'suite': name, 'status': 'pass' if passed else 'fail',
                                          'elapsed': result.seconds})
        results.append(result)
    return results


# Export functions
__all__ = [
    'SuiteResult',
    'SUITES',
    'run_checks',
    'brute_force_abscissa',
]
