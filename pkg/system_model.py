#!/usr/bin/env python3
"""
Open quantum system model for continuous homodyne monitoring
Lindblad superoperators, coupling spectral projectors and spin-ensemble builders
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from hermitian_core import (
    IDENTITY_2,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DimensionError,
    as_operator,
    commutator,
    herm_eig,
    is_hermitian,
    kron,
    require_hermitian,
    same_dim,
)

logger = logging.getLogger(__name__)

MAX_ATOMS = 8
CONTROL_KINDS = ('constant', 'exp_decay', 'zero')
PAULI = {'x': SIGMA_X, 'y': SIGMA_Y, 'z': SIGMA_Z}


@dataclass(frozen=True)
class ControlSignal:
    """
    Scalar control u(t) multiplying a fixed Hermitian base operator.

    constant:  u(t) = amplitude
    exp_decay: u(t) = amplitude * exp(-rate * t)
    zero:      u(t) = 0
    """
    kind: str
    amplitude: float = 0.0
    rate: float = 0.0
    base: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS:
            raise ValueError(f"unknown control kind {self.kind!r}; expected one of {CONTROL_KINDS}")
        if self.base is not None:
            object.__setattr__(self, 'base', require_hermitian(self.base, name="control base"))

    @classmethod
    def zero(cls, base=None):
        return cls('zero', base=base)

    @classmethod
    def constant(cls, amplitude, base=None):
        return cls('constant', amplitude=float(amplitude), base=base)

    @classmethod
    def exp_decay(cls, amplitude, rate, base=None):
        return cls('exp_decay', amplitude=float(amplitude), rate=float(rate), base=base)

    @classmethod
    def random_exp_decay(cls, rng, scale, rate, base=None):
        """Draw a ~ N(0, 1) once and return u(t) = scale * exp(-rate t) * a."""
        a = float(rng.standard_normal())
        return cls.exp_decay(scale * a, rate, base)

    def bind(self, base):
        return replace(self, base=base)

    def u(self, t):
        if self.kind == 'zero':
            return 0.0
        if self.kind == 'constant':
            return self.amplitude
        return self.amplitude * np.exp(-self.rate * t)

    def __call__(self, t):
        if self.base is None:
            raise ValueError("control signal has no base operator bound")
        return self.u(t) * self.base


@dataclass(frozen=True)
class SystemModel:
    """The (H(t), L) pair of a monitored open quantum system with one channel."""
    hamiltonian: ControlSignal
    coupling: np.ndarray
    self_adjoint_coupling: bool = field(init=False)

    def __post_init__(self):
        coupling = as_operator(self.coupling)
        if self.hamiltonian.base is None:
            raise ValueError("hamiltonian control signal needs a base operator")
        same_dim(coupling, self.hamiltonian.base)
        object.__setattr__(self, 'coupling', coupling)
        object.__setattr__(self, 'self_adjoint_coupling', is_hermitian(coupling))

    @property
    def dim(self):
        return self.coupling.shape[0]

    def H(self, t):
        return self.hamiltonian(t)

    @property
    def L(self):
        return self.coupling

    def commutes(self, t=0.0, tol=1e-9):
        """Whether [H(t), L] = 0 within tol (max-abs entry)."""
        return bool(np.max(np.abs(commutator(self.H(t), self.L))) <= tol)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Distinct nonzero eigenvalues of a Hermitian L with their projectors."""
    eigenvalues: np.ndarray
    projectors: Tuple[np.ndarray, ...]
    kernel_projector: np.ndarray

    @property
    def n0(self):
        return len(self.eigenvalues)

    def reconstruct(self):
        n = self.kernel_projector.shape[0]
        out = np.zeros((n, n), dtype=complex)
        for lam, p in zip(self.eigenvalues, self.projectors):
            out += lam * p
        return out


def _check_dim(model, x):
    if np.shape(x) != (model.dim, model.dim):
        raise DimensionError(f"operator shape {np.shape(x)} does not match model dimension {model.dim}")


def lindblad_generator(model, t, x):
    """
    Heisenberg-picture generator i[H,X] + L^dag X L - (L^dag L X + X L^dag L)/2.

    Args:
        model: SystemModel
        t: time at which H(t) is sampled
        x: Operator

    Returns:
        Operator, Hermitian whenever x is
    """
    _check_dim(model, x)
    h, l = model.H(t), model.L
    ld = l.conj().T
    ldl = ld @ l
    return 1j * commutator(h, x) + ld @ x @ l - 0.5 * (ldl @ x + x @ ldl)


def lindblad_adjoint(model, t, x):
    """Schrodinger-picture generator -i[H,X] + L X L^dag - (L^dag L X + X L^dag L)/2."""
    _check_dim(model, x)
    h, l = model.H(t), model.L
    ld = l.conj().T
    ldl = ld @ l
    return -1j * commutator(h, x) + l @ x @ ld - 0.5 * (ldl @ x + x @ ldl)


def innovation_gain(model, x):
    """LX + XL^dag - X Tr(X(L + L^dag)); traceless when Tr X = 1."""
    _check_dim(model, x)
    l = model.L
    ld = l.conj().T
    return l @ x + x @ ld - x * np.trace(x @ (l + ld))


def stratonovich_drift(model, x):
    """((L + L^dag) L X + X L^dag (L + L^dag)) / 2, the Ito-to-Stratonovich correction."""
    _check_dim(model, x)
    l = model.L
    ld = l.conj().T
    s = l + ld
    return 0.5 * (s @ l @ x + x @ ld @ s)


def stratonovich_drift_adjoint(model, x):
    """Adjoint of the correction term: (X (L + L^dag) L + L^dag (L + L^dag) X) / 2."""
    _check_dim(model, x)
    l = model.L
    ld = l.conj().T
    s = l + ld
    return 0.5 * (x @ s @ l + ld @ s @ x)


def spectral_projectors(l, zero_tol=None):
    """
    Cluster the spectrum of a Hermitian L into distinct nonzero eigenvalues.

    Eigenvalues within zero_tol of each other share one projector of matching
    rank; eigenvalues with |lambda| <= zero_tol go to the kernel projector.
    Clusters are returned by descending eigenvalue.

    Args:
        l: Hermitian operator
        zero_tol: gap tolerance, default 1e-8 * max|lambda|

    Returns:
        SpectralDecomposition
    """
    eigenvalues, v = herm_eig(l)
    n = len(eigenvalues)
    scale = float(np.max(np.abs(eigenvalues), initial=0.0))
    if zero_tol is None:
        zero_tol = 1e-8 * scale if scale > 0 else 1e-12

    clusters = []
    for idx in np.argsort(-eigenvalues, kind='stable'):
        lam = eigenvalues[idx]
        if clusters and abs(clusters[-1][0][-1] - lam) <= zero_tol:
            clusters[-1][0].append(lam)
            clusters[-1][1].append(idx)
        else:
            clusters.append(([lam], [idx]))

    values, projectors = [], []
    kernel = np.zeros((n, n), dtype=complex)
    for lams, cols in clusters:
        basis = v[:, cols]
        p = basis @ basis.conj().T
        p = 0.5 * (p + p.conj().T)
        lam = float(np.mean(lams))
        if abs(lam) <= zero_tol:
            kernel += p
            continue
        values.append(lam)
        projectors.append(p)
    return SpectralDecomposition(np.array(values, dtype=float), tuple(projectors), kernel)


def collective_spin(n_atoms, axis):
    """
    Collective spin J_axis = sum_k sigma_axis^(k) / 2 on 2**n_atoms levels.

    Basis is the ordered product basis |q_1 ... q_N> with |0> the +1 eigenstate
    of sigma_z, so J_z is diagonal with J_z|0...0> = (N/2)|0...0>.
    """
    if not isinstance(n_atoms, (int, np.integer)) or not 1 <= n_atoms <= MAX_ATOMS:
        raise ValueError(f"n_atoms must be an integer in 1..{MAX_ATOMS}, got {n_atoms!r}")
    if axis not in PAULI:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    dim = 2 ** n_atoms
    total = np.zeros((dim, dim), dtype=complex)
    for k in range(n_atoms):
        factors = [IDENTITY_2] * n_atoms
        factors[k] = PAULI[axis]
        total += 0.5 * kron(*factors)
    return total


def product_state(*site_states):
    """Kronecker product of single-atom density matrices, first atom leftmost."""
    return kron(*site_states)


def build_spin_model(n_atoms, mu, control=None, control_axis='y'):
    """
    Dispersively coupled spin ensemble: L = sqrt(mu) J_z, H(t) = u(t) J_axis.

    Args:
        n_atoms: number of two-level atoms
        mu: effective coupling strength, > 0
        control: ControlSignal giving u(t); its base is rebound to J_axis.
            None means u = 0.
        control_axis: 'y' or 'z'

    Returns:
        SystemModel with a self-adjoint coupling
    """
    if mu <= 0:
        raise ValueError(f"coupling strength mu must be positive, got {mu}")
    if control_axis not in ('y', 'z'):
        raise ValueError(f"control_axis must be 'y' or 'z', got {control_axis!r}")
    base = collective_spin(n_atoms, control_axis)
    control = (control or ControlSignal.zero()).bind(base)
    model = SystemModel(control, np.sqrt(mu) * collective_spin(n_atoms, 'z'))
    logger.debug("Built spin model: N=%d mu=%.3g control=%s axis=%s",
                 n_atoms, mu, control.kind, control_axis)
    return model


# Export functions
__all__ = [
    'ControlSignal',
    'SystemModel',
    'SpectralDecomposition',
    'lindblad_generator',
    'lindblad_adjoint',
    'innovation_gain',
    'stratonovich_drift',
    'stratonovich_drift_adjoint',
    'spectral_projectors',
    'collective_spin',
    'product_state',
    'build_spin_model',
]
