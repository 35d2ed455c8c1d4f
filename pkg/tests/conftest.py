#!/usr/bin/env python3
"""
Shared fixtures for the projection filter test suite
"""

import os
import sys

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from filter_bank import default_submanifold  # noqa: E402
from hermitian_core import SIGMA_X, SIGMA_Y, SIGMA_Z  # noqa: E402
from system_model import ControlSignal, build_spin_model, product_state  # noqa: E402


@pytest.fixture
def paulis():
    """sigma_x, sigma_y, sigma_z"""
    return SIGMA_X, SIGMA_Y, SIGMA_Z


@pytest.fixture
def rho0():
    """Two-atom anchor: (0.75, 0.25) and (0.5, 0.5) populations of (|0>, |1>)"""
    return product_state(np.diag([0.75, 0.25]), np.diag([0.5, 0.5]))


@pytest.fixture
def two_qubit_model():
    """Two atoms, mu = 1, u(t) = 5 e^{-5t} J_y"""
    return build_spin_model(2, 1.0, ControlSignal.exp_decay(5.0, 5.0), 'y')


@pytest.fixture
def commuting_model():
    """Two atoms, mu = 1, constant u0 = 1 along J_z"""
    return build_spin_model(2, 1.0, ControlSignal.constant(1.0), 'z')


@pytest.fixture
def free_model():
    """Two atoms, mu = 1, no Hamiltonian"""
    return build_spin_model(2, 1.0)


@pytest.fixture
def default_sub(two_qubit_model, rho0):
    return default_submanifold(two_qubit_model, rho0)


@pytest.fixture
def rng():
    """Seeded generator for random test inputs"""
    return np.random.default_rng(1234)


def pytest_addoption(parser):
    parser.addoption('--update-golden', action='store_true', default=False,
                     help='rewrite tests/golden from the current outputs instead of comparing')


@pytest.fixture
def update_golden(request):
    return request.config.getoption('--update-golden')
