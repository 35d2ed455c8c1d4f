#!/usr/bin/env python3
"""
Random operator helpers shared by the tests
"""

import numpy as np


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_density(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    rho = a @ a.conj().T + 0.1 * np.eye(n)
    return rho / np.trace(rho).real
