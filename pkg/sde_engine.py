#!/usr/bin/env python3
"""
Stochastic integration engine
Time grids, seeded two-level Wiener paths, Euler-Maruyama and Stratonovich Heun steps
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

RNG_ALGORITHM = 'numpy.random.Philox'

StateMap = Callable[[object, float], object]


class GridError(ValueError):
    """Invalid time grid parameters."""


@dataclass(frozen=True)
class TimeGrid:
    """
    Fine Brownian grid of N0 steps over [0, T], aggregated R fine steps per
    coarse integration step.
    """
    horizon: float
    fine_count: int
    aggregation: int

    @property
    def fine_step(self):
        return self.horizon / self.fine_count

    @property
    def coarse_count(self):
        return self.fine_count // self.aggregation

    @property
    def coarse_step(self):
        return self.aggregation * self.fine_step

    def coarse_times(self):
        """Left endpoints of the coarse steps plus the horizon, length coarse_count + 1."""
        return np.arange(self.coarse_count + 1) * self.coarse_step

    def with_aggregation(self, aggregation):
        return make_grid(self.horizon, self.fine_count, aggregation)


def make_grid(T, N0, R):
    """
    Build a TimeGrid.

    Args:
        T: horizon, > 0
        N0: number of fine Brownian increments
        R: fine increments per coarse step; must divide N0

    Returns:
        TimeGrid

    Raises:
        GridError: on a non-positive horizon or when R does not divide N0
    """
    if not T > 0:
        raise GridError(f"horizon T must be positive, got {T}")
    if int(N0) != N0 or int(R) != R:
        raise GridError(f"N0 and R must be integers, got N0={N0}, R={R}")
    N0, R = int(N0), int(R)
    if not N0 >= R >= 1:
        raise GridError(f"need N0 >= R >= 1, got N0={N0}, R={R}")
    if N0 % R:
        raise GridError(f"N0={N0} is not divisible by R={R}")
    return TimeGrid(float(T), N0, R)


@dataclass(frozen=True)
class NoisePath:
    """Fine Wiener increments and their coarse aggregation."""
    seed: int
    fine_increments: np.ndarray
    coarse_increments: np.ndarray

    def aggregated(self, aggregation):
        """Coarse increments for another aggregation of the same fine path."""
        return aggregate_increments(self.fine_increments, aggregation)


def noise_generator(seed):
    """Counter-based generator for the Wiener path of one trajectory."""
    return np.random.Generator(np.random.Philox(int(seed)))


def setup_generator(seed):
    """Independent substream for per-trajectory setup draws (never the noise)."""
    return np.random.Generator(np.random.Philox(int(seed)).jumped())


def aggregate_increments(fine, aggregation):
    fine = np.asarray(fine, dtype=float)
    if fine.shape[-1] % aggregation:
        raise GridError(f"{fine.shape[-1]} fine increments not divisible by R={aggregation}")
    return fine.reshape(fine.shape[:-1] + (-1, aggregation)).sum(axis=-1)


def wiener_path(seed, grid):
    """
    Seeded Brownian increments on the fine grid, summed onto the coarse grid.

    Args:
        seed: 64-bit integer seed
        grid: TimeGrid

    Returns:
        NoisePath with N0 N(0, dt) fine increments
    """
    rng = noise_generator(seed)
    fine = rng.standard_normal(grid.fine_count) * np.sqrt(grid.fine_step)
    return NoisePath(int(seed), fine, aggregate_increments(fine, grid.aggregation))


def ito_euler_step(drift: StateMap, diffusion: StateMap, x, dt, dW, t=0.0):
    """Euler-Maruyama: x + a(x, t) dt + b(x, t) dW."""
    return x + drift(x, t) * dt + diffusion(x, t) * dW


def stratonovich_heun_step(drift: StateMap, diffusion: StateMap, x, dt, dW, t=0.0):
    """
    Stratonovich Heun predictor-corrector step.

    Predictor x_bar = x + a(x) dt + b(x) dW, corrector averages drift and
    diffusion over x and x_bar; the second evaluation is taken at t + dt.
    """
    f = drift(x, t)
    g = diffusion(x, t)
    x_bar = x + f * dt + g * dW
    f_bar = drift(x_bar, t + dt)
    g_bar = diffusion(x_bar, t + dt)
    return x + 0.5 * (f + f_bar) * dt + 0.5 * (g + g_bar) * dW


def integrate(step, drift: StateMap, diffusion: StateMap, x0, dt, increments, t0=0.0):
    """
    Apply one stepping scheme over a sequence of increments.

    Returns:
        list of states, x0 first
    """
    states = [x0]
    x, t = x0, t0
    for dW in increments:
        x = step(drift, diffusion, x, dt, dW, t=t)
        t += dt
        states.append(x)
    return states


# Export functions
__all__ = [
    'RNG_ALGORITHM',
    'GridError',
    'TimeGrid',
    'NoisePath',
    'make_grid',
    'noise_generator',
    'setup_generator',
    'aggregate_increments',
    'wiener_path',
    'ito_euler_step',
    'stratonovich_heun_step',
    'integrate',
]
