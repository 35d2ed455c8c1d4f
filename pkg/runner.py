#!/usr/bin/env python3
"""
Scenario orchestration for the projection filter toolkit
Run configuration and presets, single trajectories, Monte Carlo ensembles,
CSV/metadata persistence and the per-step cost benchmark
"""

import csv
import json
import logging
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import reduce
from itertools import repeat
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from diagnostics import RunningMoments, frobenius_error, pointer_convergence_metrics, residual_report
from filter_bank import (
    FilterState,
    ManifoldError,
    StepFailure,
    ThetaState,
    UnnormalizedState,
    commuting_increment,
    default_submanifold,
    manifold_state,
    normalize,
    projection_filter_step_commuting,
    projection_filter_step_general,
    projection_filter_step_reduced,
    quantum_filter_step,
    quantum_filter_step_kraus,
    unnormalized_filter_step,
    unnormalized_filter_step_stratonovich,
)
from hermitian_core import as_operator, commutator, is_hermitian
from logging_config import log_trajectory
from sde_engine import RNG_ALGORITHM, GridError, make_grid, setup_generator, wiener_path
from system_model import MAX_ATOMS, ControlSignal, build_spin_model, product_state
from validation import (
    ConfigError,
    reject_unknown,
    require_bool,
    require_choice,
    require_float,
    require_int,
    require_matrix,
)

logger = logging.getLogger(__name__)

BASIS_ORDERING = (
    "computational product basis |q1 q2 ... qN> in lexicographic order "
    "(|00>, |01>, |10>, |11> for two atoms), |0> the +1 eigenstate of sigma_z, first atom leftmost"
)
CONTROLS = ('zero', 'constant', 'exp_decay', 'random_exp_decay')
PROJECTION_SCHEMES = ('auto', 'reduced', 'general', 'commuting')
FILTER_SCHEMES = ('kraus', 'euler')
UNNORMALIZED_SCHEMES = ('ito', 'stratonovich')
DRIVES = ('filter', 'wiener')
FAILURE_LIMIT = 0.10

DEFAULTS = {
    'preset': 'custom',
    'n_atoms': 2,
    'mu': 1.0,
    'control': 'random_exp_decay',
    'control_axis': 'y',
    'control_scale': 5.0,
    'control_rate': 5.0,
    'control_amplitude': 1.0,
    'initial_mixtures': [[0.75, 0.25], [0.5, 0.5]],
    'initial_matrix': None,
    'T': 1.0,
    'N0': 4096,
    'R': 2,
    'projection_scheme': 'auto',
    'filter_scheme': 'kraus',
    'unnormalized_scheme': 'ito',
    'drive': 'filter',
    'track_full_filter': True,
    'zero_noise': False,
    'seed_base': 0,
    'n_trajectories': 1,
    'checkpoint_stride': 8,
    'pointer_index': 0,
    'workers': 1,
    'output_dir': 'runs',
}

PRESETS = {
    'fig3': {'control': 'random_exp_decay', 'control_axis': 'y'},
    'fig5': {'control': 'random_exp_decay', 'control_axis': 'z'},
    'hzero': {'control': 'zero'},
    'commuting': {
        'control': 'constant',
        'control_axis': 'z',
        'control_amplitude': 1.0,
        'drive': 'wiener',
        'n_trajectories': 2000,
        'checkpoint_stride': 128,
        'track_full_filter': False,
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one scenario and its Monte Carlo ensemble."""
    preset: str
    n_atoms: int
    mu: float
    control: str
    control_axis: str
    control_scale: float
    control_rate: float
    control_amplitude: float
    initial_mixtures: Optional[Tuple[Tuple[float, float], ...]]
    initial_matrix: Optional[Tuple[Tuple[float, ...], ...]]
    T: float
    N0: int
    R: int
    projection_scheme: str
    filter_scheme: str
    unnormalized_scheme: str
    drive: str
    track_full_filter: bool
    zero_noise: bool
    seed_base: int
    n_trajectories: int
    checkpoint_stride: int
    pointer_index: int
    workers: int
    output_dir: str

    @property
    def dim(self):
        return 2 ** self.n_atoms

    def grid(self):
        return make_grid(self.T, self.N0, self.R)

    def seed(self, index):
        return self.seed_base + int(index)

    def checkpoint_indices(self):
        """Coarse step indices recorded: 0, stride, 2 stride, ... and always the last."""
        count = self.grid().coarse_count
        indices = list(range(0, count + 1, self.checkpoint_stride))
        if indices[-1] != count:
            indices.append(count)
        return indices

    def initial_state(self):
        if self.initial_matrix is not None:
            return as_operator(np.array(self.initial_matrix, dtype=complex))
        return product_state(*(np.diag(p).astype(complex) for p in self.initial_mixtures))

    def control_signal(self, rng):
        if self.control == 'zero':
            return ControlSignal.zero()
        if self.control == 'constant':
            return ControlSignal.constant(self.control_amplitude)
        if self.control == 'exp_decay':
            return ControlSignal.exp_decay(self.control_amplitude, self.control_rate)
        return ControlSignal.random_exp_decay(rng, self.control_scale, self.control_rate)

    def with_overrides(self, **overrides):
        document = self.to_dict()
        document.update({k: v for k, v in overrides.items() if v is not None})
        return load_config(document)

    def to_dict(self):
        def plain(value):
            if isinstance(value, tuple):
                return [plain(v) for v in value]
            return value
        return {k: plain(v) for k, v in asdict(self).items()}


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def _validate_state(doc, n_atoms):
    mixtures, matrix = doc['initial_mixtures'], doc['initial_matrix']
    if matrix is not None:
        rows = require_matrix(matrix, 'initial_matrix')
        rho = np.array(rows)
        if rho.shape[0] != 2 ** n_atoms:
            raise ConfigError(f"dimension {rho.shape[0]} does not match 2**n_atoms = {2 ** n_atoms}", 'initial_matrix')
        if not is_hermitian(rho, 1e-12):
            raise ConfigError("matrix is not symmetric", 'initial_matrix')
        if abs(np.trace(rho) - 1.0) > 1e-10:
            raise ConfigError(f"trace is {np.trace(rho):.12g}, expected 1", 'initial_matrix')
        if np.linalg.eigvalsh(rho)[0] < -1e-12:
            raise ConfigError("matrix is not positive semidefinite", 'initial_matrix')
        return None, tuple(tuple(r) for r in rows)

    if not isinstance(mixtures, list) or len(mixtures) != n_atoms:
        raise ConfigError(f"expected {n_atoms} per-atom [p0, p1] pairs", 'initial_mixtures')
    pairs = []
    for i, pair in enumerate(mixtures):
        path = f"initial_mixtures[{i}]"
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError("expected a [p0, p1] pair", path)
        p0 = require_float(pair[0], f"{path}[0]", nonnegative=True)
        p1 = require_float(pair[1], f"{path}[1]", nonnegative=True)
        if abs(p0 + p1 - 1.0) > 1e-12:
            raise ConfigError(f"populations sum to {p0 + p1:.15g}, expected 1", path)
        pairs.append((p0, p1))
    return tuple(pairs), None


def load_config(document=None, preset=None, overrides=None):
    """
    Build a RunConfig from a JSON document, a preset and CLI overrides.

    Precedence is defaults < environment (PROJFILTER_WORKERS, PROJFILTER_OUTPUT_DIR)
    < preset < document < overrides.

    Args:
        document: JSON text, an already parsed mapping, or None
        preset: preset name; falls back to the document's 'preset' key
        overrides: mapping of keys set on the command line (None values ignored)

    Returns:
        RunConfig

    Raises:
        ConfigError: malformed JSON, unknown keys or invalid values, with the key path
    """
    if document is None:
        doc = {}
    elif isinstance(document, str):
        try:
            doc = json.loads(document) if document.strip() else {}
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg} (line {e.lineno}, column {e.colno})") from e
    else:
        doc = dict(document)
    reject_unknown(doc, CONFIG_KEYS)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    reject_unknown(overrides, CONFIG_KEYS, 'overrides')

    name = preset or overrides.get('preset') or doc.get('preset') or 'custom'
    if name != 'custom' and name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(sorted(PRESETS))}", 'preset')

    merged = dict(DEFAULTS)
    try:
        merged['workers'] = int(os.getenv('PROJFILTER_WORKERS', DEFAULTS['workers']))
    except ValueError as e:
        raise ConfigError(f"expected an integer, got {os.getenv('PROJFILTER_WORKERS')!r}",
                          'PROJFILTER_WORKERS') from e
    merged['output_dir'] = os.getenv('PROJFILTER_OUTPUT_DIR', DEFAULTS['output_dir'])
    merged.update(PRESETS.get(name, {}))
    merged.update(doc)
    merged.update(overrides)
    merged['preset'] = name
    explicit = {**doc, **overrides}
    if explicit.get('initial_matrix') is not None:
        if explicit.get('initial_mixtures') is not None:
            raise ConfigError("give either initial_mixtures or initial_matrix, not both", 'initial_matrix')
        merged['initial_mixtures'] = None

    n_atoms = require_int(merged['n_atoms'], 'n_atoms', 1, MAX_ATOMS)
    mixtures, matrix = _validate_state(merged, n_atoms)

    T = require_float(merged['T'], 'T', positive=True)
    N0 = require_int(merged['N0'], 'N0', 1)
    R = require_int(merged['R'], 'R', 1)
    try:
        make_grid(T, N0, R)
    except GridError as e:
        raise ConfigError(str(e), 'N0, R') from e

    drive = require_choice(merged['drive'], DRIVES, 'drive')
    track = require_bool(merged['track_full_filter'], 'track_full_filter')
    if drive == 'filter' and not track:
        raise ConfigError("drive 'filter' generates the photocurrent from the full filter; "
                          "set track_full_filter to true or use drive 'wiener'", 'track_full_filter')

    cfg = RunConfig(
        preset=name,
        n_atoms=n_atoms,
        mu=require_float(merged['mu'], 'mu', positive=True),
        control=require_choice(merged['control'], CONTROLS, 'control'),
        control_axis=require_choice(merged['control_axis'], ('y', 'z'), 'control_axis'),
        control_scale=require_float(merged['control_scale'], 'control_scale'),
        control_rate=require_float(merged['control_rate'], 'control_rate', nonnegative=True),
        control_amplitude=require_float(merged['control_amplitude'], 'control_amplitude'),
        initial_mixtures=mixtures,
        initial_matrix=matrix,
        T=T,
        N0=N0,
        R=R,
        projection_scheme=require_choice(merged['projection_scheme'], PROJECTION_SCHEMES, 'projection_scheme'),
        filter_scheme=require_choice(merged['filter_scheme'], FILTER_SCHEMES, 'filter_scheme'),
        unnormalized_scheme=require_choice(merged['unnormalized_scheme'], UNNORMALIZED_SCHEMES, 'unnormalized_scheme'),
        drive=drive,
        track_full_filter=track,
        zero_noise=require_bool(merged['zero_noise'], 'zero_noise'),
        seed_base=require_int(merged['seed_base'], 'seed_base', 0, 2 ** 63 - 1),
        n_trajectories=require_int(merged['n_trajectories'], 'n_trajectories', 1),
        checkpoint_stride=require_int(merged['checkpoint_stride'], 'checkpoint_stride', 1),
        pointer_index=require_int(merged['pointer_index'], 'pointer_index', 0, 2 ** n_atoms - 1),
        workers=require_int(merged['workers'], 'workers', 1),
        output_dir=str(merged['output_dir']),
    )
    logger.debug("Loaded configuration for preset %s", name)
    return cfg


def load_config_file(path, preset=None, overrides=None):
    """Read a JSON configuration file; I/O errors propagate with the path."""
    with open(path, 'r', encoding='utf-8') as f:
        return load_config(f.read(), preset, overrides)


# ============================================================================
# Scenario construction
# ============================================================================

class Scenario(NamedTuple):
    seed: int
    model: object
    rho0: np.ndarray
    sub: object
    scheme: str
    amplitude: float


def resolve_scheme(cfg, model):
    """
    Pick the theta filter: 'auto' selects 'commuting' when the control operator
    commutes with L, else 'reduced'.
    """
    control = model.hamiltonian
    commuting = control.kind == 'zero' or bool(
        np.max(np.abs(commutator(control.base, model.L))) <= 1e-9)
    if cfg.projection_scheme == 'auto':
        return 'commuting' if commuting else 'reduced'
    if cfg.projection_scheme == 'commuting' and not commuting:
        raise ConfigError("control operator does not commute with the coupling", 'projection_scheme')
    return cfg.projection_scheme


def build_scenario(cfg, index):
    """Model, initial state and submanifold of trajectory `index`."""
    seed = cfg.seed(index)
    control = cfg.control_signal(setup_generator(seed))
    model = build_spin_model(cfg.n_atoms, cfg.mu, control, cfg.control_axis)
    rho0 = cfg.initial_state()
    try:
        sub = default_submanifold(model, rho0)
    except ManifoldError as e:
        raise ConfigError(str(e), 'initial_state') from e
    return Scenario(seed, model, rho0, sub, resolve_scheme(cfg, model), model.hamiltonian.amplitude)


def advance_theta(scheme, sub, model, state, t, dt, dY):
    if scheme == 'commuting':
        return projection_filter_step_commuting(sub, state, dt, dY)
    if scheme == 'reduced':
        return projection_filter_step_reduced(sub, model, state, t, dt, dY)
    return projection_filter_step_general(sub, model, state, dt, dY)


FULL_FILTER_STEPS = {
    'kraus': quantum_filter_step_kraus,
    'euler': quantum_filter_step,
}

UNNORMALIZED_STEPS = {
    'ito': unnormalized_filter_step,
    'stratonovich': unnormalized_filter_step_stratonovich,
}


# ============================================================================
# Trajectories
# ============================================================================

@dataclass
class TrajectoryRecord:
    """Checkpoint series of one trajectory; truncated at a step failure."""
    index: int
    seed: int
    scheme: str
    amplitude: float
    times: np.ndarray
    theta: np.ndarray
    rho_diag: np.ndarray
    rhotilde_diag: np.ndarray
    frob_err: np.ndarray
    pred_res: np.ndarray
    corr1: np.ndarray
    corr2: np.ndarray
    tr_pr: np.ndarray
    logtrace: np.ndarray
    pointer_distance: np.ndarray
    observations: np.ndarray
    min_eigenvalue: float = math.inf
    max_trace_error: float = 0.0
    steps: int = 0
    failed: bool = False
    failure: Optional[str] = None
    failure_time: Optional[float] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def rows(self):
        return len(self.times)

    @staticmethod
    def columns(m, n):
        return (['t']
                + [f'theta_{i + 1}' for i in range(m)]
                + [f'rho_diag_{i + 1}' for i in range(n)]
                + [f'rhotilde_diag_{i + 1}' for i in range(n)]
                + ['frob_err', 'pred_res', 'corr1', 'corr2', 'trPR', 'logtrace'])

    def table(self):
        """Rows in the column order of columns()."""
        scalars = np.column_stack([self.frob_err, self.pred_res, self.corr1, self.corr2,
                                   self.tr_pr, self.logtrace]) if self.rows else np.empty((0, 6))
        return np.hstack([self.times[:, None], self.theta, self.rho_diag, self.rhotilde_diag, scalars])


class _Checkpoints:
    def __init__(self, m, n):
        self.m, self.n = m, n
        self.data = {k: [] for k in ('times', 'theta', 'rho_diag', 'rhotilde_diag', 'frob_err', 'pred_res',
                                     'corr1', 'corr2', 'tr_pr', 'logtrace', 'pointer_distance')}

    def add(self, sc, pointer_index, t, theta, full, unnorm):
        rb = manifold_state(sc.sub, theta.theta).rho_bar
        tilde = normalize(rb).rho
        report = residual_report(sc.sub, sc.model, t, theta.theta)
        distance, off_pointer = pointer_convergence_metrics([tilde if full is None else full.rho], [rb], pointer_index)
        row = self.data
        row['times'].append(t)
        row['theta'].append(np.array(theta.theta, dtype=float))
        row['rhotilde_diag'].append(np.diag(tilde).real.copy())
        if full is not None:
            row['rho_diag'].append(np.diag(full.rho).real.copy())
            row['frob_err'].append(frobenius_error(full.rho, tilde))
            row['pointer_distance'].append(distance[0])
        else:
            row['rho_diag'].append(np.full(self.n, np.nan))
            row['frob_err'].append(np.nan)
            row['pointer_distance'].append(np.nan)
        row['pred_res'].append(report.prediction_norm)
        row['corr1'].append(report.correction1_norm)
        row['corr2'].append(report.correction2_norm)
        row['tr_pr'].append(off_pointer[0])
        row['logtrace'].append(unnorm.log_trace if unnorm is not None else float(np.log(np.trace(rb).real)))

    def arrays(self):
        shapes = {'theta': (0, self.m), 'rho_diag': (0, self.n), 'rhotilde_diag': (0, self.n)}
        out = {}
        for k, v in self.data.items():
            out[k] = np.array(v, dtype=float) if v else np.empty(shapes.get(k, (0,)))
        return out


def run_trajectory(cfg, index):
    """
    Simulate one trajectory: the full filter generates the photocurrent
    (or dY = dW under the wiener drive) and the unnormalized and projection
    filters consume the identical dY sequence.

    Step failures are caught, logged and recorded; the record is truncated
    at the last checkpoint before the failure.
    """
    sc = build_scenario(cfg, index)
    grid = cfg.grid()
    dt = grid.coarse_step
    count = grid.coarse_count
    noise = np.zeros(count) if cfg.zero_noise else wiener_path(sc.seed, grid).coarse_increments
    checkpoints = set(cfg.checkpoint_indices())
    p = cfg.pointer_index

    l = sc.model.L
    l_sum = l + l.conj().T
    full = FilterState(sc.rho0.copy(), float(np.linalg.eigvalsh(sc.rho0)[0])) if cfg.track_full_filter else None
    unnorm = UnnormalizedState(sc.rho0.copy()) if cfg.track_full_filter else None
    full_step = FULL_FILTER_STEPS[cfg.filter_scheme]
    unnorm_step = UNNORMALIZED_STEPS[cfg.unnormalized_scheme]
    theta = ThetaState.origin(sc.sub.m)

    recorder = _Checkpoints(sc.sub.m, cfg.dim)
    observations = np.empty(count)
    elapsed = {'full': 0.0, 'unnormalized': 0.0, 'projection': 0.0}
    min_eig = full.min_eigenvalue if full is not None else math.inf
    max_trace_err = 0.0
    failure, failure_time, steps = None, None, 0

    recorder.add(sc, p, 0.0, theta, full, unnorm)
    for k in range(count):
        t = k * dt
        try:
            if cfg.drive == 'filter':
                dY = np.trace(full.rho @ l_sum).real * dt + noise[k]
            else:
                dY = noise[k]
            observations[k] = dY

            if full is not None:
                start = time.perf_counter()
                full = full_step(sc.model, full, t, dt, dY)
                elapsed['full'] += time.perf_counter() - start
                min_eig = min(min_eig, full.min_eigenvalue)
                max_trace_err = max(max_trace_err, abs(np.trace(full.rho).real - 1.0))

                start = time.perf_counter()
                unnorm = unnorm_step(sc.model, unnorm, t, dt, dY)
                elapsed['unnormalized'] += time.perf_counter() - start

            start = time.perf_counter()
            theta = advance_theta(sc.scheme, sc.sub, sc.model, theta, t, dt, dY)
            elapsed['projection'] += time.perf_counter() - start
            steps = k + 1

            if k + 1 in checkpoints:
                recorder.add(sc, p, (k + 1) * dt, theta, full, unnorm)
        except StepFailure as exc:
            failure = str(exc)
            failure_time = exc.t if exc.t is not None else t
            logger.warning("Trajectory %d (seed %d) failed at t=%.6g: %s", index, sc.seed, failure_time, exc,
                           extra={'trajectory': index, 'seed': sc.seed, 'status': 'failed'})
            break

    timings = {name: (total / steps if steps else 0.0) for name, total in elapsed.items()
               if cfg.track_full_filter or name == 'projection'}
    return TrajectoryRecord(
        index=int(index),
        seed=sc.seed,
        scheme=sc.scheme,
        amplitude=float(sc.amplitude),
        observations=observations[:steps],
        min_eigenvalue=float(min_eig),
        max_trace_error=float(max_trace_err),
        steps=steps,
        failed=failure is not None,
        failure=failure,
        failure_time=failure_time,
        timings=timings,
        **recorder.arrays(),
    )


class ThetaEnsemble(NamedTuple):
    """Checkpointed theta paths of many trajectories under the reference measure."""
    times: np.ndarray
    thetas: np.ndarray
    sub: object
    model: object
    seeds: np.ndarray


def simulate_theta_ensemble(cfg, indices=None):
    """
    Advance only the theta filter for many trajectories driven by dY = dW.

    The commuting update is applied to all paths at once; other schemes step
    each trajectory in turn. Paths are the per-trajectory seeded paths used by
    run_trajectory. A failing trajectory leaves NaN from its failure onward.

    Raises:
        ConfigError: unless drive is 'wiener'
    """
    if cfg.drive != 'wiener':
        raise ConfigError("theta-only ensembles need drive 'wiener'", 'drive')
    indices = list(range(cfg.n_trajectories)) if indices is None else list(indices)
    if not indices:
        raise ValueError("theta ensemble needs at least one trajectory")
    grid = cfg.grid()
    dt = grid.coarse_step
    cps = np.array(cfg.checkpoint_indices())
    first = build_scenario(cfg, indices[0])
    seeds = np.array([cfg.seed(i) for i in indices], dtype=np.int64)

    def increments(seed):
        return np.zeros(grid.coarse_count) if cfg.zero_noise else wiener_path(seed, grid).coarse_increments

    if first.scheme == 'commuting':
        dW = np.stack([increments(s) for s in seeds])
        steps = commuting_increment(first.sub.coupling_eigenvalues, dt, dW)
        paths = np.concatenate([np.zeros((len(seeds), 1, first.sub.m)), np.cumsum(steps, axis=1)], axis=1)
        thetas = paths[:, cps, :]
    else:
        thetas = np.full((len(seeds), len(cps), first.sub.m), np.nan)
        wanted = {int(c): j for j, c in enumerate(cps)}
        for row, i in enumerate(indices):
            sc = first if row == 0 else build_scenario(cfg, i)
            state = ThetaState.origin(sc.sub.m)
            thetas[row, 0] = state.theta
            try:
                for k, dW in enumerate(increments(sc.seed)):
                    state = advance_theta(sc.scheme, sc.sub, sc.model, state, k * dt, dt, dW)
                    if k + 1 in wanted:
                        thetas[row, wanted[k + 1]] = state.theta
            except StepFailure as exc:
                logger.warning("Theta path %d failed: %s", i, exc, extra={'trajectory': i, 'status': 'failed'})
    return ThetaEnsemble(cps * dt, thetas, first.sub, first.model, seeds)


# ============================================================================
# Ensembles
# ============================================================================

class EnsembleResult(NamedTuple):
    records: List[TrajectoryRecord]
    summary: Dict[str, float]
    timings: Dict[str, float]
    wall_seconds: float

    @property
    def failure_fraction(self):
        return self.summary.get('failure_fraction', 0.0)


def _fold(values):
    """Associative fold of per-trajectory moment states."""
    return reduce(RunningMoments.merge, (RunningMoments().push(v) for v in values), RunningMoments())


def summarize(records):
    """
    Ensemble summary: failure counts and mean/stderr of terminal quantities,
    including e^{theta_i(T)} for the martingale comparison against 1.
    Failed trajectories count toward failure_fraction only.
    """
    n = len(records)
    n_failed = sum(1 for r in records if r.failed)
    done = [r for r in records if not r.failed and r.rows]
    summary = {
        'n_trajectories': n,
        'n_failed': n_failed,
        'failure_fraction': n_failed / n if n else 0.0,
    }
    if not done:
        return summary

    exp_theta = _fold(np.exp(r.theta[-1]) for r in done)
    for i in range(done[0].theta.shape[1]):
        summary[f'exp_theta_{i + 1}_mean'] = float(np.asarray(exp_theta.mean)[i])
        summary[f'exp_theta_{i + 1}_stderr'] = float(np.asarray(exp_theta.stderr)[i])
    for name, attr in (('frob_err', 'frob_err'), ('pred_res', 'pred_res'),
                       ('trPR', 'tr_pr'), ('logtrace', 'logtrace'), ('pointer_distance', 'pointer_distance')):
        moments = _fold(getattr(r, attr)[-1] for r in done)
        summary[f'{name}_final_mean'] = float(moments.mean)
        summary[f'{name}_final_stderr'] = float(moments.stderr)
    summary['frob_err_max'] = float(max(np.max(r.frob_err) for r in done))
    summary['corr_max'] = float(max(max(np.max(r.corr1), np.max(r.corr2)) for r in done))
    summary['min_eigenvalue'] = float(min(r.min_eigenvalue for r in done))
    summary['max_trace_error'] = float(max(r.max_trace_error for r in done))
    return summary


def _mean_timings(records):
    names = sorted({name for r in records for name in r.timings})
    timings = {f'{name}_step_seconds': float(np.mean([r.timings[name] for r in records if name in r.timings]))
               for name in names}
    if timings.get('projection_step_seconds') and 'full_step_seconds' in timings:
        timings['full_to_projection_ratio'] = timings['full_step_seconds'] / timings['projection_step_seconds']
    return timings


def run_ensemble(cfg, workers=None, run_id=None):
    """
    Run all trajectories, in a process pool when workers > 1.

    Records are merged in index order, so the worker count never changes the
    numeric output.
    """
    workers = workers or cfg.workers
    run_id = run_id or f"{cfg.preset}-{cfg.seed_base}"
    indices = range(cfg.n_trajectories)
    start = time.perf_counter()
    logger.info(f"Running {cfg.n_trajectories} trajectories with {workers} worker(s)",
                extra={'run_id': run_id, 'preset': cfg.preset})

    if workers <= 1:
        records = [run_trajectory(cfg, i) for i in indices]
    else:
        chunksize = max(1, cfg.n_trajectories // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_trajectory, repeat(cfg), indices, chunksize=chunksize))

    for r in records:
        log_trajectory(logger, run_id, r.index, r.seed, 'failed' if r.failed else 'completed',
                       preset=cfg.preset)
    wall = time.perf_counter() - start
    return EnsembleResult(records, summarize(records), _mean_timings(records), wall)


# ============================================================================
# Persistence
# ============================================================================

def build_id():
    """git-describe style identifier of the code that produced a run."""
    try:
        out = subprocess.run(
            ['git', 'describe', '--always', '--dirty', '--tags'],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True, text=True, timeout=5, check=True,
        )
        return out.stdout.strip() or 'unknown'
    except (OSError, subprocess.SubprocessError):
        return 'unknown'


def format_value(x):
    if isinstance(x, (bool, np.bool_)):
        return 'true' if x else 'false'
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), '.17g')


def write_csv(path, header, rows):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(x) for x in row])
    return path


def write_outputs(result, cfg, out_dir=None):
    """
    Write trajectory_NNNNN.csv per record, summary.csv and metadata.json.

    Returns:
        list of written paths

    Raises:
        OSError: with the offending path
    """
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for r in result.records:
        header = TrajectoryRecord.columns(r.theta.shape[1], r.rho_diag.shape[1])
        paths.append(write_csv(os.path.join(out_dir, f'trajectory_{r.index:05d}.csv'), header, r.table()))

    keys = list(result.summary)
    paths.append(write_csv(os.path.join(out_dir, 'summary.csv'), keys, [[result.summary[k] for k in keys]]))

    metadata = {
        'config': cfg.to_dict(),
        'basis_ordering': BASIS_ORDERING,
        'rng_algorithm': RNG_ALGORITHM,
        'seed_base': cfg.seed_base,
        'seeds': [r.seed for r in result.records],
        'schemes': sorted({r.scheme for r in result.records}),
        'amplitudes': [r.amplitude for r in result.records],
        'failures': [{'index': r.index, 'time': r.failure_time, 'reason': r.failure}
                     for r in result.records if r.failed],
        'logtrace_source': 'unnormalized_filter' if cfg.track_full_filter else 'manifold_state',
        'build_id': build_id(),
        'timings': dict(result.timings, wall_seconds=result.wall_seconds),
    }
    meta_path = os.path.join(out_dir, 'metadata.json')
    with open(meta_path, 'w', encoding='utf-8') as f:
        json.dump(metadata, f, indent=2, sort_keys=True)
    paths.append(meta_path)
    logger.info(f"Wrote {len(paths)} files to {out_dir}")
    return paths


# ============================================================================
# Benchmark
# ============================================================================

class BenchRow(NamedTuple):
    n_atoms: int
    dim: int
    m: int
    full_step_seconds: float
    projection_step_seconds: float

    @property
    def ratio(self):
        return self.full_step_seconds / self.projection_step_seconds


BENCH_COLUMNS = ('n_atoms', 'dim', 'm', 'full_step_seconds', 'projection_step_seconds', 'ratio')


def _median_step_seconds(step, state, steps, repeats, dt, dW):
    samples = []
    for _ in range(repeats):
        x = state
        start = time.perf_counter()
        for k in range(steps):
            x = step(x, k * dt, dW[k])
        samples.append((time.perf_counter() - start) / steps)
    return float(np.median(samples))


def bench(max_atoms=4, steps=256, seed=0, repeats=3, filter_scheme='kraus'):
    """
    Per-step wall-clock cost of the full filter against the reduced theta filter
    on the exp-decay y-control model, for 1..max_atoms atoms. Each cost is the
    median over `repeats` timed passes of `steps` steps.
    """
    if not 1 <= max_atoms <= MAX_ATOMS:
        raise ConfigError(f"must lie in 1..{MAX_ATOMS}", 'max_atoms')
    require_int(steps, 'steps', 1)
    require_int(repeats, 'repeats', 1)
    full_step = FULL_FILTER_STEPS[require_choice(filter_scheme, FILTER_SCHEMES, 'filter_scheme')]
    grid = make_grid(1.0, 2 * steps, 2)
    dW = wiener_path(seed, grid).coarse_increments
    dt = grid.coarse_step
    rows = []
    for n_atoms in range(1, max_atoms + 1):
        model = build_spin_model(n_atoms, 1.0, ControlSignal.exp_decay(5.0, 5.0), 'y')
        mixtures = [np.diag([0.75, 0.25])] + [np.diag([0.5, 0.5])] * (n_atoms - 1)
        rho0 = product_state(*mixtures)
        sub = default_submanifold(model, rho0)

        full_time = _median_step_seconds(
            lambda x, t, dy: full_step(model, x, t, dt, dy), FilterState(rho0), steps, repeats, dt, dW)
        projection_time = _median_step_seconds(
            lambda x, t, dy: projection_filter_step_reduced(sub, model, x, t, dt, dy),
            ThetaState.origin(sub.m), steps, repeats, dt, dW)

        row = BenchRow(n_atoms, model.dim, sub.m, full_time, projection_time)
        logger.info(f"bench N={n_atoms}: full {full_time:.3e}s/step, projection {projection_time:.3e}s/step, "
                    f"ratio {row.ratio:.2f}")
        rows.append(row)
    return rows


def write_bench(rows, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    return write_csv(os.path.join(out_dir, 'bench.csv'), BENCH_COLUMNS, [tuple(r) + (r.ratio,) for r in rows])


# Export functions
__all__ = [
    'BASIS_ORDERING',
    'PRESETS',
    'DEFAULTS',
    'FAILURE_LIMIT',
    'RunConfig',
    'load_config',
    'load_config_file',
    'Scenario',
    'resolve_scheme',
    'build_scenario',
    'advance_theta',
    'TrajectoryRecord',
    'run_trajectory',
    'ThetaEnsemble',
    'simulate_theta_ensemble',
    'EnsembleResult',
    'summarize',
    'run_ensemble',
    'build_id',
    'write_outputs',
    'BenchRow',
    'bench',
    'write_bench',
]
