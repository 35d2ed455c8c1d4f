#!/usr/bin/env python3
"""
Exponential quantum projection filter toolkit
Command-line entry point: run scenarios, check invariants, benchmark filter cost
"""

import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from acceptance import SUITES, run_checks
from logging_config import setup_logging
from monitoring import (
    decrement_active_runs,
    increment_active_runs,
    record_step_time,
    record_trajectory,
    setup_prometheus,
    setup_sentry,
    write_metrics,
)
from runner import FAILURE_LIMIT, PRESETS, bench, load_config, load_config_file, run_ensemble, write_bench, write_outputs
from validation import ConfigError, sanitize_filename

logger = logging.getLogger('projfilter')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURES = 2


def build_parser():
    parser = argparse.ArgumentParser(
        prog='projfilter',
        description='Quantum filter and exponential projection filter simulations',
    )
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='simulate a scenario and write CSV/metadata outputs')
    run.add_argument('config', nargs='?', help='JSON run configuration')
    run.add_argument('--preset', choices=sorted(PRESETS), help='built-in scenario')
    run.add_argument('--seed', type=int, dest='seed_base', help='seed of trajectory 0')
    run.add_argument('--trajectories', type=int, dest='n_trajectories', help='number of trajectories')
    run.add_argument('--workers', type=int, help='worker processes')
    run.add_argument('--out', dest='output_dir', help='output directory')
    run.add_argument('--zero-noise', action='store_true', default=None, dest='zero_noise',
                     help='debug: replace Wiener increments by zero')

    check = sub.add_parser('check', help='run the invariant suites')
    check.add_argument('--suite', action='append', choices=sorted(SUITES), dest='suites',
                       help='suite to run (repeatable, default all)')
    check.add_argument('--quick', action='store_true', help='smaller ensembles')

    bench_cmd = sub.add_parser('bench', help='per-step cost of full and projection filters')
    bench_cmd.add_argument('--max-atoms', type=int, default=4)
    bench_cmd.add_argument('--steps', type=int, default=256)
    bench_cmd.add_argument('--repeats', type=int, default=3, help='timed passes per size; the median is reported')
    bench_cmd.add_argument('--out', dest='output_dir', help='directory for bench.csv')
    return parser


def command_run(args):
    overrides = {
        'seed_base': args.seed_base,
        'n_trajectories': args.n_trajectories,
        'workers': args.workers,
        'output_dir': args.output_dir,
        'zero_noise': args.zero_noise,
    }
    if args.config:
        cfg = load_config_file(args.config, args.preset, overrides)
    else:
        cfg = load_config(None, args.preset, overrides)

    run_id = sanitize_filename(f"{cfg.preset}-{cfg.seed_base}")
    setup_prometheus()
    increment_active_runs()
    try:
        result = run_ensemble(cfg, run_id=run_id)
    finally:
        decrement_active_runs()

    for record in result.records:
        record_trajectory('failed' if record.failed else 'completed')
        for name, seconds in record.timings.items():
            record_step_time(name, seconds)
    write_outputs(result, cfg)
    write_metrics(cfg.output_dir)

    summary = result.summary
    print(f"{summary['n_trajectories']} trajectories, {summary['n_failed']} failed -> {cfg.output_dir}")
    if result.failure_fraction > FAILURE_LIMIT:
        logger.error(f"{result.failure_fraction:.1%} of trajectories failed",
                     extra={'run_id': run_id, 'status': 'failed'})
        return EXIT_FAILURES
    return EXIT_OK


def command_check(args):
    results = run_checks(args.suites, quick=args.quick)
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURES


def command_bench(args):
    out_dir = args.output_dir or os.getenv('PROJFILTER_OUTPUT_DIR', 'runs')
    setup_prometheus()
    rows = bench(args.max_atoms, args.steps, repeats=args.repeats)
    print('n_atoms  dim  m  full_s/step  projection_s/step  ratio')
    for row in rows:
        record_step_time('full', row.full_step_seconds)
        record_step_time('projection', row.projection_step_seconds)
        print(f"{row.n_atoms:7d} {row.dim:4d} {row.m:2d} {row.full_step_seconds:12.3e} "
              f"{row.projection_step_seconds:18.3e} {row.ratio:6.2f}")
    write_bench(rows, out_dir)
    write_metrics(out_dir)
    return EXIT_OK


COMMANDS = {'run': command_run, 'check': command_check, 'bench': command_bench}


def main(argv=None):
    """
    Parse arguments and dispatch.

    Returns:
        exit code: 0 success, 1 usage/config/I-O error, 2 trajectory or suite failures
    """
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    setup_logging()
    setup_sentry()
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"I/O error on {e.filename or '?'}: {e.strerror or e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
