#!/usr/bin/env python3
"""
Monitoring and observability for the projection filter toolkit
Prometheus textfile metrics and Sentry error tracking
"""

import logging
import os

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

logger = logging.getLogger(__name__)

# Try to import Sentry SDK (optional dependency)
try:
    import sentry_sdk
    from sentry_sdk.integrations.logging import LoggingIntegration
    SENTRY_AVAILABLE = True
except ImportError as e:
    logger.debug(f"Sentry SDK not available: {e}")
    SENTRY_AVAILABLE = False

registry = None
trajectory_counter = None
step_duration = None
active_runs = None


def filter_sensitive_data(event, hint):
    """
    Filter sensitive data before sending to Sentry.

    Args:
        event: Sentry event dictionary
        hint: Additional context

    Returns:
        Modified event or None to drop the event
    """
    if 'extra' in event:
        for key in list(event['extra'].keys()):
            if any(sensitive in key.lower() for sensitive in ['dsn', 'token', 'secret', 'password']):
                event['extra'][key] = '[REDACTED]'
    return event


def setup_sentry():
    """
    Initialize Sentry error tracking if enabled.

    Returns:
        bool: True if Sentry was initialized successfully
    """
    if not os.getenv('SENTRY_ENABLED', 'False').lower() == 'true':
        logger.debug("Sentry monitoring disabled")
        return False

    if not SENTRY_AVAILABLE:
        logger.warning("SENTRY_ENABLED is set but sentry-sdk is not installed")
        return False

    sentry_dsn = os.getenv('SENTRY_DSN')
    if not sentry_dsn:
        logger.warning("SENTRY_DSN not set, skipping Sentry initialization")
        return False

    try:
        sentry_logging = LoggingIntegration(
            level=logging.INFO,  # Capture info and above as breadcrumbs
            event_level=logging.ERROR  # Send errors as events
        )
        sentry_sdk.init(
            dsn=sentry_dsn,
            integrations=[sentry_logging],
            environment=os.getenv('SENTRY_ENVIRONMENT', 'development'),
            release=f"projfilter@{os.getenv('VERSION', '1.0.0')}",
            before_send=filter_sensitive_data,
            attach_stacktrace=True,
            send_default_pii=False,
        )
        logger.info("Sentry error tracking enabled")
        return True

    except Exception as e:
        logger.error(f"Failed to initialize Sentry: {e}")
        return False


def setup_prometheus(force=False):
    """
    Create the run metrics in a private registry if enabled.

    Args:
        force: enable regardless of PROMETHEUS_ENABLED

    Returns:
        CollectorRegistry or None when disabled
    """
    global registry, trajectory_counter, step_duration, active_runs

    if not force and not os.getenv('PROMETHEUS_ENABLED', 'False').lower() == 'true':
        logger.debug("Prometheus metrics disabled")
        return None

    registry = CollectorRegistry()
    trajectory_counter = Counter(
        'projfilter_trajectories_total',
        'Trajectories simulated',
        ['status'],
        registry=registry
    )
    step_duration = Histogram(
        'projfilter_step_seconds',
        'Wall-clock time of one filter step',
        ['filter'],
        buckets=(1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2),
        registry=registry
    )
    active_runs = Gauge(
        'projfilter_active_runs',
        'Ensemble runs in progress',
        registry=registry
    )
    logger.info("Prometheus textfile metrics enabled")
    return registry


def record_trajectory(status):
    """Count a finished trajectory by status (completed/failed)."""
    if trajectory_counter:
        trajectory_counter.labels(status=status).inc()


def record_step_time(filter_name, seconds):
    """
    Record the mean per-step time of one filter.

    Args:
        filter_name: full/unnormalized/projection
        seconds: wall-clock seconds per step
    """
    if step_duration:
        step_duration.labels(filter=filter_name).observe(seconds)


def increment_active_runs():
    if active_runs:
        active_runs.inc()


def decrement_active_runs():
    if active_runs:
        active_runs.dec()


def write_metrics(out_dir):
    """
    Write the registry to <out_dir>/metrics.prom.

    Returns:
        Path written, or None when metrics are disabled
    """
    if registry is None:
        return None
    path = os.path.join(out_dir, 'metrics.prom')
    write_to_textfile(path, registry)
    logger.info(f"Metrics written to {path}")
    return path


# Export monitoring functions
__all__ = [
    'setup_sentry',
    'setup_prometheus',
    'record_trajectory',
    'record_step_time',
    'increment_active_runs',
    'decrement_active_runs',
    'write_metrics',
]
