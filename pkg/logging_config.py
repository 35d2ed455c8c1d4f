#!/usr/bin/env python3
"""
Logging configuration for the projection filter toolkit
Structured JSON logging with rotation
"""

import json
import logging
import os
import traceback
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler

RUN_FIELDS = ('run_id', 'preset', 'trajectory', 'seed', 'status', 'suite', 'elapsed')


class JSONFormatter(logging.Formatter):
    """JSON formatter for structured logging"""

    def format(self, record):
        """Format log record as JSON"""
        log_data = {
            'timestamp': datetime.now(timezone.utc).isoformat().replace('+00:00', 'Z'),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
            'process': record.process,
        }

        if record.exc_info:
            log_data['exception'] = {
                'type': record.exc_info[0].__name__,
                'message': str(record.exc_info[1]),
                'traceback': traceback.format_exception(*record.exc_info)
            }

        for field in RUN_FIELDS:
            if hasattr(record, field):
                log_data[field] = getattr(record, field)

        return json.dumps(log_data, default=str)


def setup_logging(log_dir=None, level=None):
    """
    Configure structured logging with rotation for a CLI run.

    Args:
        log_dir: directory for the JSON log files (default LOG_DIR or 'logs')
        level: console level name (default LOG_LEVEL or 'INFO')

    Returns:
        Root logger
    """
    log_dir = log_dir or os.getenv('LOG_DIR', 'logs')
    os.makedirs(log_dir, exist_ok=True)

    log_level = (level or os.getenv('LOG_LEVEL', 'INFO')).upper()
    console_level = getattr(logging, log_level, logging.INFO)

    json_formatter = JSONFormatter()
    console_formatter = logging.Formatter(
        '%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    # Application log (JSON, rotating)
    app_handler = RotatingFileHandler(
        os.path.join(log_dir, 'app.json.log'),
        maxBytes=10485760,  # 10MB
        backupCount=10
    )
    app_handler.setFormatter(json_formatter)
    app_handler.setLevel(min(logging.INFO, console_level))

    # Error log (JSON, rotating)
    error_handler = RotatingFileHandler(
        os.path.join(log_dir, 'errors.json.log'),
        maxBytes=10485760,  # 10MB
        backupCount=10
    )
    error_handler.setFormatter(json_formatter)
    error_handler.setLevel(logging.ERROR)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(console_formatter)
    console_handler.setLevel(console_level)

    root_logger = logging.getLogger()
    root_logger.setLevel(min(logging.INFO, console_level))
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
        handler.close()
    root_logger.addHandler(app_handler)
    root_logger.addHandler(error_handler)
    root_logger.addHandler(console_handler)

    return root_logger


def log_trajectory(logger, run_id, index, seed, status, **extra):
    """
    Log a trajectory lifecycle event with structured data.

    Args:
        logger: Logger instance
        run_id: identifier of the ensemble run
        index: trajectory index within the run
        seed: noise seed of the trajectory
        status: started/completed/failed
        **extra: further fields (e.g. preset, elapsed)
    """
    level = logging.WARNING if status == 'failed' else logging.INFO
    logger.log(
        level,
        f"Trajectory {status}: {run_id}/{index}",
        extra={'run_id': run_id, 'trajectory': index, 'seed': seed, 'status': status, **extra}
    )


# Export functions
__all__ = [
    'setup_logging',
    'log_trajectory',
    'JSONFormatter',
]
