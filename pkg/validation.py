#!/usr/bin/env python3
"""
Input validation for run configuration documents
Strict key checks, typed field coercion and filename sanitizing
"""

import logging
import numbers
import re

logger = logging.getLogger(__name__)

MAX_NAME_LENGTH = 255


class ConfigError(ValueError):
    """Configuration document violates the schema; carries the offending key path."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def reject_unknown(document, allowed, path=''):
    """
    Raise ConfigError for any key of document not in allowed.

    Args:
        document: mapping read from the configuration file
        allowed: iterable of accepted key names
        path: key path prefix for error messages
    """
    if not isinstance(document, dict):
        raise ConfigError(f"expected an object, got {type(document).__name__}", path or '<root>')
    unknown = sorted(set(document) - set(allowed))
    if unknown:
        keys = ', '.join(f"{path}.{k}" if path else k for k in unknown)
        logger.warning(f"Rejected unknown configuration keys: {keys}")
        raise ConfigError(f"unknown key(s): {keys}", path or '<root>')


def require_int(value, path, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(f"expected an integer, got {value!r}", path)
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value}", path)
    if maximum is not None and value > maximum:
        raise ConfigError(f"must be <= {maximum}, got {value}", path)
    return value


def require_float(value, path, positive=False, nonnegative=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"expected a number, got {value!r}", path)
    value = float(value)
    if value != value or value in (float('inf'), float('-inf')):
        raise ConfigError("must be finite", path)
    if positive and not value > 0:
        raise ConfigError(f"must be positive, got {value}", path)
    if nonnegative and value < 0:
        raise ConfigError(f"must be non-negative, got {value}", path)
    return value


def require_bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(f"expected true or false, got {value!r}", path)
    return value


def require_choice(value, choices, path):
    if value not in choices:
        raise ConfigError(f"must be one of {', '.join(choices)}, got {value!r}", path)
    return value


def require_matrix(value, path):
    """Nested list of numbers forming a square matrix."""
    if not isinstance(value, list) or not value or not all(isinstance(row, list) for row in value):
        raise ConfigError("expected a square matrix as a list of rows", path)
    n = len(value)
    for i, row in enumerate(value):
        if len(row) != n:
            raise ConfigError(f"row {i} has {len(row)} entries, expected {n}", path)
        for j, x in enumerate(row):
            require_float(x, f"{path}[{i}][{j}]")
    return [[float(x) for x in row] for row in value]


def sanitize_filename(filename):
    """
    Sanitize a run or preset name for use inside the output directory.

    Args:
        filename: The filename to sanitize

    Returns:
        str: Sanitized filename
    """
    filename = filename.replace('/', '_').replace('\\', '_')
    filename = filename.replace('..', '')
    filename = re.sub(r'[^a-zA-Z0-9._-]', '_', filename)
    return filename[:MAX_NAME_LENGTH] or 'run'


# Export all utilities
__all__ = [
    'ConfigError',
    'reject_unknown',
    'require_int',
    'require_float',
    'require_bool',
    'require_choice',
    'require_matrix',
    'sanitize_filename',
]
