"""Input validation helpers shared by the estimators and simulators."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array


class ConfigError(ValueError):
    """Raised for invalid experiment or model configuration."""


def check_scalar_range(value, name, low=None, high=None, low_inclusive=True, high_inclusive=True):
    """Validate a real scalar against optional bounds and return it as float."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if low is not None:
        bad = value < low if low_inclusive else value <= low
        if bad:
            op = ">=" if low_inclusive else ">"
            raise ValueError(f"{name} must be {op} {low}, got {value}")
    if high is not None:
        bad = value > high if high_inclusive else value >= high
        if bad:
            op = "<=" if high_inclusive else "<"
            raise ValueError(f"{name} must be {op} {high}, got {value}")
    return value


def check_positive_int(value, name, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {value}")
    return int(value)


def check_states(X, n_features):
    """Validate a state batch: 2-D float64, finite, correct width."""
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise ValueError(f"expected states with {n_features} features, got {X.shape[1]}")
    return X


def check_equal_length(*arrays, names=None):
    lengths = [np.shape(a)[-1] for a in arrays]
    if len(set(lengths)) != 1:
        label = ", ".join(names) if names else "inputs"
        raise ValueError(f"length mismatch between {label}: {lengths}")
    return lengths[0]
