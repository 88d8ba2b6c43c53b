"""Small input-validation helpers used at API boundaries."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def as_float_matrix(name: str, value, n_cols: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise ShapeError(f"{name} must have {n_cols} columns, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    return arr


def as_bool_vector(name: str, value, length: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=bool)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a 1-D array, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ShapeError(f"{name} must have length {length}, got {arr.shape[0]}")
    return arr


def check_positive_int(name: str, value) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value <= 0:
        raise ContractError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_nonnegative_int(name: str, value) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 0:
        raise ContractError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def check_unit_interval(name: str, value, upper_open: bool = False) -> float:
    v = float(value)
    if not np.isfinite(v) or v < 0.0 or v > 1.0 or (upper_open and v == 1.0):
        bound = "[0, 1)" if upper_open else "[0, 1]"
        raise ContractError(f"{name} must lie in {bound}, got {value!r}")
    return v
