"""Input validation helpers used across the package."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

UNIT_ROW_TOL = 1e-4


def as_matrix(x, name: str = "array") -> np.ndarray:
    """Return ``x`` as a 2-D float ndarray, rejecting other ranks."""
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def check_same_rows(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape[0] != b.shape[0]:
        raise DimensionError(
            f"{name_a} has {a.shape[0]} rows but {name_b} has {b.shape[0]}"
        )


def check_unit_rows(arr: np.ndarray, name: str, tol: float = UNIT_ROW_TOL) -> None:
    """Raise ContractError if any row deviates from unit Euclidean norm."""
    if arr.shape[0] == 0:
        return
    norms = np.linalg.norm(np.asarray(arr, dtype=np.float64), axis=-1)
    worst = float(np.max(np.abs(norms - 1.0)))
    if worst > tol:
        row = int(np.argmax(np.abs(norms - 1.0)))
        raise ContractError(
            f"{name} rows must be unit-norm: row {row} has norm {norms[row]:.6g} "
            f"(deviation {worst:.3g} > {tol:g})"
        )


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise ParameterError(f"{name} must be > 0, got {value!r}")
    return float(value)


def check_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values encountered in {context}")
