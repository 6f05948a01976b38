"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

from typing import Any

import numpy as np

from .exceptions import InputError


def check_texts(X: Any, name: str = "X") -> list[str]:
    """Return ``X`` as a list of strings.

    Accepts any 1-D iterable of strings (list, tuple, pandas Series,
    1-D object array).  A bare string is rejected because iterating it
    would silently yield characters.
    """
    if isinstance(X, str):
        raise InputError(f"{name} must be a sequence of strings, not a single string")
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise InputError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if len(arr) == 0:
        raise InputError(f"{name} is empty")
    bad = [i for i, x in enumerate(arr) if not isinstance(x, str)]
    if bad:
        raise InputError(f"{name}[{bad[0]}] is not a string")
    return [str(x) for x in arr]


def check_reward_groups(X: Any) -> np.ndarray:
    """2-D float array, one candidate group per row, at least 2 columns."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise InputError(f"reward groups must be 2-D, got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise InputError("each group needs at least 2 rewards")
    if not np.isfinite(arr).all():
        raise InputError("rewards must be finite")
    return arr


def check_same_length(a: list, b: list, what: str) -> None:
    if len(a) != len(b):
        raise InputError(f"{what}: {len(a)} vs {len(b)}")
