"""Input validation helpers shared by the library and the estimator facade."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def check_feature_matrix(x, dim: int | None = None, name: str = "features") -> np.ndarray:
    """Coerce to a 2-D float64 array of frame vectors and validate it.

    An empty input is allowed (zero frames) but must still be 2-D with the
    expected feature dimension when `dim` is given.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (frames x dim), got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} has dim {arr.shape[1]}, expected {dim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_token_sequence(tokens, vocab_size: int, name: str = "tokens") -> np.ndarray:
    """Coerce to a 1-D int64 array of label ids in [0, vocab_size)."""
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise ValueError(
            f"{name} contains ids outside [0, {vocab_size}): "
            f"range [{arr.min()}, {arr.max()}]"
        )
    return arr


def check_positive(value, name: str):
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_random_state(seed) -> np.random.Generator:
    """Accept a seed or an existing Generator, return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_in(value, allowed: Sequence, name: str):
    if value not in allowed:
        raise ValueError(f"{name} must be one of {sorted(map(str, allowed))}, got {value!r}")
    return value
