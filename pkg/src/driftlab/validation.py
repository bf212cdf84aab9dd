"""Small input-validation helpers used at module boundaries."""

from __future__ import annotations

from typing import Sequence

import numpy as np

# Fixed per-subsystem salts so one user seed drives independent streams.
SALT_SUBSAMPLE = 1
SALT_SPLIT = 2
SALT_INIT = 3
SALT_BATCH = 4
SALT_NEGATIVE = 5
SALT_SYNTH = 6
SALT_SYNTH_TGT = 7


def rng_from(seed: int | Sequence[int], *salts: int) -> np.random.Generator:
    """Build a Generator from a seed plus fixed integer salts."""
    if isinstance(seed, (int, np.integer)):
        entropy = [int(seed), *salts]
    else:
        entropy = [*(int(s) for s in seed), *salts]
    return np.random.default_rng(entropy)


def check_positive(name: str, value: float) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return value


def check_non_negative(name: str, value: float) -> float:
    if value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return value


def check_in(name: str, value: str, options: Sequence[str]) -> str:
    if value not in options:
        raise ValueError(f"{name} must be one of {sorted(options)}, got {value!r}")
    return value


def check_finite(name: str, array: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite entries")
    return array
