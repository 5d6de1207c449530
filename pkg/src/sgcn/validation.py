"""Input validation helpers shared by the estimator, CLI, and server."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .ink import Trajectory, as_trajectory


def check_trajectories(X) -> list[Trajectory]:
    """Coerce a sequence of trajectories / stroke lists into Trajectory objects."""
    if X is None or len(X) == 0:
        raise DataError("X must contain at least one trajectory")
    out = []
    for i, item in enumerate(X):
        try:
            out.append(item if isinstance(item, Trajectory) else as_trajectory(item))
        except DataError as e:
            raise DataError(f"X[{i}]: {e}") from e
    return out


def check_labels(y, n: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1 or len(arr) != n:
        raise DataError(f"y must be one label per trajectory ({n}), got shape {arr.shape}")
    return arr
