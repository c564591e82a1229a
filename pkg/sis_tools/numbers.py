"""Helper functions for dealing with Numbers."""

import numpy as np
import numpy.typing as npt

from sis_tools.errors import NonFiniteError


def strictly_between(x: float, pair: tuple[float, float]) -> bool:
    """Return True if x is strictly inside the open interval given by ``pair``.

    The pair can be given in either order.
    """
    small = min(pair)
    big = max(pair)
    return small < x < big


def require_open_interval(name: str, x: float, low: float, high: float) -> None:
    """Raise ValueError unless low < x < high."""
    if not strictly_between(x, (low, high)):
        raise ValueError(f"{name}={x} must lie strictly between {low} and {high}")


def require_finite(what: str, values: npt.ArrayLike) -> None:
    """Raise NonFiniteError at the first non-finite entry of ``values``."""
    arr = np.asarray(values, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        idx = int(bad[0])
        raise NonFiniteError(f"{what} is not finite at node {idx}", index=idx)

