"""Small fitting helpers for convergence-order checks."""

import numpy as np


def loglog_slope(x, y):
    """Least-squares slope of log|y| against log x.

    Returns NaN if any |y| is zero or non-finite, since the order is then
    undefined.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if len(x) < 2 or len(x) != len(y):
        raise ValueError("need at least two matching points")
    if np.any(x <= 0):
        raise ValueError("x must be positive")
    if not np.all(np.isfinite(y)) or np.any(y == 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
