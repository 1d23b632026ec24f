"""Non-learned reference predictors."""

import numpy as np

from .data import PRED_LEN


def constant_velocity(observed, steps: int = PRED_LEN) -> np.ndarray:
    """Repeat the last observed displacement."""
    observed = np.asarray(observed, dtype=np.float64)
    v = observed[-1] - observed[-2]
    return observed[-1] + np.arange(1, steps + 1)[:, None] * v


def linear_extrapolation(observed, steps: int = PRED_LEN) -> np.ndarray:
    """Least-squares line through the observation, per coordinate, evaluated ahead."""
    observed = np.asarray(observed, dtype=np.float64)
    t = np.arange(len(observed), dtype=np.float64)
    A = np.c_[t, np.ones_like(t)]
    coef, *_ = np.linalg.lstsq(A, observed, rcond=None)
    ahead = np.arange(len(observed), len(observed) + steps, dtype=np.float64)
    return np.c_[ahead, np.ones_like(ahead)] @ coef
