"""Central finite-difference gradient checks."""
from typing import Callable, Optional

import numpy as np


def numerical_gradient(
    f: Callable[[], float],
    x: np.ndarray,
    step: float = 1e-3,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``x``, perturbed in place.

    Only the flat ``indices`` are evaluated when given; other entries stay zero.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size) if indices is None else indices:
        old = flat_x[i]
        flat_x[i] = old + step
        plus = f()
        flat_x[i] = old - step
        minus = f()
        flat_x[i] = old
        flat_g[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise |a - n| / max(|a| + |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradient_check(
    f: Callable[[], float],
    x: np.ndarray,
    analytic: np.ndarray,
    step: float = 1e-3,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Relative error between an analytic gradient and central differences.

    Args:
        f: Zero-argument scalar function reading ``x``.
        x (np.ndarray): f64 array the function depends on; restored after each probe.
        analytic (np.ndarray): Gradient to verify, same shape as ``x``.
        step (float, optional): Finite-difference step. Defaults to 1e-3.
        samples (int, optional): Check only this many random entries. Defaults to all.
        rng (np.random.Generator, optional): Source for the sampled entries.

    Returns:
        float: Maximum relative error over the checked entries.
    """
    if samples is not None and samples < x.size:
        rng = rng or np.random.default_rng(0)
        indices = rng.choice(x.size, size=samples, replace=False)
    else:
        indices = np.arange(x.size)
    numeric = numerical_gradient(f, x, step, indices)
    return relative_error(np.asarray(analytic).reshape(-1)[indices], numeric.reshape(-1)[indices])
