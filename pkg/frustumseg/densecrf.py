"""Binary dense CRF with truncated-window mean-field inference.

Pairwise potentials follow the fully connected Gaussian-kernel CRF:

* smoothness ``w_smooth * exp(-|p_i - p_j|^2 / 2 theta_gamma^2)``
* appearance ``w_bilateral * exp(-|p_i - p_j|^2 / 2 theta_alpha^2 - |I_i - I_j|^2 / 2 theta_beta^2)``

restricted to neighbours within a cubic window of ``window_radius_vox``. Each kernel is
symmetrically normalized (``D^-1/2 K D^-1/2`` with D the kernel's row sums) before
weighting, and compatibility is Potts with unit penalty.
"""
from itertools import product
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel, validator

from .exceptions import ShapeMismatchError
from .volume import FrustumVolume, MaskVolume

logger = logging.get_logger(__name__)

P_FOREGROUND = 0.9
P_BACKGROUND = 0.1

# Bilateral kernels are cached across iterations below this many elements.
_KERNEL_CACHE_LIMIT = 16_000_000


class CrfParams(BaseModel):
    w_smooth: float = 3.0
    theta_gamma_vox: float = 3.0
    w_bilateral: float = 5.0
    theta_alpha_vox: float = 5.0
    theta_beta_intensity: float = 20.0
    iterations: int = 10
    window_radius_vox: int = 5
    unary_threshold: float = 0.5
    tolerance: float = 1e-5
    normalize: bool = True

    @validator("w_smooth", "w_bilateral")
    def _non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be >= 0, got {v}")
        return v

    @validator("theta_gamma_vox", "theta_alpha_vox", "theta_beta_intensity")
    def _positive(cls, v, field):
        if v <= 0:
            raise ValueError(f"{field.name} must be > 0, got {v}")
        return v

    @validator("window_radius_vox", "iterations")
    def _at_least_one(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1, got {v}")
        return v


def unary_from_probability(U: np.ndarray, tau_u: float) -> np.ndarray:
    """Soft two-class unary from a thresholded probability map.

    Returns:
        np.ndarray: Shape (2,) + U.shape; index 0 background, 1 foreground,
            each the negative log of that class's probability.
    """
    p = np.where(np.asarray(U) >= tau_u, P_FOREGROUND, P_BACKGROUND)
    return np.stack([-np.log(1.0 - p), -np.log(p)]).astype(np.float64)


def _softmax_neg(energy: np.ndarray) -> np.ndarray:
    shifted = -energy - (-energy).max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def _half_offsets(radius: int, shape) -> List[Tuple[int, int, int]]:
    """Offsets with a lexicographically positive sign; each pair is visited once."""
    out = []
    for o in product(range(-radius, radius + 1), repeat=3):
        if o <= (0, 0, 0):
            continue
        if any(abs(d) >= n for d, n in zip(o, shape)):
            continue
        out.append(o)
    return out


def _pair_slices(offset, shape):
    dst, src = [], []
    for d, n in zip(offset, shape):
        if d >= 0:
            dst.append(slice(0, n - d))
            src.append(slice(d, n))
        else:
            dst.append(slice(-d, n))
            src.append(slice(0, n + d))
    return tuple(dst), tuple(src)


class _Kernels:
    """Per-offset kernel values and their row sums for one image."""

    def __init__(self, image: np.ndarray, params: CrfParams):
        self.image = image
        self.params = params
        self.offsets = _half_offsets(params.window_radius_vox, image.shape)
        self.slices = [_pair_slices(o, image.shape) for o in self.offsets]
        self.spatial = [float(np.dot(o, o)) for o in self.offsets]
        pairs = sum(
            int(np.prod([s.stop - s.start for s in dst])) for dst, _ in self.slices
        )
        self._cache: Optional[List[np.ndarray]] = [] if pairs <= _KERNEL_CACHE_LIMIT else None
        if self._cache is not None:
            self._cache = [self._bilateral(k) for k in range(len(self.offsets))]
        self.norm_smooth = self._row_sums(lambda k: self._smooth(k))
        self.norm_bilateral = self._row_sums(lambda k: self.bilateral(k))

    def _smooth(self, k: int) -> float:
        return float(np.exp(-self.spatial[k] / (2.0 * self.params.theta_gamma_vox**2)))

    def _bilateral(self, k: int) -> np.ndarray:
        dst, src = self.slices[k]
        diff = self.image[dst] - self.image[src]
        return np.exp(
            -self.spatial[k] / (2.0 * self.params.theta_alpha_vox**2)
            - diff**2 / (2.0 * self.params.theta_beta_intensity**2)
        )

    def bilateral(self, k: int) -> np.ndarray:
        return self._cache[k] if self._cache is not None else self._bilateral(k)

    def _row_sums(self, kernel) -> np.ndarray:
        sums = np.zeros(self.image.shape)
        for k, (dst, src) in enumerate(self.slices):
            value = kernel(k)
            sums[dst] += value
            sums[src] += value
        return sums

    def message(self, q: np.ndarray, kernel, norm: np.ndarray, normalize: bool) -> np.ndarray:
        """Sum over window neighbours j of kernel(i, j) * q_j, per label."""
        if normalize:
            scale = 1.0 / np.sqrt(np.where(norm > 0, norm, 1.0))
            q = q * scale
        out = np.zeros_like(q)
        for k, (dst, src) in enumerate(self.slices):
            value = kernel(k)
            out[(slice(None),) + dst] += value * q[(slice(None),) + src]
            out[(slice(None),) + src] += value * q[(slice(None),) + dst]
        if normalize:
            out *= scale
        return out


def mean_field(
    unary: np.ndarray,
    image: Union[np.ndarray, FrustumVolume],
    params: CrfParams = None,
    on_iteration: Callable[[int, np.ndarray], None] = None,
) -> Tuple[MaskVolume, np.ndarray]:
    """Mean-field inference for the binary dense CRF.

    Args:
        unary (np.ndarray): Shape (2, D, A, E) negative-log unaries.
        image: Intensities in raw units, used by the appearance kernel.
        params (CrfParams, optional): Kernel weights and bandwidths. Defaults to CrfParams().
        on_iteration (Callable, optional): Called as `on_iteration(i, q)` with the full
            (2, D, A, E) marginals, i = 0 for the initial softmax and i >= 1 after each update.
            Defaults to None.

    Raises:
        ShapeMismatchError: If the unary and image disagree in shape.

    Returns:
        (mask, q_fg): argmax labels and the foreground marginal, f64.
    """
    params = params or CrfParams()
    image = np.asarray(image.data if hasattr(image, "data") else image, dtype=np.float64)
    unary = np.asarray(unary, dtype=np.float64)
    if unary.shape != (2,) + image.shape:
        raise ShapeMismatchError(f"Unary {unary.shape} does not match image {image.shape}.")

    q = _softmax_neg(unary)
    if on_iteration is not None:
        on_iteration(0, q)
    use_pairwise = params.w_smooth > 0 or params.w_bilateral > 0
    kernels = _Kernels(image, params) if use_pairwise else None
    for iteration in range(params.iterations):
        if not use_pairwise:
            break
        pairwise = np.zeros_like(q)
        if params.w_smooth > 0:
            pairwise += params.w_smooth * kernels.message(
                q, kernels._smooth, kernels.norm_smooth, params.normalize
            )
        if params.w_bilateral > 0:
            pairwise += params.w_bilateral * kernels.message(
                q, kernels.bilateral, kernels.norm_bilateral, params.normalize
            )
        # Potts: a label pays for the messages of the other label
        q_new = _softmax_neg(unary + pairwise[::-1])
        residual = float(np.abs(q_new - q).max())
        q = q_new
        if on_iteration is not None:
            on_iteration(iteration + 1, q)
        logger.debug(f"Mean-field iteration {iteration + 1}: max|dQ| = {residual:.3e}.")
        if residual < params.tolerance:
            break

    mask = MaskVolume(data=(q[1] > q[0]).astype(np.uint8))
    return mask, q[1]
