"""Multiscale Frangi vesselness in voxel index space."""
from typing import List, Literal, Tuple, Union

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel, validator
from scipy import ndimage

from .volume import CartesianVolume, FrustumVolume

logger = logging.get_logger(__name__)

EPS = 1e-12
DEGENERATE_LAMBDA = 1e-9
TRUNCATE = 3.0

ArrayLike = Union[np.ndarray, FrustumVolume, CartesianVolume]


class VesselnessParams(BaseModel):
    scales: List[float] = [2.0, 3.0]
    alpha: float = 0.5
    beta: float = 0.5
    c: Union[float, Literal["auto"]] = "auto"
    bright_on_dark: bool = True

    @validator("scales")
    def _positive_scales(cls, v):
        if not v or any(s <= 0 for s in v):
            raise ValueError(f"scales must be non-empty and positive, got {v}")
        return v

    @validator("alpha", "beta")
    def _positive(cls, v, field):
        if v <= 0:
            raise ValueError(f"{field.name} must be > 0, got {v}")
        return v

    @validator("c")
    def _positive_c(cls, v):
        if v != "auto" and v <= 0:
            raise ValueError(f"c must be > 0 or 'auto', got {v}")
        return v


def _as_array(vol: ArrayLike) -> np.ndarray:
    data = vol.data if hasattr(vol, "data") else vol
    return np.asarray(data, dtype=np.float64)


def gaussian_smooth(vol: ArrayLike, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at 3 sigma, reflective boundaries."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    smoothed = ndimage.gaussian_filter(_as_array(vol), sigma=sigma, mode="reflect", truncate=TRUNCATE)
    return smoothed.astype(np.float32)


def _hessian(data: np.ndarray, sigma: float) -> Tuple[np.ndarray, ...]:
    """Scale-normalized Hessian entries (xx, yy, zz, xy, xz, yz) of the smoothed field."""
    smoothed = ndimage.gaussian_filter(data, sigma=sigma, mode="reflect", truncate=TRUNCATE)
    central = np.array([-0.5, 0.0, 0.5])
    second = np.array([1.0, -2.0, 1.0])
    first = [ndimage.correlate1d(smoothed, central, axis=a, mode="reflect") for a in range(3)]
    pure = [ndimage.correlate1d(smoothed, second, axis=a, mode="reflect") for a in range(3)]
    mixed = [
        ndimage.correlate1d(first[i], central, axis=j, mode="reflect")
        for i, j in ((0, 1), (0, 2), (1, 2))
    ]
    scale = sigma**2
    return tuple(h * scale for h in (*pure, *mixed))


def symmetric_eigenvalues(
    a11, a22, a33, a12, a13, a23
) -> np.ndarray:
    """Closed-form eigenvalues of symmetric 3x3 matrices, sorted by absolute value.

    Uses the trigonometric solution of the characteristic cubic. Inputs are
    broadcastable arrays of the six distinct entries; output has a trailing axis of 3.
    """
    a11, a22, a33, a12, a13, a23 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (a11, a22, a33, a12, a13, a23))
    )
    p1 = a12**2 + a13**2 + a23**2
    q = (a11 + a22 + a33) / 3.0
    p2 = (a11 - q) ** 2 + (a22 - q) ** 2 + (a33 - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0, p, 1.0)
    b11, b22, b33 = (a11 - q) / safe_p, (a22 - q) / safe_p, (a33 - q) / safe_p
    b12, b13, b23 = a12 / safe_p, a13 / safe_p, a23 / safe_p
    det_b = (
        b11 * (b22 * b33 - b23 * b23)
        - b12 * (b12 * b33 - b23 * b13)
        + b13 * (b12 * b23 - b22 * b13)
    )
    r = np.clip(det_b / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    eig = np.stack([e1, e2, e3], axis=-1)
    eig = np.where((p > 0)[..., None], eig, q[..., None])
    order = np.argsort(np.abs(eig), axis=-1, kind="stable")
    return np.take_along_axis(eig, order, axis=-1)


def _hessian_eigen64(data: np.ndarray, sigma: float) -> np.ndarray:
    hxx, hyy, hzz, hxy, hxz, hyz = _hessian(data, sigma)
    return symmetric_eigenvalues(hxx, hyy, hzz, hxy, hxz, hyz)


def hessian_eigen(vol: ArrayLike, sigma: float) -> np.ndarray:
    """Per-voxel Hessian eigenvalues (|l1| <= |l2| <= |l3|), scale-normalized by sigma^2.

    Returns:
        np.ndarray: Array of shape vol.shape + (3,), f32.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return _hessian_eigen64(_as_array(vol), sigma).astype(np.float32)


def _frangi_measure(eig: np.ndarray, params: VesselnessParams) -> np.ndarray:
    l1, l2, l3 = eig[..., 0], eig[..., 1], eig[..., 2]
    a1, a2, a3 = np.abs(l1), np.abs(l2), np.abs(l3)
    ra = a2 / (a3 + EPS)
    rb = a1 / (np.sqrt(a2 * a3) + EPS)
    s = np.sqrt(l1**2 + l2**2 + l3**2)

    c = 0.5 * s.max() if params.c == "auto" else float(params.c)
    if c <= 0:
        return np.zeros(l1.shape)
    v = (
        (1.0 - np.exp(-(ra**2) / (2.0 * params.alpha**2)))
        * np.exp(-(rb**2) / (2.0 * params.beta**2))
        * (1.0 - np.exp(-(s**2) / (2.0 * c**2)))
    )
    if params.bright_on_dark:
        v[(l2 > 0) | (l3 > 0)] = 0.0
    else:
        v[(l2 < 0) | (l3 < 0)] = 0.0
    v[a3 < DEGENERATE_LAMBDA] = 0.0
    return v


def vesselness(vol: ArrayLike, params: VesselnessParams = None) -> np.ndarray:
    """Frangi tubularity, maximum over scales.

    Args:
        vol: A volume or raw 3D array.
        params (VesselnessParams, optional): Filter parameters. Defaults to scales {2, 3},
            alpha = beta = 0.5, c = "auto".

    Returns:
        np.ndarray: f32 response in [0, 1], same shape as the input.
    """
    params = params or VesselnessParams()
    data = _as_array(vol)
    response = np.zeros(data.shape)
    for sigma in params.scales:
        response = np.maximum(response, _frangi_measure(_hessian_eigen64(data, sigma), params))
        logger.debug(f"Vesselness scale {sigma}: max response {response.max():.4f}.")
    return np.clip(response, 0.0, 1.0).astype(np.float32)
