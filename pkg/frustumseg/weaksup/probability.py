from typing import Union

import numpy as np

from ..exceptions import ShapeMismatchError
from ..network.model import CamMap
from ..volume import FrustumVolume, normalize_01


def upsample_cam(cam: CamMap, shape) -> np.ndarray:
    """Trilinear view of a stride-4 CAM at input resolution."""
    return cam.upsample(tuple(int(n) for n in shape))


def build_probability_map(
    vesselness: np.ndarray,
    cam: np.ndarray,
    image: Union[FrustumVolume, np.ndarray],
) -> np.ndarray:
    """Fuse vesselness, upsampled CAM and normalized intensity into a catheter probability map.

    Args:
        vesselness (np.ndarray): Line-filter response in [0, 1].
        cam (np.ndarray): CAM upsampled to the volume shape, in [0, 1].
        image: The volume; raw arrays are taken as already normalized to [0, 1].

    Raises:
        ShapeMismatchError: If the three factors differ in shape.

    Returns:
        np.ndarray: The elementwise product, f32 in [0, 1].
    """
    intensity = normalize_01(image) if isinstance(image, FrustumVolume) else np.asarray(image)
    vesselness = np.asarray(vesselness)
    cam = np.asarray(cam)
    if not (vesselness.shape == cam.shape == intensity.shape):
        raise ShapeMismatchError(
            f"Probability factors disagree in shape: vesselness {vesselness.shape}, "
            f"cam {cam.shape}, intensity {intensity.shape}."
        )
    product = vesselness.astype(np.float32) * cam.astype(np.float32) * intensity.astype(np.float32)
    return np.clip(product, 0.0, 1.0)
