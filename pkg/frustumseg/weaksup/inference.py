"""Localize, decode a few ROIs and stitch them into a full-volume mask."""
from typing import List, Optional, Union

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel

from ..network.checkpoint import load_checkpoint
from ..network.model import FrustumSegNet, extract_rois
from ..volume import BoundingBox3, FrustumVolume, MaskVolume, normalize_01

logger = logging.get_logger(__name__)


class InferenceResult(BaseModel):
    mask: MaskVolume
    probability: np.ndarray
    rois: List[BoundingBox3]
    fallback: bool = False

    class Config:
        arbitrary_types_allowed = True


def stitch(shape, rois: List[BoundingBox3], probs: List[np.ndarray]) -> np.ndarray:
    """Per-voxel maximum of ROI probabilities; zero outside every ROI."""
    out = np.zeros(shape, dtype=np.float32)
    for roi, prob in zip(rois, probs):
        np.maximum(out[roi.slices], prob, out=out[roi.slices])
    return out


def infer(
    net: FrustumSegNet,
    volume: Union[FrustumVolume, np.ndarray],
    m_rois: int = 2,
    tau_loc: float = 0.5,
    threshold: float = 0.5,
    fallback_roi: Optional[BoundingBox3] = None,
) -> InferenceResult:
    """Segment one volume through the localization and ROI-decoder path.

    Args:
        net (FrustumSegNet): Trained network; left in eval mode.
        volume: A frustum volume, or an array already normalized to [0, 1].
        m_rois (int, optional): ROIs to decode. Defaults to 2.
        tau_loc (float, optional): Localization threshold. Defaults to 0.5.
        threshold (float, optional): Probability threshold of the mask. Defaults to 0.5.
        fallback_roi (BoundingBox3, optional): Decoded when nothing is localized.
            Defaults to the whole volume.

    Returns:
        InferenceResult: Binary mask, stitched probabilities and the ROIs used.
    """
    image = normalize_01(volume) if isinstance(volume, FrustumVolume) else np.asarray(volume)
    shape = image.shape
    net.eval()
    net.encode(image)
    loc, _ = net.localize()
    rois = extract_rois(loc, tau_loc, m_rois, shape, net.config.roi_margin_vox)
    fallback = not rois
    if fallback:
        rois = [fallback_roi or BoundingBox3.whole(shape)]
        logger.warning(f"No localization component above {tau_loc}; decoding {rois[0].to_list()}.")
    probs = [net.decode_roi(roi)[0] for roi in rois]
    probability = stitch(shape, rois, probs)
    mask = MaskVolume(data=(probability >= threshold).astype(np.uint8))
    return InferenceResult(mask=mask, probability=probability, rois=rois, fallback=fallback)


def infer_checkpoint(path: str, volume: FrustumVolume, **kwargs) -> InferenceResult:
    return infer(load_checkpoint(path), volume, **kwargs)
