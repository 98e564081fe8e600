"""Initial and iteratively refined pseudo labels from a loose bounding box."""
from typing import Literal, Optional, Tuple, Union

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel, validator

from ..densecrf import CrfParams, mean_field, unary_from_probability
from ..exceptions import ShapeMismatchError
from ..volume import BoundingBox3, FrustumVolume, MaskVolume

logger = logging.get_logger(__name__)

LabelMode = Literal[
    "bbox", "bbox_cam", "bbox_lf", "bbox_cam_lf", "bbox_cam_lf_crf", "proposed", "full"
]
LABEL_MODES = ("bbox", "bbox_cam", "bbox_lf", "bbox_cam_lf", "bbox_cam_lf_crf", "proposed", "full")


def _image_array(image: Union[FrustumVolume, np.ndarray]) -> np.ndarray:
    return np.asarray(image.data if isinstance(image, FrustumVolume) else image, dtype=np.float64)


def _inside_box(array: np.ndarray, bbox: BoundingBox3) -> np.ndarray:
    out = np.zeros_like(array)
    out[bbox.slices] = array[bbox.slices]
    return out


def crf_in_box(
    prob: np.ndarray,
    image: Union[FrustumVolume, np.ndarray],
    bbox: BoundingBox3,
    crf_params: CrfParams,
    tau_u: float,
) -> np.ndarray:
    """Dense-CRF labels of ``prob`` restricted to the box.

    Mean field runs only on the box grown by the CRF window, not on the whole volume,
    so voxels farther out never send messages. Labels outside the box are zero.
    """
    shape = prob.shape
    window = bbox.dilate(crf_params.window_radius_vox, shape)
    unary = unary_from_probability(_inside_box(prob, bbox)[window.slices], tau_u)
    labels, _ = mean_field(unary, _image_array(image)[window.slices], crf_params)
    full = np.zeros(shape, dtype=np.uint8)
    full[window.slices] = labels.data
    return _inside_box(full, bbox)


def threshold_in_box(prob: np.ndarray, bbox: BoundingBox3, tau_u: float) -> np.ndarray:
    return _inside_box((np.asarray(prob) >= tau_u).astype(np.uint8), bbox)


def _refine(
    prob: np.ndarray,
    image,
    bbox: BoundingBox3,
    crf_params: CrfParams,
    tau_u: float,
) -> Tuple[MaskVolume, bool]:
    labels = crf_in_box(prob, image, bbox, crf_params, tau_u)
    if labels.any():
        return MaskVolume(data=labels), False
    fallback = threshold_in_box(prob, bbox, tau_u)
    logger.warning(
        f"Dense CRF produced an empty mask; falling back to thresholding at {tau_u} "
        f"({int(fallback.sum())} voxels)."
    )
    return MaskVolume(data=fallback), True


def initial_pseudo_label(
    U: np.ndarray,
    image: Union[FrustumVolume, np.ndarray],
    bbox: BoundingBox3,
    crf_params: CrfParams = None,
    tau_u: Optional[float] = None,
) -> Tuple[MaskVolume, bool]:
    """First pseudo label: CRF-refined probability map inside the loose box.

    Args:
        U (np.ndarray): Probability map in [0, 1].
        image: Intensities in raw units.
        bbox (BoundingBox3): The loose box; labels never leave it.
        crf_params (CrfParams, optional): CRF settings. Defaults to CrfParams().
        tau_u (float, optional): Unary threshold. Defaults to ``crf_params.unary_threshold``.

    Returns:
        (mask, fallback): The label, and whether the thresholded map replaced an empty CRF result.
    """
    crf_params = crf_params or CrfParams()
    tau_u = crf_params.unary_threshold if tau_u is None else tau_u
    U = np.asarray(U)
    if U.shape != _image_array(image).shape:
        raise ShapeMismatchError(f"Probability map {U.shape} does not match the image.")
    return _refine(U, image, bbox, crf_params, tau_u)


class PseudoLabelState(BaseModel):
    """Per-volume history for the moving-average label update."""

    U_prev: np.ndarray
    y_current: MaskVolume
    bbox: BoundingBox3
    eta: float = 0.8
    epoch_of_last_update: int = 0
    fallback: bool = False

    class Config:
        arbitrary_types_allowed = True
        validate_assignment = True

    @validator("eta")
    def _unit_interval(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {v}")
        return v

    @validator("U_prev")
    def _probability(cls, v):
        v = np.asarray(v, dtype=np.float32)
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("U_prev must lie in [0, 1]")
        return v


def blend_probability(state: PseudoLabelState, U_t: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """eta * U_prev + (1 - eta) * (y_hat * U_t)."""
    eta = np.float32(state.eta)
    current = np.asarray(y_hat, dtype=np.float32) * np.asarray(U_t, dtype=np.float32)
    return eta * state.U_prev + (np.float32(1.0) - eta) * current


def update_pseudo_label(
    state: PseudoLabelState,
    U_t: np.ndarray,
    y_hat: Union[MaskVolume, np.ndarray],
    image: Union[FrustumVolume, np.ndarray],
    crf_params: CrfParams = None,
    tau_u: Optional[float] = None,
    epoch: int = 0,
) -> MaskVolume:
    """Refresh the pseudo label from the history and the current prediction.

    The state's ``U_prev`` becomes the blended map and ``y_current`` the new label.
    """
    crf_params = crf_params or CrfParams()
    tau_u = crf_params.unary_threshold if tau_u is None else tau_u
    y_hat = y_hat.data if isinstance(y_hat, MaskVolume) else np.asarray(y_hat)
    shape = state.U_prev.shape
    if np.shape(U_t) != shape or y_hat.shape != shape:
        raise ShapeMismatchError(
            f"Update inputs {np.shape(U_t)} / {y_hat.shape} do not match the state {shape}."
        )
    blended = blend_probability(state, U_t, y_hat)
    labels, fallback = _refine(blended, image, state.bbox, crf_params, tau_u)
    state.U_prev = blended
    state.y_current = labels
    state.epoch_of_last_update = epoch
    state.fallback = fallback
    return labels


def mode_pseudo_label(
    mode: LabelMode,
    bbox: BoundingBox3,
    U: np.ndarray,
    cam: np.ndarray,
    vesselness: np.ndarray,
    image: Union[FrustumVolume, np.ndarray],
    crf_params: CrfParams,
    tau_u: float,
    gt: Optional[MaskVolume] = None,
) -> Tuple[MaskVolume, bool]:
    """Initial label for one rung of the label-source ablation."""
    shape = np.shape(U)
    if mode == "full":
        if gt is None:
            raise ValueError("Label mode 'full' needs the true mask.")
        return gt, False
    if mode == "bbox":
        box = np.zeros(shape, dtype=np.uint8)
        box[bbox.slices] = 1
        return MaskVolume(data=box), False
    if mode == "bbox_cam":
        return MaskVolume(data=threshold_in_box(cam, bbox, tau_u)), False
    if mode == "bbox_lf":
        return MaskVolume(data=threshold_in_box(vesselness, bbox, tau_u)), False
    if mode == "bbox_cam_lf":
        return MaskVolume(data=threshold_in_box(U, bbox, tau_u)), False
    if mode in ("bbox_cam_lf_crf", "proposed"):
        return initial_pseudo_label(U, image, bbox, crf_params, tau_u)
    raise ValueError(f"Unknown label mode '{mode}'. Choose one of {LABEL_MODES}.")
