from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .flops import FlopsReport, LayerFlops, conv_flops, count_flops, profile_flops
from .gradcheck import gradient_check, numerical_gradient, relative_error
from .model import (
    PROFILE_ALIASES,
    PROFILE_NAMES,
    PROFILES,
    CamMap,
    FrustumSegNet,
    NetworkConfig,
    align_roi,
    compute_cam,
    decoder_shape_trace,
    extract_rois,
    profile_settings,
    pyramid_shapes,
)
from .optim import AMSGrad
