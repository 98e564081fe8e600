from .inference import InferenceResult, infer, infer_checkpoint, stitch
from .losses import LossBundle, loc_target, loss_cls, loss_loc, loss_seg
from .manifest import PROVISIONAL_KEYS, RunManifest
from .probability import build_probability_map, upsample_cam
from .pseudo_labels import (
    LABEL_MODES,
    PseudoLabelState,
    initial_pseudo_label,
    mode_pseudo_label,
    update_pseudo_label,
)
from .sampling import RegionSample, sample_regions
from .training import EpochRecord, TrainConfig, Trainer, TrainResult, train
