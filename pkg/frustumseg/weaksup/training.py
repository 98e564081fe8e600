"""Three-phase weakly supervised training from loose bounding boxes."""
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel, root_validator, validator

from ..densecrf import CrfParams
from ..exceptions import TrainingDivergedError
from ..frangi import VesselnessParams, vesselness
from ..metrics import confusion, dsc
from ..network.checkpoint import save_checkpoint
from ..network.model import STRIDE, FrustumSegNet, NetworkConfig, extract_rois, pyramid_shapes
from ..network.optim import AMSGrad
from ..sources.dataset import DatasetItem, VolumeDataset
from ..utils import file_sha256, hash_files
from ..volume import BoundingBox3, MaskVolume, normalize_01
from .inference import infer
from .losses import LossBundle, loc_target, loss_cls, loss_loc, loss_seg
from .manifest import RunManifest
from .probability import build_probability_map, upsample_cam
from .pseudo_labels import LabelMode, PseudoLabelState, mode_pseudo_label, update_pseudo_label
from .sampling import sample_regions

logger = logging.get_logger(__name__)

CHECKPOINT_NAME = "checkpoint.nwt"
MANIFEST_NAME = "manifest.json"


class TrainConfig(BaseModel):
    n_regions: int = 16
    m_rois_train: int = 10
    m_rois_test: int = 2
    pos_weight: float = 10.0
    lr: float = 1e-4
    phase1_epochs: int = 100
    phase2_epochs: int = 30
    phase3_min: int = 20
    phase3_max: int = 50
    update_period: int = 4
    u_threshold: float = 0.15
    eta: float = 0.8
    tau_loc: float = 0.5
    label_mode: LabelMode = "proposed"
    joint: bool = True
    bbox_jitter_vox: int = 4
    plateau_delta: float = 0.005
    plateau_window: int = 8
    workers: int = 1
    seed: int = 0
    vesselness: VesselnessParams = VesselnessParams()
    crf: CrfParams = CrfParams()

    @validator(
        "n_regions",
        "m_rois_train",
        "m_rois_test",
        "phase1_epochs",
        "phase2_epochs",
        "phase3_min",
        "phase3_max",
        "update_period",
        "plateau_window",
        "workers",
    )
    def _at_least_one(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1, got {v}")
        return v

    @validator("lr", "pos_weight")
    def _positive(cls, v, field):
        if v <= 0:
            raise ValueError(f"{field.name} must be > 0, got {v}")
        return v

    @validator("eta", "u_threshold", "tau_loc")
    def _unit_interval(cls, v, field):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{field.name} must be in [0, 1], got {v}")
        return v

    @root_validator(skip_on_failure=True)
    def _phase3_bounds(cls, values):
        if values["phase3_min"] > values["phase3_max"]:
            raise ValueError("phase3_min must not exceed phase3_max")
        return values

    @classmethod
    def desk(cls, **kwargs) -> "TrainConfig":
        """Short schedule for CPU-sized phantom runs."""
        defaults = dict(
            lr=1e-3,
            phase1_epochs=12,
            phase2_epochs=6,
            phase3_min=4,
            phase3_max=10,
            update_period=2,
        )
        return cls(**{**defaults, **kwargs})


class EpochRecord(BaseModel):
    phase: int
    epoch: int
    l_cls: float
    l_loc: float
    l_seg: float
    l_joint: float
    val_dice: Optional[float] = None


class _Volume:
    """Per-volume training state."""

    def __init__(self, item: DatasetItem, params: VesselnessParams):
        self.item = item
        self.image = normalize_01(item.volume)
        self.vesselness = vesselness(self.image, params)
        self.label: Optional[MaskVolume] = None
        self.target: Optional[np.ndarray] = None
        self.state: Optional[PseudoLabelState] = None
        self.fallback = False

    @property
    def shape(self):
        return self.image.shape

    def set_label(self, label: MaskVolume) -> None:
        self.label = label
        self.target = loc_target(label.data, STRIDE)


def _mean_bundle(bundles: Sequence[LossBundle]) -> LossBundle:
    if not bundles:
        return LossBundle()
    return LossBundle.of(
        l_cls=float(np.mean([b.l_cls for b in bundles])),
        l_loc=float(np.mean([b.l_loc for b in bundles])),
        l_seg=float(np.mean([b.l_seg for b in bundles])),
    )


def plateaued(history: Sequence[float], window: int, delta: float) -> bool:
    """Whether the best score of the last ``window`` entries improved by less than ``delta``."""
    if len(history) <= window:
        return False
    return max(history[-window:]) - max(history[:-window]) < delta


class Trainer:
    """
    Trains a network in three phases: region classification, localization, then
    joint segmentation with periodic pseudo-label refreshes.

    Args:
        train_items (List[DatasetItem]): Volumes with loose boxes. Masks are used only
            in label mode "full".
        val_items (List[DatasetItem]): Volumes with true masks for the plateau criterion.
        config (TrainConfig): Schedule and weak-supervision settings.
        net_config (NetworkConfig): Architecture.
    """

    def __init__(
        self,
        train_items: List[DatasetItem],
        val_items: List[DatasetItem],
        config: TrainConfig = None,
        net_config: NetworkConfig = None,
    ):
        if not train_items:
            raise ValueError("Training needs at least one volume.")
        self.config = config or TrainConfig()
        self.net = FrustumSegNet(net_config or NetworkConfig())
        self.optimizer = AMSGrad(self.net.named_parameters(), lr=self.config.lr)
        self.rng = np.random.default_rng(self.config.seed)
        self.val_items = [item for item in val_items if item.mask is not None]
        self.history: List[EpochRecord] = []
        self.stop_reason = ""
        logger.info(f"Computing vesselness for {len(train_items)} training volumes.")
        self.volumes = self._map(lambda item: _Volume(item, self.config.vesselness), train_items)

    def _map(self, fn: Callable, items: Sequence) -> list:
        if self.config.workers == 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))

    # Steps

    def _cls_loss(self, vol: _Volume) -> float:
        samples = sample_regions(vol.item.bbox, vol.shape, self.config.n_regions, self.rng)
        _, s4 = pyramid_shapes(vol.shape)
        total = 0.0
        for sample in samples:
            logits, cache = self.net.classify_region(sample.box.to_stride(STRIDE, s4))
            value, grad = loss_cls(logits, sample.label)
            self.net.classify_backward(grad / len(samples), cache)
            total += value
        return total / len(samples)

    def _loc_loss(self, vol: _Volume):
        loc, cache = self.net.localize()
        value, grad = loss_loc(loc, vol.target, self.config.pos_weight)
        self.net.localize_backward(grad, cache)
        return value, loc

    def _shifted_box(self, box: BoundingBox3, shape) -> BoundingBox3:
        j = self.config.bbox_jitter_vox
        start = [
            int(np.clip(s + self.rng.integers(-j, j + 1), 0, n - size))
            for s, size, n in zip(box.start, box.shape, shape)
        ]
        return BoundingBox3(start=tuple(start), end=tuple(a + b for a, b in zip(start, box.shape)))

    def train_rois(self, vol: _Volume, loc: np.ndarray, epoch: int) -> List[BoundingBox3]:
        """The dilated loose box, then localized components, then jittered boxes early on."""
        m = self.config.m_rois_train
        margin = int(self.rng.integers(0, self.config.bbox_jitter_vox + 1))
        rois = [vol.item.bbox.dilate(margin, vol.shape)]
        if m > 1:
            rois += extract_rois(
                loc, self.config.tau_loc, m - 1, vol.shape, self.net.config.roi_margin_vox
            )
        if epoch < self.config.phase3_min:
            while len(rois) < m:
                rois.append(self._shifted_box(vol.item.bbox, vol.shape))
        return rois[:m]

    def _seg_loss(self, vol: _Volume, loc: np.ndarray, epoch: int) -> float:
        rois = self.train_rois(vol, loc, epoch)
        total = 0.0
        for roi in rois:
            pred, cache = self.net.decode_roi(roi)
            value, grad = loss_seg(pred, vol.label.data[roi.slices])
            self.net.decode_backward(grad / len(rois), cache)
            total += value
        return total / len(rois)

    def step(self, vol: _Volume, phase: int, epoch: int = 0) -> LossBundle:
        """One optimizer step on one volume."""
        self.net.train()
        self.net.zero_grad()
        self.net.encode(vol.image)
        l_cls = l_loc = l_seg = 0.0
        if phase == 3:
            loc, _ = self.net.localize()
            l_seg = self._seg_loss(vol, loc, epoch)
            if self.config.joint:
                l_cls = self._cls_loss(vol)
                l_loc, _ = self._loc_loss(vol)
        else:
            l_cls = self._cls_loss(vol)
            if phase == 2:
                l_loc, _ = self._loc_loss(vol)
        bundle = LossBundle.of(l_cls=l_cls, l_loc=l_loc, l_seg=l_seg)
        if not np.isfinite(bundle.l_joint):
            raise TrainingDivergedError(
                f"Loss became non-finite in phase {phase}, epoch {epoch} on {vol.item.id}: {bundle}."
            )
        self.net.backward()
        self.optimizer.step()
        logger.debug(f"{vol.item.id} phase {phase}: {bundle}")
        return bundle

    def _epoch(self, phase: int, epoch: int) -> LossBundle:
        order = self.rng.permutation(len(self.volumes))
        return _mean_bundle([self.step(self.volumes[i], phase, epoch) for i in order])

    # Pseudo labels

    def _probability(self, vol: _Volume):
        """Probability map and upsampled CAM from the cached pyramid."""
        cam = upsample_cam(self.net.cam(), vol.shape)
        return build_probability_map(vol.vesselness, cam, vol.image), cam

    def initialize_labels(self) -> None:
        """CAMs from the phase-1 classifier and the initial pseudo label of every volume."""
        cfg = self.config
        maps = []
        for vol in self.volumes:
            self.net.eval()
            self.net.encode(vol.image)
            maps.append(self._probability(vol))

        def label(job):
            vol, (U, cam) = job
            return mode_pseudo_label(
                cfg.label_mode,
                vol.item.bbox,
                U,
                cam,
                vol.vesselness,
                vol.item.volume,
                cfg.crf,
                cfg.u_threshold,
                gt=vol.item.mask,
            )

        results = self._map(label, list(zip(self.volumes, maps)))
        for vol, (U, _), (mask, fallback) in zip(self.volumes, maps, results):
            vol.set_label(mask)
            vol.fallback = fallback
            if cfg.label_mode == "proposed":
                vol.state = PseudoLabelState(
                    U_prev=U, y_current=mask, bbox=vol.item.bbox, eta=cfg.eta
                )
        flagged = sum(v.fallback for v in self.volumes)
        logger.info(
            f"Initial '{cfg.label_mode}' pseudo labels: mean {np.mean([v.label.count for v in self.volumes]):.0f} "
            f"voxels per volume, {flagged} fallbacks."
        )

    def update_labels(self, epoch: int) -> None:
        """Blend fresh CAM evidence and predictions into every pseudo label."""
        cfg = self.config
        jobs = []
        for vol in self.volumes:
            predicted = infer(
                self.net,
                vol.image,
                m_rois=cfg.m_rois_train,
                tau_loc=cfg.tau_loc,
                fallback_roi=vol.item.bbox,
            )
            U_t, _ = self._probability(vol)
            jobs.append((vol, U_t, predicted.mask))

        def refresh(job):
            vol, U_t, y_hat = job
            return update_pseudo_label(
                vol.state, U_t, y_hat, vol.item.volume, cfg.crf, cfg.u_threshold, epoch
            )

        for (vol, _, _), label in zip(jobs, self._map(refresh, jobs)):
            vol.set_label(label)
            vol.fallback = vol.state.fallback
        logger.info(f"Refreshed pseudo labels after epoch {epoch + 1}.")

    def validate(self) -> Optional[float]:
        if not self.val_items:
            return None
        scores = []
        for item in self.val_items:
            pred = infer(self.net, item.volume, m_rois=self.config.m_rois_test, tau_loc=self.config.tau_loc)
            scores.append(dsc(confusion(pred.mask, item.mask)))
        return float(np.mean(scores))

    # Schedule

    def _record(self, phase: int, epoch: int, bundle: LossBundle, val: Optional[float] = None) -> None:
        self.history.append(EpochRecord(phase=phase, epoch=epoch, val_dice=val, **bundle.dict()))
        val_text = "" if val is None else f", val Dice {val:.4f}"
        logger.info(
            f"Phase {phase} epoch {epoch + 1}: cls {bundle.l_cls:.4f}, loc {bundle.l_loc:.4f}, "
            f"seg {bundle.l_seg:.4f}, joint {bundle.l_joint:.4f}{val_text}."
        )

    def fit(self) -> FrustumSegNet:
        cfg = self.config
        for epoch in range(cfg.phase1_epochs):
            self._record(1, epoch, self._epoch(1, epoch))
        self.initialize_labels()

        for epoch in range(cfg.phase2_epochs):
            self._record(2, epoch, self._epoch(2, epoch))

        val_scores: List[float] = []
        self.stop_reason = "phase3_max"
        for epoch in range(cfg.phase3_max):
            bundle = self._epoch(3, epoch)
            if cfg.label_mode == "proposed" and (epoch + 1) % cfg.update_period == 0:
                self.update_labels(epoch)
            val = self.validate()
            self._record(3, epoch, bundle, val)
            if val is None:
                continue
            val_scores.append(val)
            if epoch + 1 >= cfg.phase3_min and plateaued(val_scores, cfg.plateau_window, cfg.plateau_delta):
                self.stop_reason = "plateau"
                break
        self.net.eval()
        logger.info(f"Training finished ({self.stop_reason}) after {len(self.history)} epochs.")
        return self.net


class TrainResult(BaseModel):
    checkpoint_path: str
    manifest_path: str
    history: List[EpochRecord]
    stop_reason: str


def train(
    dataset: VolumeDataset,
    config: TrainConfig = None,
    net_config: NetworkConfig = None,
    out_dir: str = ".",
    manifest: RunManifest = None,
) -> TrainResult:
    """Train on the dataset's train split and write a checkpoint and run manifest.

    The manifest is written on failure too, with the error recorded.

    Raises:
        TrainingDivergedError: If a loss becomes non-finite.
    """
    config = config or TrainConfig()
    net_config = net_config or NetworkConfig()
    manifest = manifest or RunManifest(command="train")
    manifest = manifest.copy(
        update={
            "seed": config.seed,
            "config": {**manifest.config, "train": config.dict(), "network": net_config.dict()},
            "input_hashes": hash_files(dataset.files()),
        }
    )
    checkpoint_path = os.path.join(out_dir, CHECKPOINT_NAME)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    started = time.perf_counter()
    trainer = None
    try:
        train_items = dataset.items("train", with_masks=config.label_mode == "full")
        trainer = Trainer(train_items, dataset.items("val"), config, net_config)
        net = trainer.fit()
        save_checkpoint(net, checkpoint_path)
    except Exception as e:
        history = [r.dict() for r in trainer.history] if trainer else []
        manifest.copy(
            update={"status": "error", "error": f"{type(e).__name__}: {e}", "history": history}
        ).write(manifest_path)
        raise
    manifest = manifest.copy(
        update={
            "history": [r.dict() for r in trainer.history],
            "output_hashes": {CHECKPOINT_NAME: file_sha256(checkpoint_path)},
            "timings": {"train_s": round(time.perf_counter() - started, 3)},
        }
    )
    manifest.write(manifest_path)
    return TrainResult(
        checkpoint_path=checkpoint_path,
        manifest_path=manifest_path,
        history=trainer.history,
        stop_reason=trainer.stop_reason,
    )
