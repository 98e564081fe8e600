"""Compact 3D encoder with classification, localization and ROI-decoder heads."""
from typing import Dict, Iterator, List, Literal, Optional, Tuple

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel, validator
from scipy import ndimage

from ..exceptions import EmptyRegionError, NetworkStateError, UndersizedInputError
from ..volume import BoundingBox3
from . import layers

logger = logging.get_logger(__name__)

STRIDE = 4
MIN_INPUT = 16
MIN_ROI = 4
CATHETER = 1

Shape3 = Tuple[int, int, int]
Profile = Literal["compact", "narrow", "paper", "resnet10"]

# compact keeps a 16-wide decoder so desk runs fit on a CPU; pass
# decoder_channels=64 or use resnet10 for the full-width decoder.
PROFILES: Dict[str, Dict] = {
    "compact": {"block_channels": (8, 16, 32, 64, 64), "decoder_channels": 16},
    "narrow": {"block_channels": (8, 8, 12, 16, 16), "decoder_channels": 6},
    "resnet10": {"block_channels": (64, 128, 256, 512, 512), "decoder_channels": 64},
}

# names that resolve to another profile
PROFILE_ALIASES: Dict[str, str] = {"paper": "narrow"}
PROFILE_NAMES = sorted({*PROFILES, *PROFILE_ALIASES})


def profile_settings(name: str) -> Dict:
    """Channel settings of a named profile, aliases included."""
    key = PROFILE_ALIASES.get(name, name)
    if key not in PROFILES:
        raise ValueError(f"Unknown profile '{name}'. Choose one of {PROFILE_NAMES}.")
    return dict(PROFILES[key])


class NetworkConfig(BaseModel):
    block_channels: Tuple[int, int, int, int, int] = (8, 16, 32, 64, 64)
    block2_stride: int = 2
    decoder_channels: int = 64
    in_channels: int = 1
    num_classes: int = 2
    norm_groups: int = 4
    roi_margin_vox: int = 8
    rng_seed: int = 0

    @validator("block_channels")
    def _positive_channels(cls, v):
        if any(c < 1 for c in v):
            raise ValueError(f"block_channels must be positive, got {v}")
        return v

    @validator("block2_stride")
    def _stride_two(cls, v):
        if v != 2:
            raise ValueError(f"block2_stride must be 2 for a total stride of {STRIDE}, got {v}")
        return v

    @validator("num_classes")
    def _binary(cls, v):
        if v != 2:
            raise ValueError(f"num_classes must be 2, got {v}")
        return v

    @validator("decoder_channels", "in_channels", "norm_groups")
    def _at_least_one(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1, got {v}")
        return v

    @classmethod
    def profile(cls, name: Profile, **kwargs) -> "NetworkConfig":
        return cls(**{**profile_settings(name), **kwargs})

    @property
    def fc_width(self) -> Tuple[int, int]:
        return self.block_channels[-1], self.num_classes


class CamMap(BaseModel):
    """Class activation map at stride-4 resolution, normalized to [0, 1]."""

    data: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    def upsample(self, shape: Shape3) -> np.ndarray:
        out, _ = layers.upsample_forward(self.data[None].astype(np.float64), shape)
        return np.clip(out[0], 0.0, 1.0).astype(np.float32)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class _Module:
    def __init__(self, name: str):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def _register(self, key: str, value: np.ndarray) -> None:
        self.params[key] = value
        self.grads[key] = np.zeros_like(value)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)

    def astype(self, dtype) -> None:
        for key in self.params:
            self.params[key] = self.params[key].astype(dtype)
            self.grads[key] = self.grads[key].astype(dtype)

    def named(self) -> Iterator[Tuple[str, np.ndarray, np.ndarray]]:
        for key in self.params:
            yield f"{self.name}.{key}", self.params[key], self.grads[key]


class Conv3d(_Module):
    def __init__(self, name, cin, cout, rng, kernel=3, stride=1, dtype=np.float32):
        super().__init__(name)
        self.stride = stride
        self.pad = kernel // 2
        self._register("weight", he_normal(rng, (cout, cin) + (kernel,) * 3, cin * kernel**3, dtype))
        self._register("bias", np.zeros(cout, dtype=dtype))

    def forward(self, x):
        return layers.conv3d_forward(x, self.params["weight"], self.params["bias"], self.stride, self.pad)

    def backward(self, dout, cache):
        dx, dw, db = layers.conv3d_backward(dout, cache)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class GroupNorm(_Module):
    def __init__(self, name, channels, groups, dtype=np.float32):
        super().__init__(name)
        self.groups = groups
        self._register("gamma", np.ones(channels, dtype=dtype))
        self._register("beta", np.zeros(channels, dtype=dtype))

    def forward(self, x):
        return layers.group_norm_forward(x, self.params["gamma"], self.params["beta"], self.groups)

    def backward(self, dout, cache):
        dx, dgamma, dbeta = layers.group_norm_backward(dout, cache)
        self.grads["gamma"] += dgamma
        self.grads["beta"] += dbeta
        return dx


class Linear(_Module):
    def __init__(self, name, cin, cout, rng, dtype=np.float32):
        super().__init__(name)
        self._register("weight", he_normal(rng, (cout, cin), cin, dtype))
        self._register("bias", np.zeros(cout, dtype=dtype))

    def forward(self, x):
        return layers.linear_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dout, cache):
        dx, dw, db = layers.linear_backward(dout, cache)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class EncoderBlock:
    """conv -> GroupNorm -> ReLU, identity residual when shapes agree."""

    def __init__(self, name, cin, cout, rng, groups, stride=1, pool=False, dtype=np.float32):
        self.pool = pool
        self.conv = Conv3d(f"{name}.conv", cin, cout, rng, stride=stride, dtype=dtype)
        self.norm = GroupNorm(f"{name}.norm", cout, groups, dtype=dtype)
        self.residual = cin == cout and stride == 1

    def modules(self) -> List[_Module]:
        return [self.conv, self.norm]

    def forward(self, x):
        pool_cache = None
        if self.pool:
            x, pool_cache = layers.maxpool3d_forward(x)
        h, conv_cache = self.conv.forward(x)
        h, norm_cache = self.norm.forward(h)
        if self.residual:
            h = h + x
        out, relu_cache = layers.relu_forward(h)
        return out, (pool_cache, conv_cache, norm_cache, relu_cache)

    def backward(self, dout, cache):
        pool_cache, conv_cache, norm_cache, relu_cache = cache
        dh = layers.relu_backward(dout, relu_cache)
        dx = self.conv.backward(self.norm.backward(dh, norm_cache), conv_cache)
        if self.residual:
            dx = dx + dh
        if self.pool:
            dx = layers.maxpool3d_backward(dx, pool_cache)
        return dx


class RoiAlignment(BaseModel):
    """Crop boxes of one ROI on the stride-4, stride-2 and input grids."""

    roi: BoundingBox3
    s4: BoundingBox3
    s2: BoundingBox3
    region: BoundingBox3

    @property
    def output_crop(self) -> Tuple[slice, slice, slice]:
        return tuple(
            slice(s - r, e - r) for s, e, r in zip(self.roi.start, self.roi.end, self.region.start)
        )


def pyramid_shapes(input_shape: Shape3) -> Tuple[Shape3, Shape3]:
    """Spatial shapes of the stride-2 and stride-4 feature maps."""
    s2 = tuple(-(-int(n) // 2) for n in input_shape)
    s4 = tuple(-(-n // 2) for n in s2)
    return s2, s4


def _expand_roi(roi: BoundingBox3, shape: Shape3) -> BoundingBox3:
    start, end = list(roi.start), list(roi.end)
    for axis, n in enumerate(shape):
        if end[axis] - start[axis] < MIN_ROI:
            center = (start[axis] + end[axis]) // 2
            start[axis] = min(max(center - MIN_ROI // 2, 0), n - MIN_ROI)
            end[axis] = start[axis] + MIN_ROI
    return BoundingBox3(start=tuple(start), end=tuple(end))


def align_roi(roi: BoundingBox3, input_shape: Shape3) -> RoiAlignment:
    if not roi.within(input_shape):
        raise EmptyRegionError(f"ROI {roi.to_list()} exceeds the input shape {input_shape}.")
    s2_shape, s4_shape = pyramid_shapes(input_shape)
    grown = _expand_roi(roi, input_shape)
    s4 = grown.to_stride(STRIDE, s4_shape)
    s2 = BoundingBox3(
        start=tuple(2 * a for a in s4.start),
        end=tuple(min(2 * b, n) for b, n in zip(s4.end, s2_shape)),
    )
    region = BoundingBox3(
        start=tuple(2 * a for a in s2.start),
        end=tuple(min(2 * b, int(n)) for b, n in zip(s2.end, input_shape)),
    )
    return RoiAlignment(roi=roi, s4=s4, s2=s2, region=region)


def compute_cam(b5: np.ndarray, fc_weight: np.ndarray, cls: int = CATHETER) -> CamMap:
    """Weighted sum of the final feature maps by one classifier row, min-max normalized.

    An all-equal map normalizes to zeros.
    """
    w = np.asarray(fc_weight, dtype=np.float64)[cls]
    raw = np.tensordot(w, np.asarray(b5, dtype=np.float64), axes=([0], [0]))
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        data = np.zeros(raw.shape, dtype=np.float32)
    else:
        data = ((raw - lo) / (hi - lo)).astype(np.float32)
    return CamMap(data=data)


def extract_rois(
    loc_map: np.ndarray,
    tau_loc: float,
    max_rois: int,
    input_shape: Shape3,
    margin: int = 8,
) -> List[BoundingBox3]:
    """Boxes around 26-connected components of the thresholded localization map.

    Components are ranked by summed probability, scaled to input coordinates,
    dilated by ``margin`` and clamped. Returns an empty list when nothing passes
    the threshold.
    """
    loc_map = np.asarray(loc_map)
    labels, count = ndimage.label(loc_map >= tau_loc, structure=np.ones((3, 3, 3)))
    if count == 0:
        return []
    masses = ndimage.sum(loc_map, labels, index=np.arange(1, count + 1))
    order = np.argsort(-np.asarray(masses), kind="stable")[:max_rois]
    objects = ndimage.find_objects(labels)
    boxes = []
    for idx in order:
        sl = objects[idx]
        box = BoundingBox3(
            start=tuple(min(s.start * STRIDE, int(n) - 1) for s, n in zip(sl, input_shape)),
            end=tuple(min(s.stop * STRIDE, int(n)) for s, n in zip(sl, input_shape)),
        )
        boxes.append(box.dilate(margin, input_shape))
    return boxes


def decoder_shape_trace(config: NetworkConfig, roi_shape: Shape3) -> List[Tuple[str, int, Shape3]]:
    """Static (stage, channels, spatial shape) table of the decoder for one ROI at the origin."""
    roi_shape = tuple(int(n) for n in roi_shape)
    c1, _, c3, _, c5 = config.block_channels
    d = config.decoder_channels
    s2, s4 = pyramid_shapes(roi_shape)
    return [
        ("crop_b5", c5, s4),
        ("up5_conv", d, s4),
        ("concat_b3", d + c3, s4),
        ("fuse3_conv", d, s4),
        ("upsample_s2", d, s2),
        ("up1_conv", d, s2),
        ("concat_b1", d + c1, s2),
        ("fuse1_conv", d, s2),
        ("head", 1, s2),
        ("upsample_input", 1, roi_shape),
        ("crop_roi", 1, roi_shape),
    ]


class FrustumSegNet:
    """The network state: parameters, gradient buffers and cached activations.

    A forward pass is :meth:`encode` followed by any number of head calls. Each head
    returns its output with a cache; its backward method accumulates gradients into
    the feature pyramid, and :meth:`backward` then propagates them through the encoder.
    """

    def __init__(self, config: NetworkConfig = None, dtype=np.float32):
        self.config = config or NetworkConfig()
        self.dtype = dtype
        self.training = True
        rng = np.random.default_rng(self.config.rng_seed)
        c1, c2, c3, c4, c5 = self.config.block_channels
        d = self.config.decoder_channels
        g = self.config.norm_groups
        self.blocks = [
            EncoderBlock("block1", self.config.in_channels, c1, rng, g, stride=2, dtype=dtype),
            EncoderBlock("block2", c1, c2, rng, g, pool=True, dtype=dtype),
            EncoderBlock("block3", c2, c3, rng, g, dtype=dtype),
            EncoderBlock("block4", c3, c4, rng, g, dtype=dtype),
            EncoderBlock("block5", c4, c5, rng, g, dtype=dtype),
        ]
        self.classifier = Linear("classifier", c5, self.config.num_classes, rng, dtype=dtype)
        self.loc_head = Conv3d("loc_head", c5, 1, rng, kernel=1, dtype=dtype)
        self.dec_up5 = Conv3d("decoder.up5", c5, d, rng, dtype=dtype)
        self.dec_fuse3 = Conv3d("decoder.fuse3", d + c3, d, rng, dtype=dtype)
        self.dec_up1 = Conv3d("decoder.up1", d, d, rng, dtype=dtype)
        self.dec_fuse1 = Conv3d("decoder.fuse1", d + c1, d, rng, dtype=dtype)
        self.dec_head = Conv3d("decoder.head", d, 1, rng, kernel=1, dtype=dtype)
        self._reset_cache()

    def modules(self) -> List[_Module]:
        mods = [m for block in self.blocks for m in block.modules()]
        return mods + [
            self.classifier,
            self.loc_head,
            self.dec_up5,
            self.dec_fuse3,
            self.dec_up1,
            self.dec_fuse1,
            self.dec_head,
        ]

    def named_parameters(self) -> List[Tuple[str, np.ndarray, np.ndarray]]:
        return [item for m in self.modules() for item in m.named()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p for name, p, _ in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for module in self.modules():
            for key in module.params:
                value = state[f"{module.name}.{key}"]
                if value.shape != module.params[key].shape:
                    raise ValueError(
                        f"Parameter {module.name}.{key} has shape {value.shape}, "
                        f"expected {module.params[key].shape}."
                    )
                module.params[key][...] = value

    def astype(self, dtype) -> "FrustumSegNet":
        for module in self.modules():
            module.astype(dtype)
        self.dtype = dtype
        self._reset_cache()
        return self

    def zero_grad(self) -> None:
        for module in self.modules():
            module.zero_grad()

    def train(self) -> None:
        self.training = True

    def eval(self) -> None:
        self.training = False
        self._reset_cache()

    def _reset_cache(self) -> None:
        self._input_shape: Optional[Shape3] = None
        self._pyramid: Optional[Dict[str, np.ndarray]] = None
        self._encoder_caches = None
        self._dpyramid: Optional[Dict[str, np.ndarray]] = None

    @property
    def pyramid(self) -> Dict[str, np.ndarray]:
        if self._pyramid is None:
            raise NetworkStateError("No cached feature pyramid; call encode() first.")
        return self._pyramid

    def encode(self, volume: np.ndarray) -> Dict[str, np.ndarray]:
        """Encode a (D, A, E) volume normalized to [0, 1].

        Returns:
            Dict[str, np.ndarray]: Feature maps "b1" (stride 2), "b3" and "b5" (stride 4).
        """
        volume = np.asarray(volume, dtype=self.dtype)
        if volume.ndim != 3 or min(volume.shape) < MIN_INPUT:
            raise UndersizedInputError(
                f"Input shape {volume.shape} is below {MIN_INPUT} voxels on some axis."
            )
        x = volume[None]
        outs, caches = [], []
        for block in self.blocks:
            x, cache = block.forward(x)
            outs.append(x)
            caches.append(cache)
        self._input_shape = tuple(volume.shape)
        self._pyramid = {"b1": outs[0], "b3": outs[2], "b5": outs[4]}
        self._encoder_caches = caches if self.training else None
        self._dpyramid = {k: np.zeros_like(v) for k, v in self._pyramid.items()} if self.training else None
        return self._pyramid

    def _accumulate(self, key: str, grad: np.ndarray) -> None:
        if self._dpyramid is None:
            raise NetworkStateError("Backward requires a forward pass in training mode.")
        self._dpyramid[key] += grad

    def classify_region(self, region: BoundingBox3):
        """Two-class logits for the GAP of B5 over ``region`` (stride-4 coordinates)."""
        b5 = self.pyramid["b5"]
        if not region.within(b5.shape[1:]):
            raise EmptyRegionError(
                f"Region {region.to_list()} is outside the feature map {b5.shape[1:]}."
            )
        pooled, gap_cache = layers.gap_forward(b5, region.slices)
        logits, fc_cache = self.classifier.forward(pooled)
        return logits, (gap_cache, fc_cache)

    def classify_backward(self, dlogits: np.ndarray, cache) -> None:
        gap_cache, fc_cache = cache
        dpooled = self.classifier.backward(np.asarray(dlogits, dtype=self.dtype), fc_cache)
        self._accumulate("b5", layers.gap_backward(dpooled, gap_cache))

    def cam(self, cls: int = CATHETER) -> CamMap:
        return compute_cam(self.pyramid["b5"], self.classifier.params["weight"], cls)

    def localize(self):
        """Voxel localization probabilities at stride 4."""
        logits, conv_cache = self.loc_head.forward(self.pyramid["b5"])
        prob, sig_cache = layers.sigmoid_forward(logits)
        return prob[0], (conv_cache, sig_cache)

    def localize_backward(self, dprob: np.ndarray, cache) -> None:
        conv_cache, sig_cache = cache
        dlogits = layers.sigmoid_backward(np.asarray(dprob, dtype=self.dtype)[None], sig_cache)
        self._accumulate("b5", self.loc_head.backward(dlogits, conv_cache))

    def decode_roi(self, roi: BoundingBox3):
        """Per-voxel foreground probabilities over ``roi`` (input coordinates)."""
        if self._input_shape is None:
            raise NetworkStateError("No cached feature pyramid; call encode() first.")
        align = align_roi(roi, self._input_shape)
        pyr = self.pyramid
        b5c, c5 = layers.crop_forward(pyr["b5"], align.s4.slices)
        b3c, c3 = layers.crop_forward(pyr["b3"], align.s4.slices)
        b1c, c1 = layers.crop_forward(pyr["b1"], align.s2.slices)

        x, u5 = layers.upsample_forward(b5c, b3c.shape[1:])
        x, k_up5 = self.dec_up5.forward(x)
        x, r_up5 = layers.relu_forward(x)
        x, cat3 = layers.concat_forward([x, b3c])
        x, k_fuse3 = self.dec_fuse3.forward(x)
        x, r_fuse3 = layers.relu_forward(x)
        x, u1 = layers.upsample_forward(x, b1c.shape[1:])
        x, k_up1 = self.dec_up1.forward(x)
        x, r_up1 = layers.relu_forward(x)
        x, cat1 = layers.concat_forward([x, b1c])
        x, k_fuse1 = self.dec_fuse1.forward(x)
        x, r_fuse1 = layers.relu_forward(x)
        x, k_head = self.dec_head.forward(x)
        x, u_in = layers.upsample_forward(x, align.region.shape)
        x, sig = layers.sigmoid_forward(x)
        out, crop = layers.crop_forward(x, align.output_crop)
        cache = (
            c5, c3, c1, u5, k_up5, r_up5, cat3, k_fuse3, r_fuse3,
            u1, k_up1, r_up1, cat1, k_fuse1, r_fuse1, k_head, u_in, sig, crop,
        )
        return out[0], cache

    def decode_backward(self, dprob: np.ndarray, cache) -> None:
        (
            c5, c3, c1, u5, k_up5, r_up5, cat3, k_fuse3, r_fuse3,
            u1, k_up1, r_up1, cat1, k_fuse1, r_fuse1, k_head, u_in, sig, crop,
        ) = cache
        dx = layers.crop_backward(np.asarray(dprob, dtype=self.dtype)[None], crop)
        dx = layers.sigmoid_backward(dx, sig)
        dx = layers.upsample_backward(dx, u_in)
        dx = self.dec_head.backward(dx, k_head)
        dx = self.dec_fuse1.backward(layers.relu_backward(dx, r_fuse1), k_fuse1)
        dx, db1 = layers.concat_backward(dx, cat1)
        dx = self.dec_up1.backward(layers.relu_backward(dx, r_up1), k_up1)
        dx = layers.upsample_backward(dx, u1)
        dx = self.dec_fuse3.backward(layers.relu_backward(dx, r_fuse3), k_fuse3)
        dx, db3 = layers.concat_backward(dx, cat3)
        dx = self.dec_up5.backward(layers.relu_backward(dx, r_up5), k_up5)
        dx = layers.upsample_backward(dx, u5)
        self._accumulate("b5", layers.crop_backward(dx, c5))
        self._accumulate("b3", layers.crop_backward(db3, c3))
        self._accumulate("b1", layers.crop_backward(db1, c1))

    def backward(self) -> np.ndarray:
        """Propagate the accumulated pyramid gradients through the encoder.

        Returns:
            np.ndarray: Gradient with respect to the input volume.
        """
        if self._encoder_caches is None or self._dpyramid is None:
            raise NetworkStateError("backward() called without a cached training forward pass.")
        taps = {0: "b1", 2: "b3", 4: "b5"}
        dx = np.zeros_like(self._pyramid["b5"])
        for index in reversed(range(len(self.blocks))):
            if index in taps:
                dx = dx + self._dpyramid[taps[index]]
            dx = self.blocks[index].backward(dx, self._encoder_caches[index])
        self._encoder_caches = None
        self._dpyramid = None
        return dx[0]
