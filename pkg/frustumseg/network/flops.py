"""Static FLOPs accounting for the network, whole-volume versus ROI-restricted decoding."""
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ..volume import BoundingBox3
from .model import NetworkConfig, align_roi, pyramid_shapes

Shape3 = Tuple[int, int, int]
Domain = Literal["frustum", "cartesian"]
Mode = Literal["whole", "roi"]

DOMAIN_SHAPES: Dict[str, Shape3] = {
    "frustum": (360, 96, 96),
    "cartesian": (360, 360, 336),
}
TEST_ROI_SHAPES: List[Shape3] = [(28, 56, 20), (28, 56, 20)]
PUBLISHED_GFLOPS: Dict[Tuple[str, str], float] = {
    ("frustum", "whole"): 5.2,
    ("frustum", "roi"): 1.8,
    ("cartesian", "whole"): 68.2,
    ("cartesian", "roi"): 23.9,
}

ASSUMPTIONS = (
    "FLOPs = 2 x multiply-adds of convolution and fully connected layers. "
    "Normalization, activations, pooling, upsampling and concatenation are not counted. "
    "Encoder blocks and the localization head are counted in both modes; the region "
    "classifier is training-only and excluded. Block 1 is a stride-2 3x3x3 conv, block 2 a "
    "2x2x2 max-pool then 3x3x3 conv, blocks 3-5 run at stride 4. The decoder runs on the "
    "whole volume in 'whole' mode and on the given ROIs in 'roi' mode. Test-time ROIs "
    "default to two boxes of 28x56x20 input voxels. The Cartesian domain runs the same network "
    "on a 360x360x336 grid at stride 4; a halved-width stride-8 variant is not modeled."
)


def conv_flops(cin: int, cout: int, kernel: int, out_shape: Sequence[int]) -> int:
    return 2 * kernel**3 * cin * cout * int(np.prod(out_shape))


class LayerFlops(BaseModel):
    name: str
    kind: Literal["conv", "fc"]
    in_channels: int
    out_channels: int
    kernel: int
    out_shape: Tuple[int, ...]
    flops: int


class FlopsReport(BaseModel):
    profile: str = "custom"
    domain: Optional[str] = None
    mode: str = "whole"
    input_shape: Tuple[int, int, int]
    roi_shapes: List[Tuple[int, int, int]] = []
    layers: List[LayerFlops] = []
    published_gflops: Optional[float] = None
    assumptions: str = ASSUMPTIONS

    @property
    def total_flops(self) -> int:
        return sum(layer.flops for layer in self.layers)

    @property
    def total_gflops(self) -> float:
        return self.total_flops / 1e9

    @property
    def relative_deviation(self) -> Optional[float]:
        if not self.published_gflops:
            return None
        return self.total_gflops / self.published_gflops - 1.0

    def to_df(self) -> pd.DataFrame:
        rows = [
            {
                "layer": layer.name,
                "kind": layer.kind,
                "in_channels": layer.in_channels,
                "out_channels": layer.out_channels,
                "kernel": layer.kernel,
                "out_shape": "x".join(str(n) for n in layer.out_shape),
                "flops": layer.flops,
            }
            for layer in self.layers
        ]
        columns = ["layer", "kind", "in_channels", "out_channels", "kernel", "out_shape", "flops"]
        return pd.DataFrame(rows, columns=columns)

    def summary(self) -> str:
        line = f"{self.profile}/{self.domain or 'custom'}/{self.mode}: {self.total_gflops:.2f} GFLOPs"
        if self.published_gflops is not None:
            line += f" (published {self.published_gflops:.1f}, deviation {self.relative_deviation:+.1%})"
        return line


def _conv(name, cin, cout, kernel, out_shape) -> LayerFlops:
    return LayerFlops(
        name=name,
        kind="conv",
        in_channels=cin,
        out_channels=cout,
        kernel=kernel,
        out_shape=tuple(out_shape),
        flops=conv_flops(cin, cout, kernel, out_shape),
    )


def _decoder_layers(config: NetworkConfig, s4: Shape3, s2: Shape3, prefix: str) -> List[LayerFlops]:
    c1, _, c3, _, c5 = config.block_channels
    d = config.decoder_channels
    return [
        _conv(f"{prefix}up5", c5, d, 3, s4),
        _conv(f"{prefix}fuse3", d + c3, d, 3, s4),
        _conv(f"{prefix}up1", d, d, 3, s2),
        _conv(f"{prefix}fuse1", d + c1, d, 3, s2),
        _conv(f"{prefix}head", d, 1, 1, s2),
    ]


def count_flops(
    config: NetworkConfig,
    input_shape: Shape3,
    rois: Optional[Sequence[Union[BoundingBox3, Shape3]]] = None,
    include_classifier: bool = False,
) -> FlopsReport:
    """Per-layer FLOPs of one inference pass.

    Args:
        config (NetworkConfig): Architecture to count.
        input_shape (Shape3): Input volume shape.
        rois (optional): ROIs to decode. Boxes are aligned against the input grid;
            bare shapes are treated as boxes at the origin. None decodes the whole volume.
        include_classifier (bool, optional): Also count the region classifier FC.
            Defaults to False.

    Returns:
        FlopsReport: Layers and totals; mode is "roi" when ``rois`` is given.
    """
    input_shape = tuple(int(n) for n in input_shape)
    c1, c2, c3, c4, c5 = config.block_channels
    s2, s4 = pyramid_shapes(input_shape)
    layers = [
        _conv("block1", config.in_channels, c1, 3, s2),
        _conv("block2", c1, c2, 3, s4),
        _conv("block3", c2, c3, 3, s4),
        _conv("block4", c3, c4, 3, s4),
        _conv("block5", c4, c5, 3, s4),
        _conv("loc_head", c5, 1, 1, s4),
    ]
    if include_classifier:
        layers.append(
            LayerFlops(
                name="classifier",
                kind="fc",
                in_channels=c5,
                out_channels=config.num_classes,
                kernel=1,
                out_shape=(1,),
                flops=2 * c5 * config.num_classes,
            )
        )
    roi_shapes: List[Shape3] = []
    if rois is None:
        layers += _decoder_layers(config, s4, s2, "decoder.")
    else:
        for i, roi in enumerate(rois):
            if isinstance(roi, BoundingBox3):
                align = align_roi(roi, input_shape)
                roi_s4, roi_s2 = align.s4.shape, align.s2.shape
                roi_shapes.append(roi.shape)
            else:
                roi_shapes.append(tuple(int(n) for n in roi))
                roi_s2, roi_s4 = pyramid_shapes(roi)
            layers += _decoder_layers(config, roi_s4, roi_s2, f"decoder[{i}].")
    return FlopsReport(
        input_shape=input_shape,
        roi_shapes=roi_shapes,
        mode="whole" if rois is None else "roi",
        layers=layers,
    )


def profile_flops(
    profile: str = "narrow",
    domain: Domain = "frustum",
    mode: Mode = "roi",
    roi_shapes: Optional[Sequence[Shape3]] = None,
) -> FlopsReport:
    """FLOPs of a named profile on one of the reference volume geometries."""
    config = NetworkConfig.profile(profile)
    rois = None if mode == "whole" else list(roi_shapes or TEST_ROI_SHAPES)
    report = count_flops(config, DOMAIN_SHAPES[domain], rois)
    return report.copy(
        update={
            "profile": profile,
            "domain": domain,
            "published_gflops": PUBLISHED_GFLOPS.get((domain, mode)),
        }
    )
