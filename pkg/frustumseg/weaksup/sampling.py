from typing import List, Tuple

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel

from ..exceptions import RegionSamplingError
from ..volume import BoundingBox3

logger = logging.get_logger(__name__)

MIN_REGION = 8

Shape3 = Tuple[int, int, int]


class RegionSample(BaseModel):
    box: BoundingBox3
    label: int


def region_size(bbox: BoundingBox3, volume_shape: Shape3) -> Shape3:
    """Box size clamped to [MIN_REGION, volume] per axis."""
    return tuple(
        int(min(max(s, MIN_REGION), n)) for s, n in zip(bbox.shape, volume_shape)
    )


def _positive(bbox: BoundingBox3, size: Shape3, shape: Shape3, rng: np.random.Generator) -> BoundingBox3:
    start = []
    for b0, bs, s, n in zip(bbox.start, bbox.shape, size, shape):
        jitter = int(rng.integers(-(s // 2), min(s // 2, bs - 1) + 1))
        start.append(int(np.clip(b0 + jitter, 0, n - s)))
    return BoundingBox3(start=tuple(start), end=tuple(a + s for a, s in zip(start, size)))


def _disjoint_starts(b0: int, b1: int, s: int, n: int) -> np.ndarray:
    """Starts on one axis whose interval [a, a + s) misses [b0, b1)."""
    starts = np.arange(0, n - s + 1)
    return starts[(starts + s <= b0) | (starts >= b1)]


def _negative(bbox, size, shape, rng) -> BoundingBox3:
    feasible = [
        axis
        for axis in range(3)
        if _disjoint_starts(bbox.start[axis], bbox.end[axis], size[axis], shape[axis]).size
    ]
    if not feasible:
        return None
    axis = feasible[int(rng.integers(len(feasible)))]
    start = []
    for a, (s, n) in enumerate(zip(size, shape)):
        if a == axis:
            options = _disjoint_starts(bbox.start[a], bbox.end[a], s, n)
            start.append(int(options[rng.integers(options.size)]))
        else:
            start.append(int(rng.integers(0, n - s + 1)))
    return BoundingBox3(start=tuple(start), end=tuple(a + s for a, s in zip(start, size)))


def sample_regions(
    bbox: BoundingBox3,
    volume_shape: Shape3,
    n: int,
    rng: np.random.Generator,
) -> List[RegionSample]:
    """Draw ``n`` catheter regions around the box and ``n`` regions disjoint from it.

    Positives are bbox-sized crops jittered by up to half their size; negatives are
    placed with zero overlap. When no bbox-sized negative fits, the negative size is
    halved per axis down to MIN_REGION.

    Raises:
        RegionSamplingError: If even a MIN_REGION negative cannot be placed.

    Returns:
        List[RegionSample]: ``n`` positives (label 1) followed by ``n`` negatives (label 0).
    """
    volume_shape = tuple(int(v) for v in volume_shape)
    size = region_size(bbox, volume_shape)
    positives = [_positive(bbox, size, volume_shape, rng) for _ in range(n)]

    neg_size = size
    while _negative(bbox, neg_size, volume_shape, rng) is None:
        if all(s <= MIN_REGION for s in neg_size):
            raise RegionSamplingError(
                f"Cannot place a region disjoint from {bbox.to_list()} in {volume_shape}."
            )
        shrunk = tuple(max(MIN_REGION, s // 2) for s in neg_size)
        logger.warning(f"Negative region shrunk from {neg_size} to {shrunk} to fit beside the box.")
        neg_size = shrunk
    negatives = [_negative(bbox, neg_size, volume_shape, rng) for _ in range(n)]

    return [RegionSample(box=b, label=1) for b in positives] + [
        RegionSample(box=b, label=0) for b in negatives
    ]
