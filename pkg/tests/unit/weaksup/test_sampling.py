import numpy as np
import pytest

from frustumseg.exceptions import RegionSamplingError
from frustumseg.volume import BoundingBox3
from frustumseg.weaksup import sample_regions
from frustumseg.weaksup.sampling import MIN_REGION, region_size

SHAPE = (64, 32, 32)
BOX = BoundingBox3(start=(10, 10, 10), end=(20, 16, 14))


def test_positives_then_negatives(rng):
    samples = sample_regions(BOX, SHAPE, 16, rng)
    assert len(samples) == 32
    assert [s.label for s in samples] == [1] * 16 + [0] * 16
    for sample in samples:
        assert sample.box.within(SHAPE)
        assert sample.box.shape == (10, 8, 8)
        overlap = sample.box.intersection_size(BOX)
        assert (overlap > 0) == bool(sample.label)


def test_region_size_is_clamped():
    assert region_size(BOX, SHAPE) == (10, 8, 8)
    assert region_size(BoundingBox3(start=(0, 0, 0), end=(50, 40, 3)), (48, 32, 32)) == (48, 32, MIN_REGION)


def test_corner_box_negatives_never_overlap(rng):
    corner = BoundingBox3(start=(0, 0, 0), end=(12, 12, 12))
    negatives = [s.box for s in sample_regions(corner, (40, 40, 40), 16, rng) if s.label == 0]
    assert len(negatives) == 16
    assert all(box.intersection_size(corner) == 0 for box in negatives)


def test_fixed_seed_is_repeatable():
    a = sample_regions(BOX, SHAPE, 8, np.random.default_rng(5))
    b = sample_regions(BOX, SHAPE, 8, np.random.default_rng(5))
    assert a == b


def test_negatives_shrink_beside_a_large_box(rng):
    big = BoundingBox3(start=(0, 0, 0), end=(30, 30, 30))
    negatives = [s.box for s in sample_regions(big, (40, 40, 40), 4, rng) if s.label == 0]
    assert all(box.shape == (MIN_REGION,) * 3 for box in negatives)
    assert all(box.intersection_size(big) == 0 for box in negatives)


def test_box_covering_the_volume(rng):
    with pytest.raises(RegionSamplingError, match="Cannot place"):
        sample_regions(BoundingBox3.whole((16, 16, 16)), (16, 16, 16), 2, rng)
