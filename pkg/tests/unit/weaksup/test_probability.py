import numpy as np
import pytest

from frustumseg.exceptions import ShapeMismatchError
from frustumseg.network.model import CamMap
from frustumseg.volume import normalize_01
from frustumseg.weaksup import build_probability_map, upsample_cam


def test_matches_elementwise_product(rng):
    v, cam, image = (rng.uniform(size=(8, 8, 8)).astype(np.float32) for _ in range(3))
    U = build_probability_map(v, cam, image)
    assert U.dtype == np.float32
    np.testing.assert_array_equal(U, v * cam * image)


def test_identity_factors_give_normalized_intensity(SMALL_FRUSTUM):
    ones = np.ones(SMALL_FRUSTUM.shape, dtype=np.float32)
    U = build_probability_map(ones, ones, SMALL_FRUSTUM)
    np.testing.assert_allclose(U, normalize_01(SMALL_FRUSTUM))
    assert U.max() == pytest.approx(1.0)


def test_zero_factor_annihilates(SMALL_FRUSTUM, rng):
    shape = SMALL_FRUSTUM.shape
    U = build_probability_map(rng.uniform(size=shape), np.zeros(shape), SMALL_FRUSTUM)
    assert not U.any()


def test_shape_mismatch(rng):
    with pytest.raises(ShapeMismatchError, match="disagree"):
        build_probability_map(np.ones((8, 8, 8)), np.ones((8, 8, 7)), np.ones((8, 8, 8)))


def test_upsample_cam_keeps_range():
    cam = CamMap(data=np.linspace(0, 1, 27, dtype=np.float32).reshape(3, 3, 3))
    up = upsample_cam(cam, (12, 10, 9))
    assert up.shape == (12, 10, 9)
    assert up.min() >= 0.0 and up.max() <= 1.0
    assert upsample_cam(CamMap(data=np.ones((2, 2, 2))), (8, 8, 8)).min() == pytest.approx(1.0)
