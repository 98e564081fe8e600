import numpy as np
import pytest

from frustumseg.network import FrustumSegNet, NetworkConfig, save_checkpoint
from frustumseg.volume import BoundingBox3
from frustumseg.weaksup import infer, infer_checkpoint, stitch

TOY = NetworkConfig(block_channels=(2, 2, 2, 2, 2), decoder_channels=2, rng_seed=3, roi_margin_vox=2)


@pytest.fixture
def toy_net():
    return FrustumSegNet(TOY)


def test_stitch_takes_the_voxelwise_maximum():
    a = BoundingBox3(start=(0, 0, 0), end=(2, 2, 2))
    b = BoundingBox3(start=(1, 1, 1), end=(3, 3, 3))
    out = stitch((4, 4, 4), [a, b], [np.full((2, 2, 2), 0.2), np.full((2, 2, 2), 0.7)])
    assert out[0, 0, 0] == pytest.approx(0.2)
    assert out[1, 1, 1] == pytest.approx(0.7)
    assert out[3].sum() == 0 and out[:, 3].sum() == 0


def test_disjoint_rois_stitch_to_the_union():
    a = BoundingBox3(start=(0, 0, 0), end=(2, 4, 4))
    b = BoundingBox3(start=(2, 0, 0), end=(4, 4, 4))
    pa = np.random.default_rng(0).uniform(size=a.shape)
    pb = np.random.default_rng(1).uniform(size=b.shape)
    out = stitch((4, 4, 4), [a, b], [pa, pb])
    np.testing.assert_allclose(out[a.slices], pa, rtol=1e-6)
    np.testing.assert_allclose(out[b.slices], pb, rtol=1e-6)


def test_infer_produces_a_binary_full_volume_mask(toy_net, rng):
    image = rng.uniform(size=(16, 20, 16)).astype(np.float32)
    result = infer(toy_net, image, m_rois=2, tau_loc=0.0)
    assert result.mask.shape == image.shape
    assert set(np.unique(result.mask.data)) <= {0, 1}
    assert 1 <= len(result.rois) <= 2
    assert not result.fallback
    covered = np.zeros(image.shape, dtype=bool)
    for roi in result.rois:
        covered[roi.slices] = True
    assert not result.probability[~covered].any()


def test_nothing_localized_falls_back(toy_net, rng):
    image = rng.uniform(size=(16, 16, 16)).astype(np.float32)
    result = infer(toy_net, image, tau_loc=1.1)
    assert result.fallback
    assert result.rois == [BoundingBox3.whole((16, 16, 16))]

    box = BoundingBox3(start=(2, 2, 2), end=(10, 10, 10))
    result = infer(toy_net, image, tau_loc=1.1, fallback_roi=box)
    assert result.rois == [box]
    assert not result.probability[12:].any()


def test_infer_checkpoint(toy_net, tmp_path, SMALL_FRUSTUM):
    path = str(tmp_path / "toy.nwt")
    save_checkpoint(toy_net, path)
    from_file = infer_checkpoint(path, SMALL_FRUSTUM, tau_loc=0.0)
    in_memory = infer(toy_net, SMALL_FRUSTUM, tau_loc=0.0)
    assert from_file.mask.equals(in_memory.mask)
