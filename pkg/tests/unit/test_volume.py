import os

import numpy as np
import pytest

from frustumseg.exceptions import (
    BadMagicError,
    NonFiniteValueError,
    ShapeMismatchError,
    TruncatedPayloadError,
    ValidationError,
    VolumeIOError,
)
from frustumseg.volume import (
    HEADER_SIZE,
    BoundingBox3,
    CartesianVolume,
    FrustumVolume,
    MaskVolume,
    load_volume,
    normalize_01,
    read_sidecar,
)
from frustumseg.volume import save_volume


def test_frustum_round_trip_is_bit_exact(SMALL_FRUSTUM, tmp_path):
    path = str(tmp_path / "vol.frv")
    save_volume(SMALL_FRUSTUM, path)
    loaded = load_volume(path)
    assert isinstance(loaded, FrustumVolume)
    assert loaded.equals(SMALL_FRUSTUM)
    assert loaded.radial_start_mm == SMALL_FRUSTUM.radial_start_mm
    assert os.path.getsize(path) == HEADER_SIZE + 4 * SMALL_FRUSTUM.data.size


def test_cartesian_round_trip_keeps_origin(tmp_path):
    vol = CartesianVolume(
        data=np.full((4, 5, 6), 12.5, dtype=np.float32),
        spacing_mm=(0.2, 0.2, 0.25),
        origin_mm=(-3.1, -2.0, 10.0),
    )
    path = str(tmp_path / "vol.crv")
    save_volume(vol, path)
    loaded = load_volume(path, expect=CartesianVolume)
    assert loaded.equals(vol)
    assert read_sidecar(path)["kind"] == "cartesian"


def test_mask_round_trip(tmp_path):
    data = np.zeros((5, 6, 7), dtype=np.uint8)
    data[1:3, 2:5, 3] = 1
    mask = MaskVolume(data=data)
    path = str(tmp_path / "m.msk")
    save_volume(mask, path)
    loaded = load_volume(path, expect=MaskVolume)
    assert loaded.equals(mask)
    assert loaded.count == 6
    assert os.path.getsize(path) == HEADER_SIZE + data.size


def test_load_wrong_kind(SMALL_FRUSTUM, tmp_path):
    path = str(tmp_path / "vol.frv")
    save_volume(SMALL_FRUSTUM, path)
    with pytest.raises(VolumeIOError, match="expected MaskVolume"):
        load_volume(path, expect=MaskVolume)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.frv"
    path.write_bytes(b"XXXX" + b"\x00" * 80)
    with pytest.raises(BadMagicError):
        load_volume(str(path))


def test_truncated_header(tmp_path):
    path = tmp_path / "short.frv"
    path.write_bytes(b"FRV1" + b"\x00" * 10)
    with pytest.raises(TruncatedPayloadError, match="header"):
        load_volume(str(path))


def test_truncated_payload(SMALL_FRUSTUM, tmp_path):
    path = tmp_path / "vol.frv"
    save_volume(SMALL_FRUSTUM, str(path))
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(TruncatedPayloadError, match="payload"):
        load_volume(str(path))


def test_nan_payload_rejected_on_load(SMALL_FRUSTUM, tmp_path):
    path = tmp_path / "vol.frv"
    save_volume(SMALL_FRUSTUM, str(path))
    raw = bytearray(path.read_bytes())
    raw[HEADER_SIZE : HEADER_SIZE + 4] = np.array([np.nan], dtype="<f4").tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(NonFiniteValueError):
        load_volume(str(path))


def test_out_of_range_intensity():
    with pytest.raises(ValidationError, match="must lie in"):
        FrustumVolume(
            data=np.full((2, 2, 2), 300.0),
            radial_step_mm=0.5,
            azimuth_step_deg=1.0,
            elevation_step_deg=1.0,
        )


def test_non_positive_step():
    with pytest.raises(ValidationError, match="radial_step_mm"):
        FrustumVolume(
            data=np.zeros((2, 2, 2)),
            radial_step_mm=0.0,
            azimuth_step_deg=1.0,
            elevation_step_deg=1.0,
        )


def test_header_floats_are_f32_exact():
    vol = FrustumVolume(
        data=np.zeros((2, 2, 2)),
        radial_step_mm=0.2695,
        azimuth_step_deg=1.003,
        elevation_step_deg=1.003,
    )
    assert vol.radial_step_mm == float(np.float32(0.2695))


def test_volume_data_is_read_only(SMALL_FRUSTUM):
    with pytest.raises(ValueError):
        SMALL_FRUSTUM.data[0, 0, 0] = 1.0


def test_mask_rejects_non_binary():
    with pytest.raises(ValidationError, match="0 and 1"):
        MaskVolume(data=np.full((2, 2, 2), 2, dtype=np.uint8))


def test_mask_shape_check():
    with pytest.raises(ShapeMismatchError):
        MaskVolume.empty((2, 3, 4)).check_matches((2, 3, 5))


def test_normalize_01(SMALL_FRUSTUM):
    out = normalize_01(SMALL_FRUSTUM)
    assert out.dtype == np.float32
    assert out.min() == 0.0
    assert out.max() == pytest.approx(1.0)


def test_bbox_from_mask():
    data = np.zeros((10, 10, 10), dtype=np.uint8)
    data[2, 3, 4] = 1
    data[5, 7, 6] = 1
    box = BoundingBox3.from_mask(data)
    assert box.start == (2, 3, 4)
    assert box.end == (6, 8, 7)
    assert box.shape == (4, 5, 3)
    assert BoundingBox3.from_mask(np.zeros((3, 3, 3))) is None


def test_bbox_rejects_empty_extent():
    with pytest.raises(ValidationError, match="Invalid box"):
        BoundingBox3(start=(1, 1, 1), end=(1, 2, 2))


def test_bbox_dilate_clamps():
    box = BoundingBox3(start=(1, 2, 3), end=(4, 5, 6))
    grown = box.dilate(2, (5, 6, 7))
    assert grown.start == (0, 0, 1)
    assert grown.end == (5, 6, 7)
    assert grown.contains(box)


def test_bbox_to_stride():
    box = BoundingBox3(start=(5, 0, 7), end=(9, 4, 13))
    assert box.to_stride(4, (8, 8, 8)).to_list() == [[1, 0, 1], [3, 1, 4]]


def test_bbox_iou():
    a = BoundingBox3(start=(0, 0, 0), end=(2, 2, 2))
    b = BoundingBox3(start=(1, 0, 0), end=(3, 2, 2))
    assert a.intersection_size(b) == 4
    assert a.iou(b) == pytest.approx(4 / 12)
    assert not a.overlaps(BoundingBox3(start=(2, 2, 2), end=(3, 3, 3)))


def test_save_rejects_non_finite(tmp_path):
    vol = CartesianVolume.construct(
        data=np.array([[[np.inf]]], dtype=np.float32),
        spacing_mm=(1.0, 1.0, 1.0),
        intensity_max=255.0,
        origin_mm=(0.0, 0.0, 0.0),
    )
    with pytest.raises(NonFiniteValueError):
        save_volume(vol, str(tmp_path / "x.crv"))
