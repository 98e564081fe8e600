"""Dense 3D volume types and their binary container.

File layout (little-endian), shared by all three volume kinds::

    bytes  0..3   magic: b"FRV1" frustum, b"CRV1" Cartesian, b"MSK1" mask
    bytes  4..15  dims, 3 x u32 (frustum: radial, azimuth, elevation; Cartesian: x, y, z)
    bytes 16..27  steps, 3 x f32 (mm, deg, deg) or Cartesian spacing (mm); zero for masks
    bytes 28..31  intensity_max, f32 (1.0 for masks)
    bytes 32..63  zero padding
    payload       row-major f32 (u8 for masks), last axis fastest

Provenance that the header has no room for (radial start offset, Cartesian grid
origin) lives in a ``<path>.meta`` sidecar of ``key: value`` lines.
"""
import os
import struct
from typing import Dict, Optional, Tuple, Type, Union

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel, root_validator, validator

from .exceptions import (
    BadMagicError,
    NonFiniteValueError,
    ShapeMismatchError,
    TruncatedPayloadError,
    ValidationError,
    VolumeIOError,
)

logger = logging.get_logger(__name__)

HEADER_SIZE = 64
FRUSTUM_MAGIC = b"FRV1"
CARTESIAN_MAGIC = b"CRV1"
MASK_MAGIC = b"MSK1"
_HEADER = struct.Struct("<4s3I3ff")

Shape3 = Tuple[int, int, int]


def as_f32(value: float) -> float:
    """Round a Python float to the nearest f32 so header round trips are exact."""
    return float(np.float32(value))


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(array, dtype=dtype)
    if out is array:
        out = out.copy()
    out.flags.writeable = False
    return out


class _Volume(BaseModel):
    data: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @property
    def shape(self) -> Shape3:
        return tuple(int(n) for n in self.data.shape)

    def metadata(self) -> Dict[str, object]:
        return self.dict(exclude={"data"})

    def equals(self, other: "_Volume") -> bool:
        """Bit-exact comparison of data and metadata."""
        if type(self) is not type(other):
            return False
        if self.data.shape != other.data.shape or self.data.dtype != other.data.dtype:
            return False
        return (
            self.data.tobytes() == other.data.tobytes()
            and self.metadata() == other.metadata()
        )


def _check_intensity_data(data: np.ndarray, intensity_max: float) -> None:
    if data.ndim != 3 or min(data.shape) < 1:
        raise ValidationError(f"Volume data must be 3D with every dim >= 1, got {data.shape}.")
    if not np.all(np.isfinite(data)):
        raise ValidationError("Volume data contains non-finite values.")
    if data.size and (data.min() < 0 or data.max() > intensity_max):
        raise ValidationError(
            f"Volume data must lie in [0, {intensity_max}], "
            f"got [{data.min()}, {data.max()}]."
        )


class FrustumVolume(_Volume):
    """Beam-grid volume, axes (radial/depth, azimuth, elevation)."""

    radial_step_mm: float
    azimuth_step_deg: float
    elevation_step_deg: float
    intensity_max: float = 255.0
    radial_start_mm: float = 0.0

    @validator("data", pre=True)
    def _as_f32_array(cls, v):
        return _frozen(v, np.float32)

    @validator(
        "radial_step_mm", "azimuth_step_deg", "elevation_step_deg", "intensity_max"
    )
    def _positive_f32(cls, v, field):
        if not v > 0:
            raise ValidationError(f"{field.name} must be > 0, got {v}.")
        return as_f32(v)

    @validator("radial_start_mm")
    def _start_f32(cls, v):
        if v < 0:
            raise ValidationError(f"radial_start_mm must be >= 0, got {v}.")
        return as_f32(v)

    @root_validator(skip_on_failure=True)
    def _data_in_range(cls, values):
        _check_intensity_data(values["data"], values["intensity_max"])
        return values

    @property
    def steps(self) -> Tuple[float, float, float]:
        return (self.radial_step_mm, self.azimuth_step_deg, self.elevation_step_deg)


class CartesianVolume(_Volume):
    """Scan-converted volume on a regular grid, axes (x, y, z) with z along depth."""

    spacing_mm: Tuple[float, float, float]
    intensity_max: float = 255.0
    origin_mm: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @validator("data", pre=True)
    def _as_f32_array(cls, v):
        return _frozen(v, np.float32)

    @validator("spacing_mm")
    def _positive_spacing(cls, v):
        if not all(s > 0 for s in v):
            raise ValidationError(f"spacing_mm must be > 0 per axis, got {v}.")
        return tuple(as_f32(s) for s in v)

    @validator("intensity_max")
    def _positive_max(cls, v):
        if not v > 0:
            raise ValidationError(f"intensity_max must be > 0, got {v}.")
        return as_f32(v)

    @validator("origin_mm")
    def _origin_f32(cls, v):
        return tuple(as_f32(o) for o in v)

    @root_validator(skip_on_failure=True)
    def _data_in_range(cls, values):
        _check_intensity_data(values["data"], values["intensity_max"])
        return values

    @property
    def steps(self) -> Tuple[float, float, float]:
        return self.spacing_mm


class MaskVolume(_Volume):
    """Binary label volume with the shape of the volume it annotates."""

    @validator("data", pre=True)
    def _as_binary(cls, v):
        v = np.asarray(v)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValidationError(f"Mask data must be 3D with every dim >= 1, got {v.shape}.")
        if v.dtype == bool:
            v = v.astype(np.uint8)
        if v.size and not np.isin(v, (0, 1)).all():
            raise ValidationError("Mask data must only hold 0 and 1.")
        return _frozen(v, np.uint8)

    @classmethod
    def empty(cls, shape: Shape3) -> "MaskVolume":
        return cls(data=np.zeros(shape, dtype=np.uint8))

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def check_matches(self, shape: Shape3) -> None:
        if self.shape != tuple(shape):
            raise ShapeMismatchError(f"Mask shape {self.shape} != volume shape {tuple(shape)}.")


class BoundingBox3(BaseModel):
    """Axis-aligned box, `start` inclusive and `end` exclusive per axis."""

    start: Tuple[int, int, int]
    end: Tuple[int, int, int]

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def _ordered(cls, values):
        start, end = values["start"], values["end"]
        if any(s < 0 for s in start) or not all(s < e for s, e in zip(start, end)):
            raise ValidationError(f"Invalid box: start={start}, end={end}.")
        return values

    @classmethod
    def from_mask(cls, mask: Union[MaskVolume, np.ndarray]) -> Optional["BoundingBox3"]:
        """Tight box around the nonzero voxels, or None for an empty mask."""
        data = mask.data if isinstance(mask, MaskVolume) else np.asarray(mask)
        if not data.any():
            return None
        start, end = [], []
        for axis in range(3):
            other = tuple(a for a in range(3) if a != axis)
            hits = np.where(np.any(data, axis=other))[0]
            start.append(int(hits[0]))
            end.append(int(hits[-1]) + 1)
        return cls(start=tuple(start), end=tuple(end))

    @classmethod
    def whole(cls, shape: Shape3) -> "BoundingBox3":
        return cls(start=(0, 0, 0), end=tuple(int(n) for n in shape))

    @property
    def shape(self) -> Shape3:
        return tuple(e - s for s, e in zip(self.start, self.end))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(s, e) for s, e in zip(self.start, self.end))

    def within(self, shape: Shape3) -> bool:
        return all(e <= n for e, n in zip(self.end, shape))

    def contains(self, other: "BoundingBox3") -> bool:
        return all(
            s <= os_ and oe <= e
            for s, e, os_, oe in zip(self.start, self.end, other.start, other.end)
        )

    def intersection_size(self, other: "BoundingBox3") -> int:
        extent = [
            max(0, min(e, oe) - max(s, os_))
            for s, e, os_, oe in zip(self.start, self.end, other.start, other.end)
        ]
        return int(np.prod(extent))

    def overlaps(self, other: "BoundingBox3") -> bool:
        return self.intersection_size(other) > 0

    def iou(self, other: "BoundingBox3") -> float:
        inter = self.intersection_size(other)
        return inter / float(self.size + other.size - inter)

    def dilate(self, margin: int, shape: Shape3) -> "BoundingBox3":
        """Grow by `margin` voxels on every face and clamp to `shape`."""
        return BoundingBox3(
            start=tuple(max(0, s - margin) for s in self.start),
            end=tuple(min(int(n), e + margin) for e, n in zip(self.end, shape)),
        )

    def to_stride(self, stride: int, shape: Shape3) -> "BoundingBox3":
        """Map to a grid downsampled by `stride` (floor start, ceil end, clamped)."""
        return BoundingBox3(
            start=tuple(min(s // stride, int(n) - 1) for s, n in zip(self.start, shape)),
            end=tuple(
                min(-(-e // stride), int(n)) for e, n in zip(self.end, shape)
            ),
        )

    def to_list(self) -> list:
        return [list(self.start), list(self.end)]


def normalize_01(vol: Union[FrustumVolume, CartesianVolume]) -> np.ndarray:
    """Scale intensities to [0, 1] by the volume's nominal maximum."""
    out = vol.data / np.float32(vol.intensity_max)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _sidecar_path(path: str) -> str:
    return f"{path}.meta"


def _write_sidecar(path: str, fields: Dict[str, object]) -> None:
    lines = []
    for key in sorted(fields):
        value = fields[key]
        if isinstance(value, (tuple, list)):
            value = ",".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}: {value}")
    with open(_sidecar_path(path), "w") as f:
        f.write("\n".join(lines) + "\n")


def read_sidecar(path: str) -> Dict[str, str]:
    """Parse the `key: value` sidecar of a volume file; empty if absent."""
    meta_path = _sidecar_path(path)
    if not os.path.isfile(meta_path):
        return {}
    out = {}
    with open(meta_path) as f:
        for line in f:
            if ":" in line:
                key, value = line.split(":", 1)
                out[key.strip()] = value.strip()
    return out


def save_volume(vol: Union[FrustumVolume, CartesianVolume, MaskVolume], path: str) -> None:
    """Write a volume to the binary container, plus a sidecar for intensity volumes.

    Args:
        vol: The volume to write.
        path (str): Destination file path.

    Raises:
        NonFiniteValueError: If the data holds NaN or infinite values.
        VolumeIOError: If the path cannot be written.
    """
    data = np.asarray(vol.data)
    if isinstance(vol, MaskVolume):
        magic, steps, intensity_max, dtype = MASK_MAGIC, (0.0, 0.0, 0.0), 1.0, "<u1"
    else:
        if not np.all(np.isfinite(data)):
            raise NonFiniteValueError(f"Refusing to write non-finite values to {path}.")
        magic = FRUSTUM_MAGIC if isinstance(vol, FrustumVolume) else CARTESIAN_MAGIC
        steps, intensity_max, dtype = vol.steps, vol.intensity_max, "<f4"

    header = _HEADER.pack(magic, *data.shape, *steps, intensity_max)
    header += b"\x00" * (HEADER_SIZE - len(header))
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(data, dtype=dtype).tobytes(order="C"))
    except OSError as e:
        raise VolumeIOError(f"Could not write volume to {path}: {e}") from e

    if isinstance(vol, FrustumVolume):
        _write_sidecar(path, {"kind": "frustum", "radial_start_mm": vol.radial_start_mm})
    elif isinstance(vol, CartesianVolume):
        _write_sidecar(path, {"kind": "cartesian", "origin_mm": vol.origin_mm})


def load_volume(
    path: str, expect: Optional[Type[_Volume]] = None
) -> Union[FrustumVolume, CartesianVolume, MaskVolume]:
    """Read a volume written by `save_volume`.

    Args:
        path (str): Source file path.
        expect (type, optional): Volume class the file must hold. Defaults to None (any).

    Raises:
        BadMagicError: If the file does not start with a known magic tag.
        TruncatedPayloadError: If the header or payload is shorter than declared.
        NonFiniteValueError: If an intensity payload holds NaN or infinite values.
        VolumeIOError: On any other malformed content.

    Returns:
        The volume, with metadata populated from the header and sidecar.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: header shorter than {HEADER_SIZE} bytes.")

    magic, d0, d1, d2, s0, s1, s2, intensity_max = _HEADER.unpack_from(raw, 0)
    if magic not in (FRUSTUM_MAGIC, CARTESIAN_MAGIC, MASK_MAGIC):
        raise BadMagicError(f"{path}: unknown magic {magic!r}.")
    shape = (d0, d1, d2)
    itemsize = 1 if magic == MASK_MAGIC else 4
    expected = int(np.prod(shape)) * itemsize
    payload = raw[HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}."
        )
    if len(payload) > expected:
        raise VolumeIOError(f"{path}: {len(payload) - expected} trailing bytes after payload.")

    if magic == MASK_MAGIC:
        data = np.frombuffer(payload, dtype="<u1").reshape(shape)
        if not np.isin(data, (0, 1)).all():
            raise VolumeIOError(f"{path}: mask payload holds values other than 0 and 1.")
        vol = MaskVolume(data=data)
    else:
        data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise NonFiniteValueError(f"{path}: payload holds non-finite values.")
        if data.size and (data.min() < 0 or data.max() > intensity_max):
            raise VolumeIOError(f"{path}: payload outside [0, {intensity_max}].")
        meta = read_sidecar(path)
        if magic == FRUSTUM_MAGIC:
            vol = FrustumVolume(
                data=data,
                radial_step_mm=s0,
                azimuth_step_deg=s1,
                elevation_step_deg=s2,
                intensity_max=intensity_max,
                radial_start_mm=float(meta.get("radial_start_mm", 0.0)),
            )
        else:
            origin = meta.get("origin_mm")
            vol = CartesianVolume(
                data=data,
                spacing_mm=(s0, s1, s2),
                intensity_max=intensity_max,
                origin_mm=tuple(float(v) for v in origin.split(","))
                if origin
                else (0.0, 0.0, 0.0),
            )

    if expect is not None and not isinstance(vol, expect):
        raise VolumeIOError(f"{path}: expected {expect.__name__}, found {type(vol).__name__}.")
    logger.debug(f"Loaded {type(vol).__name__} {vol.shape} from {path}.")
    return vol
