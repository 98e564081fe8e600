"""Frustum (beam grid) <-> Cartesian scan conversion.

Beam sample (r_idx, a_idx, e_idx) sits at distance ``r = radial_start + r_idx * radial_step``
from the probe apex, along fan angles ``theta = (a_idx - (A-1)/2) * azimuth_step`` and
``phi = (e_idx - (E-1)/2) * elevation_step``. Two fan conventions are available:

``tan_fan`` (default)
    ``d = r / sqrt(1 + tan^2 theta + tan^2 phi)``; ``x = d tan theta``, ``y = d tan phi``, ``z = d``.
    Azimuth and elevation are separable and ``r`` stays the Euclidean distance along the beam.
``spherical``
    ``x = r sin theta cos phi``, ``y = r sin phi``, ``z = r cos theta cos phi``.

Cartesian axes are (x lateral/azimuth, y elevation, z depth).
"""
from typing import Literal, Optional, Tuple, Union

import numpy as np
from prefect.utilities import logging
from pydantic import BaseModel, root_validator, validator
from scipy import ndimage

from .exceptions import GeometryError
from .volume import CartesianVolume, FrustumVolume, MaskVolume, Shape3

logger = logging.get_logger(__name__)

Spacing = Union[float, Tuple[float, float, float]]

# Cartesian voxels are sampled in slabs of this many x-slices to bound memory.
_SLAB = 16


class ProbeGeometry(BaseModel):
    """Beam geometry of a frustum volume with fans centered on the probe axis."""

    shape: Tuple[int, int, int]
    radial_step_mm: float
    azimuth_step_deg: float
    elevation_step_deg: float
    radial_start_mm: float = 0.0
    convention: Literal["tan_fan", "spherical"] = "tan_fan"

    class Config:
        allow_mutation = False

    @validator("radial_step_mm", "azimuth_step_deg", "elevation_step_deg")
    def _positive(cls, v, field):
        if not v > 0:
            raise GeometryError(f"{field.name} must be > 0, got {v}.")
        return v

    @validator("radial_start_mm")
    def _non_negative(cls, v):
        if v < 0:
            raise GeometryError(f"radial_start_mm must be >= 0, got {v}.")
        return v

    @root_validator(skip_on_failure=True)
    def _spans_below_180(cls, values):
        shape = values["shape"]
        if min(shape) < 1:
            raise GeometryError(f"Frustum shape must be >= 1 per axis, got {shape}.")
        for n, step, name in (
            (shape[1], values["azimuth_step_deg"], "azimuth"),
            (shape[2], values["elevation_step_deg"], "elevation"),
        ):
            if (n - 1) * step >= 180.0:
                raise GeometryError(f"Degenerate {name} span {(n - 1) * step}° >= 180°.")
        return values

    @classmethod
    def from_volume(
        cls, fv: FrustumVolume, convention: str = "tan_fan"
    ) -> "ProbeGeometry":
        return cls(
            shape=fv.shape,
            radial_step_mm=fv.radial_step_mm,
            azimuth_step_deg=fv.azimuth_step_deg,
            elevation_step_deg=fv.elevation_step_deg,
            radial_start_mm=fv.radial_start_mm,
            convention=convention,
        )

    @classmethod
    def from_spans(
        cls,
        shape: Shape3,
        radial_step_mm: float,
        azimuth_span_deg: float,
        elevation_span_deg: float,
        radial_start_mm: float = 0.0,
        convention: str = "tan_fan",
    ) -> "ProbeGeometry":
        """Build a geometry from total fan spans instead of per-line steps."""
        if not (0 < azimuth_span_deg < 180 and 0 < elevation_span_deg < 180):
            raise GeometryError("Fan spans must lie in (0°, 180°).")
        return cls(
            shape=shape,
            radial_step_mm=radial_step_mm,
            azimuth_step_deg=azimuth_span_deg / max(shape[1] - 1, 1),
            elevation_step_deg=elevation_span_deg / max(shape[2] - 1, 1),
            radial_start_mm=radial_start_mm,
            convention=convention,
        )

    @classmethod
    def beam_grid(cls) -> "ProbeGeometry":
        """The 360x96x96 beam grid at 0.2695 mm x 1.003° x 1.003°."""
        return cls(
            shape=(360, 96, 96),
            radial_step_mm=0.2695,
            azimuth_step_deg=1.003,
            elevation_step_deg=1.003,
        )

    @property
    def azimuth_span_deg(self) -> float:
        return (self.shape[1] - 1) * self.azimuth_step_deg

    @property
    def elevation_span_deg(self) -> float:
        return (self.shape[2] - 1) * self.elevation_step_deg

    @property
    def radial_end_mm(self) -> float:
        return self.radial_start_mm + (self.shape[0] - 1) * self.radial_step_mm


def _angles(a_idx, e_idx, geom: ProbeGeometry):
    a_off = np.asarray(a_idx, dtype=np.float64) - (geom.shape[1] - 1) / 2.0
    e_off = np.asarray(e_idx, dtype=np.float64) - (geom.shape[2] - 1) / 2.0
    theta = np.deg2rad(a_off * geom.azimuth_step_deg)
    phi = np.deg2rad(e_off * geom.elevation_step_deg)
    return theta, phi


def frustum_point_to_cartesian(r_idx, a_idx, e_idx, geom: ProbeGeometry):
    """Map (possibly fractional) beam indices to millimetres. Accepts scalars or arrays."""
    r = geom.radial_start_mm + np.asarray(r_idx, dtype=np.float64) * geom.radial_step_mm
    theta, phi = _angles(a_idx, e_idx, geom)
    if geom.convention == "tan_fan":
        tan_t, tan_p = np.tan(theta), np.tan(phi)
        d = r / np.sqrt(1.0 + tan_t**2 + tan_p**2)
        return d * tan_t, d * tan_p, d
    cos_p = np.cos(phi)
    return r * np.sin(theta) * cos_p, r * np.sin(phi), r * np.cos(theta) * cos_p


def cartesian_point_to_frustum(x, y, z, geom: ProbeGeometry):
    """Inverse of `frustum_point_to_cartesian`, returning fractional beam indices."""
    x, y, z = (np.asarray(v, dtype=np.float64) for v in (x, y, z))
    r = np.sqrt(x**2 + y**2 + z**2)
    if geom.convention == "tan_fan":
        theta = np.arctan2(x, z)
        phi = np.arctan2(y, z)
    else:
        sin_p = np.divide(y, r, out=np.zeros_like(r), where=r > 0)
        phi = np.arcsin(np.clip(sin_p, -1.0, 1.0))
        theta = np.arctan2(x, z)
    r_idx = (r - geom.radial_start_mm) / geom.radial_step_mm
    a_idx = np.rad2deg(theta) / geom.azimuth_step_deg + (geom.shape[1] - 1) / 2.0
    e_idx = np.rad2deg(phi) / geom.elevation_step_deg + (geom.shape[2] - 1) / 2.0
    return r_idx, a_idx, e_idx


def _as_spacing(spacing_mm: Spacing) -> Tuple[float, float, float]:
    spacing = (spacing_mm,) * 3 if np.isscalar(spacing_mm) else tuple(spacing_mm)
    if len(spacing) != 3 or not all(s > 0 for s in spacing):
        raise GeometryError(f"Spacing must be positive, got {spacing_mm}.")
    return tuple(float(s) for s in spacing)


def _boundary_points(geom: ProbeGeometry) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All beam samples on the six faces of the index box, in millimetres."""
    D, A, E = geom.shape
    faces = []
    r, a, e = np.meshgrid(np.arange(D), np.arange(A), [0, E - 1], indexing="ij")
    faces.append((r, a, e))
    r, a, e = np.meshgrid(np.arange(D), [0, A - 1], np.arange(E), indexing="ij")
    faces.append((r, a, e))
    r, a, e = np.meshgrid([0, D - 1], np.arange(A), np.arange(E), indexing="ij")
    faces.append((r, a, e))
    xs, ys, zs = [], [], []
    for r, a, e in faces:
        x, y, z = frustum_point_to_cartesian(r.ravel(), a.ravel(), e.ravel(), geom)
        xs.append(x)
        ys.append(y)
        zs.append(z)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(zs)


def cartesian_grid_shape(
    geom: ProbeGeometry, spacing_mm: Spacing
) -> Tuple[Shape3, Tuple[float, float, float]]:
    """Smallest regular grid at `spacing_mm` that covers every beam sample.

    Returns:
        (shape, origin_mm): grid shape (X, Y, Z) and the millimetre position of voxel (0, 0, 0).
    """
    spacing = _as_spacing(spacing_mm)
    x, y, z = _boundary_points(geom)
    lo = (x.min(), y.min(), z.min())
    hi = (x.max(), y.max(), z.max())
    shape = tuple(
        int(np.floor((h - l) / s + 1e-9)) + 1 for l, h, s in zip(lo, hi, spacing)
    )
    return shape, tuple(float(v) for v in lo)


def frustum_solid_angle(geom: ProbeGeometry) -> float:
    """Solid angle (sr) subtended by the fan, from the outermost beam angles."""
    theta_m = np.deg2rad(geom.azimuth_span_deg / 2.0)
    phi_m = np.deg2rad(geom.elevation_span_deg / 2.0)
    if geom.convention == "tan_fan":
        # rectangular pyramid bounded by the planes x = z tan(theta_m), y = z tan(phi_m)
        return float(4.0 * np.arcsin(np.sin(theta_m) * np.sin(phi_m)))
    return float(4.0 * theta_m * np.sin(phi_m))


def footprint_volume_ratio(geom: ProbeGeometry, spacing_mm: Spacing) -> float:
    """Analytic count of Cartesian voxels inside the footprint, per frustum voxel."""
    spacing = _as_spacing(spacing_mm)
    r0, r1 = geom.radial_start_mm, geom.radial_end_mm
    physical = frustum_solid_angle(geom) / 3.0 * (r1**3 - r0**3)
    return physical / float(np.prod(spacing)) / float(np.prod(geom.shape))


# Cartesian grid and footprint ratio reported for the 360x96x96 beam grid.
REFERENCE_CARTESIAN_SHAPE: Shape3 = (360, 360, 336)
REFERENCE_FOOTPRINT_RATIO = 7.0


def _extent_mm(geom: ProbeGeometry) -> Tuple[float, float, float]:
    x, y, z = _boundary_points(geom)
    return float(np.ptp(x)), float(np.ptp(y)), float(np.ptp(z))


def spacing_for_shape(
    geom: ProbeGeometry, target_shape: Shape3 = REFERENCE_CARTESIAN_SHAPE
) -> Tuple[float, float, float]:
    """Per-axis spacing whose tight grid has `target_shape` voxels."""
    if min(target_shape) < 2:
        raise GeometryError(f"Target shape needs >= 2 voxels per axis, got {target_shape}.")
    return tuple(e / (n - 1) for e, n in zip(_extent_mm(geom), target_shape))


def spacing_for_ratio(geom: ProbeGeometry, ratio: float = REFERENCE_FOOTPRINT_RATIO) -> float:
    """Isotropic spacing at which `footprint_volume_ratio` equals `ratio`."""
    if not ratio > 0:
        raise GeometryError(f"Footprint ratio must be > 0, got {ratio}.")
    return float(np.cbrt(footprint_volume_ratio(geom, 1.0) / ratio))


class GridReport(BaseModel):
    """Tight Cartesian grid of a geometry next to the reference shape and ratio."""

    spacing_mm: Tuple[float, float, float]
    shape: Shape3
    target_shape: Shape3
    footprint_ratio: float
    target_ratio: float

    @property
    def shape_deviation(self) -> Tuple[float, float, float]:
        return tuple(n / t - 1.0 for n, t in zip(self.shape, self.target_shape))

    @property
    def ratio_deviation(self) -> float:
        return self.footprint_ratio - self.target_ratio

    def shape_within(self, tolerance: float = 0.05) -> bool:
        return all(abs(d) <= tolerance for d in self.shape_deviation)

    def ratio_within(self, tolerance: float = 1.0) -> bool:
        return abs(self.ratio_deviation) <= tolerance

    def summary(self) -> str:
        deviation = ", ".join(f"{d:+.1%}" for d in self.shape_deviation)
        return (
            f"grid {'x'.join(map(str, self.shape))} vs {'x'.join(map(str, self.target_shape))} ({deviation}); "
            f"footprint ratio {self.footprint_ratio:.2f} vs {self.target_ratio:.1f}"
        )


def grid_report(
    geom: ProbeGeometry,
    spacing_mm: Spacing = 0.2,
    target_shape: Shape3 = REFERENCE_CARTESIAN_SHAPE,
    target_ratio: float = REFERENCE_FOOTPRINT_RATIO,
) -> GridReport:
    spacing = _as_spacing(spacing_mm)
    shape, _ = cartesian_grid_shape(geom, spacing)
    report = GridReport(
        spacing_mm=spacing,
        shape=shape,
        target_shape=target_shape,
        footprint_ratio=footprint_volume_ratio(geom, spacing),
        target_ratio=target_ratio,
    )
    logger.info(report.summary())
    return report


def _grid_axes(shape: Shape3, spacing, origin):
    return [origin[i] + np.arange(shape[i]) * spacing[i] for i in range(3)]


def _inside(coords: np.ndarray, shape: Shape3, tol: float = 1e-6) -> np.ndarray:
    ok = np.ones(coords.shape[1:], dtype=bool)
    for axis, n in enumerate(shape):
        ok &= (coords[axis] >= -tol) & (coords[axis] <= n - 1 + tol)
    return ok


def footprint_mask(geom: ProbeGeometry, spacing_mm: Spacing = 0.2) -> MaskVolume:
    """Voxels of the tight Cartesian grid whose inverse-mapped beam coordinate lies inside the beam grid."""
    spacing = _as_spacing(spacing_mm)
    shape, origin = cartesian_grid_shape(geom, spacing)
    xs, ys, zs = _grid_axes(shape, spacing, origin)
    footprint = np.zeros(shape, dtype=np.uint8)
    for x0 in range(0, shape[0], _SLAB):
        gx, gy, gz = np.meshgrid(xs[x0 : x0 + _SLAB], ys, zs, indexing="ij")
        coords = np.stack(cartesian_point_to_frustum(gx, gy, gz, geom))
        footprint[x0 : x0 + _SLAB] = _inside(coords, geom.shape)
    return MaskVolume(data=footprint)


class ScanConverter:
    """Resamples volumes between a probe's beam grid and a regular Cartesian grid.

    The converter keeps the footprint mask of its last forward conversion and the
    number of out-of-bounds samples of its last inverse conversion.
    """

    def __init__(self, geom: ProbeGeometry):
        self.geom = geom
        self.last_footprint: Optional[MaskVolume] = None
        self.last_out_of_bounds: int = 0
        self.logger = logger

    def _forward_coords(self, xs, ys, zs) -> np.ndarray:
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack(cartesian_point_to_frustum(gx, gy, gz, self.geom))

    def to_cartesian(
        self,
        volume: Union[FrustumVolume, MaskVolume],
        spacing_mm: Spacing = 0.2,
    ) -> Union[CartesianVolume, MaskVolume]:
        """Resample a frustum volume (trilinear) or mask (nearest) onto a Cartesian grid.

        Voxels whose inverse-mapped beam coordinate falls outside the beam grid are
        set to 0 and left out of `last_footprint`.
        """
        if volume.shape != tuple(self.geom.shape):
            raise GeometryError(
                f"Volume shape {volume.shape} does not match geometry {self.geom.shape}."
            )
        is_mask = isinstance(volume, MaskVolume)
        spacing = _as_spacing(spacing_mm)
        shape, origin = cartesian_grid_shape(self.geom, spacing)
        xs, ys, zs = _grid_axes(shape, spacing, origin)

        source = volume.data.astype(np.float32)
        out = np.zeros(shape, dtype=np.uint8 if is_mask else np.float32)
        footprint = np.zeros(shape, dtype=np.uint8)
        for x0 in range(0, shape[0], _SLAB):
            coords = self._forward_coords(xs[x0 : x0 + _SLAB], ys, zs)
            inside = _inside(coords, self.geom.shape)
            sampled = ndimage.map_coordinates(
                source,
                coords.reshape(3, -1),
                order=0 if is_mask else 1,
                mode="nearest",
                prefilter=False,
            ).reshape(inside.shape)
            sampled[~inside] = 0
            out[x0 : x0 + _SLAB] = sampled
            footprint[x0 : x0 + _SLAB] = inside

        self.last_footprint = MaskVolume(data=footprint)
        self.logger.info(
            f"Scan-converted {volume.shape} -> {shape} at {spacing} mm; "
            f"footprint holds {int(footprint.sum())} voxels."
        )
        if is_mask:
            return MaskVolume(data=out)
        return CartesianVolume(
            data=np.clip(out, 0.0, volume.intensity_max),
            spacing_mm=spacing,
            intensity_max=volume.intensity_max,
            origin_mm=origin,
        )

    def to_frustum(
        self,
        volume: Union[CartesianVolume, MaskVolume],
        spacing_mm: Optional[Spacing] = None,
        origin_mm: Optional[Tuple[float, float, float]] = None,
        intensity_max: float = 255.0,
    ) -> Union[FrustumVolume, MaskVolume]:
        """Sample a Cartesian volume at every beam position of the geometry.

        Beam samples that land outside the Cartesian grid are set to 0 and counted
        in `last_out_of_bounds`.
        """
        is_mask = isinstance(volume, MaskVolume)
        if is_mask:
            if spacing_mm is None:
                raise GeometryError("Converting a mask needs an explicit spacing.")
            spacing = _as_spacing(spacing_mm)
            origin = tuple(origin_mm or (0.0, 0.0, 0.0))
        else:
            spacing = volume.spacing_mm
            origin = volume.origin_mm
            intensity_max = volume.intensity_max

        D, A, E = self.geom.shape
        source = volume.data.astype(np.float32)
        out = np.zeros(self.geom.shape, dtype=np.uint8 if is_mask else np.float32)
        a, e = np.meshgrid(np.arange(A), np.arange(E), indexing="ij")
        out_of_bounds = 0
        for r0 in range(0, D, _SLAB):
            r_idx = np.arange(r0, min(r0 + _SLAB, D))[:, None, None]
            x, y, z = frustum_point_to_cartesian(r_idx, a[None], e[None], self.geom)
            coords = np.stack(
                [(c - o) / s for c, o, s in zip(np.broadcast_arrays(x, y, z), origin, spacing)]
            )
            inside = _inside(coords, volume.shape)
            sampled = ndimage.map_coordinates(
                source,
                coords.reshape(3, -1),
                order=0 if is_mask else 1,
                mode="nearest",
                prefilter=False,
            ).reshape(inside.shape)
            sampled[~inside] = 0
            out[r0 : r0 + _SLAB] = sampled
            out_of_bounds += int((~inside).sum())

        self.last_out_of_bounds = out_of_bounds
        if out_of_bounds:
            self.logger.warning(
                f"{out_of_bounds} beam samples fell outside the Cartesian grid and were set to 0."
            )
        if is_mask:
            return MaskVolume(data=out)
        return FrustumVolume(
            data=np.clip(out, 0.0, intensity_max),
            radial_step_mm=self.geom.radial_step_mm,
            azimuth_step_deg=self.geom.azimuth_step_deg,
            elevation_step_deg=self.geom.elevation_step_deg,
            intensity_max=intensity_max,
            radial_start_mm=self.geom.radial_start_mm,
        )


def frustum_to_cartesian(
    fv: FrustumVolume, geom: Optional[ProbeGeometry] = None, spacing_mm: Spacing = 0.2
) -> CartesianVolume:
    """Scan-convert a frustum volume; the geometry defaults to the volume's own steps."""
    return ScanConverter(geom or ProbeGeometry.from_volume(fv)).to_cartesian(fv, spacing_mm)


def cartesian_to_frustum(
    cv: CartesianVolume, geom: ProbeGeometry, frustum_shape: Optional[Shape3] = None
) -> FrustumVolume:
    """Invert scan conversion onto the beam grid of `geom` (reshaped to `frustum_shape` if given)."""
    if frustum_shape is not None and tuple(frustum_shape) != tuple(geom.shape):
        geom = geom.copy(update={"shape": tuple(frustum_shape)})
    return ScanConverter(geom).to_frustum(cv)
