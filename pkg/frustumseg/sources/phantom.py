"""Synthetic frustum-ultrasound phantoms with a bright curved catheter tube."""
import json
import os
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, root_validator, validator
from scipy import ndimage
from scipy.spatial import cKDTree

from ..exceptions import PhantomSpecError
from ..geometry import ProbeGeometry, frustum_point_to_cartesian
from ..utils import handle_if_empty
from ..volume import BoundingBox3, FrustumVolume, MaskVolume, save_volume
from .base import Source

PhantomTriple = Tuple[FrustumVolume, MaskVolume, BoundingBox3]

_SAMPLES_PER_SEGMENT = 200
_MAX_TURN_DEG = 60.0


class PhantomSpec(BaseModel):
    """Recipe for one phantom. Defaults give the 96x32x32 desk-scale volume."""

    shape: Tuple[int, int, int] = (96, 32, 32)
    radial_step_mm: float = 0.5
    azimuth_step_deg: float = 1.003
    elevation_step_deg: float = 1.003
    radial_start_mm: float = 10.0
    intensity_max: float = 255.0

    catheter_diameter_mm: float = 3.3
    control_points: List[Tuple[float, float, float]] = [
        (32.0, 9.0, 11.0),
        (46.0, 15.0, 16.0),
        (60.0, 22.0, 20.0),
    ]
    tube_intensity_mean: float = 200.0
    tube_intensity_std: float = 12.0

    background_mean: float = 60.0
    background_variation: float = 20.0
    background_smoothness_vox: float = 6.0
    speckle_strength: float = 0.5

    tissue_count: int = 2
    tissue_intensity: float = 150.0
    tissue_thickness_vox: float = 1.5

    contrast_margin: float = 40.0
    bbox_margin_vox: int = 4
    rng_seed: int = 0

    @validator("catheter_diameter_mm")
    def _positive_diameter(cls, v):
        if not v > 0:
            raise PhantomSpecError(f"catheter_diameter_mm must be > 0, got {v}.")
        return v

    @validator("control_points")
    def _three_to_five_points(cls, v):
        if not 3 <= len(v) <= 5:
            raise PhantomSpecError(f"Expected 3-5 control points, got {len(v)}.")
        return v

    @validator("bbox_margin_vox")
    def _non_negative_margin(cls, v):
        if v < 0:
            raise PhantomSpecError(f"bbox_margin_vox must be >= 0, got {v}.")
        return v

    @validator("tissue_count")
    def _tissue_range(cls, v):
        if not 0 <= v <= 3:
            raise PhantomSpecError(f"tissue_count must be in [0, 3], got {v}.")
        return v

    @root_validator(skip_on_failure=True)
    def _points_inside(cls, values):
        shape = values["shape"]
        for point in values["control_points"]:
            if not all(0 <= c <= n - 1 for c, n in zip(point, shape)):
                raise PhantomSpecError(f"Control point {point} lies outside shape {shape}.")
        return values

    @classmethod
    def beam_grid(cls, **kwargs) -> "PhantomSpec":
        """A phantom on the 360x96x96 beam grid at 0.2695 mm x 1.003° x 1.003°."""
        defaults = dict(
            shape=(360, 96, 96),
            radial_step_mm=0.2695,
            radial_start_mm=0.0,
            control_points=[(150.0, 30.0, 40.0), (200.0, 48.0, 48.0), (250.0, 66.0, 56.0)],
            background_smoothness_vox=12.0,
        )
        defaults.update(kwargs)
        return cls(**defaults)

    def geometry(self) -> ProbeGeometry:
        return ProbeGeometry(
            shape=self.shape,
            radial_step_mm=self.radial_step_mm,
            azimuth_step_deg=self.azimuth_step_deg,
            elevation_step_deg=self.elevation_step_deg,
            radial_start_mm=self.radial_start_mm,
        )


def catmull_rom(points: np.ndarray, samples_per_segment: int = _SAMPLES_PER_SEGMENT) -> np.ndarray:
    """Uniform Catmull-Rom curve through `points` (K, 3), end tangents by reflection."""
    points = np.asarray(points, dtype=np.float64)
    padded = np.vstack([2 * points[0] - points[1], points, 2 * points[-1] - points[-2]])
    t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)[:, None]
    pieces = []
    for i in range(len(points) - 1):
        p0, p1, p2, p3 = padded[i : i + 4]
        pieces.append(
            0.5
            * (
                2 * p1
                + (p2 - p0) * t
                + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t**2
                + (3 * p1 - p0 - 3 * p2 + p3) * t**3
            )
        )
    pieces.append(points[-1][None])
    return np.vstack(pieces)


def _check_turns(points: np.ndarray) -> None:
    segments = np.diff(np.asarray(points, dtype=np.float64), axis=0)
    for u, v in zip(segments[:-1], segments[1:]):
        cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-12)
        if np.rad2deg(np.arccos(np.clip(cos, -1.0, 1.0))) > _MAX_TURN_DEG:
            raise PhantomSpecError(
                f"Control polygon turns more than {_MAX_TURN_DEG}° between segments."
            )


def tube_mask(spec: PhantomSpec, centerline: np.ndarray) -> np.ndarray:
    """Voxels whose physical distance to the centerline is at most diameter/2."""
    geom = spec.geometry()
    r, a, e = np.indices(spec.shape)
    voxels = np.stack(frustum_point_to_cartesian(r, a, e, geom), axis=-1).reshape(-1, 3)
    line = np.stack(frustum_point_to_cartesian(*centerline.T, geom), axis=-1)
    radius = spec.catheter_diameter_mm / 2.0
    distance, _ = cKDTree(line).query(voxels, distance_upper_bound=radius + 1e-9)
    return (distance <= radius).reshape(spec.shape)


def _tissue_shells(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    shells = np.zeros(spec.shape, dtype=bool)
    grid = np.indices(spec.shape).astype(np.float64)
    for _ in range(spec.tissue_count):
        center = np.array([rng.uniform(0, n - 1) for n in spec.shape])
        radii = np.array([rng.uniform(0.25, 0.6) * n for n in spec.shape])
        q = np.sqrt(sum(((grid[i] - center[i]) / radii[i]) ** 2 for i in range(3)))
        shells |= np.abs(q - 1.0) * radii.min() < spec.tissue_thickness_vox
    return shells


def tube_contrast(volume: FrustumVolume, mask: MaskVolume) -> float:
    """Mean intensity inside the tube minus mean intensity elsewhere."""
    inside = mask.data.astype(bool)
    return float(volume.data[inside].mean() - volume.data[~inside].mean())


def generate_phantom(spec: PhantomSpec) -> PhantomTriple:
    """Render one phantom.

    Args:
        spec (PhantomSpec): The phantom recipe, including its RNG seed.

    Raises:
        PhantomSpecError: If the tube leaves the volume, bends too sharply, ends up
            empty or does not stand out from the background by `contrast_margin`.

    Returns:
        (volume, ground_truth, loose_bbox)
    """
    _check_turns(np.asarray(spec.control_points))
    centerline = catmull_rom(np.asarray(spec.control_points))
    upper = np.array(spec.shape, dtype=np.float64) - 1
    if (centerline < 0).any() or (centerline > upper).any():
        raise PhantomSpecError("Tube centerline exits the volume.")

    rng = np.random.default_rng(spec.rng_seed)
    field = ndimage.gaussian_filter(
        rng.standard_normal(spec.shape), sigma=spec.background_smoothness_vox, mode="reflect"
    )
    field /= np.abs(field).max() + 1e-12
    image = spec.background_mean + spec.background_variation * field

    shells = _tissue_shells(spec, rng)
    image[shells] = rng.normal(spec.tissue_intensity, 0.1 * spec.tissue_intensity, shells.sum())

    inside = tube_mask(spec, centerline)
    if not inside.any():
        raise PhantomSpecError("Tube covers no voxel at this resolution.")
    image[inside] = rng.normal(spec.tube_intensity_mean, spec.tube_intensity_std, inside.sum())

    # unit-mean Rayleigh speckle, blended toward 1 by speckle_strength
    speckle = rng.rayleigh(scale=np.sqrt(2.0 / np.pi), size=spec.shape)
    image *= 1.0 + spec.speckle_strength * (speckle - 1.0)
    image = np.clip(image, 0.0, spec.intensity_max)

    volume = FrustumVolume(
        data=image.astype(np.float32),
        radial_step_mm=spec.radial_step_mm,
        azimuth_step_deg=spec.azimuth_step_deg,
        elevation_step_deg=spec.elevation_step_deg,
        intensity_max=spec.intensity_max,
        radial_start_mm=spec.radial_start_mm,
    )
    mask = MaskVolume(data=inside)
    contrast = tube_contrast(volume, mask)
    if contrast < spec.contrast_margin:
        raise PhantomSpecError(
            f"Tube contrast {contrast:.1f} is below the required margin {spec.contrast_margin}."
        )
    bbox = BoundingBox3.from_mask(mask).dilate(spec.bbox_margin_vox, spec.shape)
    return volume, mask, bbox


def default_split(count: int) -> Tuple[int, int, int]:
    """Train/val/test sizes in 75/8.3/16.7 percent proportions."""
    n_train = max(1, int(round(count * 0.75)))
    n_val = min(int(round(count / 12.0)), count - n_train)
    return n_train, n_val, count - n_train - n_val


def _member_seed(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, index]))


def jitter_spec(base_spec: PhantomSpec, rng: np.random.Generator, jitter_vox: float = 3.0) -> PhantomSpec:
    """Perturb tube geometry and intensity of `base_spec` with draws from `rng`."""
    upper = np.array(base_spec.shape, dtype=np.float64) - 3
    points = np.asarray(base_spec.control_points) + rng.uniform(
        -jitter_vox, jitter_vox, size=(len(base_spec.control_points), 3)
    )
    points = np.clip(points, 2.0, upper)
    return base_spec.copy(
        update=dict(
            control_points=[tuple(float(c) for c in p) for p in points],
            tube_intensity_mean=float(
                np.clip(base_spec.tube_intensity_mean + rng.normal(0.0, 10.0), 0.0, base_spec.intensity_max)
            ),
            rng_seed=int(rng.integers(0, 2**63 - 1)),
        )
    )


def generate_dataset(
    base_spec: PhantomSpec,
    count: int,
    seed: int,
    max_attempts: int = 10,
) -> Tuple[List[PhantomTriple], List[PhantomSpec]]:
    """Render `count` jittered variants of `base_spec`.

    Each member's randomness is derived only from (seed, index).

    Returns:
        The phantom triples and the exact spec each one was rendered from.
    """
    if count < 1:
        raise PhantomSpecError(f"count must be >= 1, got {count}.")
    triples, specs = [], []
    for index in range(count):
        rng = _member_seed(seed, index)
        for attempt in range(max_attempts):
            spec = jitter_spec(base_spec, rng)
            try:
                triples.append(generate_phantom(spec))
                specs.append(spec)
                break
            except PhantomSpecError:
                if attempt == max_attempts - 1:
                    raise
    return triples, specs


class PhantomDataset(Source):
    """
    Generates a phantom dataset on disk: one volume, mask and bbox file per member
    plus a tab-separated manifest.

    Args:
        base_spec (PhantomSpec): The recipe every member jitters.
        count (int): Number of members.
        seed (int): Master seed.
        split (Tuple[int, int, int], optional): Train/val/test sizes. Defaults to
            `default_split(count)`.
    """

    MANIFEST_NAME = "manifest.tsv"

    def __init__(
        self,
        base_spec: PhantomSpec,
        count: int,
        seed: int,
        split: Optional[Tuple[int, int, int]] = None,
        *args,
        **kwargs,
    ):
        split = tuple(split) if split is not None else default_split(count)
        if sum(split) != count or min(split) < 0:
            raise PhantomSpecError(f"Split {split} does not partition {count} members.")
        self.base_spec = base_spec
        self.count = count
        self.seed = seed
        self.split = split
        self.records: List[dict] = []
        super().__init__(*args, **kwargs)

    def _split_name(self, index: int) -> str:
        n_train, n_val, _ = self.split
        if index < n_train:
            return "train"
        return "val" if index < n_train + n_val else "test"

    def write(self, out_dir: str) -> str:
        """Render every member into `out_dir` and return the manifest path."""
        os.makedirs(out_dir, exist_ok=True)
        triples, specs = generate_dataset(self.base_spec, self.count, self.seed)
        self.records = []
        for index, ((volume, mask, bbox), spec) in enumerate(zip(triples, specs)):
            stem = f"phantom_{index:03d}"
            save_volume(volume, os.path.join(out_dir, f"{stem}.frv"))
            save_volume(mask, os.path.join(out_dir, f"{stem}_mask.msk"))
            with open(os.path.join(out_dir, f"{stem}_bbox.json"), "w") as f:
                json.dump({"start": list(bbox.start), "end": list(bbox.end)}, f)
            self.records.append(
                {
                    "id": stem,
                    "split": self._split_name(index),
                    "seed": spec.rng_seed,
                    "volume_path": f"{stem}.frv",
                    "mask_path": f"{stem}_mask.msk",
                    "bbox_path": f"{stem}_bbox.json",
                    "bbox_start": ",".join(str(v) for v in bbox.start),
                    "bbox_end": ",".join(str(v) for v in bbox.end),
                    "bbox_margin_vox": spec.bbox_margin_vox,
                    "occupancy": round(mask.count / float(mask.data.size), 6),
                    "contrast": round(tube_contrast(volume, mask), 3),
                }
            )
        manifest = os.path.join(out_dir, self.MANIFEST_NAME)
        self.to_csv(manifest)
        self.logger.info(
            f"Wrote {self.count} phantoms (split {self.split}) to {out_dir}."
        )
        return manifest

    def to_df(self, if_empty: str = "warn") -> pd.DataFrame:
        df = pd.DataFrame.from_records(self.records)
        handle_if_empty(df.empty, if_empty, message="The phantom dataset has not been written yet.")
        return df
