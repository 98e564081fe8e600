import os
from typing import List, Optional

import pandas as pd
from pydantic import BaseModel

from ..exceptions import ValidationError
from ..utils import handle_if_empty
from ..volume import BoundingBox3, FrustumVolume, MaskVolume, load_volume
from .base import Source


class DatasetItem(BaseModel):
    """One phantom member: its volume, loose box and (validation-only) ground truth."""

    id: str
    split: str
    volume: FrustumVolume
    bbox: BoundingBox3
    mask: Optional[MaskVolume] = None
    volume_path: str = ""

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False


def _parse_triple(value: str):
    return tuple(int(v) for v in str(value).split(","))


class VolumeDataset(Source):
    """
    Reads a dataset manifest written by `PhantomDataset` and loads its members.

    Args:
        manifest_path (str): Path to the tab-separated manifest.
    """

    def __init__(self, manifest_path: str, *args, **kwargs):
        if not os.path.isfile(manifest_path):
            raise FileNotFoundError(f"Manifest {manifest_path} does not exist.")
        self.manifest_path = manifest_path
        self.root = os.path.dirname(os.path.abspath(manifest_path))
        self.df = pd.read_csv(manifest_path, sep="\t", dtype={"id": str})
        missing = {"id", "split", "volume_path", "bbox_start", "bbox_end"} - set(self.df.columns)
        if missing:
            raise ValidationError(f"Manifest {manifest_path} lacks columns {sorted(missing)}.")
        super().__init__(*args, **kwargs)

    def to_df(self, if_empty: str = "warn") -> pd.DataFrame:
        handle_if_empty(self.df.empty, if_empty, message=f"{self.manifest_path} lists no volumes.")
        return self.df.copy()

    def path(self, relative: str) -> str:
        return os.path.join(self.root, relative)

    def bbox_margins(self) -> List[int]:
        """Distinct box margins of the members; empty for manifests without the column."""
        if "bbox_margin_vox" not in self.df.columns:
            return []
        return sorted(int(v) for v in self.df["bbox_margin_vox"].dropna().unique())

    def files(self, split: Optional[str] = None) -> List[str]:
        """Every file the given split reads, for manifest hashing."""
        df = self.df if split is None else self.df[self.df["split"] == split]
        columns = [c for c in ("volume_path", "mask_path") if c in df.columns]
        return [self.path(p) for c in columns for p in df[c] if isinstance(p, str)]

    def items(self, split: Optional[str] = None, with_masks: bool = True) -> List[DatasetItem]:
        """Load the members of `split` (all members if None), in manifest order."""
        df = self.df if split is None else self.df[self.df["split"] == split]
        items = []
        for row in df.itertuples(index=False):
            mask = None
            mask_path = getattr(row, "mask_path", None)
            if with_masks and isinstance(mask_path, str):
                mask = load_volume(self.path(mask_path), expect=MaskVolume)
            items.append(
                DatasetItem(
                    id=row.id,
                    split=row.split,
                    volume=load_volume(self.path(row.volume_path), expect=FrustumVolume),
                    bbox=BoundingBox3(
                        start=_parse_triple(row.bbox_start), end=_parse_triple(row.bbox_end)
                    ),
                    mask=mask,
                    volume_path=self.path(row.volume_path),
                )
            )
        self.logger.info(f"Loaded {len(items)} volumes for split {split or 'all'}.")
        return items
