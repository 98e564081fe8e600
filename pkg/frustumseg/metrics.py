"""Overlap metrics and evaluation reports."""
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, root_validator, validator

from .exceptions import ShapeMismatchError
from .volume import MaskVolume

MaskLike = Union[MaskVolume, np.ndarray]


class ConfusionCounts(BaseModel):
    tp: int
    fp: int
    fn: int
    tn: int

    @validator("tp", "fp", "fn", "tn")
    def _non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be >= 0, got {v}")
        return v

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _binary(mask: MaskLike) -> np.ndarray:
    data = mask.data if isinstance(mask, MaskVolume) else np.asarray(mask)
    return data.astype(bool)


def confusion(pred: MaskLike, gt: MaskLike) -> ConfusionCounts:
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"Prediction {p.shape} and ground truth {g.shape} differ in shape.")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=int(p.size) - tp - fp - fn)


def dsc(counts: ConfusionCounts) -> float:
    """2TP / (2TP + FP + FN); 1.0 when both masks are empty."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2.0 * counts.tp / denom


def vs(counts: ConfusionCounts) -> float:
    """1 - |FN - FP| / (2TP + FP + FN); 1.0 when both masks are empty."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 1.0 - abs(counts.fn - counts.fp) / denom


class VolumeScore(BaseModel):
    id: str
    dsc: float
    vs: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @root_validator(skip_on_failure=True)
    def _unit_range(cls, values):
        for key in ("dsc", "vs"):
            if not 0.0 <= values[key] <= 1.0:
                raise ValueError(f"{key} must lie in [0, 1], got {values[key]}")
        return values


def score_volume(volume_id: str, pred: MaskLike, gt: MaskLike) -> VolumeScore:
    counts = confusion(pred, gt)
    return VolumeScore(
        id=volume_id, dsc=dsc(counts), vs=vs(counts), tp=counts.tp, fp=counts.fp, fn=counts.fn
    )


class EvalReport(BaseModel):
    """Per-volume DSC and VS with the dataset mean and standard deviation."""

    scores: List[VolumeScore] = []
    config: Dict = {}
    label: Optional[str] = None

    @property
    def summary(self) -> Dict[str, float]:
        if not self.scores:
            return {"dsc_mean": float("nan"), "dsc_std": float("nan"), "vs_mean": float("nan"), "vs_std": float("nan")}
        d = np.array([s.dsc for s in self.scores])
        v = np.array([s.vs for s in self.scores])
        return {
            "dsc_mean": float(d.mean()),
            "dsc_std": float(d.std()),
            "vs_mean": float(v.mean()),
            "vs_std": float(v.std()),
        }

    def to_df(self, include_summary: bool = True) -> pd.DataFrame:
        """One row per volume, plus "mean" and "std" rows."""
        columns = ["id", "dsc", "vs"]
        df = pd.DataFrame([{"id": s.id, "dsc": s.dsc, "vs": s.vs} for s in self.scores], columns=columns)
        if include_summary and self.scores:
            summary = self.summary
            extra = pd.DataFrame(
                [
                    {"id": "mean", "dsc": summary["dsc_mean"], "vs": summary["vs_mean"]},
                    {"id": "std", "dsc": summary["dsc_std"], "vs": summary["vs_std"]},
                ],
                columns=columns,
            )
            df = pd.concat([df, extra], ignore_index=True)
        return df

    def to_table(self) -> str:
        """Human-readable table; values scaled by 100."""
        lines = [f"{'id':<16}{'DSC':>10}{'VS':>10}"]
        for s in self.scores:
            lines.append(f"{s.id:<16}{100 * s.dsc:>10.1f}{100 * s.vs:>10.1f}")
        if self.scores:
            sm = self.summary
            lines.append(
                f"{'mean±std':<16}{100 * sm['dsc_mean']:>5.1f}±{100 * sm['dsc_std']:<4.1f}"
                f"{100 * sm['vs_mean']:>5.1f}±{100 * sm['vs_std']:.1f}"
            )
        return "\n".join(lines)


def evaluate(
    preds: Dict[str, MaskLike],
    gts: Dict[str, MaskLike],
    config: Dict = None,
    label: str = None,
) -> EvalReport:
    """Score every prediction against the ground truth with the same id.

    Raises:
        KeyError: If a prediction has no ground truth.
    """
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise KeyError(f"No ground truth for {missing}.")
    scores = [score_volume(key, preds[key], gts[key]) for key in sorted(preds)]
    return EvalReport(scores=scores, config=config or {}, label=label)
