from typing import Dict

from prefect import Task
from prefect.utilities.tasks import defaults_from_attrs

from ..metrics import EvalReport, evaluate
from ..sources.dataset import VolumeDataset
from ..volume import MaskVolume, load_volume


class EvaluateMasks(Task):
    """
    Task for scoring predicted mask files against the ground truth listed in a manifest.

    Args:
        label (str, optional): Report label, e.g. the label mode. Defaults to None.
        timeout(int, optional): The amount of time (in seconds) to wait while running this task before
            a timeout occurs. Defaults to 3600.
    """

    def __init__(self, label: str = None, timeout: int = 3600, *args, **kwargs):
        self.label = label

        super().__init__(name="evaluate_masks", timeout=timeout, *args, **kwargs)

    @defaults_from_attrs("label")
    def run(self, pred_paths: Dict[str, str], manifest_path: str, label: str = None) -> EvalReport:
        dataset = VolumeDataset(manifest_path)
        df = dataset.to_df().set_index("id")
        preds, gts = {}, {}
        for volume_id, path in pred_paths.items():
            preds[volume_id] = load_volume(path, expect=MaskVolume)
            gts[volume_id] = load_volume(dataset.path(df.loc[volume_id, "mask_path"]), expect=MaskVolume)
        config = {"manifest": manifest_path, "bbox_margin_vox": dataset.bbox_margins()}
        report = evaluate(preds, gts, config=config, label=label)
        summary = report.summary
        self.logger.info(
            f"{label or 'eval'}: DSC {summary['dsc_mean']:.4f} ± {summary['dsc_std']:.4f}, "
            f"VS {summary['vs_mean']:.4f} ± {summary['vs_std']:.4f} over {len(report.scores)} volumes."
        )
        return report
