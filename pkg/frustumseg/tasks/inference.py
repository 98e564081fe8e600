import os
from typing import Dict

from prefect import Task
from prefect.utilities.tasks import defaults_from_attrs

from ..network.checkpoint import load_checkpoint
from ..sources.dataset import VolumeDataset
from ..volume import FrustumVolume, load_volume, save_volume
from ..weaksup.inference import infer


def predict_file(net, in_path: str, out_path: str, m_rois: int, tau_loc: float) -> str:
    volume = load_volume(in_path, expect=FrustumVolume)
    result = infer(net, volume, m_rois=m_rois, tau_loc=tau_loc)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    save_volume(result.mask, out_path)
    return out_path


class InferMasks(Task):
    """
    Task for segmenting every volume of a dataset split with a trained checkpoint.

    Masks are written as `<out_dir>/<id>_pred.msk`.

    Args:
        split (str, optional): Manifest split to segment. Defaults to "test".
        m_rois (int, optional): ROIs decoded per volume. Defaults to 2.
        tau_loc (float, optional): Localization threshold. Defaults to 0.5.
        timeout(int, optional): The amount of time (in seconds) to wait while running this task before
            a timeout occurs. Defaults to 3600.
    """

    def __init__(
        self,
        split: str = "test",
        m_rois: int = 2,
        tau_loc: float = 0.5,
        timeout: int = 3600,
        *args,
        **kwargs,
    ):
        self.split = split
        self.m_rois = m_rois
        self.tau_loc = tau_loc

        super().__init__(name="infer_masks", timeout=timeout, *args, **kwargs)

    @defaults_from_attrs("split", "m_rois", "tau_loc")
    def run(
        self,
        checkpoint_path: str,
        manifest_path: str,
        out_dir: str,
        split: str = None,
        m_rois: int = None,
        tau_loc: float = None,
    ) -> Dict[str, str]:
        """
        Returns:
            Dict[str, str]: Volume id to predicted mask path.
        """
        net = load_checkpoint(checkpoint_path)
        dataset = VolumeDataset(manifest_path)
        df = dataset.to_df()
        df = df[df["split"] == split]
        paths = {}
        for row in df.itertuples(index=False):
            paths[row.id] = predict_file(
                net,
                dataset.path(row.volume_path),
                os.path.join(out_dir, f"{row.id}_pred.msk"),
                m_rois,
                tau_loc,
            )
        self.logger.info(f"Segmented {len(paths)} '{split}' volumes into {out_dir}.")
        return paths
