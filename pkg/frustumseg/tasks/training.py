from prefect import Task
from prefect.utilities.tasks import defaults_from_attrs

from ..network.model import NetworkConfig
from ..sources.dataset import VolumeDataset
from ..weaksup.manifest import RunManifest
from ..weaksup.training import TrainConfig, TrainResult, train


class TrainWeakSegmentation(Task):
    """
    Task for training the segmentation network from a dataset manifest's loose boxes.

    Args:
        train_config (TrainConfig, optional): Schedule and weak-supervision settings.
            Defaults to TrainConfig().
        net_config (NetworkConfig, optional): Architecture. Defaults to the compact profile.
        out_dir (str, optional): Where the checkpoint and run manifest go. Defaults to None.
        timeout(int, optional): The amount of time (in seconds) to wait while running this task before
            a timeout occurs. Defaults to 3600.
    """

    def __init__(
        self,
        train_config: TrainConfig = None,
        net_config: NetworkConfig = None,
        out_dir: str = None,
        timeout: int = 3600,
        *args,
        **kwargs,
    ):
        self.train_config = train_config or TrainConfig()
        self.net_config = net_config or NetworkConfig.profile("compact")
        self.out_dir = out_dir

        super().__init__(name="train_weak_segmentation", timeout=timeout, *args, **kwargs)

    @defaults_from_attrs("train_config", "net_config", "out_dir")
    def run(
        self,
        manifest_path: str,
        train_config: TrainConfig = None,
        net_config: NetworkConfig = None,
        out_dir: str = None,
        run_manifest: RunManifest = None,
    ) -> TrainResult:
        if out_dir is None:
            raise ValueError("An output directory is required.")
        self.logger.info(
            f"Training with label mode '{train_config.label_mode}' on {manifest_path}."
        )
        result = train(VolumeDataset(manifest_path), train_config, net_config, out_dir, run_manifest)
        self.logger.info(f"Checkpoint written to {result.checkpoint_path} ({result.stop_reason}).")
        return result
