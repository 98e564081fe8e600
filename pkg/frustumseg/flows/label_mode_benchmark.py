import os
from typing import Any, Dict, List, Tuple

from prefect import Flow
from prefect.utilities import logging

from ..network.model import NetworkConfig
from ..sources.phantom import PhantomSpec
from ..task_utils import df_to_csv, eval_report_to_df, union_dfs_task
from ..tasks import EvaluateMasks, GeneratePhantomDataset, InferMasks, TrainWeakSegmentation
from ..weaksup.pseudo_labels import LABEL_MODES
from ..weaksup.training import TrainConfig
from .weak_segmentation import checkpoint_path_of

logger = logging.get_logger(__name__)


class LabelModeBenchmark(Flow):
    def __init__(
        self,
        name: str,
        out_dir: str,
        label_modes: List[str] = ("bbox", "bbox_cam_lf_crf", "proposed", "full"),
        phantom_spec: PhantomSpec = None,
        count: int = 35,
        split: Tuple[int, int, int] = (20, 5, 10),
        seed: int = 0,
        train_config: TrainConfig = None,
        net_config: NetworkConfig = None,
        timeout: int = 3600,
        *args: List[Any],
        **kwargs: Dict[str, Any],
    ):
        """
        Flow training one model per pseudo-label source on the same phantoms and writing
        one report with a block of rows per label mode.

        Args:
            name (str): The name of the flow.
            out_dir (str): Root directory of the dataset, models, predictions and report.
            label_modes (List[str], optional): Label modes to compare.
                Defaults to ("bbox", "bbox_cam_lf_crf", "proposed", "full").
            phantom_spec (PhantomSpec, optional): Base phantom recipe. Defaults to PhantomSpec().
            count (int, optional): Number of phantoms. Defaults to 35.
            split (Tuple[int, int, int], optional): Train/val/test sizes. Defaults to (20, 5, 10).
            seed (int, optional): Seed shared by every run. Defaults to 0.
            train_config (TrainConfig, optional): Settings shared by every run; the label mode
                is overridden per run. Defaults to TrainConfig.desk().
            net_config (NetworkConfig, optional): Architecture. Defaults to the compact profile.
            timeout(int, optional): The amount of time (in seconds) to wait while running a task before
                a timeout occurs. Defaults to 3600.
        """
        unknown = sorted(set(label_modes) - set(LABEL_MODES))
        if unknown:
            raise ValueError(f"Unknown label modes {unknown}. Choose from {LABEL_MODES}.")
        self.out_dir = out_dir
        self.label_modes = list(label_modes)
        self.phantom_spec = phantom_spec or PhantomSpec()
        self.count = count
        self.split = split
        self.seed = seed
        self.train_config = train_config or TrainConfig.desk(seed=seed)
        self.net_config = net_config or NetworkConfig.profile("compact", rng_seed=seed)
        self.timeout = timeout
        self.report_path = os.path.join(out_dir, "label_modes.csv")

        super().__init__(*args, name=name, **kwargs)

        self.gen_flow()

    def gen_mode_report(self, mode: str, manifest):
        config = self.train_config.copy(update={"label_mode": mode})
        train_task = TrainWeakSegmentation(timeout=self.timeout)
        result = train_task.bind(
            manifest_path=manifest,
            train_config=config,
            net_config=self.net_config,
            out_dir=os.path.join(self.out_dir, "model", mode),
            flow=self,
        )
        checkpoint = checkpoint_path_of.bind(result, flow=self)
        infer_task = InferMasks(m_rois=config.m_rois_test, timeout=self.timeout)
        preds = infer_task.bind(
            checkpoint_path=checkpoint,
            manifest_path=manifest,
            out_dir=os.path.join(self.out_dir, "pred", mode),
            tau_loc=config.tau_loc,
            flow=self,
        )
        eval_task = EvaluateMasks(label=mode, timeout=self.timeout)
        report = eval_task.bind(pred_paths=preds, manifest_path=manifest, flow=self)
        return eval_report_to_df.bind(report, flow=self)

    def gen_flow(self) -> Flow:
        phantom_task = GeneratePhantomDataset(timeout=self.timeout)
        manifest = phantom_task.bind(
            base_spec=self.phantom_spec,
            count=self.count,
            seed=self.seed,
            split=self.split,
            out_dir=os.path.join(self.out_dir, "data"),
            flow=self,
        )
        dfs = [self.gen_mode_report(mode, manifest) for mode in self.label_modes]
        df = union_dfs_task.bind(dfs, flow=self)
        df_to_csv.bind(df=df, path=self.report_path, flow=self)
