import os
from typing import Any, Dict, List, Tuple

from prefect import Flow, task
from prefect.utilities import logging

from ..network.model import NetworkConfig
from ..sources.phantom import PhantomSpec
from ..task_utils import df_to_csv, df_to_parquet, eval_report_to_df, write_to_json
from ..tasks import EvaluateMasks, GeneratePhantomDataset, InferMasks, TrainWeakSegmentation
from ..weaksup.training import TrainConfig

logger = logging.get_logger(__name__)


@task(timeout=3600)
def checkpoint_path_of(result) -> str:
    return result.checkpoint_path


class WeakSegmentationPipeline(Flow):
    def __init__(
        self,
        name: str,
        out_dir: str,
        phantom_spec: PhantomSpec = None,
        count: int = 35,
        split: Tuple[int, int, int] = (20, 5, 10),
        seed: int = 0,
        train_config: TrainConfig = None,
        net_config: NetworkConfig = None,
        output_file_extension: str = ".csv",
        timeout: int = 3600,
        *args: List[Any],
        **kwargs: Dict[str, Any],
    ):
        """
        Flow generating a phantom dataset, training from its loose boxes, segmenting the
        test split and writing the evaluation report.

        Args:
            name (str): The name of the flow.
            out_dir (str): Root directory; the flow writes `data/`, `model/`, `pred/`, the report
                and `pipeline_config.json`.
            phantom_spec (PhantomSpec, optional): Base phantom recipe. Defaults to PhantomSpec().
            count (int, optional): Number of phantoms. Defaults to 35.
            split (Tuple[int, int, int], optional): Train/val/test sizes. Defaults to (20, 5, 10).
            seed (int, optional): Seed of the dataset and of training. Defaults to 0.
            train_config (TrainConfig, optional): Training settings. Defaults to TrainConfig.desk().
            net_config (NetworkConfig, optional): Architecture. Defaults to the compact profile.
            output_file_extension (str, optional): ".csv" or ".parquet". Defaults to ".csv".
            timeout(int, optional): The amount of time (in seconds) to wait while running a task before
                a timeout occurs. Defaults to 3600.
        """
        self.out_dir = out_dir
        self.phantom_spec = phantom_spec or PhantomSpec()
        self.count = count
        self.split = split
        self.seed = seed
        self.train_config = train_config or TrainConfig.desk(seed=seed)
        self.net_config = net_config or NetworkConfig.profile("compact", rng_seed=seed)
        self.output_file_extension = output_file_extension
        self.timeout = timeout

        self.data_dir = os.path.join(out_dir, "data")
        self.model_dir = os.path.join(out_dir, "model")
        self.pred_dir = os.path.join(out_dir, "pred")
        self.report_path = os.path.join(out_dir, "eval" + output_file_extension)
        self.config_path = os.path.join(out_dir, "pipeline_config.json")

        super().__init__(*args, name=name, **kwargs)

        self.gen_flow()

    def gen_flow(self) -> Flow:
        phantom_task = GeneratePhantomDataset(timeout=self.timeout)
        manifest = phantom_task.bind(
            base_spec=self.phantom_spec,
            count=self.count,
            seed=self.seed,
            split=self.split,
            out_dir=self.data_dir,
            flow=self,
        )

        train_task = TrainWeakSegmentation(timeout=self.timeout)
        result = train_task.bind(
            manifest_path=manifest,
            train_config=self.train_config,
            net_config=self.net_config,
            out_dir=self.model_dir,
            flow=self,
        )
        checkpoint = checkpoint_path_of.bind(result, flow=self)

        infer_task = InferMasks(m_rois=self.train_config.m_rois_test, timeout=self.timeout)
        preds = infer_task.bind(
            checkpoint_path=checkpoint,
            manifest_path=manifest,
            out_dir=self.pred_dir,
            tau_loc=self.train_config.tau_loc,
            flow=self,
        )

        eval_task = EvaluateMasks(label=self.train_config.label_mode, timeout=self.timeout)
        report = eval_task.bind(pred_paths=preds, manifest_path=manifest, flow=self)
        df = eval_report_to_df.bind(report, flow=self)

        if self.output_file_extension == ".parquet":
            df_to_parquet.bind(df=df, path=self.report_path, flow=self)
        else:
            df_to_csv.bind(df=df, path=self.report_path, flow=self)

        write_to_json.bind(
            dict_={
                "phantom": self.phantom_spec.dict(),
                "count": self.count,
                "split": self.split,
                "seed": self.seed,
                "train": self.train_config.dict(),
                "network": self.net_config.dict(),
            },
            path=self.config_path,
            flow=self,
        )
