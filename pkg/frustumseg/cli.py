"""Command-line entry point: `frustumseg <command> [options]`."""
import os
import sys
import time
from typing import Any, Dict, List, Optional, Tuple, Type

import click
from prefect.utilities import logging
from pydantic import BaseModel

from . import __version__
from .config import Config
from .densecrf import CrfParams
from .exceptions import ConfigConflictError
from .frangi import VesselnessParams
from .geometry import ProbeGeometry
from .metrics import evaluate
from .network.checkpoint import load_checkpoint
from .network.flops import ASSUMPTIONS
from .network.model import PROFILE_NAMES, NetworkConfig, profile_settings
from .sources.dataset import VolumeDataset
from .sources.phantom import PhantomDataset, PhantomSpec
from .task_utils import df_to_csv, df_to_parquet, eval_report_to_df, flops_report_to_df
from .tasks import ComputeVesselness, CountFlops, InferMasks, ScanConvertVolume
from .tasks.inference import predict_file
from .utils import echo_value, hash_files
from .volume import FrustumVolume, MaskVolume, load_volume
from .weaksup.manifest import RunManifest
from .weaksup.pseudo_labels import LABEL_MODES
from .weaksup.training import MANIFEST_NAME, TrainConfig, train

logger = logging.get_logger(__name__)


class CommandRun:
    """Context for one subcommand: records its run manifest and writes it however the command ends.

    Any exception inside the block becomes a `click.ClickException`, so the process
    exits nonzero with a one-line diagnostic.
    """

    def __init__(self, command: str, out_dir: str, seed: Optional[int] = None, manifest_name: str = None):
        self.out_dir = out_dir
        self.path = os.path.join(out_dir, manifest_name or f"{command}_manifest.json")
        self.manifest = RunManifest(command=command, argv=sys.argv[1:], seed=seed)
        self.outputs: List[str] = []
        self.inputs: List[str] = []
        # set once a callee has taken over writing the manifest
        self.delegated = False
        self._started = None

    def __enter__(self) -> "CommandRun":
        self._started = time.perf_counter()
        return self

    def record_config(self, **sections: BaseModel) -> None:
        config = dict(self.manifest.config)
        config.update({name: echo_value(model.dict()) for name, model in sections.items()})
        self.manifest = self.manifest.copy(update={"config": config})

    def __exit__(self, exc_type, exc, tb) -> bool:
        timings = {f"{self.manifest.command}_s": round(time.perf_counter() - self._started, 3)}
        if exc is None:
            if not self.delegated:
                self.manifest.copy(
                    update={
                        "input_hashes": hash_files(self.inputs),
                        "output_hashes": hash_files(self.outputs),
                        "timings": timings,
                    }
                ).write(self.path)
            return False
        message = f"{type(exc).__name__}: {exc}"
        if not (self.delegated and os.path.isfile(self.path)):
            self.manifest.copy(
                update={
                    "status": "error",
                    "error": message,
                    "input_hashes": hash_files(self.inputs),
                    "timings": timings,
                }
            ).write(self.path)
        logger.error(f"'{self.manifest.command}' failed: {message}")
        raise click.ClickException(message) from exc


def resolve_model(
    model: Type[BaseModel],
    config_path: Optional[str],
    section: str,
    flags: Dict[str, Any],
    base: Dict[str, Any] = None,
) -> BaseModel:
    """Build a parameter model from defaults, a config file section and explicit flags.

    Flags left as None are not given. A given flag that differs from the field default
    and from the file's value for the same key is a conflict.

    Raises:
        ConfigConflictError: On a flag contradicting the config file.
    """
    file_values = Config.from_json(config_path, key=section) if config_path else Config()
    values = {**(base or {}), **file_values}
    for key, value in flags.items():
        if value is None:
            continue
        default = model.__fields__[key].default
        if (
            key in file_values
            and echo_value(file_values[key]) != echo_value(value)
            and echo_value(value) != echo_value(default)
        ):
            raise ConfigConflictError(
                f"--{key.replace('_', '-')}={value} contradicts '{section}.{key}'={file_values[key]} in {config_path}."
            )
        values[key] = value
    return model(**values)


def _split(value: Optional[str]) -> Optional[Tuple[int, int, int]]:
    if value is None:
        return None
    parts = tuple(int(v) for v in value.split(","))
    if len(parts) != 3:
        raise click.BadParameter(f"expected three comma-separated sizes, got '{value}'", param_hint="--split")
    return parts


def common_options(fn):
    fn = click.option("--out-dir", default=".", show_default=True, type=click.Path(file_okay=False))(fn)
    fn = click.option(
        "--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False),
        help="JSON file with 'phantom', 'vesselness', 'crf', 'network' and 'train' sections.",
    )(fn)
    fn = click.option("--seed", default=None, type=int, help="Master seed.")(fn)
    return fn


@click.group()
@click.version_option(__version__, prog_name="frustumseg")
def cli():
    """Weakly supervised catheter segmentation on frustum ultrasound volumes."""


@cli.command()
@common_options
@click.option("--count", default=35, show_default=True, type=int)
@click.option("--split", default=None, help="Train,val,test sizes, e.g. 20,5,10.")
@click.option("--beam-grid", is_flag=True, help="Render on the 360x96x96 beam grid.")
@click.option("--catheter-diameter-mm", default=None, type=float)
@click.option("--bbox-margin-vox", default=None, type=int)
def phantom(seed, config_path, out_dir, count, split, beam_grid, catheter_diameter_mm, bbox_margin_vox):
    """Generate a seeded phantom dataset with its manifest."""
    with CommandRun("phantom", out_dir, seed) as run:
        base = PhantomSpec.beam_grid().dict() if beam_grid else {}
        spec = resolve_model(
            PhantomSpec,
            config_path,
            "phantom",
            {"catheter_diameter_mm": catheter_diameter_mm, "bbox_margin_vox": bbox_margin_vox},
            base=base,
        )
        run.record_config(phantom=spec)
        dataset = PhantomDataset(spec, count=count, seed=seed or 0, split=_split(split))
        manifest = dataset.write(out_dir)
        run.outputs = [manifest] + [os.path.join(out_dir, r["volume_path"]) for r in dataset.records]
        click.echo(manifest)


@cli.command()
@common_options
@click.argument("in_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option(
    "--direction",
    type=click.Choice(["f2c", "c2f"]),
    default="f2c",
    show_default=True,
    help="f2c: beam grid to Cartesian; c2f: Cartesian to beam grid.",
)
@click.option(
    "--spacing", "spacing_mm", default=0.2, show_default=True, type=float, help="Cartesian spacing in mm."
)
@click.option(
    "--reference", default=None, type=click.Path(exists=True, dir_okay=False),
    help="Frustum volume whose beam grid is the target of 'c2f'.",
)
@click.option("--beam-geometry", is_flag=True, help="Use the 360x96x96 beam grid as the target.")
def convert(seed, config_path, out_dir, in_path, out_path, direction, spacing_mm, reference, beam_geometry):
    """Scan-convert a volume between the beam grid and a Cartesian grid."""
    with CommandRun("convert", out_dir, seed) as run:
        run.inputs = [in_path]
        geometry = None
        if reference:
            geometry = ProbeGeometry.from_volume(load_volume(reference, expect=FrustumVolume))
        elif beam_geometry:
            geometry = ProbeGeometry.beam_grid()
        if geometry is not None:
            run.record_config(geometry=geometry)
        out, footprint = ScanConvertVolume(direction=direction, spacing_mm=spacing_mm, geometry=geometry).run(
            in_path=in_path, out_path=out_path
        )
        run.outputs = [p for p in (out, footprint) if p]
        click.echo(out)
        if footprint:
            click.echo(footprint)


@cli.command()
@common_options
@click.argument("in_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--scale", "scales", multiple=True, type=float, help="Gaussian scale in voxels; repeatable.")
@click.option("--alpha", default=None, type=float)
@click.option("--beta", default=None, type=float)
def frangi(seed, config_path, out_dir, in_path, out_path, scales, alpha, beta):
    """Write the multiscale vesselness response of a volume."""
    with CommandRun("frangi", out_dir, seed) as run:
        run.inputs = [in_path]
        params = resolve_model(
            VesselnessParams,
            config_path,
            "vesselness",
            {"scales": list(scales) or None, "alpha": alpha, "beta": beta},
        )
        run.record_config(vesselness=params)
        run.outputs = [ComputeVesselness(params=params).run(in_path=in_path, out_path=out_path)]
        click.echo(out_path)


TRAIN_FLAGS = [
    ("--label-mode", "label_mode", click.Choice(LABEL_MODES)),
    ("--lr", "lr", float),
    ("--eta", "eta", float),
    ("--u-threshold", "u_threshold", float),
    ("--tau-loc", "tau_loc", float),
    ("--n-regions", "n_regions", int),
    ("--m-rois-train", "m_rois_train", int),
    ("--m-rois-test", "m_rois_test", int),
    ("--pos-weight", "pos_weight", float),
    ("--phase1-epochs", "phase1_epochs", int),
    ("--phase2-epochs", "phase2_epochs", int),
    ("--phase3-min", "phase3_min", int),
    ("--phase3-max", "phase3_max", int),
    ("--update-period", "update_period", int),
    ("--workers", "workers", int),
]


def train_options(fn):
    for flag, dest, kind in reversed(TRAIN_FLAGS):
        fn = click.option(flag, dest, default=None, type=kind)(fn)
    return fn


@cli.command(name="train")
@common_options
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--profile", type=click.Choice(PROFILE_NAMES), default="compact", show_default=True)
@click.option("--decoder-channels", default=None, type=int)
@click.option("--desk/--full-schedule", default=True, show_default=True, help="Short CPU schedule.")
@click.option("--joint/--separate", default=None, help="Optimize the joint loss in phase 3.")
@train_options
def train_command(seed, config_path, out_dir, manifest_path, profile, decoder_channels, desk, joint, **flags):
    """Train the network from a dataset manifest's loose boxes."""
    with CommandRun("train", out_dir, seed, manifest_name=MANIFEST_NAME) as run:
        run.inputs = [manifest_path]
        base = TrainConfig.desk().dict() if desk else {}
        base.pop("vesselness")
        base.pop("crf")
        vesselness_params = resolve_model(VesselnessParams, config_path, "vesselness", {})
        crf_params = resolve_model(CrfParams, config_path, "crf", {})
        train_config = resolve_model(
            TrainConfig,
            config_path,
            "train",
            {**flags, "joint": joint, "seed": seed},
            base={**base, "vesselness": vesselness_params, "crf": crf_params},
        )
        net_config = resolve_model(
            NetworkConfig,
            config_path,
            "network",
            {"decoder_channels": decoder_channels, "rng_seed": seed},
            base=profile_settings(profile),
        )
        run.record_config(train=train_config, network=net_config)
        run.delegated = True
        result = train(VolumeDataset(manifest_path), train_config, net_config, out_dir, run.manifest)
        click.echo(result.checkpoint_path)


@cli.command()
@common_options
@click.argument("checkpoint_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", show_default=True, help="Split to segment when INPUT_PATH is a manifest.")
@click.option("--m-rois", default=2, show_default=True, type=int)
@click.option("--tau-loc", default=0.5, show_default=True, type=float)
def infer(seed, config_path, out_dir, checkpoint_path, input_path, split, m_rois, tau_loc):
    """Segment one frustum volume, or a whole split of a dataset manifest."""
    with CommandRun("infer", out_dir, seed) as run:
        run.inputs = [checkpoint_path, input_path]
        if input_path.endswith(".tsv"):
            paths = InferMasks(split=split, m_rois=m_rois, tau_loc=tau_loc).run(
                checkpoint_path=checkpoint_path, manifest_path=input_path, out_dir=out_dir
            )
            outputs = [paths[k] for k in sorted(paths)]
        else:
            stem = os.path.splitext(os.path.basename(input_path))[0]
            out_path = os.path.join(out_dir, f"{stem}_pred.msk")
            outputs = [predict_file(load_checkpoint(checkpoint_path), input_path, out_path, m_rois, tau_loc)]
        run.outputs = outputs
        for path in outputs:
            click.echo(path)


@cli.command(name="eval")
@common_options
@click.option("--pair", "pairs", multiple=True, nargs=2, type=click.Path(exists=True, dir_okay=False),
              help="A predicted mask and its ground truth; repeatable.")
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--pred-dir", default=None, type=click.Path(exists=True, file_okay=False),
              help="Directory of <id>_pred.msk files for the manifest's split.")
@click.option("--split", default="test", show_default=True)
@click.option("--label", default=None, help="Report label, e.g. the label mode.")
@click.option("--format", "fmt", type=click.Choice(["csv", "parquet"]), default="csv", show_default=True)
def eval_command(seed, config_path, out_dir, pairs, manifest_path, pred_dir, split, label, fmt):
    """Score predicted masks with DSC and VS."""
    with CommandRun("eval", out_dir, seed) as run:
        preds, gts = {}, {}
        margins = []
        for pred_path, gt_path in pairs:
            key = os.path.splitext(os.path.basename(pred_path))[0]
            preds[key], gts[key] = pred_path, gt_path
        if manifest_path:
            if pred_dir is None:
                raise click.UsageError("--manifest needs --pred-dir.")
            dataset = VolumeDataset(manifest_path)
            df = dataset.to_df()
            margins = dataset.bbox_margins()
            for row in df[df["split"] == split].itertuples(index=False):
                preds[row.id] = os.path.join(pred_dir, f"{row.id}_pred.msk")
                gts[row.id] = dataset.path(row.mask_path)
        if not preds:
            raise click.UsageError("Nothing to evaluate; give --pair or --manifest with --pred-dir.")
        run.inputs = [preds[k] for k in sorted(preds)] + [gts[k] for k in sorted(gts)]
        report = evaluate(
            {k: load_volume(p, expect=MaskVolume) for k, p in preds.items()},
            {k: load_volume(p, expect=MaskVolume) for k, p in gts.items()},
            config={"manifest": manifest_path, "split": split, "bbox_margin_vox": margins},
            label=label,
        )
        path = os.path.join(out_dir, f"eval.{fmt}")
        df = eval_report_to_df.run(report)
        if fmt == "parquet":
            df_to_parquet.run(df, path)
        else:
            df_to_csv.run(df, path)
        run.outputs = [path]
        click.echo(report.to_table())


@cli.command()
@common_options
@click.option("--profile", type=click.Choice(PROFILE_NAMES), default="narrow", show_default=True)
@click.option("--domain", type=click.Choice(["frustum", "cartesian"]), default="frustum", show_default=True)
@click.option("--mode", type=click.Choice(["whole", "roi"]), default="roi", show_default=True)
def flops(seed, config_path, out_dir, profile, domain, mode):
    """Count the network's FLOPs on a reference volume geometry."""
    with CommandRun("flops", out_dir, seed) as run:
        report = CountFlops(profile=profile, domain=domain, mode=mode).run()
        path = os.path.join(out_dir, f"flops_{profile}_{domain}_{mode}.csv")
        df_to_csv.run(flops_report_to_df.run(report), path)
        run.outputs = [path]
        click.echo(report.summary())
        click.echo(f"Assumptions: {ASSUMPTIONS}")


def main():
    cli()


if __name__ == "__main__":
    main()
