import json
import os

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from frustumseg import __version__
from frustumseg.cli import cli, resolve_model
from frustumseg.exceptions import ConfigConflictError
from frustumseg.network import FrustumSegNet, NetworkConfig, save_checkpoint
from frustumseg.volume import CartesianVolume, FrustumVolume, MaskVolume, load_volume, save_volume
from frustumseg.weaksup import RunManifest, TrainConfig

TINY_CONFIG = {
    "network": {"block_channels": [2, 2, 2, 2, 2], "decoder_channels": 2, "roi_margin_vox": 2},
    "crf": {"iterations": 2, "window_radius_vox": 2},
    "train": {"n_regions": 2, "m_rois_train": 2},
}
TINY_SCHEDULE = ["--phase1-epochs", "1", "--phase2-epochs", "1", "--phase3-min", "1", "--phase3-max", "1"]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


def read_manifest(out_dir, name):
    return RunManifest.read(os.path.join(str(out_dir), name))


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_flops(runner, tmp_path):
    result = runner.invoke(cli, ["flops", "--out-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "published 1.8" in result.output
    assert "Assumptions:" in result.output

    path = tmp_path / "flops_narrow_frustum_roi.csv"
    assert pd.read_csv(path, sep="\t")["flops"].sum() == 1_944_521_760
    manifest = read_manifest(tmp_path, "flops_manifest.json")
    assert manifest.status == "ok"
    assert list(manifest.output_hashes) == [str(path)]


def test_flops_paper_profile_roi(runner, tmp_path):
    args = ["flops", "--profile", "paper", "--domain", "frustum", "--mode", "roi", "--out-dir", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert "paper/frustum/roi: 1.94 GFLOPs" in result.output
    assert "published 1.8" in result.output

    df = pd.read_csv(tmp_path / "flops_paper_frustum_roi.csv", sep="\t")
    assert df["flops"].sum() / 1e9 == pytest.approx(1.8, rel=0.1)


def test_eval_identical_masks(runner, tmp_path):
    mask = np.zeros((8, 8, 8), dtype=np.uint8)
    mask[2:5, 3:6, 1:7] = 1
    path = str(tmp_path / "p0.msk")
    save_volume(MaskVolume(data=mask), path)

    result = runner.invoke(cli, ["eval", "--pair", path, path, "--out-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "100.0" in result.output
    df = pd.read_csv(tmp_path / "eval.csv", sep="\t")
    assert df.loc[df["id"] == "p0", "dsc"].item() == 1.0


def test_eval_with_nothing_to_score_records_the_error(runner, tmp_path):
    result = runner.invoke(cli, ["eval", "--out-dir", str(tmp_path)])
    assert result.exit_code != 0
    assert "Nothing to evaluate" in result.output
    manifest = read_manifest(tmp_path, "eval_manifest.json")
    assert manifest.status == "error"
    assert "Nothing to evaluate" in manifest.error


def test_phantom(runner, tmp_path):
    args = ["phantom", "--count", "3", "--split", "1,1,1", "--seed", "4", "--out-dir", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert result.output.strip().splitlines()[-1] == os.path.join(str(tmp_path), "manifest.tsv")
    manifest = read_manifest(tmp_path, "phantom_manifest.json")
    assert manifest.seed == 4
    assert manifest.config["phantom"]["catheter_diameter_mm"] == 3.3


def test_phantom_bad_split(runner, tmp_path):
    result = runner.invoke(cli, ["phantom", "--count", "3", "--split", "1,2", "--out-dir", str(tmp_path)])
    assert result.exit_code != 0


def test_convert_and_frangi(runner, tmp_path, SMALL_FRUSTUM):
    in_path = str(tmp_path / "small.frv")
    save_volume(SMALL_FRUSTUM, in_path)
    out_path = str(tmp_path / "small.crv")

    result = runner.invoke(cli, ["convert", in_path, out_path, "--spacing", "0.5", "--out-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert os.path.isfile(tmp_path / "small_footprint.msk")

    v_path = str(tmp_path / "small_v.frv")
    result = runner.invoke(cli, ["frangi", in_path, v_path, "--scale", "1.5", "--out-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert load_volume(v_path).shape == SMALL_FRUSTUM.shape
    assert read_manifest(tmp_path, "frangi_manifest.json").config["vesselness"]["scales"] == [1.5]


def test_convert_both_directions(runner, tmp_path, SMALL_FRUSTUM):
    in_path = str(tmp_path / "small.frv")
    save_volume(SMALL_FRUSTUM, in_path)
    cart_path = str(tmp_path / "small.crv")
    back_path = str(tmp_path / "back.frv")

    args = ["convert", in_path, cart_path, "--direction", "f2c", "--spacing", "0.5", "--out-dir", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    cartesian = load_volume(cart_path, expect=CartesianVolume)
    assert cartesian.spacing_mm == (0.5, 0.5, 0.5)

    args = ["convert", cart_path, back_path, "--direction", "c2f", "--spacing", "0.5", "--reference", in_path]
    result = runner.invoke(cli, args + ["--out-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert load_volume(back_path, expect=FrustumVolume).shape == SMALL_FRUSTUM.shape
    assert read_manifest(tmp_path, "convert_manifest.json").status == "ok"


def test_convert_rejects_unknown_direction(runner, tmp_path, SMALL_FRUSTUM):
    in_path = str(tmp_path / "small.frv")
    save_volume(SMALL_FRUSTUM, in_path)
    args = ["convert", in_path, str(tmp_path / "x.crv"), "--direction", "to_cartesian", "--out-dir", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 2
    assert "f2c" in result.output


def test_infer_single_volume(runner, tmp_path, SMALL_FRUSTUM):
    checkpoint = str(tmp_path / "toy.nwt")
    save_checkpoint(FrustumSegNet(NetworkConfig(block_channels=(2, 2, 2, 2, 2), decoder_channels=2)), checkpoint)
    in_path = str(tmp_path / "small.frv")
    save_volume(SMALL_FRUSTUM, in_path)

    result = runner.invoke(cli, ["infer", checkpoint, in_path, "--tau-loc", "0.0", "--out-dir", str(tmp_path / "pred")])
    assert result.exit_code == 0, result.output
    mask = load_volume(str(tmp_path / "pred" / "small_pred.msk"), expect=MaskVolume)
    assert mask.shape == SMALL_FRUSTUM.shape


def test_train(runner, tmp_path, DATASET_MANIFEST, config_file):
    out_dir = str(tmp_path / "model")
    args = ["train", DATASET_MANIFEST, "--config", config_file, "--seed", "5", "--out-dir", out_dir]
    result = runner.invoke(cli, args + TINY_SCHEDULE)
    assert result.exit_code == 0, result.output
    assert result.output.strip().splitlines()[-1] == os.path.join(out_dir, "checkpoint.nwt")

    manifest = read_manifest(out_dir, "manifest.json")
    assert manifest.status == "ok"
    assert manifest.seed == 5
    assert manifest.config["network"]["block_channels"] == [2, 2, 2, 2, 2]
    assert manifest.config["network"]["rng_seed"] == 5
    assert manifest.config["train"]["phase1_epochs"] == 1
    assert manifest.config["train"]["crf"]["iterations"] == 2
    assert len(manifest.history) == 3


def test_train_flag_contradicting_config(runner, tmp_path, DATASET_MANIFEST):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"train": {"eta": 0.7}}))
    out_dir = str(tmp_path / "model")
    args = ["train", DATASET_MANIFEST, "--config", str(config), "--eta", "0.9", "--out-dir", out_dir]
    result = runner.invoke(cli, args)
    assert result.exit_code != 0
    assert "contradicts 'train.eta'" in result.output
    manifest = read_manifest(out_dir, "manifest.json")
    assert manifest.status == "error"
    assert "ConfigConflictError" in manifest.error


def test_resolve_model_layers(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"train": {"eta": 0.7, "lr": 0.01}}))
    config = resolve_model(TrainConfig, str(path), "train", {"lr": None, "eta": 0.7, "n_regions": 4})
    assert (config.eta, config.lr, config.n_regions) == (0.7, 0.01, 4)
    with pytest.raises(ConfigConflictError):
        resolve_model(TrainConfig, str(path), "train", {"lr": 0.5})
    assert resolve_model(TrainConfig, None, "train", {}, base={"phase1_epochs": 3}).phase1_epochs == 3
