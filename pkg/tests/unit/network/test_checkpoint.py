import struct

import numpy as np
import pytest

from frustumseg.exceptions import CheckpointError
from frustumseg.network import FrustumSegNet, NetworkConfig, load_checkpoint, read_checkpoint, save_checkpoint
from frustumseg.utils import file_sha256

TOY = NetworkConfig(block_channels=(2, 2, 4, 4, 4), decoder_channels=2, rng_seed=5)


@pytest.fixture
def checkpoint(tmp_path):
    path = str(tmp_path / "model" / "checkpoint.nwt")
    save_checkpoint(FrustumSegNet(TOY), path)
    return path


def test_round_trip(checkpoint):
    net = load_checkpoint(checkpoint)
    assert net.config == TOY
    original = FrustumSegNet(TOY).state_dict()
    loaded = net.state_dict()
    assert all(np.array_equal(original[k], loaded[k]) for k in original)


def test_same_weights_same_bytes(checkpoint, tmp_path):
    other = str(tmp_path / "again.nwt")
    save_checkpoint(FrustumSegNet(TOY), other)
    assert file_sha256(other) == file_sha256(checkpoint)


def test_read_checkpoint_exposes_config_and_state(checkpoint):
    config, state = read_checkpoint(checkpoint)
    assert config == TOY
    assert state["classifier.weight"].shape == (2, 4)
    assert state["classifier.weight"].dtype == np.float32


def test_expected_config_mismatch(checkpoint):
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(checkpoint, expect=TOY.copy(update={"decoder_channels": 3}))


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.nwt"
    path.write_bytes(b"ABCD" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(str(path))


def test_truncated(checkpoint):
    with open(checkpoint, "rb") as f:
        payload = f.read()
    with open(checkpoint, "wb") as f:
        f.write(payload[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(checkpoint)


def test_trailing_bytes(checkpoint):
    with open(checkpoint, "ab") as f:
        f.write(b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        read_checkpoint(checkpoint)


def test_unsupported_version(checkpoint):
    with open(checkpoint, "r+b") as f:
        f.seek(4)
        f.write(struct.pack("<I", 99))
    with pytest.raises(CheckpointError, match="version 99"):
        read_checkpoint(checkpoint)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="Cannot read"):
        read_checkpoint(str(tmp_path / "absent.nwt"))
