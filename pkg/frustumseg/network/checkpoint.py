"""Weight checkpoints.

Layout (little endian): magic ``NWT1``, u32 format version, u32 config length and the
network config as JSON, u32 parameter count, then per parameter a u16 name length,
the UTF-8 name, u8 ndim, ndim u32 dims and the f32 values in C order.
"""
import json
import struct
from typing import Dict, Tuple

import numpy as np
from prefect.utilities import logging

from ..exceptions import CheckpointError
from ..utils import ensure_parent_dir
from .model import FrustumSegNet, NetworkConfig

logger = logging.get_logger(__name__)

MAGIC = b"NWT1"
VERSION = 1


def save_checkpoint(net: FrustumSegNet, path: str) -> None:
    config = json.dumps(json.loads(net.config.json()), sort_keys=True).encode("utf-8")
    params = net.named_parameters()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(config)), config, struct.pack("<I", len(params))]
    for name, value, _ in params:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    ensure_parent_dir(path)
    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    logger.info(f"Wrote checkpoint with {len(params)} parameters to {path}.")


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointError(f"Checkpoint {self.path} is truncated at byte {self.offset}.")
        out = self.payload[self.offset : self.offset + size]
        self.offset += size
        return out

    def unpack(self, fmt: str) -> Tuple:
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def read_checkpoint(path: str) -> Tuple[NetworkConfig, Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    reader = _Reader(payload, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a weight checkpoint (bad magic).")
    version, config_len = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} in {path}.")
    config = NetworkConfig(**json.loads(reader.take(config_len).decode("utf-8")))
    (count,) = reader.unpack("<I")
    state = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) * 4
        state[name] = np.frombuffer(reader.take(size), dtype="<f4").reshape(shape).copy()
    if reader.offset != len(payload):
        raise CheckpointError(f"Checkpoint {path} has trailing bytes.")
    return config, state


def load_checkpoint(path: str, expect: NetworkConfig = None) -> FrustumSegNet:
    """Rebuild a network from a checkpoint.

    Raises:
        CheckpointError: On a malformed file, a missing parameter, or a config
            different from ``expect``.
    """
    config, state = read_checkpoint(path)
    if expect is not None and expect != config:
        raise CheckpointError(f"Checkpoint config {config.dict()} does not match {expect.dict()}.")
    net = FrustumSegNet(config)
    expected = {name for name, _, _ in net.named_parameters()}
    if set(state) != expected:
        missing = sorted(expected - set(state))
        extra = sorted(set(state) - expected)
        raise CheckpointError(f"Checkpoint parameters differ: missing {missing}, unexpected {extra}.")
    try:
        net.load_state_dict(state)
    except ValueError as e:
        raise CheckpointError(str(e)) from e
    return net
