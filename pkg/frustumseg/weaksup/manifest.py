import json
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

from .. import __version__
from ..utils import echo_value, ensure_parent_dir

PROVISIONAL_KEYS = [
    "train.eta",
    "train.u_threshold",
    "train.tau_loc",
    "crf.w_smooth",
    "crf.theta_gamma_vox",
    "crf.w_bilateral",
    "crf.theta_alpha_vox",
    "crf.theta_beta_intensity",
    "crf.unary_threshold",
    "network.decoder_channels",
    "phantom.radial_start_mm",
]


class RunManifest(BaseModel):
    """Everything needed to repeat one command."""

    command: str
    argv: List[str] = []
    config: Dict[str, Any] = {}
    seed: Optional[int] = None
    input_hashes: Dict[str, str] = {}
    output_hashes: Dict[str, str] = {}
    tool_version: str = __version__
    timings: Dict[str, float] = {}
    provisional: List[str] = PROVISIONAL_KEYS
    history: List[Dict[str, Any]] = []
    status: str = "ok"
    error: Optional[str] = None

    def write(self, path: str) -> str:
        ensure_parent_dir(path)
        with open(path, "w") as f:
            json.dump(echo_value(self.dict()), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        with open(path) as f:
            return cls(**json.load(f))
