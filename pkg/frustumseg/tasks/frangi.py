import os

import numpy as np
from prefect import Task
from prefect.utilities.tasks import defaults_from_attrs

from ..frangi import VesselnessParams, vesselness
from ..volume import CartesianVolume, FrustumVolume, load_volume, normalize_01, save_volume


class ComputeVesselness(Task):
    """
    Task for writing the multiscale vesselness response of a volume file.

    The response has the input's geometry and an intensity maximum of 1. Filtering runs in
    index space: beam-grid voxels are treated as isotropic although their steps mix mm and degrees.

    Args:
        params (VesselnessParams, optional): Filter parameters. Defaults to VesselnessParams().
        timeout(int, optional): The amount of time (in seconds) to wait while running this task before
            a timeout occurs. Defaults to 3600.
    """

    def __init__(self, params: VesselnessParams = None, timeout: int = 3600, *args, **kwargs):
        self.params = params or VesselnessParams()

        super().__init__(name="compute_vesselness", timeout=timeout, *args, **kwargs)

    @defaults_from_attrs("params")
    def run(self, in_path: str, out_path: str, params: VesselnessParams = None) -> str:
        volume = load_volume(in_path)
        if not isinstance(volume, (FrustumVolume, CartesianVolume)):
            raise ValueError(f"{in_path} does not hold an intensity volume.")
        response = vesselness(normalize_01(volume), params)
        out = volume.copy(update={"data": response.astype(np.float32), "intensity_max": 1.0})
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        save_volume(out, out_path)
        self.logger.info(f"Vesselness of {in_path} (max {response.max():.3f}) written to {out_path}.")
        return out_path
