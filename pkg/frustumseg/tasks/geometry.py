import os
from typing import Literal, Optional, Tuple

from prefect import Task
from prefect.utilities.tasks import defaults_from_attrs

from ..geometry import ProbeGeometry, ScanConverter
from ..volume import CartesianVolume, FrustumVolume, MaskVolume, load_volume, save_volume


class ScanConvertVolume(Task):
    """
    Task for resampling a volume file between the beam grid and a Cartesian grid.

    A forward conversion also writes the footprint mask next to the output as
    `<stem>_footprint.msk`.

    Args:
        direction (Literal["f2c", "c2f"], optional): "f2c" resamples the beam grid onto a
            Cartesian grid, "c2f" goes back. Defaults to "f2c".
        spacing_mm (float, optional): Cartesian voxel spacing. Defaults to 0.2.
        geometry (ProbeGeometry, optional): Beam grid for "c2f"; forward conversions
            default to the input volume's own steps. Defaults to None.
        timeout(int, optional): The amount of time (in seconds) to wait while running this task before
            a timeout occurs. Defaults to 3600.
    """

    def __init__(
        self,
        direction: Literal["f2c", "c2f"] = "f2c",
        spacing_mm: float = 0.2,
        geometry: ProbeGeometry = None,
        timeout: int = 3600,
        *args,
        **kwargs,
    ):
        self.direction = direction
        self.spacing_mm = spacing_mm
        self.geometry = geometry

        super().__init__(name="scan_convert_volume", timeout=timeout, *args, **kwargs)

    @defaults_from_attrs("direction", "spacing_mm", "geometry")
    def run(
        self,
        in_path: str,
        out_path: str,
        direction: str = None,
        spacing_mm: float = None,
        geometry: ProbeGeometry = None,
    ) -> Tuple[str, Optional[str]]:
        """
        Returns:
            Tuple[str, Optional[str]]: The output path and the footprint path (forward only).
        """
        volume = load_volume(in_path)
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        if direction == "f2c":
            if not isinstance(volume, FrustumVolume):
                raise ValueError(f"{in_path} does not hold a frustum volume.")
            converter = ScanConverter(geometry or ProbeGeometry.from_volume(volume))
            save_volume(converter.to_cartesian(volume, spacing_mm), out_path)
            footprint_path = os.path.splitext(out_path)[0] + "_footprint.msk"
            save_volume(converter.last_footprint, footprint_path)
            self.logger.info(f"Wrote Cartesian volume {out_path} and footprint {footprint_path}.")
            return out_path, footprint_path

        if direction != "c2f":
            raise ValueError("'direction' must be one of ['f2c', 'c2f']")
        if geometry is None:
            raise ValueError("Converting to the beam grid needs a probe geometry.")
        if not isinstance(volume, (CartesianVolume, MaskVolume)):
            raise ValueError(f"{in_path} does not hold a Cartesian volume or mask.")
        converter = ScanConverter(geometry)
        save_volume(converter.to_frustum(volume, spacing_mm=spacing_mm), out_path)
        self.logger.info(
            f"Wrote beam-grid volume {out_path} ({converter.last_out_of_bounds} samples out of bounds)."
        )
        return out_path, None
