from typing import Tuple

from prefect import Task
from prefect.utilities.tasks import defaults_from_attrs

from ..sources.phantom import PhantomDataset, PhantomSpec


class GeneratePhantomDataset(Task):
    """
    Task for rendering a seeded phantom dataset with its manifest.

    Args:
        base_spec (PhantomSpec, optional): The recipe every member jitters. Defaults to PhantomSpec().
        count (int, optional): Number of members. Defaults to 35.
        seed (int, optional): Master seed. Defaults to 0.
        split (Tuple[int, int, int], optional): Train/val/test sizes. Defaults to proportional rounding.
        out_dir (str, optional): Destination directory. Defaults to None.
        timeout(int, optional): The amount of time (in seconds) to wait while running this task before
            a timeout occurs. Defaults to 3600.
    """

    def __init__(
        self,
        base_spec: PhantomSpec = None,
        count: int = 35,
        seed: int = 0,
        split: Tuple[int, int, int] = None,
        out_dir: str = None,
        timeout: int = 3600,
        *args,
        **kwargs,
    ):
        self.base_spec = base_spec
        self.count = count
        self.seed = seed
        self.split = split
        self.out_dir = out_dir

        super().__init__(name="generate_phantom_dataset", timeout=timeout, *args, **kwargs)

    @defaults_from_attrs("base_spec", "count", "seed", "split", "out_dir")
    def run(
        self,
        base_spec: PhantomSpec = None,
        count: int = None,
        seed: int = None,
        split: Tuple[int, int, int] = None,
        out_dir: str = None,
    ) -> str:
        """
        Returns:
            str: Path of the written manifest.
        """
        if out_dir is None:
            raise ValueError("An output directory is required.")
        dataset = PhantomDataset(base_spec or PhantomSpec(), count=count, seed=seed, split=split)
        manifest = dataset.write(out_dir)
        self.logger.info(f"Phantom dataset manifest written to {manifest}.")
        return manifest
