import os
from abc import abstractmethod
from typing import Literal

import pandas as pd
from prefect.utilities import logging

from ..utils import ensure_parent_dir, handle_if_empty

logger = logging.get_logger(__name__)


class Source:
    """A producer of tabular records (dataset manifests, evaluation rows)."""

    def __init__(self, *args, **kwargs):
        self.logger = logger

    @abstractmethod
    def to_df(self, if_empty: str = "warn") -> pd.DataFrame:
        pass

    def to_csv(
        self,
        path: str,
        if_exists: Literal["append", "replace"] = "replace",
        if_empty: str = "warn",
        sep="\t",
    ) -> bool:
        """
        Write the source's records to a CSV file.

        Args:
            path (str): The destination path.
            if_exists (Literal, optional): What to do if the file exists. Defaults to "replace".
            if_empty (str, optional): What to do if the source contains no data. Defaults to "warn".
            sep (str, optional): The separator to use in the CSV. Defaults to "\t".

        Raises:
            ValueError: If the `if_exists` argument is incorrect.

        Returns:
            bool: Whether anything was written.
        """
        df = self.to_df(if_empty=if_empty)
        if handle_if_empty(df.empty, if_empty, message=f"Nothing to write to {path}."):
            return False

        if if_exists == "append":
            mode = "a"
        elif if_exists == "replace":
            mode = "w"
        else:
            raise ValueError("'if_exists' must be one of ['append', 'replace']")

        ensure_parent_dir(path)
        header = mode == "w" or not os.path.exists(path)
        df.to_csv(path, sep=sep, mode=mode, index=False, header=header)
        return True

    def to_parquet(
        self,
        path: str,
        if_exists: Literal["append", "replace"] = "replace",
        if_empty: str = "warn",
    ) -> bool:
        """
        Write the source's records to a Parquet file.

        Args:
            path (str): The destination path.
            if_exists (Literal, optional): What to do if the file exists. Defaults to "replace".
            if_empty (str, optional): What to do if the source contains no data. Defaults to "warn".

        Returns:
            bool: Whether anything was written.
        """
        df = self.to_df(if_empty=if_empty)
        if handle_if_empty(df.empty, if_empty, message=f"Nothing to write to {path}."):
            return False

        if if_exists == "append" and os.path.isfile(path):
            df = pd.concat([pd.read_parquet(path), df], ignore_index=True)
        elif if_exists not in ("append", "replace"):
            raise ValueError("'if_exists' must be one of ['append', 'replace']")

        ensure_parent_dir(path)
        df.to_parquet(path, index=False)
        return True
