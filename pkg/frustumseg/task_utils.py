import json
import os
from pathlib import Path
from typing import List, Literal

import pandas as pd
from prefect import task
from prefect.utilities import logging

from .metrics import EvalReport
from .network.flops import FlopsReport
from .utils import echo_value

logger = logging.get_logger(__name__)


def _write_df(df: pd.DataFrame, path: str, if_exists: str, read, write) -> None:
    """Write `df` to `path`, stacking it under the existing rows when appending."""
    exists = os.path.isfile(path)
    if if_exists not in ("append", "replace", "skip"):
        raise ValueError("'if_exists' must be one of ['append', 'replace', 'skip']")
    if exists and if_exists == "skip":
        logger.info(f"{path} exists; skipped.")
        return
    if exists and if_exists == "append":
        df = pd.concat([read(path), df], ignore_index=True)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write(df, path)
    logger.info(f"Wrote {len(df)} rows to {path}.")


@task(timeout=3600)
def df_to_csv(
    df: pd.DataFrame,
    path: str,
    sep="\t",
    if_exists: Literal["append", "replace", "skip"] = "replace",
) -> None:
    """
    Write a report or manifest data frame as a separated-values file.

    Args:
        df (pd.DataFrame): The rows to write.
        path (str): Destination; parent directories are created.
        sep (str, optional): Field separator. Defaults to "\t".
        if_exists (Literal["append", "replace", "skip"], optional): Policy for an existing file.
            Defaults to "replace".
    """
    _write_df(
        df,
        path,
        if_exists,
        read=lambda p: pd.read_csv(p, sep=sep),
        write=lambda d, p: d.to_csv(p, index=False, sep=sep),
    )


@task(timeout=3600)
def df_to_parquet(
    df: pd.DataFrame,
    path: str,
    if_exists: Literal["append", "replace", "skip"] = "replace",
) -> None:
    """
    Write a report data frame as parquet.

    Args:
        df (pd.DataFrame): The rows to write.
        path (str): Destination; parent directories are created.
        if_exists (Literal["append", "replace", "skip"], optional): Policy for an existing file.
            Defaults to "replace".
    """
    _write_df(
        df,
        path,
        if_exists,
        read=pd.read_parquet,
        write=lambda d, p: d.to_parquet(p, index=False),
    )


@task(timeout=3600)
def write_to_json(dict_: dict, path: str) -> str:
    """Write `dict_` as indented JSON with sorted keys; numpy values become plain ones."""
    if os.path.isfile(path):
        logger.warning(f"Overwriting {path}.")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, mode="w") as f:
        json.dump(echo_value(dict_), f, indent=2, sort_keys=True)
    return path


@task(timeout=3600)
def eval_report_to_df(report: EvalReport, include_summary: bool = True) -> pd.DataFrame:
    df = report.to_df(include_summary=include_summary)
    if report.label:
        df.insert(0, "label", report.label)
    return df


@task(timeout=3600)
def flops_report_to_df(report: FlopsReport) -> pd.DataFrame:
    return report.to_df()


@task(timeout=3600)
def union_dfs_task(dfs: List[pd.DataFrame]) -> pd.DataFrame:
    """Stack per-run report frames into one."""
    return pd.concat(dfs, ignore_index=True)
