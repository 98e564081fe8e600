import json
import os

import pandas as pd
import pytest

from frustumseg.metrics import evaluate
from frustumseg.network import profile_flops
from frustumseg.task_utils import (
    df_to_csv,
    df_to_parquet,
    eval_report_to_df,
    flops_report_to_df,
    union_dfs_task,
    write_to_json,
)


def test_df_to_csv(workdir):
    d = {"id": ["phantom_000", "phantom_001"], "dsc": [0.61, 0.72]}
    df = pd.DataFrame(data=d)

    df_to_csv.run(df, "reports/eval.csv")
    result = pd.read_csv("reports/eval.csv", sep="\t")
    assert result["dsc"].tolist() == [0.61, 0.72]


def test_df_to_csv_append_and_skip(workdir):
    df = pd.DataFrame({"id": ["a"], "dsc": [0.5]})
    df_to_csv.run(df, "eval.csv")
    df_to_csv.run(df, "eval.csv", if_exists="append")
    assert len(pd.read_csv("eval.csv", sep="\t")) == 2
    df_to_csv.run(pd.DataFrame({"id": ["b"], "dsc": [0.1]}), "eval.csv", if_exists="skip")
    assert len(pd.read_csv("eval.csv", sep="\t")) == 2


def test_df_to_parquet(workdir):
    d = {"id": ["phantom_000"], "vs": [0.9]}
    df = pd.DataFrame(data=d)

    df_to_parquet.run(df, "eval.parquet")
    df_to_parquet.run(df, "eval.parquet", if_exists="append")
    assert len(pd.read_parquet("eval.parquet")) == 2


def test_unknown_if_exists(workdir):
    with pytest.raises(ValueError, match="if_exists"):
        df_to_parquet.run(pd.DataFrame({"id": ["a"]}), "eval.parquet", if_exists="overwrite")


def test_union_dfs_task():
    df1 = pd.DataFrame({"label": ["bbox", "bbox"], "dsc": [0.1, 0.2]})
    df2 = pd.DataFrame({"label": ["proposed"], "dsc": [0.6]})
    res = union_dfs_task.run([df1, df2])
    assert isinstance(res, pd.DataFrame)
    assert len(res) == 3


def test_write_to_json(workdir):
    path = write_to_json.run({"seed": 3, "split": (20, 5, 10)}, "runs/config.json")
    assert os.path.exists(path)
    with open(path) as f:
        assert json.load(f) == {"seed": 3, "split": [20, 5, 10]}


def test_eval_report_to_df_adds_the_label():
    mask = [[[1, 0], [0, 0]], [[0, 0], [0, 1]]]
    report = evaluate({"p0": mask}, {"p0": mask}, label="proposed")
    df = eval_report_to_df.run(report)
    assert df.columns.tolist() == ["label", "id", "dsc", "vs"]
    assert df["label"].unique().tolist() == ["proposed"]
    assert df.loc[df["id"] == "p0", "dsc"].item() == 1.0


def test_flops_report_to_df():
    report = profile_flops("narrow", "frustum", "whole")
    df = flops_report_to_df.run(report)
    assert df["flops"].sum() == report.total_flops
