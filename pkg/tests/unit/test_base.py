import os

import pandas as pd
import pytest

from frustumseg.exceptions import ValidationError
from frustumseg.sources.base import Source


class NotEmptySource(Source):
    def to_df(self, if_empty="warn"):
        return pd.DataFrame({"id": ["phantom_000", "phantom_001"], "split": ["train", "test"]})


class EmptySource(Source):
    def to_df(self, if_empty="warn"):
        return pd.DataFrame()


def test_empty_source_skip(tmp_path):
    path = str(tmp_path / "empty.tsv")
    assert EmptySource().to_csv(path, if_empty="ignore") is False
    assert not os.path.exists(path)


def test_empty_source_fail(tmp_path):
    with pytest.raises(ValidationError, match="Nothing to write"):
        EmptySource().to_parquet(str(tmp_path / "empty.parquet"), if_empty="fail")


def test_to_csv_append_writes_one_header(tmp_path):
    path = str(tmp_path / "nested" / "records.tsv")
    src = NotEmptySource()
    assert src.to_csv(path)
    assert src.to_csv(path, if_exists="append")
    df = pd.read_csv(path, sep="\t")
    assert list(df["id"]) == ["phantom_000", "phantom_001"] * 2


def test_to_parquet_append(tmp_path):
    path = str(tmp_path / "records.parquet")
    src = NotEmptySource()
    src.to_parquet(path)
    src.to_parquet(path, if_exists="append")
    assert len(pd.read_parquet(path)) == 4


def test_bad_if_exists(tmp_path):
    with pytest.raises(ValueError, match="if_exists"):
        NotEmptySource().to_csv(str(tmp_path / "x.tsv"), if_exists="skip")
