#!/usr/bin/env python3
"""
Test CSV ingestion, dummy coding and design construction
"""
import numpy as np
import pandas as pd
import pytest

from mlmtest.data import INTERCEPT, ColumnMap, DummyCoding, ModelSpec, build_frame, ingest_csv
from mlmtest.errors import ConfigError, EmptyUnit, MissingColumn, ParseError, RankDeficientDesign

COLUMNS = ColumnMap(unit="id", response="y", time="t", covariates=("g",))


def write(tmp_path, text):
    path = tmp_path / "data.csv"
    path.write_text(text, encoding="utf-8")
    return path


def test_minimal_dataset(tmp_path):
    path = write(tmp_path, "id,t,y,g\na,1,2.5,1\na,2,3.0,1\n")
    data = ingest_csv(path, COLUMNS)
    assert data.N == 1
    assert data.T == 2
    assert data.tau.tolist() == [2]


def test_interleaved_units_are_regrouped(tmp_path):
    path = write(tmp_path, "id,t,y,g\na,1,1.0,1\nb,1,2.0,2\na,2,3.0,1\nb,2,4.0,2\nc,1,5.0,3\n")
    data = ingest_csv(path, COLUMNS)
    assert data.units == ("a", "b", "c")
    assert data.tau.tolist() == [2, 2, 1]
    assert data.column("y").tolist() == [1.0, 3.0, 2.0, 4.0, 5.0]

    out = tmp_path / "regrouped.csv"
    data.write_csv(out)
    again = pd.read_csv(out)
    assert again["y"].tolist() == [1.0, 3.0, 2.0, 4.0, 5.0]


def test_missing_response_cell_names_the_line(tmp_path):
    path = write(tmp_path, "id,t,y,g\na,1,1.0,1\na,2,,1\n")
    with pytest.raises(ParseError) as info:
        ingest_csv(path, COLUMNS)
    assert info.value.row == 3
    assert info.value.column == "y"


def test_non_numeric_cell_and_missing_column(tmp_path):
    path = write(tmp_path, "id,t,y,g\na,1,oops,1\n")
    with pytest.raises(ParseError):
        ingest_csv(path, COLUMNS)
    path = write(tmp_path, "id,t,g\na,1,1\n")
    with pytest.raises(MissingColumn) as info:
        ingest_csv(path, COLUMNS)
    assert info.value.column == "y"


def test_empty_file_and_empty_unit_id(tmp_path):
    with pytest.raises(EmptyUnit):
        ingest_csv(write(tmp_path, "id,t,y,g\n"), COLUMNS)
    with pytest.raises(ParseError):
        ingest_csv(write(tmp_path, "id,t,y,g\n ,1,1.0,1\n"), COLUMNS)


def test_design_with_dummies_and_interactions(tmp_path):
    path = write(
        tmp_path,
        "id,t,y,g\n" + "".join(f"u{i},{j},{i + j}.5,{i % 3 + 1}\n" for i in range(6) for j in range(3)),
    )
    data = ingest_csv(path, COLUMNS)
    spec = ModelSpec(
        fixed=(INTERCEPT, "t", "g2", "g3", "g2:t", "g3:t"),
        interest=("g2:t", "g3:t"),
        random=(INTERCEPT,),
        dummies=DummyCoding(column="g", reference="1"),
    )
    frame = build_frame(data, spec)
    assert frame.names[:2] == ("g2:t", "g3:t")
    assert frame.p == 2
    assert frame.n == 6
    g2 = (data.table["g"].astype(int) == 2).to_numpy(dtype=float)
    assert np.allclose(frame.X[:, 0], g2 * data.column("t"))
    assert np.allclose(frame.Z[:, 0], 1.0)
    assert sum(group.size for group in frame.groups) == data.N


def test_rank_deficient_design_names_columns(tmp_path):
    path = write(tmp_path, "id,t,y,g\n" + "".join(f"u{i},{j},{j}.0,{2 * j}\n" for i in range(3) for j in range(2)))
    data = ingest_csv(path, COLUMNS)
    spec = ModelSpec(fixed=(INTERCEPT, "t", "g"), interest=("t",))
    with pytest.raises(RankDeficientDesign) as info:
        build_frame(data, spec)
    assert info.value.columns == ["g"]
    assert info.value.exit_code == 2


def test_model_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec(fixed=("a", "b"), interest=())
    with pytest.raises(ConfigError):
        ModelSpec(fixed=("a", "b"), interest=("c",))
    with pytest.raises(ConfigError):
        ModelSpec(fixed=("a",), interest=("a",), family="toeplitz")
    spec = ModelSpec(fixed=("a", "b", "c"), interest=("c", "a"))
    assert spec.ordered_fixed == ("c", "a", "b")
