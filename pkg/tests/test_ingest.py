import math

import numpy as np
import pytest

from micselect.core import Dataset, ModelError
from micselect.ingest import (IngestError, Schema, TransformError, check_finite, ingest_csv, parse_transform,
                              read_columns, transform, transform_chain)


def _csv(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_regression_pairs(tmp_path):
    p = _csv(tmp_path, "name,hp,mpg\na,130,18\nb,165,15\nc,150,18\n")
    data = ingest_csv(p, Schema(("hp", "mpg"), "regression"))
    assert data.kind == "regression" and data.n_raw == 3
    assert data.observations[1].tolist() == [165.0, 15.0]
    assert data.meta["columns"] == ["hp", "mpg"]


def test_angles_and_timeseries(tmp_path):
    p = _csv(tmp_path, "x1,x2\n0.1,0.2\n0.3,0.4\n")
    assert ingest_csv(p, Schema(("x1", "x2"), "unconditional")).observations.shape == (2, 2)
    p = _csv(tmp_path, "close\n1\n2\n\n3\n", "ts.csv")
    assert ingest_csv(p, Schema(("close",), "timeseries")).observations.tolist() == [1.0, 2.0, 3.0]


def test_schema_validation():
    with pytest.raises(IngestError):
        Schema(("a", "b"), "timeseries")
    with pytest.raises(IngestError):
        Schema(("a",), "regression")
    with pytest.raises(IngestError):
        Schema((), "unconditional")
    with pytest.raises(IngestError):
        Schema(("a",), "panel")


def test_missing_column_named(tmp_path):
    p = _csv(tmp_path, "hp,weight\n1,2\n")
    with pytest.raises(IngestError, match="mpg"):
        read_columns(p, ("hp", "mpg"))


def test_empty_and_missing_files(tmp_path):
    with pytest.raises(IngestError, match="empty"):
        read_columns(_csv(tmp_path, ""), ("x",))
    with pytest.raises(IngestError, match="no data rows"):
        read_columns(_csv(tmp_path, "x\n", "h.csv"), ("x",))
    with pytest.raises(IngestError, match="no such file"):
        read_columns(tmp_path / "absent.csv", ("x",))


def test_non_numeric_cell_reports_line_number(tmp_path):
    p = _csv(tmp_path, "hp,mpg\n130,18\n?,15\n150,18\n140,x\n")
    with pytest.raises(IngestError) as info:
        read_columns(p, ("hp", "mpg"))
    assert "line 3" in str(info.value) and "line 5" in str(info.value)


def test_log_return():
    out = transform(Dataset.timeseries([1.0, math.e, math.e]), "log_return")
    assert out.observations == pytest.approx([1.0, 0.0])
    assert out.meta["transforms"] == ["log_return"]


def test_log_non_positive_reports_row():
    with pytest.raises(TransformError, match="row index 2"):
        transform(Dataset.timeseries([1.0, 2.0, 0.0, 3.0]), "log")


def test_standardize():
    out = transform(Dataset.unconditional([1.0, 2.0, 3.0]), "standardize")
    assert out.observations.tolist() == [-1.0, 0.0, 1.0]
    with pytest.raises(TransformError):
        transform(Dataset.unconditional([2.0, 2.0]), "standardize")


def test_bins_to_radians():
    out = transform(Dataset.unconditional(np.array([[4.0, 0.0], [8.0, 12.0]])), "bins_to_radians(16)")
    assert out.observations[0, 0] == pytest.approx(math.pi / 2)
    assert out.observations[1].tolist() == pytest.approx([math.pi, 3 * math.pi / 2])


def test_regression_targets():
    data = Dataset.regression([1.0, 2.0, 4.0], [10.0, 20.0, 40.0])
    out = transform_chain(data, ["log:y", "standardize:x"])
    assert out.observations[:, 1] == pytest.approx(np.log([10.0, 20.0, 40.0]))
    assert out.observations[:, 0].mean() == pytest.approx(0.0)
    with pytest.raises(TransformError):
        transform(data, "log")
    with pytest.raises(TransformError):
        transform(data, "log_return:y")
    with pytest.raises(TransformError):
        transform(Dataset.timeseries([1.0, 2.0]), "log:x")


def test_parse_transform_errors():
    assert parse_transform("bins_to_radians(16):y") == ("bins_to_radians", "y", 16)
    for bad in ("sqrt", "bins_to_radians", "bins_to_radians(0)", "bins_to_radians(a)", "log:z"):
        with pytest.raises(TransformError):
            parse_transform(bad)


def test_log_return_only_for_series():
    with pytest.raises(TransformError):
        transform(Dataset.unconditional([1.0, 2.0]), "log_return")


def test_check_finite():
    check_finite(Dataset.unconditional([1.0, 2.0]))
    with pytest.raises(ModelError, match="row index 1"):
        check_finite(Dataset.unconditional([1.0, np.inf]))
