"""CSV ingestion and the data transforms used by the real-data workflows."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import KINDS, Dataset, ModelError
from .models import TWO_PI


class IngestError(ValueError):
    """Malformed or incomplete input file."""


class TransformError(ValueError):
    """A transform is not applicable to the data."""


@dataclass(frozen=True)
class Schema:
    """Columns to read and the kind of dataset they form.

    timeseries: one column; regression: (predictor, response);
    unconditional: one or more columns (angles for the von Mises family).
    """

    columns: tuple
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise IngestError(f"unknown dataset kind {self.kind!r}")
        if not self.columns:
            raise IngestError("schema needs at least one column")
        if self.kind == "timeseries" and len(self.columns) != 1:
            raise IngestError("a time series schema takes exactly one column")
        if self.kind == "regression" and len(self.columns) != 2:
            raise IngestError("a regression schema takes (predictor, response)")


def read_columns(path, columns) -> dict:
    """Numeric columns by header name; errors carry 1-based file line numbers."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise IngestError(f"{path}: missing column(s) {', '.join(missing)}; header is {header}")
        idx = [header.index(c) for c in columns]
        out = {c: [] for c in columns}
        bad = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for c, j in zip(columns, idx):
                cell = row[j].strip() if j < len(row) else ""
                try:
                    vals.append(float(cell))
                except ValueError:
                    bad.append(f"line {line_no}: column {c!r} value {cell!r} is not numeric")
                    break
            else:
                for c, v in zip(columns, vals):
                    out[c].append(v)
    if bad:
        raise IngestError(f"{path}: " + "; ".join(bad))
    if not out[columns[0]]:
        raise IngestError(f"{path}: no data rows")
    return {c: np.array(v) for c, v in out.items()}


def ingest_csv(path, schema: Schema) -> Dataset:
    cols = read_columns(path, schema.columns)
    arrays = [cols[c] for c in schema.columns]
    src = str(path)
    if schema.kind == "timeseries":
        return Dataset.timeseries(arrays[0], source=src, columns=list(schema.columns))
    if schema.kind == "regression":
        return Dataset.regression(arrays[0], arrays[1], source=src, columns=list(schema.columns))
    obs = arrays[0] if len(arrays) == 1 else np.column_stack(arrays)
    return Dataset.unconditional(obs, source=src, columns=list(schema.columns))


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

TRANSFORMS = ("log", "log_return", "standardize", "bins_to_radians")


def _log(x: np.ndarray, label: str) -> np.ndarray:
    bad = np.flatnonzero(~(x > 0))
    if bad.size:
        raise TransformError(f"log of non-positive {label} at row index {int(bad[0])} (value {x[bad[0]]!r})")
    return np.log(x)


def _standardize(x: np.ndarray, label: str) -> np.ndarray:
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    if not sd > 0:
        raise TransformError(f"cannot standardize constant {label}")
    return (x - x.mean()) / sd


def parse_transform(spec: str) -> tuple[str, str | None, int | None]:
    """'name[:target]' or 'bins_to_radians(B)[:target]' -> (name, target, bins).

    ``target`` picks the variable of a regression dataset: 'x' or 'y'.
    """
    spec = spec.strip()
    target = None
    if ":" in spec:
        spec, target = spec.split(":", 1)
        target = target.strip()
        if target not in ("x", "y"):
            raise TransformError(f"transform target must be 'x' or 'y', got {target!r}")
    bins = None
    if spec.startswith("bins_to_radians"):
        rest = spec[len("bins_to_radians"):]
        if not (rest.startswith("(") and rest.endswith(")")):
            raise TransformError("bins_to_radians needs a bin count, e.g. bins_to_radians(16)")
        try:
            bins = int(rest[1:-1])
        except ValueError as exc:
            raise TransformError(f"bad bin count in {spec!r}") from exc
        if bins < 1:
            raise TransformError("bin count must be positive")
        spec = "bins_to_radians"
    if spec not in TRANSFORMS:
        raise TransformError(f"unknown transform {spec!r}; choose from {', '.join(TRANSFORMS)}")
    return spec, target, bins


def _apply(name: str, x: np.ndarray, bins: int | None, label: str) -> np.ndarray:
    if name == "log":
        return _log(x, label)
    if name == "log_return":
        if x.ndim != 1 or x.size < 2:
            raise TransformError("log_return needs a series of length at least 2")
        return np.diff(_log(x, label))
    if name == "standardize":
        return _standardize(x, label)
    return x * (TWO_PI / bins)


def transform(data: Dataset, spec: str) -> Dataset:
    """Apply one transform: log, log_return, standardize or bins_to_radians(B).

    Regression data take a target suffix (``log:y``, ``standardize:x``);
    log_return applies to time series only.
    """
    name, target, bins = parse_transform(spec)
    obs = data.observations
    meta = dict(data.meta or {})
    meta["transforms"] = list(meta.get("transforms", [])) + [spec]
    if data.kind == "regression":
        if target is None:
            raise TransformError("regression transforms need a target suffix ':x' or ':y'")
        if name == "log_return":
            raise TransformError("log_return applies to time series only")
        j = 0 if target == "x" else 1
        out = obs.copy()
        out[:, j] = _apply(name, obs[:, j], bins, target)
        return Dataset.regression(out[:, 0], out[:, 1], **meta)
    if target is not None:
        raise TransformError("target suffixes apply to regression data only")
    if name == "log_return" and data.kind != "timeseries":
        raise TransformError("log_return applies to time series only")
    if data.kind == "timeseries":
        return Dataset.timeseries(_apply(name, obs, bins, "value"), **meta)
    if name == "standardize" and obs.ndim == 2:
        out = np.column_stack([_standardize(obs[:, j], f"column {j}") for j in range(obs.shape[1])])
    else:
        out = _apply(name, obs, bins, "value")
    return Dataset.unconditional(out, **meta)


def transform_chain(data: Dataset, specs) -> Dataset:
    for s in specs:
        data = transform(data, s)
    return data


def check_finite(data: Dataset) -> None:
    bad = np.flatnonzero(~np.all(np.isfinite(data.observations.reshape(data.n_raw, -1)), axis=1))
    if bad.size:
        raise ModelError(f"non-finite observation at row index {int(bad[0])}")

