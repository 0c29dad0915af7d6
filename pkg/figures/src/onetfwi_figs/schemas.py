"""Readers for the file formats the inversion toolkit exports.

Only files cross the boundary: per-sample score tables as CSV, velocity
panels and shot gathers as NPY stacks. Each reader validates shape or
header before returning plain numpy data.
"""

import csv
from pathlib import Path

import numpy as np

SCORE_COLUMNS = ("sample", "condition", "rel_l2", "ssim")


class SchemaError(ValueError):
    """An input file does not match the documented export format."""


def read_scores(path) -> list[dict]:
    """Parse a scores CSV into row dicts with typed values."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        for col in SCORE_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path.name}: missing column {col!r}")
        rows = []
        for i, raw in enumerate(reader):
            try:
                rows.append(
                    {
                        "sample": int(raw["sample"]),
                        "condition": raw["condition"],
                        "rel_l2": float(raw["rel_l2"]),
                        "ssim": float(raw["ssim"]),
                    }
                )
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path.name} row {i}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path.name}: no data rows")
    return rows


def read_field_stack(path) -> np.ndarray:
    """Velocity panels stored as (n, nz, nx); a bare 2-D field is promoted."""
    arr = _load(path)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise SchemaError(f"{Path(path).name}: expected (n, nz, nx), got {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def read_trace_stack(path) -> np.ndarray:
    """Shot gathers stored as (shots, receivers, samples)."""
    arr = _load(path)
    if arr.ndim != 3:
        raise SchemaError(
            f"{Path(path).name}: expected (shots, receivers, nt), got {arr.shape}"
        )
    return np.asarray(arr, dtype=np.float64)


def _load(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    try:
        arr = np.load(path, allow_pickle=False)
    except ValueError as exc:
        raise SchemaError(f"{path.name}: not a readable NPY file: {exc}") from exc
    if not np.issubdtype(arr.dtype, np.floating):
        raise SchemaError(f"{path.name}: expected float data, got {arr.dtype}")
    return arr
