"""NSKF binary fields, CSV tables and JSON reports.

NSKF layout (little endian)::

    b"NSKF" | u32 version=1 | u8 dim | dim x u64 axis sizes | f64 length | f64 samples (row-major)
"""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .spectral import Grid, RealField

__all__ = [
    "FieldFormatError",
    "MAGIC",
    "VERSION",
    "write_field",
    "read_field",
    "write_csv",
    "write_json",
    "format_float",
]

MAGIC = b"NSKF"
VERSION = 1


class FieldFormatError(ValueError):
    pass


def write_field(f: RealField, path) -> None:
    grid = f.grid
    header = MAGIC + struct.pack("<IB", VERSION, grid.dim)
    header += struct.pack(f"<{grid.dim}Q", *grid.shape)
    header += struct.pack("<d", grid.length)
    data = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + data)


def read_field(path) -> RealField:
    """Read an NSKF file; raises FieldFormatError on any mismatch, never a partial field."""
    blob = Path(path).read_bytes()
    if len(blob) < 9:
        raise FieldFormatError(f"truncated NSKF header ({len(blob)} bytes)")
    magic = blob[:4]
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
    version, dim = struct.unpack_from("<IB", blob, 4)
    if version != VERSION:
        raise FieldFormatError(f"unsupported NSKF version {version}")
    if dim not in (2, 3):
        raise FieldFormatError(f"unsupported dimension {dim}")
    off = 9
    need = off + 8 * dim + 8
    if len(blob) < need:
        raise FieldFormatError("truncated NSKF header")
    sizes = struct.unpack_from(f"<{dim}Q", blob, off)
    off += 8 * dim
    (length,) = struct.unpack_from("<d", blob, off)
    off += 8
    if len(set(sizes)) != 1:
        raise FieldFormatError(f"non-uniform axis sizes {sizes} are not supported")
    count = int(np.prod(sizes))
    payload = len(blob) - off
    if payload < 8 * count:
        raise FieldFormatError(f"truncated NSKF data: {payload} bytes for {count} samples")
    if payload > 8 * count:
        raise FieldFormatError(f"size mismatch: {payload} bytes of data for {count} samples")
    try:
        grid = Grid(dim=dim, n=int(sizes[0]), length=length)
    except ValueError as exc:
        raise FieldFormatError(str(exc)) from exc
    values = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(grid.shape)
    return RealField(grid, values.astype(np.float64))


def format_float(v: float) -> str:
    return f"{float(v):.17g}"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, payload: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
