"""Matrix serialization: plain-text CSV and a compact binary container.

The binary container is a 16-byte header (row count and column count as
little-endian unsigned 64-bit integers) followed by the entries as
little-endian float64 in row-major order.  Round trips are bit exact.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix

_HEADER = struct.Struct("<QQ")


def save_matrix_csv(M, path) -> None:
    """Write one comma-separated line per row, full float64 precision."""
    A = as_matrix(M)
    with open(path, "w", encoding="ascii") as fh:
        for row in A:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    if not rows:
        raise ValidationError(f"{path}: no rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValidationError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.float64)


def save_matrix_bin(M, path) -> None:
    A = np.ascontiguousarray(as_matrix(M))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(A.shape[0], A.shape[1]))
        fh.write(A.astype("<f8", copy=False).tobytes())


def load_matrix_bin(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    rows, cols = _HEADER.unpack_from(data)
    expected = _HEADER.size + rows * cols * 8
    if rows < 1 or cols < 1 or len(data) != expected:
        raise ValidationError(
            f"{path}: header declares {rows}x{cols} but payload has "
            f"{len(data) - _HEADER.size} bytes"
        )
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return flat.reshape(rows, cols).astype(np.float64)
