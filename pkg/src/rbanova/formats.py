"""Binary and text layouts for snapshots, matrices and sparse operators.

* vector: little-endian uint64 length, then float64 values
* matrix: little-endian uint64 rows and cols, then float64 values column-major
* triplets: one ``row col value`` line per stored entry, 0-based, 17 digits
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ModelFormatError

_U64 = struct.Struct("<Q")


def vector_bytes(values) -> bytes:
    v = np.ascontiguousarray(values, dtype="<f8").reshape(-1)
    return _U64.pack(v.size) + v.tobytes()


def matrix_bytes(matrix) -> bytes:
    m = np.asarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValueError("matrix must be two-dimensional")
    return struct.pack("<QQ", *m.shape) + np.asfortranarray(m).tobytes(order="F")


def parse_vector(buf: bytes, offset: int = 0):
    if len(buf) < offset + 8:
        raise ModelFormatError("truncated vector header")
    (n,) = _U64.unpack_from(buf, offset)
    end = offset + 8 + 8 * n
    if len(buf) < end:
        raise ModelFormatError(f"vector truncated: expected {n} values")
    return np.frombuffer(buf, dtype="<f8", count=n, offset=offset + 8).astype(float), end


def parse_matrix(buf: bytes, offset: int = 0):
    if len(buf) < offset + 16:
        raise ModelFormatError("truncated matrix header")
    rows, cols = struct.unpack_from("<QQ", buf, offset)
    end = offset + 16 + 8 * rows * cols
    if len(buf) < end:
        raise ModelFormatError(f"matrix truncated: expected {rows}x{cols} values")
    flat = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=offset + 16)
    return flat.reshape((rows, cols), order="F").astype(float), end


def write_vector(path, values) -> None:
    Path(path).write_bytes(vector_bytes(values))


def read_vector(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    v, end = parse_vector(buf)
    if end != len(buf):
        raise ModelFormatError(f"{path}: trailing bytes after vector")
    return v


def write_matrix(path, matrix) -> None:
    Path(path).write_bytes(matrix_bytes(matrix))


def read_matrix(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m, end = parse_matrix(buf)
    if end != len(buf):
        raise ModelFormatError(f"{path}: trailing bytes after matrix")
    return m


def write_triplets(path, matrix) -> None:
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_triplets(path, shape) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)


def format_floats(values) -> str:
    return " ".join(float(v).hex() for v in np.asarray(values, dtype=float).reshape(-1))


def parse_floats(text: str) -> np.ndarray:
    text = text.strip()
    return np.array([float.fromhex(tok) for tok in text.split()]) if text else np.zeros(0)
