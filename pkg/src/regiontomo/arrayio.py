"""Headered little-endian binary arrays.

Each file holds one array: an ASCII header line ``QTDM1 <dtype> <d0> <d1> ...``
followed by the raw row-major little-endian payload.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "QTDM1"
_DTYPES = {
    "complex128": np.dtype("<c16"),
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
}


def write_array(path: str | Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        name = "complex128"
    elif np.issubdtype(arr.dtype, np.integer):
        name = "int64"
    else:
        name = "float64"
    data = np.ascontiguousarray(arr, dtype=_DTYPES[name])
    header = " ".join([MAGIC, name] + [str(d) for d in data.shape]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes(order="C"))


def read_array(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != MAGIC:
            raise ValueError(f"{path}: bad magic {header[:1]}")
        if header[1] not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype {header[1]}")
        dtype = _DTYPES[header[1]]
        shape = tuple(int(d) for d in header[2:])
        payload = fh.read()
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
