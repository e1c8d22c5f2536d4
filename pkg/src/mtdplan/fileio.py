"""Binary dose volume format.

Layout (all little-endian): 4-byte magic ``MTDD``, uint32 version (1),
three uint32 grid dimensions, then nx*ny*nz float64 dose values in C
order.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MAGIC = b"MTDD"
VERSION = 1


def write_dose_volume(path, dose: np.ndarray, grid_dims) -> None:
    nx, ny, nz = (int(d) for d in grid_dims)
    values = np.ascontiguousarray(np.asarray(dose, dtype="<f8").reshape(nx * ny * nz))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<III", nx, ny, nz))
        fh.write(values.tobytes())


def read_dose_volume(path) -> tuple[np.ndarray, tuple[int, int, int]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"bad magic {magic!r}, expected {MAGIC!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise DataError("truncated dose volume header")
        version, nx, ny, nz = struct.unpack("<IIII", header)
        if version != VERSION:
            raise DataError(f"unsupported dose volume version {version}")
        payload = fh.read(8 * nx * ny * nz)
        if len(payload) != 8 * nx * ny * nz:
            raise DataError("truncated dose volume payload")
        extra = fh.read(1)
        if extra:
            raise DataError("trailing bytes after dose volume payload")
    dose = np.frombuffer(payload, dtype="<f8").copy()
    return dose, (nx, ny, nz)
