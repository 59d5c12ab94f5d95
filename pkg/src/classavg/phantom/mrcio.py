"""Minimal MRC2014 reader/writer for cubic mode-2 (float32) maps.

Covers just enough of the format to ingest real density maps and to
round-trip the generator's own volumes; anything outside the supported
subset is rejected loudly.  On disk the x index runs fastest and z slowest;
in memory volumes are indexed (x, y, z).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .volume import Volume

_HEADER_LEN = 1024


class UnsupportedMrcShape(ValueError):
    pass


class UnsupportedMrcMode(ValueError):
    pass


def load_mrc(path) -> Volume:
    """Read a cubic mode-2 MRC map, shifting densities so the minimum is 0.

    The shift makes the data usable as transport mass (W1 needs nonnegative
    inputs); real maps store signed potentials.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER_LEN:
        raise IOError(f"{path}: truncated MRC header ({len(raw)} bytes)")
    nx, ny, nz, mode = struct.unpack_from("<4i", raw, 0)
    if mode != 2:
        raise UnsupportedMrcMode(f"{path}: MRC mode {mode} unsupported (need 2, 32-bit float)")
    if not (nx == ny == nz):
        raise UnsupportedMrcShape(f"{path}: non-cubic map {nx}x{ny}x{nz}")
    (nsymbt,) = struct.unpack_from("<i", raw, 92)
    offset = _HEADER_LEN + nsymbt
    count = nx * ny * nz
    expected = offset + 4 * count
    if len(raw) < expected:
        raise IOError(f"{path}: truncated MRC data ({len(raw)} bytes, need {expected})")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    grid = data.reshape(nz, ny, nx).transpose(2, 1, 0).astype(np.float64)
    grid = grid - grid.min()
    return Volume(nx, grid, provenance=f"mrc:{path.name}")


def write_mrc(path, data: np.ndarray):
    """Write a cubic float volume (indexed x, y, z) as a mode-2 MRC map."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 3 or len(set(arr.shape)) != 1:
        raise UnsupportedMrcShape(f"can only write cubic volumes, got {arr.shape}")
    n = arr.shape[0]
    header = bytearray(_HEADER_LEN)
    struct.pack_into("<4i", header, 0, n, n, n, 2)
    struct.pack_into("<3i", header, 16, 0, 0, 0)          # nxstart..nzstart
    struct.pack_into("<3i", header, 28, n, n, n)          # mx, my, mz
    struct.pack_into("<3f", header, 40, 2.0, 2.0, 2.0)    # cell in grid units of the [-1,1] cube
    struct.pack_into("<3f", header, 52, 90.0, 90.0, 90.0)
    struct.pack_into("<3i", header, 64, 1, 2, 3)          # mapc, mapr, maps
    struct.pack_into("<3f", header, 76, float(arr.min()), float(arr.max()), float(arr.mean()))
    struct.pack_into("<2i", header, 88, 1, 0)             # ispg, nsymbt
    header[208:212] = b"MAP "
    header[212:216] = bytes([0x44, 0x44, 0, 0])           # little-endian stamp
    struct.pack_into("<f", header, 216, float(arr.std()))
    disk = arr.transpose(2, 1, 0)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(disk.tobytes())
