"""Voxel grid file format.

Binary layout: 16-byte header = magic b"AVOX", u32 resolution, and two
reserved u32 words (zero), followed by resolution^3 little-endian
float32 values in x-fastest order. A JSON sidecar `<file>.json` records
provenance (state index, part id, and friends).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArtirecError
from .field import VoxelGrid

MAGIC = b"AVOX"
_HEADER = struct.Struct("<4sIII")


def write_voxel_grid(path, grid: VoxelGrid) -> None:
    path = Path(path)
    payload = np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, grid.resolution, 0, 0))
        f.write(payload)
    sidecar = dict(grid.provenance)
    sidecar["resolution"] = grid.resolution
    with open(path.with_name(path.name + ".json"), "w") as f:
        json.dump(sidecar, f, sort_keys=True, indent=1)
        f.write("\n")


def read_voxel_grid(path) -> VoxelGrid:
    path = Path(path)
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ArtirecError(f"{path}: truncated header")
        magic, resolution, _, _ = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ArtirecError(f"{path}: bad magic {magic!r}")
        raw = f.read(4 * resolution ** 3)
    if len(raw) != 4 * resolution ** 3:
        raise ArtirecError(f"{path}: truncated payload")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    values = values.reshape((resolution,) * 3, order="F")
    provenance = {}
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        with open(sidecar) as f:
            provenance = json.load(f)
        provenance.pop("resolution", None)
    return VoxelGrid(values, provenance)


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)
