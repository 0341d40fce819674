"""Voxel grid file round trips and header validation."""

import numpy as np
import pytest

from artirec.errors import ArtirecError
from artirec.field import VoxelGrid
from artirec.gridio import MAGIC, read_voxel_grid, write_voxel_grid


def test_round_trip_preserves_values_and_provenance(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.random((64, 64, 64)).astype(np.float32).astype(np.float64)
    grid = VoxelGrid(vals, {"state": 3, "part": "lid"})
    p = tmp_path / "grid.avox"
    write_voxel_grid(p, grid)
    back = read_voxel_grid(p)
    assert np.array_equal(back.values, vals)  # values chosen f32-exact
    assert back.provenance == {"state": 3, "part": "lid"}


def test_header_layout_and_x_fastest_order(tmp_path):
    vals = np.zeros((64, 64, 64))
    vals[1, 0, 0] = 1.0  # second sample in x-fastest order
    vals[0, 1, 0] = 0.5
    p = tmp_path / "g.avox"
    write_voxel_grid(p, VoxelGrid(vals))
    raw = p.read_bytes()
    assert raw[:4] == MAGIC
    assert int.from_bytes(raw[4:8], "little") == 64
    assert len(raw) == 16 + 4 * 64 ** 3
    flat = np.frombuffer(raw[16:], dtype="<f4")
    assert flat[1] == 1.0
    assert flat[64] == 0.5


def test_write_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    grid = VoxelGrid(rng.random((64, 64, 64)), {"state": 0})
    a, b = tmp_path / "a.avox", tmp_path / "b.avox"
    write_voxel_grid(a, grid)
    write_voxel_grid(b, grid)
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.avox.json").read_bytes() == (tmp_path / "b.avox.json").read_bytes()


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.avox"
    p.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ArtirecError):
        read_voxel_grid(p)


def test_truncated_payload_rejected(tmp_path):
    p = tmp_path / "short.avox"
    write_voxel_grid(p, VoxelGrid(np.zeros((64, 64, 64))))
    data = p.read_bytes()
    p.write_bytes(data[: len(data) // 2])
    with pytest.raises(ArtirecError):
        read_voxel_grid(p)
