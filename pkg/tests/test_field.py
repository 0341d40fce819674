"""Hash-grid field contracts: background rule, gradients vs finite
differences, regression fitting, rasterization, determinism."""

import numpy as np
import pytest

from artirec.errors import ConfigError, NonConvergence
from artirec.field import (
    GRID_RESOLUTION,
    HashGridConfig,
    OccupancyField,
    VoxelGrid,
    init_from_grid,
    voxel_centers,
)
from artirec.kinematics import PRISMATIC, JointParams, JointState
from tests.conftest import solid_box_values


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def sample_smooth_points(rng, n, config, margin=1e-3):
    """Points inside the cube whose per-level fractional offsets stay away
    from lattice planes, so central differences do not cross C1 kinks."""
    res = config.resolutions()
    pts = []
    while len(pts) < n:
        c = rng.uniform(0.05, 0.95, 3)
        frac = (c[None, :] * res[:, None]) % 1.0
        if np.all(np.minimum(frac, 1.0 - frac) > margin):
            pts.append(c)
    return np.array(pts)


def random_field(rng, config=None, scale=0.5):
    fld = OccupancyField.create(config or HashGridConfig())
    fld.tables[:] = rng.standard_normal(fld.tables.shape) * scale
    return fld


def test_fresh_field_reads_background_everywhere():
    fld = OccupancyField.create()
    rng = np.random.default_rng(0)
    vals = fld.query(rng.uniform(0, 1, (100, 3)))
    np.testing.assert_allclose(vals, sigmoid(-4.0), atol=1e-15)
    assert abs(sigmoid(-4.0) - 0.018) < 1e-3


def test_outside_cube_reads_bias_only():
    rng = np.random.default_rng(1)
    fld = random_field(rng)
    assert fld.query((2.0, 2.0, 2.0)) == pytest.approx(sigmoid(fld.bias), abs=0)
    outside = np.array([[1.2, 0.5, 0.5], [-0.01, 0.5, 0.5], [0.5, 0.5, 7.0]])
    np.testing.assert_allclose(fld.query(outside), sigmoid(fld.bias), atol=0)


def test_query_output_in_unit_interval_and_finite():
    rng = np.random.default_rng(2)
    fld = random_field(rng, scale=5.0)
    vals = fld.query(rng.uniform(-1, 2, (5000, 3)))
    assert np.all(np.isfinite(vals))
    assert np.all((vals > 0.0) & (vals < 1.0))


def test_query_continuity():
    rng = np.random.default_rng(3)
    fld = random_field(rng)
    pts = rng.uniform(0.1, 0.9, (200, 3))
    delta = 1e-7
    vals = fld.query(pts)
    vals2 = fld.query(pts + delta)
    assert np.max(np.abs(vals - vals2)) < 1e-4


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(4)
    fld = random_field(rng)
    out = fld.query_backward(rng.uniform(0, 1, (10, 3)), np.zeros(10))
    assert not np.any(out["tables"])
    assert not np.any(out["d_c"])


def test_table_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    h = 1e-5
    worst = 0.0
    for trial in range(50):
        cfg = HashGridConfig()
        fld = random_field(rng, cfg)
        c = sample_smooth_points(rng, 1, cfg)[0]
        up = float(rng.uniform(0.5, 2.0))
        grads = fld.query_backward(c, up)["tables"]
        touched = np.argwhere(grads != 0.0)
        pick = touched[rng.integers(0, len(touched), size=3)]
        for l, t in pick:
            orig = fld.tables[l, t]
            fld.tables[l, t] = orig + h
            hi = fld.query(c)
            fld.tables[l, t] = orig - h
            lo = fld.query(c)
            fld.tables[l, t] = orig
            fd = up * (hi - lo) / (2 * h)
            worst = max(worst, abs(grads[l, t] - fd) / max(abs(fd), 1e-12))
    assert worst < 1e-4, f"max relative error {worst}"


def test_coordinate_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    h = 1e-5
    worst = 0.0
    cfg = HashGridConfig()
    for trial in range(50):
        fld = random_field(rng, cfg)
        c = sample_smooth_points(rng, 1, cfg)[0]
        d_c = fld.query_backward(c, 1.0)["d_c"]
        fd = np.zeros(3)
        for k in range(3):
            dc = np.zeros(3)
            dc[k] = h
            fd[k] = (fld.query(c + dc) - fld.query(c - dc)) / (2 * h)
        scale = max(1.0, np.max(np.abs(fd)))
        worst = max(worst, np.max(np.abs(d_c - fd)) / scale)
    assert worst < 1e-3, f"max relative error {worst}"


def test_gradients_zero_outside_cube():
    rng = np.random.default_rng(7)
    fld = random_field(rng)
    out = fld.query_backward(np.array([[1.5, 0.5, 0.5]]), np.ones(1))
    assert not np.any(out["tables"])
    assert not np.any(out["d_c"])


def test_rasterize_zero_tables_uniform():
    fld = OccupancyField.create()
    grid = fld.rasterize()
    assert grid.resolution == GRID_RESOLUTION
    np.testing.assert_allclose(grid.values, sigmoid(fld.bias), atol=1e-15)


def test_rasterize_matches_pointwise_query(box_field):
    grid = box_field.rasterize()
    direct = box_field.query(voxel_centers())
    np.testing.assert_allclose(grid.values.ravel(), direct, atol=0)


def _iou(a, b):
    return np.logical_and(a, b).sum() / np.logical_or(a, b).sum()


def test_fitted_box_rasterization_iou(box_field, centered_box_grid):
    grid = box_field.rasterize()
    assert _iou(grid.values >= 0.5, centered_box_grid.values >= 0.5) > 0.95


def test_fitted_box_prismatic_shift(box_field):
    j = JointParams(PRISMATIC, axis=(0, 1, 0))
    grid = box_field.rasterize(j, JointState(0.25))
    shifted = solid_box_values((0.3, 0.55, 0.3), (0.7, 0.95, 0.7))
    assert _iou(grid.values >= 0.5, shifted >= 0.5) > 0.9
    # displacement is exactly 16 voxels: compare against rolled rest grid
    rest = box_field.rasterize().values >= 0.5
    rolled = np.roll(rest, 16, axis=1)
    assert _iou(grid.values >= 0.5, rolled) > 0.95


def test_init_from_grid_zero_target():
    fld = init_from_grid(VoxelGrid(np.zeros((64, 64, 64))), HashGridConfig(), seed=0)
    vals = fld.rasterize().values
    assert np.max(vals) < 0.05


def test_init_from_grid_half_cube_mse():
    half = np.zeros((64, 64, 64))
    half[:32] = 1.0
    fld = init_from_grid(VoxelGrid(half), HashGridConfig(), seed=0)
    occ = fld.rasterize().values
    assert np.mean((occ - half) ** 2) < 1e-3


def test_init_from_grid_deterministic(centered_box_grid, box_field):
    again = init_from_grid(centered_box_grid, HashGridConfig(), seed=0)
    assert np.array_equal(again.tables, box_field.tables)


def test_init_from_grid_nonconvergence_signals():
    # one level hashed into 16 entries cannot represent a half cube
    cfg = HashGridConfig(levels=1, base_resolution=64, table_size=16)
    half = np.zeros((64, 64, 64))
    half[:32] = 1.0
    with pytest.raises(NonConvergence):
        init_from_grid(VoxelGrid(half), cfg, seed=0)


def test_config_validation():
    with pytest.raises(ConfigError):
        HashGridConfig(table_size=1000)  # not a power of two
    with pytest.raises(ConfigError):
        HashGridConfig(levels=2, base_resolution=8)  # finest < 64
    with pytest.raises(ConfigError):
        HashGridConfig(features_per_entry=2)
    cfg = HashGridConfig()
    assert cfg.resolutions()[-1] >= 64


def test_voxelgrid_shape_validation():
    with pytest.raises(ValueError):
        VoxelGrid(np.zeros((64, 64, 32)))
