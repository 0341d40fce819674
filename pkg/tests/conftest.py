"""Shared fixtures. Field fits are expensive (fixed 500-step budget), so
fitted fields are session-scoped and reused across test modules."""

import numpy as np
import pytest

from artirec.field import GRID_RESOLUTION, HashGridConfig, VoxelGrid, init_from_grid


def solid_box_values(lo, hi, resolution=GRID_RESOLUTION):
    """Indicator grid of an axis-aligned box via center-in-solid tests."""
    ax = (np.arange(resolution) + 0.5) / resolution
    vals = np.zeros((resolution,) * 3)
    mx = (ax > lo[0]) & (ax < hi[0])
    my = (ax > lo[1]) & (ax < hi[1])
    mz = (ax > lo[2]) & (ax < hi[2])
    vals[np.ix_(mx, my, mz)] = 1.0
    return vals


@pytest.fixture(scope="session")
def centered_box_grid():
    return VoxelGrid(solid_box_values((0.3, 0.3, 0.3), (0.7, 0.7, 0.7)))


@pytest.fixture(scope="session")
def box_field(centered_box_grid):
    return init_from_grid(centered_box_grid, HashGridConfig(), seed=0)
