"""Articulated object reconstruction from a pluggable voxel shape prior.

The package jointly optimizes per-part hash-grid occupancy fields and
joint parameters (axis, pivot, per-state magnitudes) against a frozen
denoising prior, then cleans, segments, and meshes the result. All
gradients are analytic and every entry point is deterministic under a
fixed seed.
"""

from .errors import (
    AllStatic,
    ArtirecError,
    Collinear,
    ConfigError,
    DegenerateRotation,
    DegenerateTime,
    EmptyInput,
    EmptyPart,
    NonConvergence,
    NumericalDivergence,
    OutOfBounds,
    ZeroVector,
)
from .field import GRID_RESOLUTION, HashGridConfig, OccupancyField, VoxelGrid, init_from_grid, voxel_centers
from .kinematics import (
    PRISMATIC,
    REVOLUTE,
    JointParams,
    JointState,
    forward_transform,
    inverse_transform,
    inverse_transform_jacobians,
    rotation_matrix,
)

__version__ = "0.1.0"
