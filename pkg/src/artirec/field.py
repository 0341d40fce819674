"""Continuous multi-level hash-grid occupancy fields and dense voxel grids.

A field maps R^3 -> (0,1): per level, the query point is scaled by the
level resolution, the eight surrounding lattice corners are hashed into
that level's table, and the corner features are trilinearly blended.
The per-level features pass through a fixed affine readout (weight per
level + bias) and a sigmoid. Coordinates outside the unit cube read as
empty background, sigmoid(bias), and carry no gradients.

Gradients with respect to table entries and query coordinates are
analytic (see `_kernels`); there is no autodiff anywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _kernels
from .adam import Adam
from .errors import ConfigError, NonConvergence
from .kinematics import JointParams, inverse_transform

GRID_RESOLUTION = 64
DEFAULT_BIAS = -4.0


@dataclass(frozen=True)
class HashGridConfig:
    """Level layout of a hash-grid field.

    The finest level must resolve the 64^3 target grid, i.e.
    floor(base_resolution * per_level_scale^(levels-1)) >= 64.
    """

    levels: int = 8
    base_resolution: int = 8
    per_level_scale: float = 1.4
    table_size: int = 2 ** 16
    features_per_entry: int = 1

    def __post_init__(self):
        if self.table_size & (self.table_size - 1) != 0 or self.table_size <= 0:
            raise ConfigError(f"table_size must be a power of two, got {self.table_size}")
        if self.features_per_entry != 1:
            raise ConfigError("only scalar features are supported (features_per_entry=1)")
        if self.levels < 1:
            raise ConfigError("need at least one level")
        if self.resolutions()[-1] < GRID_RESOLUTION:
            raise ConfigError(
                f"finest level resolution {self.resolutions()[-1]} < {GRID_RESOLUTION};"
                " increase levels, base_resolution or per_level_scale"
            )

    def resolutions(self) -> np.ndarray:
        return np.floor(
            self.base_resolution * self.per_level_scale ** np.arange(self.levels)
        ).astype(np.float64)


@dataclass
class VoxelGrid:
    """Dense occupancy tensor over the unit cube, values in [0, 1].

    `values[ix, iy, iz]` samples the voxel centered at ((i+0.5)/R, ...).
    """

    values: np.ndarray
    provenance: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or len(set(self.values.shape)) != 1:
            raise ValueError(f"expected a cubic grid, got shape {self.values.shape}")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.values.copy(), dict(self.provenance))

    def binarize(self, threshold: float = 0.5) -> np.ndarray:
        return self.values >= threshold

    @classmethod
    def zeros(cls, resolution: int = GRID_RESOLUTION) -> "VoxelGrid":
        return cls(np.zeros((resolution,) * 3))


def voxel_centers(resolution: int = GRID_RESOLUTION) -> np.ndarray:
    """(R^3, 3) voxel-center coordinates; row-major over (ix, iy, iz)."""
    return _centers_cached(resolution)


_center_store: dict = {}


def _centers_cached(resolution: int) -> np.ndarray:
    got = _center_store.get(resolution)
    if got is None:
        ax = (np.arange(resolution) + 0.5) / resolution
        gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
        got = np.ascontiguousarray(np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1))
        _center_store[resolution] = got
    return got


_corner_cache_store: dict = {}


def _corner_cache(config: HashGridConfig, resolution: int):
    """Shared (idx, weights) corner cache for fixed voxel centers.

    Hashes and trilinear weights depend only on (config, resolution), so
    one cache serves every field with the same layout.
    """
    key = (config, resolution)
    got = _corner_cache_store.get(key)
    if got is None:
        coords = voxel_centers(resolution)
        n = coords.shape[0]
        idx = np.empty((n, config.levels, 8), dtype=np.int32)
        w = np.empty((n, config.levels, 8), dtype=np.float64)
        _kernels.build_corner_cache(coords, config.resolutions(), config.table_size, idx, w)
        got = (idx, w)
        _corner_cache_store[key] = got
    return got


@dataclass
class OccupancyField:
    """One optimizable occupancy field (tables + fixed affine readout)."""

    config: HashGridConfig
    tables: np.ndarray
    level_weights: np.ndarray
    bias: float = DEFAULT_BIAS

    @classmethod
    def create(cls, config: HashGridConfig | None = None, seed: int = 0) -> "OccupancyField":
        """Fresh empty field: zero tables, bias sigmoid(-4) ~ 0.018.

        Table init is deterministic (zeros); `seed` is accepted for
        interface symmetry with the fitting entry points.
        """
        config = config or HashGridConfig()
        del seed
        return cls(
            config=config,
            tables=np.zeros((config.levels, config.table_size), dtype=np.float64),
            level_weights=np.ones(config.levels, dtype=np.float64),
        )

    @property
    def background(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.bias)))

    def query(self, c) -> float | np.ndarray:
        """Occupancy in (0,1) at one point (3,) or a batch (N, 3)."""
        c = np.asarray(c, dtype=np.float64)
        single = c.ndim == 1
        pts = np.ascontiguousarray(c.reshape(-1, 3))
        occ = np.empty(pts.shape[0], dtype=np.float64)
        _kernels.query_forward(
            pts, self.tables, self.config.resolutions(), self.level_weights, self.bias, occ
        )
        return float(occ[0]) if single else occ

    def query_backward(self, c, upstream, occ=None) -> dict:
        """Exact gradients of `query` at previously queried points.

        Returns {'tables': (levels, table_size), 'd_c': matching c}.
        `occ` may pass the forward values to avoid recomputation.
        """
        c = np.asarray(c, dtype=np.float64)
        single = c.ndim == 1
        pts = np.ascontiguousarray(c.reshape(-1, 3))
        up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (pts.shape[0],))
        if occ is None:
            occ = self.query(pts)
        occ = np.asarray(occ, dtype=np.float64).reshape(-1)
        up_sprime = np.ascontiguousarray(up * occ * (1.0 - occ))
        grad_tables = np.zeros_like(self.tables)
        grad_coords = np.empty_like(pts)
        _kernels.query_backward(
            pts,
            self.tables,
            self.config.resolutions(),
            self.level_weights,
            up_sprime,
            grad_tables,
            grad_coords,
            True,
        )
        if single:
            grad_coords = grad_coords[0]
        return {"tables": grad_tables, "d_c": grad_coords}

    def rasterize(self, joint: JointParams | None = None, state=None,
                  resolution: int = GRID_RESOLUTION) -> VoxelGrid:
        """Sample the field at every voxel center of the unit cube.

        With a joint given, each center is first mapped by the inverse
        articulation transform (the per-part term of the posed grid).
        """
        values = self.rasterize_values(joint, state, resolution)
        prov = {} if joint is None else {"joint": joint.to_dict(), "theta": getattr(state, "theta", state)}
        return VoxelGrid(values.reshape((resolution,) * 3), prov)

    def rasterize_values(self, joint=None, state=None, resolution: int = GRID_RESOLUTION) -> np.ndarray:
        centers = voxel_centers(resolution)
        occ = np.empty(centers.shape[0], dtype=np.float64)
        if joint is None:
            idx, w = _corner_cache(self.config, resolution)
            _kernels.cached_forward(idx, w, self.tables, self.level_weights, self.bias, occ)
        else:
            coords = np.ascontiguousarray(inverse_transform(centers, joint, state))
            _kernels.query_forward(
                coords, self.tables, self.config.resolutions(), self.level_weights, self.bias, occ
            )
        return occ

    def rasterize_backward(self, up_sprime: np.ndarray, resolution: int = GRID_RESOLUTION) -> np.ndarray:
        """Table gradients of an untransformed rasterization.

        `up_sprime` is upstream * occ * (1-occ), flat over voxel centers.
        """
        idx, w = _corner_cache(self.config, resolution)
        grad_tables = np.zeros_like(self.tables)
        _kernels.cached_backward(idx, w, self.level_weights,
                                 np.ascontiguousarray(up_sprime), grad_tables)
        return grad_tables

    def copy(self) -> "OccupancyField":
        return OccupancyField(self.config, self.tables.copy(), self.level_weights.copy(), self.bias)


REGRESSION_STEPS = 500
REGRESSION_LR = 0.01
REGRESSION_MSE_LIMIT = 0.05


def init_from_grid(target: VoxelGrid, config: HashGridConfig | None = None, seed: int = 0,
                   steps: int = REGRESSION_STEPS, lr: float = REGRESSION_LR) -> OccupancyField:
    """Fit a fresh field to a target grid by MSE regression at voxel centers.

    Fixed budget of 500 Adam steps at lr 0.01 on the table entries.
    Raises NonConvergence when the final MSE stays above 0.05, which
    signals a pathological config rather than a hard optimization.
    """
    fld = OccupancyField.create(config, seed=seed)
    resolution = target.resolution
    idx, w = _corner_cache(fld.config, resolution)
    target_flat = np.ascontiguousarray(target.values.ravel())
    opt = Adam({"tables": fld.tables}, lr=lr)
    grad_tables = np.zeros_like(fld.tables)
    for _ in range(steps):
        grad_tables[:] = 0.0
        _kernels.regression_step(
            idx, w, fld.tables, fld.level_weights, fld.bias, target_flat, grad_tables
        )
        opt.step({"tables": grad_tables})
    occ = np.empty(target_flat.size, dtype=np.float64)
    _kernels.cached_forward(idx, w, fld.tables, fld.level_weights, fld.bias, occ)
    mse = float(np.mean((occ - target_flat) ** 2))
    if mse > REGRESSION_MSE_LIMIT:
        raise NonConvergence(f"field regression stalled at MSE {mse:.4f} > {REGRESSION_MSE_LIMIT}")
    return fld
