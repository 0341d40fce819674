"""Posed-grid assembly: max-merge of the body field with the inversely
transformed part fields, subgradient routing for the backward pass, and
the reference-disk injection used for scale normalization.

The posed grid at observation k is

    x(c) = max(Occ_body(c), max_j Occ_part_j(T_j^-1(c; theta_kj)))

evaluated at every voxel center. The backward pass routes each voxel's
upstream gradient to its argmax branch only; ties (|difference| <
1e-12) route to the body, and among parts the lowest index wins. Part
branches chain through the field's coordinate gradients into axis,
pivot, and theta.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _kernels
from .field import GRID_RESOLUTION, OccupancyField, VoxelGrid, voxel_centers
from .kinematics import JointParams, accumulate_joint_gradients, inverse_transform

TIE_TOLERANCE = 1e-12


@dataclass
class DiskSpec:
    """Flat reference cylinder occupying the bottom slabs of the grid."""

    center_xy: tuple = (0.5, 0.5)
    radius: float = 0.48
    thickness_voxels: int = 3
    z_base: int = 0

    def mask(self, resolution: int = GRID_RESOLUTION) -> np.ndarray:
        ax = (np.arange(resolution) + 0.5) / resolution
        inside_xy = (
            (ax[:, None] - self.center_xy[0]) ** 2 + (ax[None, :] - self.center_xy[1]) ** 2
            <= self.radius ** 2
        )
        m = np.zeros((resolution,) * 3, dtype=bool)
        z0 = self.z_base
        z1 = min(resolution, self.z_base + self.thickness_voxels)
        if self.radius > 0:
            m[:, :, z0:z1] = inside_xy[:, :, None]
        return m


def add_reference_disk(grid: VoxelGrid, spec: DiskSpec) -> VoxelGrid:
    """Set disk voxels to full occupancy; everything else unchanged."""
    out = grid.copy()
    out.values[spec.mask(grid.resolution)] = 1.0
    return out


@dataclass
class Part:
    field: OccupancyField
    joint: JointParams

    def copy(self) -> "Part":
        return Part(self.field.copy(), self.joint.copy())


@dataclass
class ArticulatedModel:
    """Body field plus one (field, joint) pair per movable part.

    `states[k, j]` is part j's articulation magnitude at observation k.
    When `states_known` is false the optimizer treats the magnitudes as
    free parameters alongside the joints.
    """

    body: OccupancyField
    parts: list
    states: np.ndarray
    states_known: bool = False

    def __post_init__(self):
        if not self.parts:
            raise ValueError("model needs at least one movable part")
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.ndim != 2:
            raise ValueError(f"states must be (K, n_parts), got shape {self.states.shape}")
        if self.states.shape[1] != len(self.parts):
            raise ValueError(
                f"states shape {self.states.shape} does not match {len(self.parts)} part(s)"
            )

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def copy(self) -> "ArticulatedModel":
        return ArticulatedModel(
            self.body.copy(),
            [p.copy() for p in self.parts],
            self.states.copy(),
            self.states_known,
        )


@dataclass
class BranchRecord:
    """Forward-pass bookkeeping consumed by the backward pass."""

    branch: np.ndarray            # (N,) int8: 0 body, j+1 part j
    body_occ: np.ndarray          # (N,)
    part_occ: list                # per part (N,)
    part_coords: list             # per part (N, 3) canonical-frame query points


def build_posed_grid(model: ArticulatedModel, k: int, record: bool = False,
                     resolution: int = GRID_RESOLUTION):
    """Assemble the posed 64^3 occupancy grid for observation k."""
    if not 0 <= k < model.n_states:
        raise IndexError(f"observation {k} out of range (K={model.n_states})")
    centers = voxel_centers(resolution)
    body_occ = model.body.rasterize_values(resolution=resolution)
    part_occ = []
    part_coords = []
    for j, part in enumerate(model.parts):
        coords = np.ascontiguousarray(
            inverse_transform(centers, part.joint, float(model.states[k, j]))
        )
        occ = np.empty(coords.shape[0], dtype=np.float64)
        _kernels.query_forward(
            coords,
            part.field.tables,
            part.field.config.resolutions(),
            part.field.level_weights,
            part.field.bias,
            occ,
        )
        part_coords.append(coords)
        part_occ.append(occ)

    stacked = np.stack([body_occ] + part_occ)
    x = stacked.max(axis=0)
    grid = VoxelGrid(x.reshape((resolution,) * 3), {"state": int(k)})
    if not record:
        return grid
    branch = np.argmax(stacked, axis=0).astype(np.int8)
    branch[x - body_occ < TIE_TOLERANCE] = 0
    return grid, BranchRecord(branch, body_occ, part_occ, part_coords)


def build_posed_grid_backward(model: ArticulatedModel, k: int, upstream,
                              rec: BranchRecord) -> dict:
    """Route voxel gradients through the argmax branches into parameters.

    Returns {'body_tables': (L,T), 'parts': [{'tables', 'axis',
    'pivot'?, 'theta'}, ...]}. Theta gradients are always computed; the
    optimizer decides whether to apply them.
    """
    up = np.asarray(upstream, dtype=np.float64).reshape(-1)
    centers = voxel_centers(GRID_RESOLUTION) if up.size == GRID_RESOLUTION ** 3 else None
    if centers is None or up.size != rec.branch.size:
        raise ValueError("upstream shape does not match the recorded forward pass")

    up_body = np.where(rec.branch == 0, up, 0.0)
    body_sprime = up_body * rec.body_occ * (1.0 - rec.body_occ)
    body_tables = model.body.rasterize_backward(body_sprime)

    out = {"body_tables": body_tables, "parts": []}
    for j, part in enumerate(model.parts):
        occ = rec.part_occ[j]
        up_j = np.where(rec.branch == j + 1, up, 0.0)
        up_sprime = np.ascontiguousarray(up_j * occ * (1.0 - occ))
        grad_tables = np.zeros_like(part.field.tables)
        grad_coords = np.empty_like(rec.part_coords[j])
        _kernels.query_backward(
            rec.part_coords[j],
            part.field.tables,
            part.field.config.resolutions(),
            part.field.level_weights,
            up_sprime,
            grad_tables,
            grad_coords,
            True,
        )
        joint_grads = accumulate_joint_gradients(
            centers, grad_coords, part.joint, float(model.states[k, j])
        )
        entry = {"tables": grad_tables, "axis": joint_grads["axis"], "theta": joint_grads["theta"]}
        if part.joint.is_revolute:
            entry["pivot"] = joint_grads["pivot"]
        out["parts"].append(entry)
    return out
