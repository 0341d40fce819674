"""Synthetic articulated scenes with exact ground truth.

Objects are unions/differences of axis-aligned boxes in the rest frame,
voxelized at 64^3 by center-in-solid tests, so every grid is an exact
indicator. Geometry is voxel-aligned: box faces sit on multiples of
1/64, the default prismatic travel is exactly 16 voxels, and everything
stays inside the unit cube at every generated state (checked, raising
OutOfBounds otherwise). Objects float one slab above the reference disk
so carpet removal can never touch them.

Posed grids follow the same max-merge semantics as the assembly module:
a voxel center c is part-occupied at state k iff the inverse articulation
transform maps c into the rest-frame solid.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .assembly import DiskSpec, add_reference_disk
from .errors import ConfigError, OutOfBounds
from .field import GRID_RESOLUTION, VoxelGrid, voxel_centers
from .gridio import read_json, read_voxel_grid, write_json, write_voxel_grid
from .joint_init import PointPair
from .kinematics import (
    PRISMATIC,
    REVOLUTE,
    JointParams,
    forward_transform,
    inverse_transform,
    joints_from_json_dict,
    joints_to_json_dict,
)

SCENE_KINDS = ("box_lid", "cabinet_drawer", "laptop", "multi_joint")
V = 1.0 / GRID_RESOLUTION  # one voxel in normalized units


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pts > lo) & (pts < hi), axis=1)

    def corners(self) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        g = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        return lo + g * (hi - lo)


@dataclass(frozen=True)
class ShellBox:
    """Outer box with a rectangular cavity (e.g. a cabinet body)."""

    outer: Box
    cavity: Box

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.outer.contains(pts) & ~self.cavity.contains(pts)

    def corners(self) -> np.ndarray:
        return self.outer.corners()


def voxelize(solid, resolution: int = GRID_RESOLUTION) -> np.ndarray:
    centers = voxel_centers(resolution)
    return solid.contains(centers).astype(np.float64).reshape((resolution,) * 3)


@dataclass
class SceneSpec:
    kind: str = "box_lid"
    n_states: int = 6
    theta_max: list | None = None       # per part; None = kind defaults
    disk: DiskSpec = dc_field(default_factory=DiskSpec)
    seed: int = 0
    pairs_per_state: int = 64
    pairs_noise_std: float = 0.0
    pairs_static_fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"kind: unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        if self.n_states < 2:
            raise ConfigError("n_states: need at least two joint states")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_states": self.n_states,
            "theta_max": self.theta_max,
            "disk": {
                "center_xy": list(self.disk.center_xy),
                "radius": self.disk.radius,
                "thickness_voxels": self.disk.thickness_voxels,
                "z_base": self.disk.z_base,
            },
            "seed": self.seed,
            "pairs_per_state": self.pairs_per_state,
            "pairs_noise_std": self.pairs_noise_std,
            "pairs_static_fraction": self.pairs_static_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        known = {
            "kind", "n_states", "theta_max", "disk", "seed",
            "pairs_per_state", "pairs_noise_std", "pairs_static_fraction",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scene spec keys: {sorted(unknown)}")
        if "disk" in d and isinstance(d["disk"], dict):
            dd = d["disk"]
            d["disk"] = DiskSpec(
                tuple(dd.get("center_xy", (0.5, 0.5))),
                dd.get("radius", 0.48),
                dd.get("thickness_voxels", 3),
                dd.get("z_base", 0),
            )
        return cls(**d)


def _vox(*indices):
    return tuple(i * V for i in indices)


def _kind_geometry(kind: str):
    """Rest-frame solids, joints, default travel, and schedule shapes."""
    if kind == "box_lid":
        body = Box(_vox(13, 13, 4), _vox(51, 51, 28))
        lid = Box(_vox(13, 13, 28), _vox(51, 49, 31))
        joint = JointParams(REVOLUTE, (1, 0, 0), _vox(32, 13, 29.5))
        return body, [lid], [joint], [1.0], ["linear"]
    if kind == "laptop":
        base = Box(_vox(12, 12, 4), _vox(52, 52, 10))
        screen = Box(_vox(12, 13, 10), _vox(52, 51, 13))
        joint = JointParams(REVOLUTE, (1, 0, 0), _vox(32, 13, 11.5))
        return base, [screen], [joint], [1.2], ["linear"]
    if kind == "cabinet_drawer":
        shell = ShellBox(
            Box(_vox(12, 12, 4), _vox(52, 52, 36)),
            Box(_vox(16, 16, 8), _vox(48, 52, 32)),
        )
        drawer = Box(_vox(17, 17, 9), _vox(47, 47, 31))
        joint = JointParams(PRISMATIC, (0, 1, 0))
        return shell, [drawer], [joint], [0.25], ["linear"]
    if kind == "multi_joint":
        shell = ShellBox(
            Box(_vox(12, 12, 4), _vox(52, 52, 32)),
            Box(_vox(16, 16, 6), _vox(48, 52, 14)),
        )
        lid = Box(_vox(12, 13, 32), _vox(52, 51, 35))
        drawer = Box(_vox(17, 17, 7), _vox(47, 47, 13))
        lid_joint = JointParams(REVOLUTE, (1, 0, 0), _vox(32, 13, 33.5))
        drawer_joint = JointParams(PRISMATIC, (0, 1, 0))
        return shell, [lid, drawer], [lid_joint, drawer_joint], [0.8, 0.25], ["linear", "quadratic"]
    raise ConfigError(f"kind: unknown scene kind {kind!r}")


def _schedule(shape: str, theta_max: float, n_states: int) -> np.ndarray:
    u = np.arange(n_states) / (n_states - 1)
    if shape == "quadratic":
        u = u ** 2
    return theta_max * u


@dataclass
class GroundTruthScene:
    spec: SceneSpec
    body_solid: object
    part_solids: list
    joints: list
    states: np.ndarray                 # (K, n_parts)
    theta_max: list
    body_grid: VoxelGrid = None
    part_grids: list = None
    posed_grids: list = None           # per state, disk-free
    posed_grids_disk: list = None

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_parts(self) -> int:
        return len(self.part_solids)

    def posed_values_at(self, thetas) -> np.ndarray:
        """Analytic posed indicator grid for arbitrary per-part thetas."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
        centers = voxel_centers(GRID_RESOLUTION)
        occ = self.body_solid.contains(centers)
        for solid, joint, theta in zip(self.part_solids, self.joints, thetas):
            occ = occ | solid.contains(inverse_transform(centers, joint, float(theta)))
        return occ.astype(np.float64).reshape((GRID_RESOLUTION,) * 3)

    def posed(self, k: int, with_disk: bool = False) -> VoxelGrid:
        return (self.posed_grids_disk if with_disk else self.posed_grids)[k]


def generate(spec: SceneSpec) -> GroundTruthScene:
    """Voxelize the scene and pose it at every state; all ground truth."""
    body_solid, part_solids, joints, default_max, shapes = _kind_geometry(spec.kind)
    theta_max = list(spec.theta_max) if spec.theta_max is not None else default_max
    if len(theta_max) != len(part_solids):
        raise ConfigError(f"theta_max: expected {len(part_solids)} entries, got {len(theta_max)}")
    states = np.stack(
        [_schedule(shape, tm, spec.n_states) for shape, tm in zip(shapes, theta_max)], axis=1
    )

    for j, (solid, joint) in enumerate(zip(part_solids, joints)):
        corners = solid.corners()
        for k in range(spec.n_states):
            posed = forward_transform(corners, joint, float(states[k, j]))
            if np.any(posed < 0.0) or np.any(posed > 1.0):
                raise OutOfBounds(
                    f"part {j} exits the unit cube at state {k} (theta={states[k, j]:.4f})"
                )

    scene = GroundTruthScene(
        spec=spec,
        body_solid=body_solid,
        part_solids=part_solids,
        joints=joints,
        states=states,
        theta_max=theta_max,
    )
    scene.body_grid = VoxelGrid(voxelize(body_solid), {"part": "body"})
    scene.part_grids = [
        VoxelGrid(voxelize(s), {"part": j}) for j, s in enumerate(part_solids)
    ]
    scene.posed_grids = []
    scene.posed_grids_disk = []
    for k in range(spec.n_states):
        vals = scene.posed_values_at(states[k])
        g = VoxelGrid(vals, {"state": k})
        scene.posed_grids.append(g)
        scene.posed_grids_disk.append(add_reference_disk(g, spec.disk))
        scene.posed_grids_disk[-1].provenance = {"state": k, "disk": True}
    return scene


def _sample_box_surface(box: Box, n: int, rng) -> np.ndarray:
    """Area-weighted points on the six faces of a box."""
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    ext = hi - lo
    areas = np.array([
        ext[1] * ext[2], ext[1] * ext[2],
        ext[0] * ext[2], ext[0] * ext[2],
        ext[0] * ext[1], ext[0] * ext[1],
    ])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.random((n, 2))
    pts = np.empty((n, 3))
    for i, f in enumerate(face):
        axis = f // 2
        side = f % 2
        others = [a for a in range(3) if a != axis]
        pts[i, axis] = lo[axis] if side == 0 else hi[axis]
        pts[i, others[0]] = lo[others[0]] + u[i, 0] * ext[others[0]]
        pts[i, others[1]] = lo[others[1]] + u[i, 1] * ext[others[1]]
    return pts


def sample_correspondences(scene: GroundTruthScene, state_i: int, state_j: int, n: int,
                           noise_std: float = 0.0, static_fraction: float = 0.0,
                           seed: int = 0, part: int = 0) -> list:
    """Lifted 3D point pairs between two states of one movable part.

    Surface points of the part are posed into both states by the true
    transform; `noise_std` Gaussian noise lands on the destination side.
    A `static_fraction` of body-surface pairs (zero displacement before
    noise) is mixed in for filter testing.
    """
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    n_static = int(round(n * static_fraction))
    n_moving = n - n_static
    joint = scene.joints[part]
    solid = scene.part_solids[part]
    pairs = []
    if n_moving:
        rest = _sample_box_surface(solid, n_moving, rng)
        src = forward_transform(rest, joint, float(scene.states[state_i, part]))
        dst = forward_transform(rest, joint, float(scene.states[state_j, part]))
        if noise_std > 0:
            dst = dst + rng.normal(0.0, noise_std, dst.shape)
        pairs.extend(
            PointPair(s, d, state_i, state_j) for s, d in zip(src, dst)
        )
    if n_static:
        body_box = scene.body_solid.outer if isinstance(scene.body_solid, ShellBox) else scene.body_solid
        pts = _sample_box_surface(body_box, n_static, rng)
        dst = pts + rng.normal(0.0, noise_std, pts.shape) if noise_std > 0 else pts.copy()
        pairs.extend(PointPair(p, d, state_i, state_j) for p, d in zip(pts, dst))
    return pairs


def save_scene_bundle(scene: GroundTruthScene, out_dir) -> Path:
    """Write the on-disk bundle: grids, joints.json, per-part pairs.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_voxel_grid(out / "body.avox", scene.body_grid)
    for j, g in enumerate(scene.part_grids):
        write_voxel_grid(out / f"part_{j}.avox", g)
    for k in range(scene.n_states):
        write_voxel_grid(out / f"posed_{k}.avox", scene.posed(k))
        write_voxel_grid(out / f"posed_disk_{k}.avox", scene.posed(k, with_disk=True))
    doc = joints_to_json_dict(scene.joints, scene.states)
    doc["theta_max"] = list(np.asarray(scene.theta_max, dtype=float))
    doc["scene_spec"] = scene.spec.to_dict()
    write_json(out / "joints.json", doc)
    spec = scene.spec
    for j in range(scene.n_parts):
        pairs = []
        for k in range(1, scene.n_states):
            pairs.extend(
                sample_correspondences(
                    scene, 0, k, spec.pairs_per_state,
                    noise_std=spec.pairs_noise_std,
                    static_fraction=spec.pairs_static_fraction,
                    seed=spec.seed * 7919 + k * 131 + j,
                    part=j,
                )
            )
        name = "pairs.json" if scene.n_parts == 1 else f"pairs_{j}.json"
        write_json(out / name, [p.to_dict() for p in pairs])
    return out


@dataclass
class SceneBundle:
    """Deserialized bundle; regenerate the analytic scene from the spec."""

    spec: SceneSpec
    joints: list
    states: np.ndarray
    theta_max: list
    body_grid: VoxelGrid
    part_grids: list
    posed_grids: list
    posed_grids_disk: list
    pairs: list  # per part: list of PointPair

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_parts(self) -> int:
        return len(self.part_grids)


def load_scene_bundle(path) -> SceneBundle:
    path = Path(path)
    doc = read_json(path / "joints.json")
    joints, states = joints_from_json_dict(doc)
    spec = SceneSpec.from_dict(doc["scene_spec"])
    n_parts = len(joints)
    k_states = states.shape[0]
    part_grids = [read_voxel_grid(path / f"part_{j}.avox") for j in range(n_parts)]
    pairs = []
    for j in range(n_parts):
        name = "pairs.json" if n_parts == 1 else f"pairs_{j}.json"
        pairs.append([PointPair.from_dict(d) for d in read_json(path / name)])
    return SceneBundle(
        spec=spec,
        joints=joints,
        states=states,
        theta_max=list(doc["theta_max"]),
        body_grid=read_voxel_grid(path / "body.avox"),
        part_grids=part_grids,
        posed_grids=[read_voxel_grid(path / f"posed_{k}.avox") for k in range(k_states)],
        posed_grids_disk=[read_voxel_grid(path / f"posed_disk_{k}.avox") for k in range(k_states)],
        pairs=pairs,
    )
