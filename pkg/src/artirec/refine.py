"""Post-optimization cleanup and mesh extraction.

Fixed stage order: denoise -> remove_carpet -> filter_outliers ->
assign_parts -> extract_mesh. The denoising pass perturbs the merged
grid at the largest joint state in latent space and runs one prediction
through the prior. Carpet removal is component-anchored rather than a
blind z-cut: only connected components that touch the lowest occupied
slab AND lie entirely inside the carpet zone are deleted, so objects
resting near the floor survive (synthetic scenes keep one empty slab
between object and disk). Both cleanup passes are idempotent for scenes
whose objects extend above the carpet zone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import measure

from .assembly import ArticulatedModel, add_reference_disk, build_posed_grid
from .errors import ConfigError, DegenerateTime, EmptyPart
from .field import GRID_RESOLUTION, VoxelGrid
from .kinematics import inverse_transform
from .prior import LatentGrid, PriorInterface, decode_values, encode_values

LABEL_EMPTY = 0
LABEL_BODY = 1


@dataclass
class CleanConfig:
    inject_noise_std: float = 0.5   # mapped to the flow time of the single pass
    carpet_slab_voxels: int = 4
    min_component_size: int = 20
    connectivity: int = 26
    occupancy_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.connectivity not in (6, 26):
            raise ConfigError(f"connectivity must be 6 or 26, got {self.connectivity}")
        if self.min_component_size < 1 or self.carpet_slab_voxels < 1:
            raise ConfigError("size thresholds must be positive")
        if not 0.0 < self.occupancy_threshold < 1.0:
            raise ConfigError("occupancy_threshold must lie in (0, 1)")


def _structure(connectivity: int) -> np.ndarray:
    return ndimage.generate_binary_structure(3, 3 if connectivity == 26 else 1)


def denoise_grid(x_max: VoxelGrid, prior: PriorInterface, k_max: int,
                 config: CleanConfig) -> VoxelGrid:
    """Single noising/denoising round trip through the prior.

    The injected-noise magnitude is interpreted as the flow time of the
    pass (default 0.5); the denoised grid is the decoded implied clean
    latent.
    """
    t = float(config.inject_noise_std)
    if not 1e-6 < t < 1.0 - 1e-6:
        raise DegenerateTime(f"cleaning noise {t} does not map to a usable flow time")
    rng = np.random.default_rng(config.seed)
    z = encode_values(x_max.values)
    eps = rng.standard_normal(z.shape)
    z_t = (1.0 - t) * z + t * eps
    eps_hat = prior.predict_noise(LatentGrid(z_t), k_max, t).values
    z0_hat = (z_t - t * eps_hat) / (1.0 - t)
    return VoxelGrid(decode_values(z0_hat), {"stage": "denoised", "state": k_max})


def remove_carpet(x: VoxelGrid, config: CleanConfig) -> VoxelGrid:
    """Delete the reference-disk component near the lowest occupied slab."""
    occupied = x.values >= config.occupancy_threshold
    if not occupied.any():
        return x.copy()
    z_low = int(np.argwhere(occupied.any(axis=(0, 1)))[0])
    zone_top = z_low + config.carpet_slab_voxels
    labels, n = ndimage.label(occupied, structure=_structure(config.connectivity))
    out = x.copy()
    for comp in range(1, n + 1):
        zs = np.argwhere((labels == comp).any(axis=(0, 1))).ravel()
        if zs[0] == z_low and zs[-1] < zone_top:
            out.values[labels == comp] = 0.0
    out.provenance = dict(x.provenance, stage="carpet_removed")
    return out


def filter_outliers(x: VoxelGrid, config: CleanConfig) -> VoxelGrid:
    """Drop connected components smaller than the size threshold."""
    occupied = x.values >= config.occupancy_threshold
    labels, n = ndimage.label(occupied, structure=_structure(config.connectivity))
    out = x.copy()
    if n == 0:
        return out
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    small = sizes < config.min_component_size
    small[0] = False
    out.values[small[labels]] = 0.0
    out.provenance = dict(x.provenance, stage="cleaned")
    return out


@dataclass
class PartLabelGrid:
    """Per-voxel assignment: 0 empty, 1 body, 2+j part j."""

    labels: np.ndarray
    part_names: list

    def count(self, label: int) -> int:
        return int((self.labels == label).sum())


def assign_parts(model: ArticulatedModel, clean: VoxelGrid, k_max: int,
                 threshold: float = 0.5) -> PartLabelGrid:
    """Label each occupied cell with its highest-occupancy branch.

    Occupancies are the body field at the cell and each part field at
    the inversely transformed cell (posed at state k_max); ties within
    1e-12 go to the body.
    """
    from .field import voxel_centers

    centers = voxel_centers(clean.resolution)
    body = model.body.rasterize_values(resolution=clean.resolution)
    stacked = [body]
    for j, part in enumerate(model.parts):
        coords = inverse_transform(centers, part.joint, float(model.states[k_max, j]))
        stacked.append(part.field.query(coords))
    stacked = np.stack(stacked)
    winner = np.argmax(stacked, axis=0)
    winner[stacked.max(axis=0) - stacked[0] < 1e-12] = 0
    labels = np.where(
        clean.values.ravel() >= threshold, winner + LABEL_BODY, LABEL_EMPTY
    ).astype(np.int8)
    names = ["empty", "body"] + [f"part_{j}" for j in range(model.n_parts)]
    return PartLabelGrid(labels.reshape(clean.values.shape), names)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def write_obj(self, path) -> None:
        with open(path, "w") as f:
            for v in self.vertices:
                f.write(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}\n")
            for a, b, c in self.faces + 1:  # OBJ indices are 1-based
                f.write(f"f {a} {b} {c}\n")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    return TriangleMesh(np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64))


def marching_cubes_grid(values: np.ndarray, level: float = 0.5) -> TriangleMesh:
    """Iso-surface of a grid in normalized object coordinates.

    The volume is zero-padded so boundary-touching occupancy still
    closes; vertex coordinates map voxel index i to center (i+0.5)/R.
    """
    resolution = values.shape[0]
    padded = np.pad(values, 1)
    if padded.max() < level or padded.min() > level:
        raise EmptyPart("grid has no iso-surface at the requested level")
    verts, faces, _, _ = measure.marching_cubes(padded, level=level)
    verts = (verts - 1.0 + 0.5) / resolution
    return TriangleMesh(np.ascontiguousarray(verts), np.ascontiguousarray(faces))


def grid_to_mesh(grid: VoxelGrid, level: float = 0.5) -> TriangleMesh:
    return marching_cubes_grid(grid.values, level)


def extract_mesh(labels: PartLabelGrid, clean: VoxelGrid, label: int) -> TriangleMesh:
    """Marching cubes over one part's masked occupancy."""
    mask = labels.labels == label
    if not mask.any():
        name = labels.part_names[label] if label < len(labels.part_names) else str(label)
        raise EmptyPart(f"no voxels labeled {name!r}")
    return marching_cubes_grid(np.where(mask, clean.values, 0.0))


def refine_pipeline(model: ArticulatedModel, prior: PriorInterface, config: CleanConfig,
                    k_max: int | None = None, disk=None) -> dict:
    """Run the full cleanup chain on the optimized model.

    Returns every intermediate: x_max (disk-augmented merged grid),
    denoised, carpet_removed, cleaned, labels, and one mesh per
    non-empty label.
    """
    if k_max is None:
        k_max = model.n_states - 1
    x_max = build_posed_grid(model, k_max)
    if disk is not None:
        x_max = add_reference_disk(x_max, disk)
    denoised = denoise_grid(x_max, prior, k_max, config)
    no_carpet = remove_carpet(denoised, config)
    cleaned = filter_outliers(no_carpet, config)
    labels = assign_parts(model, cleaned, k_max, threshold=config.occupancy_threshold)
    meshes = {}
    for label, name in enumerate(labels.part_names):
        if label == LABEL_EMPTY:
            continue
        try:
            meshes[name] = extract_mesh(labels, cleaned, label)
        except EmptyPart:
            meshes[name] = None
    return {
        "k_max": k_max,
        "x_max": x_max,
        "denoised": denoised,
        "carpet_removed": no_carpet,
        "cleaned": cleaned,
        "labels": labels,
        "meshes": meshes,
    }
