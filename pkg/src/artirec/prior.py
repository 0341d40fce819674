"""Shape-prior abstraction: a latent codec plus a conditional denoiser.

The codec stands in for a pretrained volumetric VAE: encode is 4^3
average pooling of the 64^3 occupancy grid down to a 16^3 latent,
decode is nearest-neighbor upsampling clamped to [0,1]. Both are exact
linear maps, so their adjoints (needed by the optimizer) are one-liners.

The denoiser follows the rectified-flow convention

    z_t = (1 - t) * z_0 + t * eps,

and predicts the injected noise. The oracle implementation knows the
per-observation ground-truth grids: it inverts the convention against
the encoded target, which makes its predictions exact and turns the
whole optimization into a verifiable fixed-point problem. A Gaussian
perturbation (noise_std > 0) degrades it into a robustness test double.

Pretrained priors normalize every conditioning shape to a unit bounding
box, which is what makes articulated states scale-inconsistent and the
reference disk necessary. The oracle mimics that: each conditioning
grid is rescaled so its occupied bounding box fills the cube before
encoding. Grids whose largest extent already reaches
`extent_threshold` (any grid with the reference disk) are left
untouched, keeping the with-disk path bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import DiskSpec, add_reference_disk
from .errors import ConfigError, DegenerateTime
from .field import GRID_RESOLUTION, VoxelGrid

LATENT_RESOLUTION = 16
POOL = GRID_RESOLUTION // LATENT_RESOLUTION  # 4^3 blocks
NORMALIZE_EXTENT_THRESHOLD = 0.9
NORMALIZE_FILL_EXTENT = 0.96


@dataclass
class LatentGrid:
    """16^3 (single-channel) latent standing in for the VAE bottleneck."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (LATENT_RESOLUTION,) * 3:
            raise ValueError(f"expected {(LATENT_RESOLUTION,)*3} latent, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("latent contains non-finite values")

    @property
    def channels(self) -> int:
        return 1

    def copy(self) -> "LatentGrid":
        return LatentGrid(self.values.copy())


def encode_values(x: np.ndarray) -> np.ndarray:
    # pairwise power-of-two folds: block sums stay exact for
    # block-constant inputs, so decode(encode(x)) == x bitwise there
    v = x
    for _ in range(POOL.bit_length() - 1):
        v = v[0::2] + v[1::2]
        v = v[:, 0::2] + v[:, 1::2]
        v = v[:, :, 0::2] + v[:, :, 1::2]
    return v / POOL ** 3


def decode_values(z: np.ndarray) -> np.ndarray:
    up = np.repeat(np.repeat(np.repeat(z, POOL, 0), POOL, 1), POOL, 2)
    return np.clip(up, 0.0, 1.0)


def encode_adjoint(grad_z: np.ndarray) -> np.ndarray:
    """Gradient wrt the grid of a gradient wrt encode(grid)."""
    up = np.repeat(np.repeat(np.repeat(grad_z, POOL, 0), POOL, 1), POOL, 2)
    return up / POOL ** 3


def decode_adjoint(grad_x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Gradient wrt the latent of a gradient wrt decode(latent).

    The clamp passes gradients only where the pre-clamp value lies
    strictly inside (0, 1).
    """
    mask = (z > 0.0) & (z < 1.0)
    summed = grad_x.reshape(
        LATENT_RESOLUTION, POOL, LATENT_RESOLUTION, POOL, LATENT_RESOLUTION, POOL
    ).sum(axis=(1, 3, 5))
    return np.where(mask, summed, 0.0)


def encode(x: VoxelGrid) -> LatentGrid:
    if x.resolution != GRID_RESOLUTION:
        raise ValueError(f"codec expects {GRID_RESOLUTION}^3 grids, got {x.resolution}^3")
    return LatentGrid(encode_values(x.values))


def decode(z: LatentGrid) -> VoxelGrid:
    return VoxelGrid(decode_values(z.values))


def normalize_to_unit_box(values: np.ndarray,
                          extent_threshold: float = NORMALIZE_EXTENT_THRESHOLD,
                          fill_extent: float = NORMALIZE_FILL_EXTENT) -> np.ndarray:
    """Rescale the occupied bounding box to fill the cube (nearest resample).

    Mirrors the unit-box normalization a pretrained shape prior applies
    to its inputs. Near-full grids (largest extent >= extent_threshold)
    are returned unchanged so that disk-normalized scenes take the exact
    identity path.
    """
    r = values.shape[0]
    occ = np.argwhere(values >= 0.5)
    if occ.size == 0:
        return values
    lo = occ.min(axis=0)
    hi = occ.max(axis=0)
    max_extent = float((hi - lo).max() + 1) / r
    if max_extent >= extent_threshold:
        return values
    scale = fill_extent / max_extent
    center = (lo + hi + 1.0) / (2.0 * r)
    ax = (np.arange(r) + 0.5) / r
    # output center y samples input at center + (y - 0.5) / scale
    src = center[:, None] + (ax[None, :] - 0.5) / scale
    src_idx = np.floor(src * r).astype(np.int64)
    valid = (src_idx >= 0) & (src_idx < r)
    src_idx = np.clip(src_idx, 0, r - 1)
    out = values[np.ix_(src_idx[0], src_idx[1], src_idx[2])].copy()
    out[~valid[0], :, :] = 0.0
    out[:, ~valid[1], :] = 0.0
    out[:, :, ~valid[2]] = 0.0
    return out


class PriorInterface:
    """Contract every prior implementation satisfies."""

    def encode(self, x: VoxelGrid) -> LatentGrid:
        return encode(x)

    def decode(self, z: LatentGrid) -> VoxelGrid:
        return decode(z)

    def predict_noise(self, z_t: LatentGrid, k: int, t: float) -> LatentGrid:
        raise NotImplementedError


class OracleDenoiser(PriorInterface):
    """Exact denoiser built from the K conditioning grids.

    With noise_std = 0 the prediction inverts the flow convention
    exactly; the implied clean latent is the encoded (disk-augmented,
    box-normalized) target regardless of z_t.
    """

    def __init__(self, targets, disk: DiskSpec | None = None, noise_std: float = 0.0,
                 seed: int = 0, normalize: bool = True):
        self.noise_std = float(noise_std)
        self.normalize = bool(normalize)
        self._rng = np.random.default_rng(seed)
        self._z0 = []
        for tgt in targets:
            g = add_reference_disk(tgt, disk) if disk is not None else tgt
            vals = g.values
            if self.normalize:
                vals = normalize_to_unit_box(vals)
            self._z0.append(encode_values(vals))
        if not self._z0:
            raise ValueError("oracle needs at least one conditioning grid")

    @property
    def n_conditions(self) -> int:
        return len(self._z0)

    def target_latent(self, k: int) -> LatentGrid:
        return LatentGrid(self._z0[k].copy())

    def predict_noise(self, z_t: LatentGrid, k: int, t: float) -> LatentGrid:
        if t < 1e-6:
            raise DegenerateTime(f"flow time {t} too close to 0")
        eps_hat = (z_t.values - (1.0 - t) * self._z0[k]) / t
        if self.noise_std > 0.0:
            eps_hat = eps_hat + self._rng.normal(0.0, self.noise_std, eps_hat.shape)
        return LatentGrid(eps_hat)


PRIOR_KINDS = ("oracle", "oracle-noisy")


def make_prior(kind: str, targets, disk: DiskSpec | None = None,
               noise_std: float = 0.1, seed: int = 0) -> PriorInterface:
    """Build a prior from a config key ("oracle" or "oracle-noisy")."""
    if kind == "oracle":
        return OracleDenoiser(targets, disk, noise_std=0.0, seed=seed)
    if kind == "oracle-noisy":
        return OracleDenoiser(targets, disk, noise_std=noise_std, seed=seed)
    raise ConfigError(f"unknown prior kind {kind!r}; expected one of {PRIOR_KINDS}")
