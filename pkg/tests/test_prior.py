"""Codec and oracle denoiser contracts, including the exact fixed-point
identities the optimization relies on."""

import numpy as np
import pytest

from artirec.assembly import DiskSpec, add_reference_disk
from artirec.errors import ConfigError, DegenerateTime
from artirec.field import VoxelGrid
from artirec.prior import (
    LatentGrid,
    OracleDenoiser,
    decode,
    encode,
    make_prior,
    normalize_to_unit_box,
)

FULL_SLAB_DISK = DiskSpec(radius=0.75, thickness_voxels=4)  # block-aligned full slab


def constant_grid(v):
    return VoxelGrid(np.full((64, 64, 64), float(v)))


def test_encode_constant_passthrough():
    z = encode(constant_grid(0.37))
    np.testing.assert_allclose(z.values, 0.37, atol=1e-15)


def test_encode_single_voxel_pooling_arithmetic():
    vals = np.zeros((64, 64, 64))
    vals[5, 9, 13] = 1.0
    z = encode(VoxelGrid(vals))
    assert z.values[1, 2, 3] == 1.0 / 64.0
    assert z.values.sum() == 1.0 / 64.0


def test_decode_constant_and_clamp():
    z = LatentGrid(np.full((16, 16, 16), 0.4))
    np.testing.assert_allclose(decode(z).values, 0.4, atol=1e-15)
    z_hot = LatentGrid(np.full((16, 16, 16), 1.3))
    np.testing.assert_allclose(decode(z_hot).values, 1.0, atol=0)


def test_codec_fixed_points():
    rng = np.random.default_rng(0)
    # decode(encode(x)) = x exactly for grids constant on 4^3 blocks
    blocks = rng.random((16, 16, 16))
    x = np.repeat(np.repeat(np.repeat(blocks, 4, 0), 4, 1), 4, 2)
    back = decode(encode(VoxelGrid(x))).values
    np.testing.assert_array_equal(back, x)
    # encode(decode(z)) = z for latents in [0, 1]
    z = LatentGrid(rng.random((16, 16, 16)))
    z_back = encode(decode(z)).values
    np.testing.assert_allclose(z_back, z.values, atol=1e-15)


def test_codec_round_trip_bound_binary_grids():
    rng = np.random.default_rng(1)
    x = (rng.random((64, 64, 64)) < 0.3).astype(np.float64)
    back = decode(encode(VoxelGrid(x))).values
    assert np.max(np.abs(back - x)) <= 1.0


def dyadic_noise(rng, scale=2.0 ** -10):
    """Noise on a dyadic lattice so flow algebra cancels exactly in floats."""
    return rng.integers(-4096, 4097, (16, 16, 16)).astype(np.float64) * scale


def test_oracle_prediction_exact_on_dyadic_construction():
    rng = np.random.default_rng(2)
    target = VoxelGrid((rng.random((64, 64, 64)) < 0.4).astype(np.float64))
    oracle = OracleDenoiser([target], disk=FULL_SLAB_DISK)
    z0 = oracle.target_latent(0).values
    eps = dyadic_noise(rng)
    t = 0.5
    z_t = LatentGrid((1.0 - t) * z0 + t * eps)
    eps_hat = oracle.predict_noise(z_t, 0, t)
    assert np.array_equal(eps_hat.values, eps)
    # implied clean latent inverts exactly as well
    z0_implied = (z_t.values - t * eps_hat.values) / (1.0 - t)
    assert np.array_equal(z0_implied, z0)


def test_oracle_prediction_near_exact_generic_t():
    rng = np.random.default_rng(3)
    target = VoxelGrid((rng.random((64, 64, 64)) < 0.4).astype(np.float64))
    oracle = OracleDenoiser([target], disk=DiskSpec())
    z0 = oracle.target_latent(0).values
    for t in (0.5, 0.63, 0.8):
        eps = rng.standard_normal((16, 16, 16))
        z_t = LatentGrid((1.0 - t) * z0 + t * eps)
        eps_hat = oracle.predict_noise(z_t, 0, t)
        assert np.max(np.abs(eps_hat.values - eps)) < 1e-12


def test_oracle_noisy_mean_converges():
    rng = np.random.default_rng(4)
    target = VoxelGrid((rng.random((64, 64, 64)) < 0.4).astype(np.float64))
    exact = OracleDenoiser([target], disk=DiskSpec())
    noisy = OracleDenoiser([target], disk=DiskSpec(), noise_std=0.1, seed=11)
    t = 0.6
    eps = rng.standard_normal((16, 16, 16))
    z_t = LatentGrid((1.0 - t) * exact.target_latent(0).values + t * eps)
    want = exact.predict_noise(z_t, 0, t).values
    acc = np.zeros_like(want)
    for _ in range(1000):
        acc += noisy.predict_noise(z_t, 0, t).values
    mean = acc / 1000.0
    # per-cell std of the mean is 0.1/sqrt(1000) ~ 0.003
    assert np.mean(np.abs(mean - want)) < 0.01
    assert np.max(np.abs(mean - want)) < 0.02


def test_oracle_deterministic_given_seed():
    rng = np.random.default_rng(5)
    target = VoxelGrid((rng.random((64, 64, 64)) < 0.4).astype(np.float64))
    z_t = LatentGrid(rng.standard_normal((16, 16, 16)))
    a = OracleDenoiser([target], noise_std=0.2, seed=7).predict_noise(z_t, 0, 0.7)
    b = OracleDenoiser([target], noise_std=0.2, seed=7).predict_noise(z_t, 0, 0.7)
    assert np.array_equal(a.values, b.values)


def test_degenerate_time_rejected():
    target = constant_grid(0.0)
    oracle = OracleDenoiser([target])
    with pytest.raises(DegenerateTime):
        oracle.predict_noise(LatentGrid(np.zeros((16, 16, 16))), 0, 1e-9)


def test_normalization_identity_with_disk():
    rng = np.random.default_rng(6)
    obj = np.zeros((64, 64, 64))
    obj[20:40, 20:40, 8:24] = 1.0
    with_disk = add_reference_disk(VoxelGrid(obj), DiskSpec()).values
    assert np.array_equal(normalize_to_unit_box(with_disk), with_disk)


def test_normalization_rescales_small_objects_state_dependently():
    # same body, movable part extends differently: scales differ per state
    def scene(extent):
        v = np.zeros((64, 64, 64))
        v[24:40, 24:40, 8:24] = 1.0
        v[24:40, 40:extent, 8:12] = 1.0
        return v

    short = normalize_to_unit_box(scene(44))
    long = normalize_to_unit_box(scene(60))
    # normalized body occupancies now disagree between states
    assert np.any(short != long)
    lo_s, hi_s = np.argwhere(short > 0).min(0), np.argwhere(short > 0).max(0)
    assert (hi_s - lo_s).max() + 1 >= 0.9 * 64  # fills the box


def test_normalization_empty_grid_unchanged():
    v = np.zeros((64, 64, 64))
    assert np.array_equal(normalize_to_unit_box(v), v)


def test_make_prior_kinds():
    target = constant_grid(0.0)
    assert isinstance(make_prior("oracle", [target]), OracleDenoiser)
    noisy = make_prior("oracle-noisy", [target], noise_std=0.3)
    assert noisy.noise_std == 0.3
    with pytest.raises(ConfigError):
        make_prior("trellis", [target])


def test_latent_validation():
    with pytest.raises(ValueError):
        LatentGrid(np.zeros((8, 8, 8)))
    with pytest.raises(ValueError):
        LatentGrid(np.full((16, 16, 16), np.nan))
