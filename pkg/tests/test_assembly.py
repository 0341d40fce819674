"""Max-merge assembly: Eq-style semantics, subgradient routing against a
finite-difference oracle, disk injection."""

import numpy as np
import pytest

from artirec.assembly import (
    ArticulatedModel,
    DiskSpec,
    Part,
    add_reference_disk,
    build_posed_grid,
    build_posed_grid_backward,
)
from artirec.field import HashGridConfig, OccupancyField, VoxelGrid
from artirec.kinematics import PRISMATIC, REVOLUTE, JointParams
from tests.conftest import solid_box_values


def logit(p):
    return float(np.log(p / (1.0 - p)))


def uniform_field(level=0.5):
    fld = OccupancyField.create()
    fld.bias = logit(level)
    return fld


def random_field(rng, scale=0.8):
    fld = OccupancyField.create()
    fld.tables[:] = rng.standard_normal(fld.tables.shape) * scale
    return fld


def simple_model(body, part_field, joint=None, thetas=(0.0,)):
    joint = joint or JointParams(PRISMATIC, axis=(0, 1, 0))
    return ArticulatedModel(body, [Part(part_field, joint)], np.asarray(thetas)[:, None])


def test_max_merge_picks_larger_branch():
    model = simple_model(uniform_field(0.2), uniform_field(0.7))
    grid, rec = build_posed_grid(model, 0, record=True)
    np.testing.assert_allclose(grid.values, 0.7, atol=1e-12)
    assert np.all(rec.branch == 1)


def test_identity_transforms_equal_untransformed_max():
    rng = np.random.default_rng(0)
    body = random_field(rng)
    part = random_field(rng)
    model = simple_model(body, part)
    grid = build_posed_grid(model, 0)
    expected = np.maximum(body.rasterize().values, part.rasterize().values)
    np.testing.assert_array_equal(grid.values, expected)


def test_output_in_unit_interval():
    rng = np.random.default_rng(1)
    model = simple_model(random_field(rng, 3.0), random_field(rng, 3.0))
    grid = build_posed_grid(model, 0)
    assert np.all((grid.values >= 0.0) & (grid.values <= 1.0))


def test_exact_ties_route_to_body():
    model = simple_model(uniform_field(0.5), uniform_field(0.5))
    _, rec = build_posed_grid(model, 0, record=True)
    assert np.all(rec.branch == 0)


def test_body_win_gives_no_part_gradient():
    model = simple_model(uniform_field(0.9), uniform_field(0.1))
    _, rec = build_posed_grid(model, 0, record=True)
    up = np.ones(64 ** 3)
    grads = build_posed_grid_backward(model, 0, up, rec)
    part = grads["parts"][0]
    assert not np.any(part["tables"])
    np.testing.assert_array_equal(part["axis"], 0.0)
    assert part["theta"] == 0.0
    assert np.any(grads["body_tables"])


def test_zero_upstream_zero_gradients():
    rng = np.random.default_rng(2)
    model = simple_model(random_field(rng), random_field(rng))
    _, rec = build_posed_grid(model, 0, record=True)
    grads = build_posed_grid_backward(model, 0, np.zeros(64 ** 3), rec)
    assert not np.any(grads["body_tables"])
    assert not np.any(grads["parts"][0]["tables"])


def test_monotone_in_table_entries():
    rng = np.random.default_rng(3)
    model = simple_model(random_field(rng), random_field(rng), thetas=(0.15,))
    before = build_posed_grid(model, 0).values
    model.parts[0].field.tables[3, 1234] += 0.5
    model.parts[0].field.tables[5, 999] += 1.0
    model.body.tables[0, 77] += 0.25
    after = build_posed_grid(model, 0).values
    assert np.all(after >= before - 1e-15)


def _subsample_loss_and_grads(model, k, rng):
    """Scalar loss sum(x^2) over a decisive 8^3 subsample + analytic grads."""
    grid, rec = build_posed_grid(model, k, record=True)
    x = grid.values.ravel()
    stacked = np.stack([rec.body_occ] + rec.part_occ)
    top2 = np.sort(stacked, axis=0)[-2:]
    # keep voxels whose winning branch cannot flip inside the FD window
    # (axis/theta perturbations move part occupancies by up to ~1e-3)
    decisive = (top2[1] - top2[0]) > 3e-2
    mask = np.zeros(64 ** 3, dtype=bool)
    sub = np.zeros((64, 64, 64), dtype=bool)
    sub[::8, ::8, ::8] = True
    mask[sub.ravel() & decisive] = True
    loss = float(np.sum(x[mask] ** 2))
    upstream = np.where(mask, 2.0 * x, 0.0)
    grads = build_posed_grid_backward(model, k, upstream, rec)
    return loss, grads, mask


def _loss_only(model, k, mask):
    x = build_posed_grid(model, k).values.ravel()
    return float(np.sum(x[mask] ** 2))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    joint = JointParams(REVOLUTE, axis=(0.1, 0.2, 0.97), pivot=(0.5, 0.4, 0.3))
    model = simple_model(random_field(rng), random_field(rng), joint, thetas=(0.6,))
    loss, grads, mask = _subsample_loss_and_grads(model, 0, rng)
    h = 1e-5
    worst = 0.0

    def fd_for(mutate, restore):
        mutate(h)
        hi = _loss_only(model, 0, mask)
        restore()
        mutate(-h)
        lo = _loss_only(model, 0, mask)
        restore()
        return (hi - lo) / (2 * h)

    # table entries touched by the analytic gradients
    part = model.parts[0]
    for tables, analytic in ((model.body.tables, grads["body_tables"]),
                             (part.field.tables, grads["parts"][0]["tables"])):
        touched = np.argwhere(analytic != 0.0)
        for l, tt in touched[rng.integers(0, len(touched), size=4)]:
            orig = tables[l, tt]

            def mutate(d, tables=tables, l=l, tt=tt, orig=orig):
                tables[l, tt] = orig + d

            def restore(tables=tables, l=l, tt=tt, orig=orig):
                tables[l, tt] = orig

            fd = fd_for(mutate, restore)
            worst = max(worst, abs(analytic[l, tt] - fd) / max(abs(fd), 1e-8))

    # joint parameters (axis components perturbed as free vectors)
    pj = part.joint
    vec_params = [("axis", pj.axis, grads["parts"][0]["axis"]),
                  ("pivot", pj.pivot, grads["parts"][0]["pivot"])]
    for name, vec, analytic in vec_params:
        for i in range(3):
            orig = vec[i]

            def mutate(d, vec=vec, i=i, orig=orig):
                vec[i] = orig + d

            def restore(vec=vec, i=i, orig=orig):
                vec[i] = orig

            fd = fd_for(mutate, restore)
            worst = max(worst, abs(analytic[i] - fd) / max(abs(fd), 1e-8))

    orig_theta = model.states[0, 0]

    def mutate_theta(d):
        model.states[0, 0] = orig_theta + d

    def restore_theta():
        model.states[0, 0] = orig_theta

    fd = fd_for(mutate_theta, restore_theta)
    worst = max(worst, abs(grads["parts"][0]["theta"] - fd) / max(abs(fd), 1e-8))
    assert worst < 1e-3, f"max relative error {worst}"


def test_prismatic_equivariance(box_field):
    body = uniform_field(0.01)
    joint = JointParams(PRISMATIC, axis=(0, 1, 0))
    model = ArticulatedModel(body, [Part(box_field, joint)], np.array([[0.25]]))
    grid = build_posed_grid(model, 0)
    shifted = solid_box_values((0.3, 0.55, 0.3), (0.7, 0.95, 0.7))
    inter = np.logical_and(grid.values >= 0.5, shifted >= 0.5).sum()
    union = np.logical_or(grid.values >= 0.5, shifted >= 0.5).sum()
    assert inter / union >= 0.9


def enumerate_disk_count(spec, resolution=64):
    count = 0
    for i in range(resolution):
        for j in range(resolution):
            cx = (i + 0.5) / resolution - spec.center_xy[0]
            cy = (j + 0.5) / resolution - spec.center_xy[1]
            if cx * cx + cy * cy <= spec.radius ** 2:
                count += 1
    return count * spec.thickness_voxels


def test_disk_voxel_count_matches_enumeration():
    spec = DiskSpec()
    grid = add_reference_disk(VoxelGrid(np.zeros((64, 64, 64))), spec)
    occupied = int((grid.values == 1.0).sum())
    assert occupied == enumerate_disk_count(spec)
    analytic = np.pi * (0.48 * 64) ** 2 * 3
    assert abs(occupied - analytic) / analytic < 0.05  # boundary voxels only
    zs = np.argwhere(grid.values == 1.0)[:, 2]
    assert zs.max() < 3


def test_disk_idempotent_and_preserves_rest():
    rng = np.random.default_rng(5)
    base = VoxelGrid(rng.random((64, 64, 64)))
    spec = DiskSpec()
    once = add_reference_disk(base, spec)
    twice = add_reference_disk(once, spec)
    assert np.array_equal(once.values, twice.values)
    outside = ~spec.mask(64)
    assert np.array_equal(once.values[outside], base.values[outside])


def test_zero_radius_disk_is_noop():
    rng = np.random.default_rng(6)
    base = VoxelGrid(rng.random((64, 64, 64)))
    out = add_reference_disk(base, DiskSpec(radius=0.0))
    assert np.array_equal(out.values, base.values)


def test_model_validation():
    with pytest.raises(ValueError):
        ArticulatedModel(uniform_field(), [], np.zeros((1, 0)))
    with pytest.raises(ValueError):
        joint = JointParams(PRISMATIC, axis=(0, 1, 0))
        ArticulatedModel(uniform_field(), [Part(uniform_field(), joint)], np.zeros((2, 3)))
    with pytest.raises(IndexError):
        build_posed_grid(simple_model(uniform_field(), uniform_field()), 5)
