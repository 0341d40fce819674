"""Joint optimization of occupancy fields and joint parameters.

Each iteration samples an observation k, a flow time t, and latent
noise, assembles the disk-augmented posed grid x, and descends the
weighted sum of two losses:

  score-distillation: the residual between the prior's noise prediction
  at z_t = (1-t) encode(x) + t eps and the injected noise, pushed back
  through d z_t / d params = (1-t) d encode(x) / d params with the
  prediction treated as a constant (frozen-teacher treatment);

  voxel reconstruction: || decode(z0_hat) - x ||^2 with the implied
  clean latent z0_hat = (z_t - t * eps_hat) / (1-t), the prediction
  again held constant, gradients flowing through both the direct x term
  and z_t's dependence on the encoding.

One Adam instance updates every parameter: hash tables, joint axes
(gradients projected to the unit-sphere tangent, axes renormalized
after each step), pivots (clamped to [-1.5, 1.5]^3), and per-state
magnitudes when states are being estimated (clamped to [-pi, pi] /
[-1, 1]). Disk voxels are overwritten constants and receive no
gradient. Everything is driven by one seeded generator, so identical
configs produce bit-identical traces.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from .adam import Adam
from .assembly import (
    ArticulatedModel,
    DiskSpec,
    Part,
    add_reference_disk,
    build_posed_grid,
    build_posed_grid_backward,
)
from .errors import ConfigError, DegenerateTime, NumericalDivergence
from .field import GRID_RESOLUTION, HashGridConfig, VoxelGrid, init_from_grid
from .kinematics import REVOLUTE, PIVOT_BOUND, project_to_tangent, theta_bound
from .prior import LatentGrid, PriorInterface, decode_values, encode_adjoint, encode_values


@dataclass
class OptimConfig:
    iterations: int = 3000
    lr: float = 0.01
    lambda_sds: float = 0.1
    lambda_vox: float = 1.0
    t_range: tuple = (0.5, 0.8)
    w_of_t: str = "constant"
    seed: int = 0
    optimize_states: bool = True
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        lo, hi = self.t_range
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"t_range must lie inside (0, 1), got {self.t_range}")
        if self.lambda_sds < 0 or self.lambda_vox < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.w_of_t != "constant":
            raise ConfigError(f"unknown w(t) choice {self.w_of_t!r}")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")

    def weight(self, t: float) -> float:
        return 1.0


@dataclass
class ObservationSet:
    """Per-state conditioning: ground-truth posed grids standing in for
    images, plus the (possibly unknown) articulation magnitudes."""

    targets: list
    thetas: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return len(self.targets)


@dataclass
class TrainTrace:
    columns: list
    rows: list = dc_field(default_factory=list)

    def append(self, row):
        self.rows.append([float(v) for v in row])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([repr(v) for v in row])

    def __len__(self) -> int:
        return len(self.rows)


def _trace_columns(model: ArticulatedModel) -> list:
    cols = ["iteration", "k", "t", "sds_loss", "vox_loss"]
    for j, part in enumerate(model.parts):
        cols += [f"axis{j}_{c}" for c in "xyz"]
        if part.joint.is_revolute:
            cols += [f"pivot{j}_{c}" for c in "xyz"]
    for k in range(model.n_states):
        for j in range(model.n_parts):
            cols.append(f"theta{k}_{j}")
    return cols


def _trace_row(model, iteration, k, t, sds_loss, vox_loss) -> list:
    row = [iteration, k, t, sds_loss, vox_loss]
    for part in model.parts:
        row += list(part.joint.axis)
        if part.joint.is_revolute:
            row += list(part.joint.pivot)
    row += list(model.states.ravel())
    return row


def loss_terms(model: ArticulatedModel, k: int, t: float, eps: np.ndarray,
               prior: PriorInterface, disk: DiskSpec | None, lambda_sds: float,
               lambda_vox: float, w_t: float = 1.0, frozen_eps_hat=None) -> dict:
    """One forward/backward pass of the combined objective.

    Returns the per-term scalars and the full gradient dict. With
    `frozen_eps_hat` the prior is bypassed (used by the finite-difference
    harness, which must hold the prediction constant).
    """
    if 1.0 - t < 1e-6:
        raise DegenerateTime(f"flow time {t} too close to 1")
    grid, rec = build_posed_grid(model, k, record=True)
    if disk is not None:
        x_grid = add_reference_disk(grid, disk)
        disk_mask = disk.mask(grid.resolution).ravel()
    else:
        x_grid = grid
        disk_mask = None
    x = x_grid.values

    z = encode_values(x)
    z_t = (1.0 - t) * z + t * eps
    if frozen_eps_hat is None:
        eps_hat = prior.predict_noise(LatentGrid(z_t), k, t).values
    else:
        eps_hat = frozen_eps_hat

    g_z = np.zeros_like(z)
    sds_loss = 0.0
    if lambda_sds > 0.0:
        residual = w_t * (eps_hat - eps)
        sds_loss = 0.5 * float(np.sum(residual * residual))  # trace proxy
        g_z += lambda_sds * (1.0 - t) * residual

    vox_loss = 0.0
    g_x = np.zeros_like(x)
    if lambda_vox > 0.0:
        z0_hat = (z_t - t * eps_hat) / (1.0 - t)
        upsampled = np.repeat(np.repeat(np.repeat(z0_hat, 4, 0), 4, 1), 4, 2)
        decoded = np.clip(upsampled, 0.0, 1.0)
        d = decoded - x
        vox_loss = float(np.sum(d * d))
        g_x += lambda_vox * (-2.0) * d
        g_decoded = 2.0 * d * ((upsampled > 0.0) & (upsampled < 1.0))
        g_z0 = g_decoded.reshape(16, 4, 16, 4, 16, 4).sum(axis=(1, 3, 5))
        g_z += lambda_vox * g_z0  # d z0_hat / d z = 1 with eps_hat frozen

    g_x += encode_adjoint(g_z)
    g_x_flat = g_x.ravel()
    if disk_mask is not None:
        g_x_flat = np.where(disk_mask, 0.0, g_x_flat)
    grads = build_posed_grid_backward(model, k, g_x_flat, rec)
    return {
        "sds_loss": sds_loss,
        "vox_loss": vox_loss,
        "grads": grads,
        "x": x_grid,
        "z": z,
        "z_t": z_t,
        "eps_hat": eps_hat,
    }


def sds_gradient(model: ArticulatedModel, k: int, t: float, eps: np.ndarray,
                 prior: PriorInterface, disk: DiskSpec | None = None,
                 w_t: float = 1.0) -> dict:
    """Score-distillation gradients over every optimizable parameter."""
    out = loss_terms(model, k, t, eps, prior, disk, lambda_sds=1.0, lambda_vox=0.0, w_t=w_t)
    return out["grads"]


def voxel_loss(model: ArticulatedModel, k: int, t: float, eps: np.ndarray,
               prior: PriorInterface, disk: DiskSpec | None = None):
    """Voxel-space reconstruction loss and its gradients."""
    out = loss_terms(model, k, t, eps, prior, disk, lambda_sds=0.0, lambda_vox=1.0)
    return out["vox_loss"], out["grads"]


def _collect_params(model: ArticulatedModel, optimize_states: bool) -> dict:
    params = {"body_tables": model.body.tables}
    for j, part in enumerate(model.parts):
        params[f"part{j}_tables"] = part.field.tables
        params[f"axis{j}"] = part.joint.axis
        if part.joint.is_revolute:
            params[f"pivot{j}"] = part.joint.pivot
    if optimize_states:
        params["states"] = model.states
    return params


def _grads_to_dict(model, grads, k, optimize_states) -> dict:
    out = {"body_tables": grads["body_tables"]}
    for j, part in enumerate(model.parts):
        pg = grads["parts"][j]
        out[f"part{j}_tables"] = pg["tables"]
        out[f"axis{j}"] = project_to_tangent(pg["axis"], part.joint.axis)
        if part.joint.is_revolute:
            out[f"pivot{j}"] = pg["pivot"]
    if optimize_states:
        sg = np.zeros_like(model.states)
        for j in range(model.n_parts):
            sg[k, j] = grads["parts"][j]["theta"]
        out["states"] = sg
    return out


def _constrain(model: ArticulatedModel, optimize_states: bool) -> None:
    for part in model.parts:
        part.joint.axis /= np.linalg.norm(part.joint.axis)
        if part.joint.is_revolute:
            np.clip(part.joint.pivot, -PIVOT_BOUND, PIVOT_BOUND, out=part.joint.pivot)
    if optimize_states:
        for j, part in enumerate(model.parts):
            bound = theta_bound(part.joint.joint_type)
            np.clip(model.states[:, j], -bound, bound, out=model.states[:, j])


def _all_finite(params: dict) -> bool:
    return all(np.all(np.isfinite(v)) for v in params.values())


def run(model: ArticulatedModel, observations: ObservationSet, prior: PriorInterface,
        config: OptimConfig, disk: DiskSpec | None = None):
    """Optimize the model in place; returns (model, trace).

    Raises NumericalDivergence (carrying the partial trace) if any
    parameter leaves the finite range.
    """
    if observations.n_states != model.n_states:
        raise ConfigError(
            f"model has {model.n_states} states but observations carry {observations.n_states}"
        )
    rng = np.random.default_rng(config.seed)
    optimize_states = config.optimize_states and not model.states_known
    params = _collect_params(model, optimize_states)
    opt = Adam(params, lr=config.lr, betas=config.adam_betas, eps=config.adam_eps)
    trace = TrainTrace(_trace_columns(model))
    lo, hi = config.t_range
    for it in range(config.iterations):
        k = int(rng.integers(model.n_states))
        t = float(rng.uniform(lo, hi))
        eps = rng.standard_normal((16, 16, 16))
        out = loss_terms(
            model, k, t, eps, prior, disk,
            lambda_sds=config.lambda_sds, lambda_vox=config.lambda_vox,
            w_t=config.weight(t),
        )
        grads = _grads_to_dict(model, out["grads"], k, optimize_states)
        opt.step(grads)
        _constrain(model, optimize_states)
        trace.append(_trace_row(model, it, k, t, out["sds_loss"], out["vox_loss"]))
        if not _all_finite(params):
            raise NumericalDivergence(f"non-finite parameter at iteration {it}", trace)
    return model, trace


def build_initial_model(state0_grid: VoxelGrid, joints, init_thetas,
                        field_config: HashGridConfig | None = None, seed: int = 0,
                        states_known: bool = False) -> ArticulatedModel:
    """Geometry + joint initialization for the optimization stage.

    Both the body field and every part field start as regression fits of
    the rest-state grid (the movable-part content is carved out during
    optimization); since the fits share target and seed, one fit is
    computed and copied.
    """
    field_config = field_config or HashGridConfig()
    base = init_from_grid(state0_grid, field_config, seed=seed)
    parts = [Part(base.copy(), joint.copy()) for joint in joints]
    return ArticulatedModel(base, parts, np.asarray(init_thetas, dtype=np.float64),
                            states_known=states_known)


def gradcheck(model: ArticulatedModel, k: int, config: OptimConfig,
              prior: PriorInterface, disk: DiskSpec | None = None,
              n_table_probes: int = 6, h: float = 1e-6, seed: int = 0) -> dict:
    """Compare analytic gradients of the total loss against central
    finite differences of the frozen-prediction surrogate objective.

    The prediction eps_hat is evaluated once at the base point and held
    constant on both sides (score distillation differentiates through
    z_t only). Returns per-parameter-class maximum relative errors.
    """
    rng = np.random.default_rng(seed)
    t = 0.5 * (config.t_range[0] + config.t_range[1])
    eps = rng.standard_normal((16, 16, 16))
    w_t = config.weight(t)

    base = loss_terms(model, k, t, eps, prior, disk,
                      config.lambda_sds, config.lambda_vox, w_t)
    eps_hat = base["eps_hat"]
    grads = base["grads"]

    def objective():
        out = loss_terms(model, k, t, eps, prior, disk,
                         config.lambda_sds, config.lambda_vox, w_t,
                         frozen_eps_hat=eps_hat)
        sds_term = 0.0
        if config.lambda_sds > 0.0:
            residual = w_t * (eps_hat - eps)
            z_t = out["z_t"]
            sds_term = config.lambda_sds * float(np.sum(residual * z_t))
        return sds_term + config.lambda_vox * out["vox_loss"]

    def fd(mutate, restore):
        mutate(h)
        hi = objective()
        restore()
        mutate(-h)
        lo = objective()
        restore()
        return (hi - lo) / (2.0 * h)

    report = {}

    def check(name, analytic, mutate, restore):
        val = fd(mutate, restore)
        scale = max(abs(val), abs(analytic), 1e-7)
        err = abs(analytic - val) / scale
        report[name] = max(report.get(name, 0.0), err)

    for tbl_name, tables, analytic in (
        [("body_tables", model.body.tables, grads["body_tables"])]
        + [(f"part{j}_tables", p.field.tables, grads["parts"][j]["tables"])
           for j, p in enumerate(model.parts)]
    ):
        touched = np.argwhere(analytic != 0.0)
        if len(touched) == 0:
            report[tbl_name] = 0.0
            continue
        for l, tt in touched[rng.integers(0, len(touched), size=n_table_probes)]:
            orig = tables[l, tt]

            def mutate(d, tables=tables, l=l, tt=tt, orig=orig):
                tables[l, tt] = orig + d

            def restore(tables=tables, l=l, tt=tt, orig=orig):
                tables[l, tt] = orig

            check(tbl_name, analytic[l, tt], mutate, restore)

    for j, part in enumerate(model.parts):
        vecs = [("axis", part.joint.axis, grads["parts"][j]["axis"])]
        if part.joint.is_revolute:
            vecs.append(("pivot", part.joint.pivot, grads["parts"][j]["pivot"]))
        for name, vec, analytic in vecs:
            for i in range(3):
                orig = vec[i]

                def mutate(d, vec=vec, i=i, orig=orig):
                    vec[i] = orig + d

                def restore(vec=vec, i=i, orig=orig):
                    vec[i] = orig

                check(f"{name}{j}", analytic[i], mutate, restore)

        orig_theta = model.states[k, j]

        def mutate_theta(d, j=j, orig=orig_theta):
            model.states[k, j] = orig + d

        def restore_theta(j=j, orig=orig_theta):
            model.states[k, j] = orig

        check(f"theta{j}", grads["parts"][j]["theta"], mutate_theta, restore_theta)

    report["max_rel_err"] = max(report.values()) if report else 0.0
    return report
