"""Single-DOF joint parameterization and articulation transforms.

Conventions (normalized object space, the unit cube [0,1]^3):
  revolute   state theta is an angle in radians about a unit axis `a`
             through a pivot point `p`; the inverse articulation map is
             T^-1(c) = R(a, -theta) (c - p) + p.
  prismatic  state theta is a displacement in normalized length units
             along a unit axis; T^-1(c) = c - theta * a.

The inverse map takes posed-frame coordinates back to the canonical
(rest) frame; `forward_transform` is its exact inverse. Rotations use
the Rodrigues formula. All functions accept a single point (3,) or a
batch (N, 3) and are pure.

Axis derivatives treat the axis as a free 3-vector; the unit constraint
is enforced by the optimizer (tangent-space projection of accumulated
gradients, renormalization after each step), so Jacobians here are the
unconstrained partials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

PIVOT_BOUND = 1.5  # pivot kept inside [-1.5, 1.5]^3 (unit cube with slack)


@dataclass
class JointParams:
    """Axis (+ pivot for revolute joints) of a single-DOF joint."""

    joint_type: str
    axis: np.ndarray
    pivot: np.ndarray | None = None

    def __post_init__(self):
        if self.joint_type not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint type: {self.joint_type!r}")
        self.axis = np.asarray(self.axis, dtype=np.float64).reshape(3).copy()
        n = np.linalg.norm(self.axis)
        if n == 0.0:
            raise ValueError("joint axis must be non-zero")
        self.axis /= n
        if self.joint_type == REVOLUTE:
            if self.pivot is None:
                raise ValueError("revolute joint requires a pivot")
            self.pivot = np.asarray(self.pivot, dtype=np.float64).reshape(3).copy()
        else:
            self.pivot = None

    @property
    def is_revolute(self) -> bool:
        return self.joint_type == REVOLUTE

    def copy(self) -> "JointParams":
        return JointParams(
            self.joint_type,
            self.axis.copy(),
            None if self.pivot is None else self.pivot.copy(),
        )

    def to_dict(self) -> dict:
        d = {"joint_type": self.joint_type, "axis": self.axis.tolist()}
        if self.pivot is not None:
            d["pivot"] = self.pivot.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "JointParams":
        return cls(d["joint_type"], np.array(d["axis"]), np.array(d["pivot"]) if "pivot" in d else None)


@dataclass
class JointState:
    """Scalar articulation magnitude of one observation.

    Radians for revolute joints (clamped to [-pi, pi] by the optimizer),
    normalized length for prismatic (clamped to [-1, 1]).
    """

    theta: float = 0.0


def theta_bound(joint_type: str) -> float:
    return np.pi if joint_type == REVOLUTE else 1.0


def rotation_matrix(axis, theta: float) -> np.ndarray:
    """Rodrigues rotation matrix about `axis` (assumed unit) by `theta`."""
    a = np.asarray(axis, dtype=np.float64).reshape(3)
    c, s = np.cos(theta), np.sin(theta)
    ax = np.array(
        [[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]]
    )
    return c * np.eye(3) + s * ax + (1.0 - c) * np.outer(a, a)


def _theta_of(s) -> float:
    return s.theta if isinstance(s, JointState) else float(s)


def inverse_transform(c, joint: JointParams, state) -> np.ndarray:
    """Map posed-frame coordinates to the canonical frame."""
    c = np.asarray(c, dtype=np.float64)
    theta = _theta_of(state)
    if joint.joint_type == PRISMATIC:
        return c - theta * joint.axis
    R = rotation_matrix(joint.axis, -theta)
    return (c - joint.pivot) @ R.T + joint.pivot


def forward_transform(c, joint: JointParams, state) -> np.ndarray:
    """Map canonical-frame coordinates to the posed frame (inverse of above)."""
    c = np.asarray(c, dtype=np.float64)
    theta = _theta_of(state)
    if joint.joint_type == PRISMATIC:
        return c + theta * joint.axis
    R = rotation_matrix(joint.axis, theta)
    return (c - joint.pivot) @ R.T + joint.pivot


def inverse_transform_jacobians(c, joint: JointParams, state) -> dict:
    """Analytic partials of `inverse_transform` at (c, joint, state).

    Returns a dict with keys
      d_axis  (..., 3, 3)   d out_i / d axis_j (axis as a free vector)
      d_pivot (..., 3, 3)   revolute only
      d_theta (..., 3)
      d_c     (..., 3, 3)
    Batched input (N, 3) yields leading batch axes on every entry.
    """
    c = np.asarray(c, dtype=np.float64)
    single = c.ndim == 1
    pts = c.reshape(-1, 3)
    n = pts.shape[0]
    theta = _theta_of(state)
    a = joint.axis

    if joint.joint_type == PRISMATIC:
        out = {
            "d_axis": np.broadcast_to(-theta * np.eye(3), (n, 3, 3)).copy(),
            "d_theta": np.broadcast_to(-a, (n, 3)).copy(),
            "d_c": np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        }
    else:
        v = pts - joint.pivot
        ct, st = np.cos(theta), np.sin(theta)
        R = rotation_matrix(a, -theta)
        adotv = v @ a
        axv = np.cross(np.broadcast_to(a, v.shape), v)
        # out = R(a,-theta) v + p; d/dtheta = -[v sin + (a x v) cos - a (a.v) sin]
        d_theta = -(v * st + axv * ct - np.outer(adotv, a) * st)
        # d/da of R(a,phi)v with phi=-theta:
        #   sin(phi) * (-[v]_x) + (1-cos(phi)) (a v^T + (a.v) I)
        vx = np.zeros((n, 3, 3))
        vx[:, 0, 1] = -v[:, 2]
        vx[:, 0, 2] = v[:, 1]
        vx[:, 1, 0] = v[:, 2]
        vx[:, 1, 2] = -v[:, 0]
        vx[:, 2, 0] = -v[:, 1]
        vx[:, 2, 1] = v[:, 0]
        d_axis = st * vx + (1.0 - ct) * (
            np.einsum("i,nj->nij", a, v) + adotv[:, None, None] * np.eye(3)
        )
        out = {
            "d_axis": d_axis,
            "d_pivot": np.broadcast_to(np.eye(3) - R, (n, 3, 3)).copy(),
            "d_theta": d_theta,
            "d_c": np.broadcast_to(R, (n, 3, 3)).copy(),
        }

    if single:
        out = {k: val[0] for k, val in out.items()}
    return out


def accumulate_joint_gradients(pts, grad_out, joint: JointParams, state) -> dict:
    """Contract per-point output gradients into joint-parameter gradients.

    `grad_out` (N, 3) holds dL/d(inverse_transform(pts)); returns
    {'axis': (3,), 'pivot': (3,) or absent, 'theta': float} summed over
    points. Closed forms avoid materializing per-point Jacobians.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(grad_out, dtype=np.float64).reshape(-1, 3)
    theta = _theta_of(state)
    a = joint.axis

    if joint.joint_type == PRISMATIC:
        gsum = g.sum(axis=0)
        return {"axis": -theta * gsum, "theta": float(-a @ gsum)}

    v = pts - joint.pivot
    ct, st = np.cos(theta), np.sin(theta)
    R = rotation_matrix(a, -theta)
    adotv = v @ a
    adotg = g @ a
    gsum = g.sum(axis=0)
    # axis: sum over points of [sin t [v]_x + (1-cos t)(a v^T + (a.v) I)]^T g
    axis_grad = (
        -st * np.cross(v, g).sum(axis=0)
        + (1.0 - ct) * ((v * adotg[:, None]).sum(axis=0) + (adotv[:, None] * g).sum(axis=0))
    )
    pivot_grad = gsum - R.T @ gsum  # (I - R)^T g summed
    axv = np.cross(np.broadcast_to(a, v.shape), v)
    d_theta = -(v * st + axv * ct - np.outer(adotv, a) * st)
    theta_grad = float((d_theta * g).sum())
    return {"axis": axis_grad, "pivot": pivot_grad, "theta": theta_grad}


def project_to_tangent(grad_axis, axis) -> np.ndarray:
    """Remove the radial component of an axis gradient (unit-sphere tangent)."""
    a = np.asarray(axis, dtype=np.float64)
    g = np.asarray(grad_axis, dtype=np.float64)
    return g - (g @ a) * a


def joints_to_json_dict(joints, states) -> dict:
    """Serializable kinematic description: joints plus per-state thetas.

    `states` is an array-like of shape (K, n_joints).
    """
    return {
        "joints": [j.to_dict() for j in joints],
        "states": np.asarray(states, dtype=np.float64).tolist(),
    }


def joints_from_json_dict(d: dict):
    joints = [JointParams.from_dict(j) for j in d["joints"]]
    states = np.asarray(d["states"], dtype=np.float64)
    return joints, states
