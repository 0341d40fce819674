"""Initial joint estimates from 3D point correspondences across states.

Moving-part pairs between the rest state and a posed state determine a
rigid transform; for revolute joints the rotation comes from the
SVD-based least-squares fit over centered pairs (axis and angle from
the skew part), and the pivot solves (I - R) p = translation in least
squares, with the unconstrained along-axis component pinned to the
point closest to the moving-point centroid. Prismatic joints reduce to
the mean displacement. Estimates are canonicalized so the axis's
largest-magnitude component is non-negative; (axis, theta) and
(-axis, -theta) describe the same joint.

Correspondence detection itself is upstream of this module: pairs are
an input contract (a JSON array of {p_src, p_dst, state_src, state_dst}).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllStatic, Collinear, DegenerateRotation
from .kinematics import PRISMATIC, REVOLUTE, JointParams, inverse_transform

STATIC_THRESHOLD = 0.02
MIN_ANGLE = 1e-3
RANSAC_THRESHOLD = 0.02
RANSAC_ITERATIONS = 200


@dataclass
class PointPair:
    """One 3D correspondence: the same surface point seen in two states."""

    p_src: np.ndarray
    p_dst: np.ndarray
    state_src: int
    state_dst: int

    def __post_init__(self):
        self.p_src = np.asarray(self.p_src, dtype=np.float64).reshape(3)
        self.p_dst = np.asarray(self.p_dst, dtype=np.float64).reshape(3)

    def to_dict(self) -> dict:
        return {
            "p_src": self.p_src.tolist(),
            "p_dst": self.p_dst.tolist(),
            "state_src": self.state_src,
            "state_dst": self.state_dst,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointPair":
        return cls(d["p_src"], d["p_dst"], d["state_src"], d["state_dst"])


@dataclass
class InitEstimate:
    """Fitted joint plus per-state magnitudes relative to state 0."""

    joint: JointParams
    thetas: np.ndarray
    residual: float
    inlier_count: int


def _as_arrays(pairs):
    src = np.array([p.p_src for p in pairs])
    dst = np.array([p.p_dst for p in pairs])
    return src, dst


def filter_static_pairs(pairs, threshold: float = STATIC_THRESHOLD):
    """Keep pairs whose displacement exceeds the threshold."""
    if not pairs:
        raise AllStatic("no pairs given")
    kept = [p for p in pairs if np.linalg.norm(p.p_dst - p.p_src) > threshold]
    if not kept:
        raise AllStatic(f"all {len(pairs)} pairs move less than {threshold}")
    return kept


def _canonicalize(axis, thetas):
    """Flip (axis, thetas) so the largest-|component| of axis is positive."""
    i = int(np.argmax(np.abs(axis)))
    if axis[i] < 0:
        return -axis, -np.asarray(thetas)
    return axis, np.asarray(thetas)


def _fit_rigid(src, dst):
    """Least-squares rigid transform dst ~ R @ src + tr (SVD solution)."""
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    tr = c_dst - r @ c_src
    return r, tr


def estimate_revolute(pairs) -> InitEstimate:
    """Axis, pivot, and angle of the rotation mapping p_src to p_dst."""
    if len(pairs) < 3:
        raise Collinear(f"revolute fit needs >= 3 pairs, got {len(pairs)}")
    src, dst = _as_arrays(pairs)
    centered = src - src.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] < 1e-9 * max(svals[0], 1.0):
        raise Collinear("moving points span fewer than two dimensions")

    r, tr = _fit_rigid(src, dst)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    sin_theta = np.linalg.norm(skew)
    theta = float(np.arctan2(sin_theta, cos_theta))
    if abs(theta) < MIN_ANGLE:
        raise DegenerateRotation(f"fitted angle {theta:.2e} below {MIN_ANGLE}")
    axis = skew / sin_theta

    # (I - R) pivot = tr; lstsq pseudo-inverse leaves the null-space
    # (along-axis) component at zero, then pin it near the moving centroid
    pivot, *_ = np.linalg.lstsq(np.eye(3) - r, tr, rcond=None)
    centroid = src.mean(axis=0)
    pivot = pivot + ((centroid - pivot) @ axis) * axis

    fitted = (src - pivot) @ r.T + pivot
    residual = float(np.sqrt(np.mean(np.sum((fitted - dst) ** 2, axis=1))))
    axis, thetas = _canonicalize(axis, [0.0, theta])
    joint = JointParams(REVOLUTE, axis, pivot)
    return InitEstimate(joint, thetas, residual, len(pairs))


def estimate_prismatic(pairs) -> InitEstimate:
    """Axis and magnitude of the translation mapping p_src to p_dst."""
    if not pairs:
        raise AllStatic("no pairs given")
    src, dst = _as_arrays(pairs)
    disp = dst - src
    mean_disp = disp.mean(axis=0)
    norm = np.linalg.norm(mean_disp)
    if norm < 1e-6:
        raise AllStatic(f"mean displacement {norm:.2e} below 1e-6")
    axis = mean_disp / norm
    theta = float(np.mean(disp @ axis))
    perp = disp - np.outer(disp @ axis, axis)
    residual = float(np.sqrt(np.mean(np.sum(perp ** 2, axis=1))))
    axis, thetas = _canonicalize(axis, [0.0, theta])
    joint = JointParams(PRISMATIC, axis)
    return InitEstimate(joint, thetas, residual, len(pairs))


def _estimate_pairwise(pairs, joint_type) -> InitEstimate:
    if joint_type == REVOLUTE:
        return estimate_revolute(pairs)
    return estimate_prismatic(pairs)


def _ransac(pairs, joint_type, rng, threshold=RANSAC_THRESHOLD, iterations=RANSAC_ITERATIONS):
    """Inlier-maximizing wrapper around the pairwise estimators."""
    minimal = 3 if joint_type == REVOLUTE else 1
    if len(pairs) <= minimal:
        return _estimate_pairwise(pairs, joint_type)
    src, dst = _as_arrays(pairs)
    best_inliers = None
    for _ in range(iterations):
        sample = [pairs[i] for i in rng.choice(len(pairs), size=minimal, replace=False)]
        try:
            est = _estimate_pairwise(sample, joint_type)
        except (DegenerateRotation, Collinear, AllStatic):
            continue
        theta = est.thetas[1]
        mapped = np.asarray(
            [transform_point(p, est.joint, theta) for p in src]
        )
        errors = np.linalg.norm(mapped - dst, axis=1)
        inliers = errors < threshold
        if best_inliers is None or inliers.sum() > best_inliers.sum():
            best_inliers = inliers
    if best_inliers is None or best_inliers.sum() < minimal:
        return _estimate_pairwise(pairs, joint_type)
    kept = [p for p, keep in zip(pairs, best_inliers) if keep]
    return _estimate_pairwise(kept, joint_type)


def transform_point(p, joint: JointParams, theta: float) -> np.ndarray:
    """Apply the fitted joint motion (rest -> posed) to a point."""
    from .kinematics import forward_transform

    return forward_transform(p, joint, float(theta))


def estimate_multi_state(pairs, joint_type, n_states: int | None = None,
                         ransac: bool = False, seed: int = 0) -> InitEstimate:
    """Combine pairwise rest-to-state estimates into one joint.

    Pairs are grouped by destination state (src/dst swapped when needed
    so state 0 is the source; pairs between two non-rest states are
    reduced to rest-relative through the already-fitted state estimate).
    The axis and pivot are averages weighted by inverse residual, with
    signs aligned before averaging; each state keeps the theta from its
    own fit. States whose fit degenerates (theta ~ 0) are excluded.
    """
    if joint_type not in (REVOLUTE, PRISMATIC):
        raise ValueError(f"unknown joint type {joint_type!r}")
    rng = np.random.default_rng(seed)
    groups: dict = {}
    deferred = []
    for p in pairs:
        if p.state_src == 0:
            groups.setdefault(p.state_dst, []).append(p)
        elif p.state_dst == 0:
            groups.setdefault(p.state_src, []).append(
                PointPair(p.p_dst, p.p_src, 0, p.state_src)
            )
        else:
            deferred.append(p)

    estimates: dict = {}
    failures = []
    for state in sorted(groups):
        try:
            if ransac:
                estimates[state] = _ransac(groups[state], joint_type, rng)
            else:
                estimates[state] = _estimate_pairwise(groups[state], joint_type)
        except (DegenerateRotation, AllStatic, Collinear) as exc:
            failures.append((state, exc))

    # reduce non-rest pairs through the source state's estimate, if fitted
    extra: dict = {}
    for p in deferred:
        est = estimates.get(p.state_src)
        if est is None:
            continue
        rest_pt = inverse_transform(p.p_src, est.joint, float(est.thetas[1]))
        extra.setdefault(p.state_dst, []).append(PointPair(rest_pt, p.p_dst, 0, p.state_dst))
    for state, ps in sorted(extra.items()):
        merged = groups.get(state, []) + ps
        try:
            estimates[state] = _estimate_pairwise(merged, joint_type)
        except (DegenerateRotation, AllStatic, Collinear):
            pass

    if not estimates:
        if failures:
            raise failures[0][1]
        raise AllStatic("no rest-relative pairs available")

    states = sorted(estimates)
    ref_axis = estimates[states[0]].joint.axis
    axes, pivots, weights = [], [], []
    for s in states:
        est = estimates[s]
        a = est.joint.axis
        sign = 1.0 if a @ ref_axis >= 0 else -1.0
        axes.append(sign * a)
        weights.append(1.0 / max(est.residual, 1e-9))
        if joint_type == REVOLUTE:
            pivots.append(est.joint.pivot)
    weights = np.asarray(weights)
    axis = np.average(axes, axis=0, weights=weights)
    axis /= np.linalg.norm(axis)
    pivot = np.average(pivots, axis=0, weights=weights) if joint_type == REVOLUTE else None

    n_states = n_states or (max(states) + 1)
    thetas = np.zeros(n_states)
    for s in states:
        est = estimates[s]
        sign = 1.0 if est.joint.axis @ axis >= 0 else -1.0
        thetas[s] = sign * est.thetas[1]
    axis, thetas = _canonicalize(axis, thetas)
    joint = JointParams(joint_type, axis, pivot)
    residual = float(np.average([estimates[s].residual for s in states], weights=weights))
    inliers = int(sum(estimates[s].inlier_count for s in states))
    return InitEstimate(joint, thetas, residual, inliers)
