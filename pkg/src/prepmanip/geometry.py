"""SE(3)/SO(3) algebra on 3x3 rotation matrices.

Rotations are plain ``(3, 3)`` float64 arrays; poses are :class:`Pose`.
Quaternions appear only as a construction device for uniform sampling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import LabeledCloud
from .errors import DegenerateInput, ZeroAxis

ORTHO_TOL = 1e-9
COLLINEAR_TOL = 1e-8


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def is_rotation(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (np.max(np.abs(R.T @ R - np.eye(3))) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle):
    """Rodrigues rotation about ``axis`` (normalized here) by ``angle`` radians."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-9:
        raise ZeroAxis("rotation axis has zero length")
    x, y, z = axis / n
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [x * x * C + c, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, y * y * C + c, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, z * z * C + c],
    ])


def quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R x + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.array(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.array(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, x, y=None, z=None):
        t = np.array([x, y, z], dtype=np.float64) if y is not None else np.asarray(x, dtype=np.float64)
        return cls(np.eye(3), t)

    @classmethod
    def from_rotation(cls, R):
        return cls(R, np.zeros(3))

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=np.float64).reshape(4, 4)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def to_list(self):
        """Row-major 16-number list (the on-disk pose encoding)."""
        return [float(v) for v in self.matrix().reshape(-1)]

    @classmethod
    def from_list(cls, values):
        return cls.from_matrix(np.asarray(values, dtype=np.float64))

    def __matmul__(self, other):
        return compose(self, other)

    def inverse(self):
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.t)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t

    def allclose(self, other, atol=1e-9):
        return (np.allclose(self.R, other.R, atol=atol, rtol=0)
                and np.allclose(self.t, other.t, atol=atol, rtol=0))


def compose(a, b):
    """(a o b)(x) = a(b(x))."""
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def transform_points(T, cloud):
    """Map every point of ``cloud`` by ``T``; labels and scores ride along.

    Raw ``(N, 3)`` arrays are accepted and returned as arrays.
    """
    if isinstance(cloud, LabeledCloud):
        return cloud.with_points(T.apply(cloud.points))
    return T.apply(cloud)


def geodesic_distance(d, d_star):
    """Angle of the relative rotation d^T d*, in radians."""
    cos = (np.trace(np.asarray(d).T @ np.asarray(d_star)) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def anticipatory_gripper_rotation(R_obj_init, R_obj_fin, R_grp_fin):
    """Carry the final gripper orientation back to the initial object frame,
    keeping the gripper-object relative rotation fixed."""
    return np.asarray(R_obj_init) @ np.asarray(R_obj_fin).T @ np.asarray(R_grp_fin)


def reorient_gripper_pose(T_obj_reorient, T_obj_grasped, T_grp_grasped):
    """Gripper pose that keeps its grasp-time offset to the object after the
    object moves from ``T_obj_grasped`` to ``T_obj_reorient``."""
    return T_obj_reorient @ T_obj_grasped.inverse() @ T_grp_grasped


def rot6d_encode(R):
    """First two columns, concatenated."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[:, 0], R[:, 1]])


def rot6d_decode(v):
    v = np.asarray(v, dtype=np.float64).reshape(6)
    a, b = v[:3], v[3:]
    na = np.linalg.norm(a)
    if na < COLLINEAR_TOL:
        raise DegenerateInput("first 6D vector is zero")
    x = a / na
    c = np.cross(x, b)
    nc = np.linalg.norm(c)
    if nc < COLLINEAR_TOL * max(1.0, np.linalg.norm(b)):
        raise DegenerateInput("6D vectors are collinear")
    z = c / nc
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def frame_from_axes(x, y):
    """Right-handed frame with exact forward ``x`` and ``y`` re-orthogonalized
    against it; columns (x, y, x cross y)."""
    return rot6d_decode(np.concatenate([x, y]))


def random_rotation(seed):
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    rng = as_rng(seed)
    q = rng.standard_normal(4)
    while np.linalg.norm(q) < 1e-12:
        q = rng.standard_normal(4)
    return quat_to_matrix(q)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-9:
        raise ZeroAxis("vector has zero length")
    return v / n


def orthonormal_basis(axis):
    """Two unit vectors completing ``axis`` (assumed unit) to a right-handed frame."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    return u, w


def perturb_within_cone(axis, max_angle, seed):
    """Uniform sample on the spherical cap of half-angle ``max_angle`` about ``axis``."""
    if not 0.0 <= max_angle <= np.pi:
        raise ValueError("max_angle must lie in [0, pi]")
    a = np.asarray(axis, dtype=np.float64)
    if np.linalg.norm(a) < 1e-9:
        raise ZeroAxis("cone axis has zero length")
    a = a / np.linalg.norm(a)
    rng = as_rng(seed)
    cos_t = rng.uniform(np.cos(max_angle), 1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    if max_angle == 0.0:
        return a
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    u, w = orthonormal_basis(a)
    v = cos_t * a + sin_t * (np.cos(phi) * u + np.sin(phi) * w)
    return v / np.linalg.norm(v)


def random_unit_vector(seed):
    rng = as_rng(seed)
    v = rng.standard_normal(3)
    while np.linalg.norm(v) < 1e-12:
        v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def angle_between(a, b):
    a = unit(a)
    b = unit(b)
    return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))


def rotation_between(a, b, fallback_axis=(0.0, 0.0, 1.0)):
    """Minimal rotation taking direction ``a`` onto ``b``.

    For antiparallel inputs the half-turn is taken about ``fallback_axis``
    projected orthogonal to ``a``.
    """
    a = unit(a)
    b = unit(b)
    c = np.cross(a, b)
    s = np.linalg.norm(c)
    d = float(np.clip(a @ b, -1.0, 1.0))
    if s < 1e-12:
        if d > 0:
            return np.eye(3)
        f = np.asarray(fallback_axis, dtype=np.float64)
        f = f - (f @ a) * a
        if np.linalg.norm(f) < 1e-9:
            f, _ = orthonormal_basis(a)
        return axis_angle(f, np.pi)
    return axis_angle(c, np.arctan2(s, d))
