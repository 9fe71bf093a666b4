"""Rigid transforms, rotation parameterizations, and pinhole camera geometry.

Conventions: right-handed camera frame with +x right, +y down, +z forward
(optical axis). Depth maps store z-depth in meters with 0 marking invalid
pixels. Poses are camera-to-world.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x such that skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < 1e-8:
        # second-order Taylor keeps the result orthonormal to ~1e-16
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle vector (inverse of so3_exp)."""
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-8:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if theta > np.pi - 1e-6:
        # near pi the off-diagonal extraction degenerates; use the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from the largest component
        k = int(np.argmax(axis))
        if axis[k] > 0:
            signs = np.sign(A[k, :] / axis[k])
            signs[signs == 0] = 1.0
            axis = axis * signs * np.sign(axis[k])
        n = np.linalg.norm(axis)
        if n > 0:
            axis = axis / n
        return theta * axis
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * vee


def so3_right_jacobian(omega: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r of SO(3): Exp(w + dw) ~ Exp(w) Exp(J_r dw)."""
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * K + (1.0 / 6.0) * (K @ K)
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) - a * K + b * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) via SVD (det +1 branch)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(U @ Vt)))])
    return U @ D @ Vt


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) to rotation matrix."""
    x, y, z, w = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (qx, qy, qz, qw), qw >= 0."""
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            x, y, z, w = 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            x, y, z, w = (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            x, y, z, w = (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s
    q = np.array([x, y, z, w])
    q = q / np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q


@dataclass
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,) meters

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(np.array(T[:3, :3], dtype=float), np.array(T[:3, 3], dtype=float))

    @classmethod
    def from_quat(cls, t: np.ndarray, q: np.ndarray) -> "Pose":
        return cls(quat_to_rotation(np.asarray(q, dtype=float)), np.asarray(t, dtype=float))

    @classmethod
    def exp(cls, increment: np.ndarray) -> "Pose":
        """6-vector (axis-angle omega, translation delta) to a pose increment."""
        inc = np.asarray(increment, dtype=float)
        return cls(so3_exp(inc[:3]), inc[3:].copy())

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self * other)(x) = self(other(x))."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return vectors @ self.rotation.T

    def orthonormalized(self) -> "Pose":
        return Pose(orthonormalize(self.rotation), self.translation.copy())

    def to_quat_line(self, timestamp: float) -> str:
        """One TUM-format trajectory line: timestamp tx ty tz qx qy qz qw."""
        q = rotation_to_quat(self.rotation)
        fields = [timestamp, *self.translation, *q]
        return " ".join(repr(float(v)) for v in fields)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera, no distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """(u, v) integer coordinate maps of shape (height, width)."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return u, v

    def camera_dirs(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Unnormalized camera-frame ray directions [(u-cx)/fx, (v-cy)/fy, 1]."""
        x = (np.asarray(u, dtype=float) - self.cx) / self.fx
        y = (np.asarray(v, dtype=float) - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def unit_dirs_and_scale(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unit camera-frame ray directions plus the z-depth -> ray-length factor.

        ray_length = z_depth * scale for the ray through pixel (u, v).
        """
        d = self.camera_dirs(u, v)
        scale = np.linalg.norm(d, axis=-1)
        return d / scale[..., None], scale

    def backproject(self, depth: np.ndarray) -> np.ndarray:
        """z-depth map (height, width) to camera-frame points (height, width, 3)."""
        u, v = self.pixel_grid()
        return self.camera_dirs(u, v) * depth[..., None]

    def project(self, points_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Camera-frame points to (u, v, z); caller masks on z > 0 and bounds."""
        z = points_cam[..., 2]
        safe = np.where(np.abs(z) < _EPS, _EPS, z)
        u = points_cam[..., 0] / safe * self.fx + self.cx
        v = points_cam[..., 1] / safe * self.fy + self.cy
        return u, v, z

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


def rays_for_pixels(
    pose: Pose, intrinsics: Intrinsics, u: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame ray origins, unit directions, and z->ray-length scales."""
    unit_cam, scale = intrinsics.unit_dirs_and_scale(u, v)
    dirs = unit_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs, scale


def rotate_point_jacobian(omega: np.ndarray, q: np.ndarray) -> np.ndarray:
    """d(Exp(omega) @ q)/d(omega) for a batch of points q, shape (N, 3, 3).

    Uses Exp(w + dw) = Exp(w) Exp(J_r(w) dw), giving -R [q]x J_r(w).
    """
    R = so3_exp(omega)
    Jr = so3_right_jacobian(omega)
    q = np.atleast_2d(q)
    n = q.shape[0]
    Kq = np.zeros((n, 3, 3))
    Kq[:, 0, 1] = -q[:, 2]
    Kq[:, 0, 2] = q[:, 1]
    Kq[:, 1, 0] = q[:, 2]
    Kq[:, 1, 2] = -q[:, 0]
    Kq[:, 2, 0] = -q[:, 1]
    Kq[:, 2, 1] = q[:, 0]
    return -np.einsum("ij,njk,kl->nil", R, Kq, Jr)
