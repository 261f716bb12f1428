from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import GeometryError, UnderdeterminedError

ORTHO_TOL = 1e-6


def rotvec_to_matrix(rotvec) -> np.ndarray:
    return Rotation.from_rotvec(np.array(rotvec, dtype=np.float64)).as_matrix()


def matrix_to_rotvec(matrix) -> np.ndarray:
    return Rotation.from_matrix(np.array(matrix, dtype=np.float64)).as_rotvec()


def canonical_rotvec(rotvec) -> np.ndarray:
    """Reduce axis-angle magnitudes modulo 2*pi (direction unchanged)."""
    rv = np.array(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    two_pi = 2.0 * np.pi
    big = angle >= two_pi
    if not np.any(big):
        return rv
    reduced = np.mod(angle, two_pi)
    scale = np.where(big, reduced / np.where(angle > 0, angle, 1.0), 1.0)
    return rv * scale


def orthonormalize(matrix) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (closest rotation in Frobenius norm)."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_6d(matrix) -> np.ndarray:
    """First two columns of a rotation matrix, flattened (continuous encoding)."""
    m = np.asarray(matrix, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rotation_from_6d(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    a1, a2 = v[..., :3], v[..., 3:6]
    b1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    a2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = a2 / np.linalg.norm(a2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def geodesic_angle(r_a, r_b) -> np.ndarray:
    """Angle of r_a @ r_b.T, radians."""
    rel = np.asarray(r_a) @ np.swapaxes(np.asarray(r_b), -1, -2)
    cos = (np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0
    # atan2 keeps precision for small angles where arccos is ill-conditioned.
    skew = np.stack([rel[..., 2, 1] - rel[..., 1, 2], rel[..., 0, 2] - rel[..., 2, 0],
                     rel[..., 1, 0] - rel[..., 0, 1]], axis=-1)
    sin = np.linalg.norm(skew, axis=-1) / 2.0
    return np.arctan2(sin, cos)


@dataclass(frozen=True)
class RigidTransform:
    """x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise GeometryError("rigid transform has non-finite entries")
        if np.abs(r @ r.T - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal with det +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotvec_to_matrix(rotvec), translation)

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def rotvec(self) -> np.ndarray:
        return matrix_to_rotvec(self.rotation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_inverse(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.translation) @ self.rotation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(
            orthonormalize(self.rotation @ other.rotation),
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)


def kabsch_fit(src, dst) -> tuple[RigidTransform, float]:
    """Least-squares rigid transform taking ``src`` onto ``dst``.

    Returns the transform and the RMS residual. Raises
    UnderdeterminedError for fewer than three points or collinear input.
    """
    a = np.asarray(src, dtype=np.float64)
    b = np.asarray(dst, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise GeometryError(f"point sets must both be (n, 3), got {a.shape} and {b.shape}")
    if a.shape[0] < 3:
        raise UnderdeterminedError("underdetermined: kabsch_fit needs at least 3 points")
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    a0 = a - ca
    b0 = b - cb
    spread = np.linalg.svd(a0, compute_uv=False)
    if spread[0] <= 0 or spread[1] <= 1e-9 * max(spread[0], 1.0):
        raise UnderdeterminedError("underdetermined: source points are collinear")
    cov = a0.T @ b0
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise UnderdeterminedError("underdetermined: rank-deficient covariance")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    rot = orthonormalize(rot)
    t = cb - rot @ ca
    resid = b - (a @ rot.T + t)
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return RigidTransform(rot, t), rms
