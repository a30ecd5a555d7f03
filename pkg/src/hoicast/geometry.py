"""Rotation codecs, rigid transforms, and the rigid contact transport map.

Conventions: rotation matrices act on column vectors (points transform as
``R @ p + L``); the 6D rotation code is the first two columns of the matrix
before orthonormalization; quaternions are scalar-first with a nonnegative
scalar part.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateRotation, NotARotation, ShapeMismatch

PARALLEL_EPS = 1e-8
ORTHO_TOL = 1e-5


@dataclass(frozen=True)
class Rotation6D:
    """First two columns of a rotation matrix, before orthonormalization."""

    a: np.ndarray
    b: np.ndarray

    def as_array(self):
        return np.concatenate([np.asarray(self.a, float), np.asarray(self.b, float)])


@dataclass(frozen=True)
class RigidTransform:
    """Rotation R plus translation L, applied as R @ p + L."""

    R: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, float)
        L = np.asarray(self.L, float)
        if R.shape != (3, 3) or L.shape != (3,):
            raise ShapeMismatch(f"expected (3,3) and (3,), got {R.shape} and {L.shape}")
        _check_rotation(R)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "L", L)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(self.R @ other.R, self.R @ other.L + self.L)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.L)


@dataclass(frozen=True)
class PointCloud:
    """M x 3 array of finite points (meters)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ShapeMismatch(f"expected (M>=1, 3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


def _as_rot6d_array(r):
    if isinstance(r, Rotation6D):
        r = r.as_array()
    arr = np.asarray(r, dtype=float)
    if arr.shape[-1] != 6:
        raise ShapeMismatch(f"expected trailing dimension 6, got {arr.shape}")
    return arr


def _as_points(pc):
    if isinstance(pc, PointCloud):
        return pc.points
    pts = np.asarray(pc, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatch(f"expected (M, 3) points, got {pts.shape}")
    return pts


def rot6d_to_matrix(r):
    """Decode a 6D rotation code into an orthonormal matrix, det +1.

    Gram-Schmidt on columns a then b; third column is their cross product.
    The first column of the result is a / ||a||.
    """
    arr = _as_rot6d_array(r)
    a, b = arr[..., :3], arr[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na <= PARALLEL_EPS):
        raise DegenerateRotation("first 6D column has near-zero norm")
    x = a / na
    y = b - np.sum(x * b, axis=-1, keepdims=True) * x
    ny = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(ny <= PARALLEL_EPS):
        raise DegenerateRotation("6D columns are parallel within tolerance")
    y = y / ny
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def _check_rotation(m, tol=ORTHO_TOL):
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"expected trailing (3,3), got {m.shape}")
    eye = np.eye(3)
    err = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max()
    if err > tol:
        raise NotARotation(f"max |m^T m - I| = {err:.3e} exceeds {tol:.0e}")
    if np.any(np.linalg.det(m) < 0):
        raise NotARotation("determinant is negative (reflection)")
    return m


def matrix_to_rot6d(m):
    """Encode a rotation matrix as its first two columns (6 values)."""
    m = _check_rotation(m)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def apply_rigid(t: RigidTransform, pc):
    """Transform points by R @ p + L. Returns the same container kind as pc."""
    pts = _as_points(pc)
    out = pts @ t.R.T + t.L
    if isinstance(pc, PointCloud):
        return PointCloud(out)
    return out


def contact_from_object(pred: RigidTransform, rest_contacts):
    """Transport rest-pose contact points by a predicted object pose.

    Same map as apply_rigid; named separately because it defines the
    object-side contact trajectory used by the consistency penalty.
    """
    return apply_rigid(pred, rest_contacts)


def _single_matrix_to_quaternion(m):
    # Shepperd's method: branch on the largest diagonal term for stability.
    t = np.trace(m)
    if t > 0:
        r = np.sqrt(1.0 + t)
        s = 0.5 / r
        q = np.array([
            0.5 * r,
            (m[2, 1] - m[1, 2]) * s,
            (m[0, 2] - m[2, 0]) * s,
            (m[1, 0] - m[0, 1]) * s,
        ])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        s = 0.5 / r
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) * s
        q[1 + i] = 0.5 * r
        q[1 + j] = (m[j, i] + m[i, j]) * s
        q[1 + k] = (m[k, i] + m[i, k]) * s
    q = q / np.linalg.norm(q)
    return canonicalize_quaternion(q)


def canonicalize_quaternion(q):
    """Fix quaternion sign: scalar part nonnegative, ties broken by the
    first nonzero component being positive."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        return -q
    if q[0] == 0:
        for c in q[1:]:
            if c != 0:
                return q if c > 0 else -q
    return q


def matrix_to_quaternion(m):
    """Convert rotation matrices to unit scalar-first quaternions."""
    m = _check_rotation(m)
    if m.ndim == 2:
        return _single_matrix_to_quaternion(m)
    flat = m.reshape(-1, 3, 3)
    out = np.stack([_single_matrix_to_quaternion(x) for x in flat])
    return out.reshape(m.shape[:-2] + (4,))


def quaternion_rotate(q, v):
    """Rotate 3-vectors v by a unit scalar-first quaternion q."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.shape != (4,):
        raise ShapeMismatch(f"expected quaternion shape (4,), got {q.shape}")
    w, u = q[0], q[1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


# Differentiable torch mirrors of the maps above, used inside losses and
# sampling. Norms are clamped so raw network outputs never divide by zero;
# the strict numpy codecs keep their error contracts.

def rot6d_to_matrix_torch(x: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Batched 6D -> rotation matrix, differentiable. x: (..., 6)."""
    if x.shape[-1] != 6:
        raise ShapeMismatch(f"expected trailing dimension 6, got {tuple(x.shape)}")
    a, b = x[..., :3], x[..., 3:]
    c0 = a / a.norm(dim=-1, keepdim=True).clamp_min(eps)
    c1 = b - (c0 * b).sum(dim=-1, keepdim=True) * c0
    c1 = c1 / c1.norm(dim=-1, keepdim=True).clamp_min(eps)
    c2 = torch.cross(c0, c1, dim=-1)
    return torch.stack([c0, c1, c2], dim=-1)


def transport_contacts_torch(rot6d: torch.Tensor, centroid: torch.Tensor,
                             rest_points: torch.Tensor) -> torch.Tensor:
    """Apply pose (rot6d (..., 6), centroid (..., 3)) to rest points (..., P, 3)."""
    R = rot6d_to_matrix_torch(rot6d)
    return rest_points @ R.transpose(-1, -2) + centroid.unsqueeze(-2)
