"""Rotation conversions: Euler ZXY, 3x3 matrices, the 6D embedding, 2D bone rotations.

All numpy functions broadcast over leading axes. The 6D embedding is the
first two matrix columns stacked, ``(r1x, r1y, r1z, r2x, r2y, r2z)``.
Euler ZXY angles are intrinsic: ``R = Rz(z) @ Rx(x) @ Ry(y)``.
"""
from __future__ import annotations

import logging
from collections import Counter

import numpy as np

from . import compute as C
from .errors import DegenerateRotationError

log = logging.getLogger(__name__)

DEGENERACY_EPS = 1e-8

# how often the training-time guard in from_6d_tensor had to step in
degeneracy_events: Counter = Counter()


def to_6d(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def from_6d(v: np.ndarray, eps: float = DEGENERACY_EPS) -> np.ndarray:
    """Gram-Schmidt recovery of a rotation matrix from 6 numbers."""
    v = np.asarray(v, dtype=np.float64)
    a1, a2 = v[..., :3], v[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < eps):
        raise DegenerateRotationError("first 6D column has (near) zero length")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 < eps):
        raise DegenerateRotationError("6D columns are (near) parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def from_6d_tensor(v: C.Tensor, eps: float = DEGENERACY_EPS) -> C.Tensor:
    """Differentiable ``from_6d`` for tensors shaped ``(..., 6)``.

    Rows too close to degenerate are swapped for constant identity columns
    (no gradient flows through them) and counted in ``degeneracy_events``.
    """
    a1_np, a2_np = v.data[..., :3], v.data[..., 3:6]
    n1 = np.linalg.norm(a1_np, axis=-1)
    safe1 = np.where(n1 < eps, 1.0, n1)[..., None]
    u2 = a2_np - np.sum(a1_np * a2_np, axis=-1, keepdims=True) / safe1 ** 2 * a1_np
    bad = (n1 < eps) | (np.linalg.norm(u2, axis=-1) < eps)
    if bad.any():
        count = int(bad.sum())
        degeneracy_events["from_6d"] += count
        log.warning("from_6d: %d degenerate 6D rows replaced by identity", count)
        keep = (~bad)[..., None].astype(np.float64)
        ident = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        v = v * keep + (1.0 - keep) * ident
    a1 = v[..., 0:3]
    a2 = v[..., 3:6]
    b1 = a1 / C.sqrt(C.tsum(C.square(a1), axis=-1, keepdims=True))
    u = a2 - C.tsum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = u / C.sqrt(C.tsum(C.square(u), axis=-1, keepdims=True))
    b3 = cross_tensor(b1, b2)
    return C.stack([b1, b2, b3], axis=-1)


def cross_tensor(a: C.Tensor, b: C.Tensor) -> C.Tensor:
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return C.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def geodesic(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Angle of R1^T R2 in radians, in [0, pi].

    cos comes from the trace as usual; pairing it with sin from the skew part
    in atan2 keeps full precision near 0, where arccos alone loses ~1e-8.
    """
    R1 = np.asarray(R1, dtype=np.float64)
    R2 = np.asarray(R2, dtype=np.float64)
    M = np.swapaxes(R1, -1, -2) @ R2
    cos = np.clip((np.trace(M, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    skew = np.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0],
                     M[..., 1, 0] - M[..., 0, 1]], axis=-1)
    sin = 0.5 * np.linalg.norm(skew, axis=-1)
    return np.arctan2(sin, cos)


def axis_angle_to_mat(axis: np.ndarray, angle) -> np.ndarray:
    """Rodrigues' formula; ``axis`` need not be unit length."""
    axis = np.asarray(axis, dtype=np.float64)
    n = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=np.float64)[..., None, None]
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    zero = np.zeros_like(x)
    K = np.stack([np.stack([zero, -z, y], -1),
                  np.stack([z, zero, -x], -1),
                  np.stack([-y, x, zero], -1)], -2)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` rotations from a random axis and an angle uniform in [0, pi]."""
    axes = rng.normal(size=(n, 3))
    angles = rng.uniform(0.0, np.pi, size=n)
    return axis_angle_to_mat(axes, angles)


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def normalize_euler(e: np.ndarray) -> np.ndarray:
    """Wrap degrees into [-180, 180)."""
    e = np.asarray(e, dtype=np.float64)
    return (e + 180.0) % 360.0 - 180.0


def euler_zxy_to_mat(e: np.ndarray) -> np.ndarray:
    """Degrees ``(..., 3)`` ordered (z, x, y) to ``Rz @ Rx @ Ry``."""
    r = np.deg2rad(normalize_euler(e))
    return _rz(r[..., 0]) @ _rx(r[..., 1]) @ _ry(r[..., 2])


def bone_rot2d(parent_dir: np.ndarray, child_dir: np.ndarray, eps: float = DEGENERACY_EPS) -> np.ndarray:
    """2x2 rotation taking the unit parent direction onto the unit child direction."""
    p = np.asarray(parent_dir, dtype=np.float64)
    c = np.asarray(child_dir, dtype=np.float64)
    np_, nc = np.linalg.norm(p, axis=-1), np.linalg.norm(c, axis=-1)
    if np.any(np_ < eps) or np.any(nc < eps):
        raise DegenerateRotationError("zero-length 2D bone")
    p = p / np_[..., None]
    c = c / nc[..., None]
    cos = np.sum(p * c, axis=-1)
    sin = p[..., 0] * c[..., 1] - p[..., 1] * c[..., 0]
    # renormalize to remove roundoff in (cos, sin)
    r = np.hypot(cos, sin)
    cos, sin = cos / r, sin / r
    return np.stack([np.stack([cos, -sin], -1), np.stack([sin, cos], -1)], -2)
