"""Training losses (on tensors) and evaluation metrics (on numpy arrays)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import compute as C
from .errors import AlignmentError, ShapeError
from .rotation import from_6d_tensor, geodesic

LOSS_MODES = ("idev", "ploss", "position_only", "orientation_only")
PLOSS_MODES = ("joint", "bone_vector")


def _same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


# ---- losses ---------------------------------------------------------------

def mpjpe_loss(J_pred: C.Tensor, J_gt) -> C.Tensor:
    """Mean over batch and joints of the *squared* joint distance."""
    J_gt = C.as_tensor(J_gt)
    _same_shape(J_pred, J_gt, "mpjpe_loss")
    d = J_pred - J_gt
    return C.mean(C.tsum(C.square(d), axis=-1))


def idev_loss(R6_pred: C.Tensor, R_gt) -> C.Tensor:
    """Mean Frobenius norm of I - R_gt^T R_pred, with R_pred recovered from 6D."""
    R_gt = C.as_tensor(R_gt)
    R_pred = from_6d_tensor(R6_pred)
    _same_shape(R_pred, R_gt, "idev_loss")
    diff = np.eye(3) - C.matmul(C.transpose(R_gt), R_pred)
    fro = C.sqrt(C.tsum(C.square(diff), axis=(-2, -1)))
    return C.mean(fro)


def ploss(R6_pred: C.Tensor, R_gt, X_pred: C.Tensor, X_gt) -> C.Tensor:
    """Mean L1 distance between R_pred x_pred and R_gt x_gt, one vector per bone.

    ``X_pred``/``X_gt`` are ``(..., N_e, 3)`` vectors already gathered per
    bone (the child joint position, or a fixed rest-pose bone vector).
    """
    R_gt = C.as_tensor(R_gt)
    X_gt = C.as_tensor(X_gt)
    X_pred = C.as_tensor(X_pred)
    R_pred = from_6d_tensor(R6_pred)
    _same_shape(R_pred, R_gt, "ploss rotations")
    _same_shape(X_pred, X_gt, "ploss vectors")
    a = C.matmul(R_pred, C.reshape(X_pred, X_pred.shape + (1,)))
    b = C.matmul(R_gt, C.reshape(X_gt, X_gt.shape + (1,)))
    return C.mean(C.tsum(C.absolute(a - b), axis=(-2, -1)))


@dataclass
class LossValue:
    total: C.Tensor
    position_term: float
    angle_term: float
    lam: float


def combined_loss(pos_pred: C.Tensor, rot6d_pred: C.Tensor, pos_gt, rot_gt, config,
                  child_joint: np.ndarray, rest_vectors: Optional[np.ndarray] = None) -> LossValue:
    """Dispatch on ``config.loss``; total = position + lambda * angle.

    ``child_joint`` maps each bone to its child joint (for the joint-position
    PLoss); ``rest_vectors`` are unit rest-pose bone vectors for the
    ``bone_vector`` PLoss variant.
    """
    mode = config.loss
    lam = float(config.lambda_angle)
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    pos_term = mpjpe_loss(pos_pred, pos_gt) if mode != "orientation_only" else None
    angle: Optional[C.Tensor]
    if mode in ("idev", "orientation_only"):
        angle = idev_loss(rot6d_pred, rot_gt)
    elif mode == "ploss":
        if config.ploss_mode == "joint":
            x_pred = pos_pred[..., child_joint, :]
            x_gt = np.asarray(pos_gt.data if isinstance(pos_gt, C.Tensor) else pos_gt)[..., child_joint, :]
        elif config.ploss_mode == "bone_vector":
            if rest_vectors is None:
                raise ValueError("bone_vector PLoss needs rest_vectors")
            x_gt = np.broadcast_to(rest_vectors, rot6d_pred.shape[:-1] + (3,))
            x_pred = C.Tensor(x_gt)
        else:
            raise ValueError(f"unknown ploss_mode {config.ploss_mode!r}")
        angle = ploss(rot6d_pred, rot_gt, x_pred, x_gt)
    else:
        angle = None

    if pos_term is not None and angle is not None:
        total = pos_term + C.scale(angle, lam)
    elif pos_term is not None:
        total = pos_term
    else:
        total = angle
        lam = 1.0  # angle term stands alone, unweighted
    return LossValue(total=total,
                     position_term=pos_term.item() if pos_term is not None else 0.0,
                     angle_term=angle.item() if angle is not None else 0.0,
                     lam=lam)


# ---- metrics ----------------------------------------------------------------

def metric_mpjpe_p1(J_pred: np.ndarray, J_gt: np.ndarray) -> float:
    """Mean (unsquared) Euclidean joint distance."""
    J_pred, J_gt = np.asarray(J_pred, float), np.asarray(J_gt, float)
    _same_shape(J_pred, J_gt, "mpjpe")
    return float(np.mean(np.linalg.norm(J_pred - J_gt, axis=-1)))


def procrustes_align(J_pred: np.ndarray, J_gt: np.ndarray, scale: bool = True) -> np.ndarray:
    """Similarity-align ``J_pred`` (N, 3) onto ``J_gt``; batched over leading axes."""
    J_pred, J_gt = np.asarray(J_pred, float), np.asarray(J_gt, float)
    _same_shape(J_pred, J_gt, "procrustes_align")
    if J_pred.ndim > 2:
        flat_p = J_pred.reshape((-1,) + J_pred.shape[-2:])
        flat_g = J_gt.reshape((-1,) + J_gt.shape[-2:])
        out = np.stack([procrustes_align(p, g, scale) for p, g in zip(flat_p, flat_g)])
        return out.reshape(J_pred.shape)
    mu_p, mu_g = J_pred.mean(axis=0), J_gt.mean(axis=0)
    X, Y = J_pred - mu_p, J_gt - mu_g
    M = X.T @ Y
    U, S, Vt = np.linalg.svd(M)
    tol = 1e-10 * max(S[0], 1e-300)
    if S[0] <= 1e-300 or S[1] <= tol:
        raise AlignmentError("point sets are degenerate (rank < 2)")
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = U @ D @ Vt  # row-vector convention: aligned = X @ R
    s = (S * np.diag(D)).sum() / (X ** 2).sum() if scale else 1.0
    return s * X @ R + mu_g


def metric_mpjpe_p2(J_pred: np.ndarray, J_gt: np.ndarray, scale: bool = True) -> float:
    return metric_mpjpe_p1(procrustes_align(J_pred, J_gt, scale), J_gt)


def metric_mpjae(R_pred: np.ndarray, R_gt: np.ndarray) -> float:
    """Mean geodesic angle (radians) over all bones given; no root entry is passed in."""
    _same_shape(np.asarray(R_pred), np.asarray(R_gt), "mpjae")
    return float(np.mean(geodesic(R_gt, R_pred)))


def metric_maa(R_pred: np.ndarray, R_gt: np.ndarray) -> float:
    return 1.0 - metric_mpjae(R_pred, R_gt) / np.pi


def evaluate_metrics(pos_pred_mm, pos_gt_mm, R_pred, R_gt, scale: bool = True) -> dict:
    """The metrics JSON record: millimeters, radians and MAA as a percentage."""
    mpjae = metric_mpjae(R_pred, R_gt)
    return {
        "mpjpe_p1_mm": metric_mpjpe_p1(pos_pred_mm, pos_gt_mm),
        "mpjpe_p2_mm": metric_mpjpe_p2(pos_pred_mm, pos_gt_mm, scale=scale),
        "mpjae_rad": mpjae,
        "maa_pct": 100.0 * (1.0 - mpjae / np.pi),
    }
