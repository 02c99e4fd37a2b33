"""Synthetic forward-kinematics data, input normalization and JSONL IO."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError
from .graph import SkeletonTopology, h36m_topology
from .rotation import bone_rot2d, euler_zxy_to_mat

ROTATION_TOL = 1e-9


@dataclass
class PoseSample:
    id: str
    joints2d: np.ndarray
    image_width: float
    image_height: float
    joints3d: Optional[np.ndarray] = None
    rotations: Optional[np.ndarray] = None
    camera_f: np.ndarray = field(default_factory=lambda: np.array([1000.0, 1000.0]))
    camera_c: np.ndarray = field(default_factory=lambda: np.array([500.0, 500.0]))

    def to_json(self) -> dict:
        rec = {"id": self.id, "joints2d": self.joints2d.tolist(),
               "image_width": self.image_width, "image_height": self.image_height}
        if self.joints3d is not None:
            rec["joints3d"] = self.joints3d.tolist()
        if self.rotations is not None:
            rec["rotations"] = self.rotations.tolist()
        rec["camera_f"] = self.camera_f.tolist()
        rec["camera_c"] = self.camera_c.tolist()
        return rec


@dataclass(frozen=True)
class RestPose:
    """Unit bone directions and lengths (mm) in the all-identity pose, per edge."""
    directions: np.ndarray
    lengths: np.ndarray

    @property
    def bone_vectors(self) -> np.ndarray:
        return self.directions * self.lengths[:, None]

    @property
    def mean_bone_length(self) -> float:
        return float(self.lengths.mean())


@dataclass(frozen=True)
class Camera:
    focal: Tuple[float, float] = (1000.0, 1000.0)
    center: Tuple[float, float] = (500.0, 500.0)
    width: float = 1000.0
    height: float = 1000.0
    distance: float = 5000.0


def _resource_json(name: str) -> dict:
    return json.loads(resources.files("posegraphnet.resources").joinpath(name).read_text())


def rest_pose_from_json(raw: dict, topo: SkeletonTopology) -> RestPose:
    bones = raw["bones"]
    dirs, lens = [], []
    for c in topo.edge_children():
        name = topo.joint_names[c]
        if name not in bones:
            raise DataError(f"rest pose has no bone for joint {name!r}")
        d = np.asarray(bones[name]["direction"], dtype=np.float64)
        length = float(bones[name]["length"])
        if length <= 0:
            raise DataError(f"bone {name!r} has non-positive length {length}")
        dirs.append(d / np.linalg.norm(d))
        lens.append(length)
    return RestPose(np.array(dirs), np.array(lens))


def default_rest_pose(topo: Optional[SkeletonTopology] = None) -> RestPose:
    return rest_pose_from_json(_resource_json("rest_pose.json"), topo or h36m_topology())


def default_angle_limits(topo: Optional[SkeletonTopology] = None) -> np.ndarray:
    """(N_e, 3, 2) per-bone [low, high] degrees for the z, x, y Euler angles."""
    topo = topo or h36m_topology()
    raw = _resource_json("angle_limits.json")["limits"]
    return np.array([raw[topo.joint_names[c]] for c in topo.edge_children()], dtype=np.float64)


def fk(rotations: np.ndarray, rest: RestPose, topo: Optional[SkeletonTopology] = None) -> np.ndarray:
    """Joint positions from parent-relative bone rotations; root at the origin.

    A bone's global rotation is its parent bone's global rotation times its
    own; root-adjacent bones have the identity as parent.
    """
    topo = topo or h36m_topology()
    rotations = np.asarray(rotations, dtype=np.float64)
    lead = rotations.shape[:-3]
    edge_of = topo.edge_of_child()
    joints = np.zeros(lead + (topo.num_joints, 3))
    glob: Dict[int, np.ndarray] = {}
    vecs = rest.bone_vectors
    for j in topo.topological_order():
        if j == topo.root:
            continue
        k = edge_of[j]
        p = topo.parent[j]
        parent_rot = glob[edge_of[p]] if p != topo.root else np.eye(3)
        glob[k] = parent_rot @ rotations[..., k, :, :]
        joints[..., j, :] = joints[..., p, :] + (glob[k] @ vecs[k][:, None])[..., 0]
    return joints


def project(joints3d: np.ndarray, camera: Camera = Camera()) -> np.ndarray:
    """Pinhole projection of camera-space points (Z > 0) to pixels."""
    joints3d = np.asarray(joints3d, dtype=np.float64)
    z = joints3d[..., 2]
    if np.any(z <= 0):
        raise DataError("point with non-positive depth cannot be projected")
    f = np.asarray(camera.focal)
    c = np.asarray(camera.center)
    return f * joints3d[..., :2] / z[..., None] + c


def unproject(joints2d: np.ndarray, depth: np.ndarray, camera: Camera = Camera()) -> np.ndarray:
    f = np.asarray(camera.focal)
    c = np.asarray(camera.center)
    depth = np.asarray(depth, dtype=np.float64)
    xy = (np.asarray(joints2d, dtype=np.float64) - c) / f * depth[..., None]
    return np.concatenate([xy, depth[..., None]], axis=-1)


def synth_generate(n: int, rng: np.random.Generator, angle_limits: Optional[np.ndarray] = None,
                   rest: Optional[RestPose] = None, topo: Optional[SkeletonTopology] = None,
                   camera: Camera = Camera(), id_prefix: str = "synth") -> List[PoseSample]:
    """Sample Euler angles inside the limit boxes, run fk and project."""
    topo = topo or h36m_topology()
    rest = rest or default_rest_pose(topo)
    limits = default_angle_limits(topo) if angle_limits is None else np.asarray(angle_limits, float)
    lo, hi = limits[..., 0], limits[..., 1]
    euler = lo + (hi - lo) * rng.random((n,) + lo.shape)
    rots = euler_zxy_to_mat(euler)
    joints = fk(rots, rest, topo) + np.array([0.0, 0.0, camera.distance])
    pix = project(joints, camera)
    width = len(str(max(n - 1, 0)))
    return [PoseSample(id=f"{id_prefix}-{i:0{width}d}", joints2d=pix[i],
                       image_width=float(camera.width), image_height=float(camera.height),
                       joints3d=joints[i], rotations=rots[i],
                       camera_f=np.array(camera.focal, float), camera_c=np.array(camera.center, float))
            for i in range(n)]


def normalize_2d(joints2d: np.ndarray, image_width, image_height) -> np.ndarray:
    """Map x in [0, w] to [-1, 1]; y uses the same scale 2/w so aspect is kept."""
    j = np.asarray(joints2d, dtype=np.float64)
    w = np.asarray(image_width, dtype=np.float64)[..., None, None]
    h = np.asarray(image_height, dtype=np.float64)[..., None, None]
    offset = np.concatenate([np.ones_like(h), h / w], axis=-1)
    return j * 2.0 / w - offset


def denormalize_2d(joints2d_norm: np.ndarray, image_width, image_height) -> np.ndarray:
    j = np.asarray(joints2d_norm, dtype=np.float64)
    w = np.asarray(image_width, dtype=np.float64)[..., None, None]
    h = np.asarray(image_height, dtype=np.float64)[..., None, None]
    offset = np.concatenate([np.ones_like(h), h / w], axis=-1)
    return (j + offset) * w / 2.0


def root_relative(joints3d: np.ndarray, root: int = 0) -> np.ndarray:
    j = np.asarray(joints3d, dtype=np.float64)
    return j - j[..., root:root + 1, :]


def edge_features(joints2d_norm: np.ndarray, topo: Optional[SkeletonTopology] = None) -> np.ndarray:
    """Flattened 2x2 parent-relative bone rotation per edge, shape (..., N_e, 4).

    Root-adjacent bones use image +Y as their parent direction.
    """
    topo = topo or h36m_topology()
    j = np.asarray(joints2d_norm, dtype=np.float64)
    children = topo.edge_children()
    parents = topo.edge_parents()
    child_dir = j[..., children, :] - j[..., parents, :]
    parent_dir = np.empty_like(child_dir)
    for k, p in enumerate(parents):
        if p == topo.root:
            parent_dir[..., k, :] = (0.0, 1.0)
        else:
            parent_dir[..., k, :] = j[..., p, :] - j[..., topo.parent[p], :]
    R = bone_rot2d(parent_dir, child_dir)
    return R.reshape(R.shape[:-2] + (4,))


# ---- JSONL ------------------------------------------------------------------

def _field_shapes(num_joints: int) -> Dict[str, Tuple[int, ...]]:
    return {"joints2d": (num_joints, 2), "joints3d": (num_joints, 3),
            "rotations": (num_joints - 1, 3, 3), "camera_f": (2,), "camera_c": (2,)}


def _check_rotations(R: np.ndarray) -> None:
    eye = np.eye(3)
    err = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - eye, axis=(-2, -1))
    if np.any(err > ROTATION_TOL):
        raise DataError(f"rotation {int(np.argmax(err))} is not orthonormal (err {err.max():.3g})")
    det = np.linalg.det(R)
    if np.any(np.abs(det - 1.0) > ROTATION_TOL):
        raise DataError(f"rotation {int(np.argmax(np.abs(det - 1.0)))} has det != 1")


def sample_from_json(rec: dict, num_joints: int = 17, require_3d: bool = True) -> PoseSample:
    allowed = {"id", "joints2d", "image_width", "image_height", "joints3d", "rotations",
               "camera_f", "camera_c"}
    unknown = set(rec) - allowed
    if unknown:
        raise DataError(f"unknown fields {sorted(unknown)}")
    for key in ("id", "joints2d", "image_width", "image_height"):
        if key not in rec:
            raise DataError(f"missing field {key!r}")
    if require_3d:
        for key in ("joints3d", "rotations"):
            if key not in rec:
                raise DataError(f"missing field {key!r}")
    arrays = {}
    for key, want in _field_shapes(num_joints).items():
        if key not in rec:
            continue
        try:
            a = np.asarray(rec[key], dtype=np.float64)
        except (TypeError, ValueError):
            raise DataError(f"field {key!r} is not numeric") from None
        if a.shape != want:
            raise DataError(f"field {key!r} has shape {a.shape}, expected {want}")
        if not np.all(np.isfinite(a)):
            raise DataError(f"field {key!r} has non-finite values")
        arrays[key] = a
    w, h = rec["image_width"], rec["image_height"]
    if not all(isinstance(v, (int, float)) and math.isfinite(v) and v > 0 for v in (w, h)):
        raise DataError("image_width/image_height must be positive numbers")
    if "rotations" in arrays:
        _check_rotations(arrays["rotations"])
    kw = {}
    if "camera_f" in arrays:
        kw["camera_f"] = arrays["camera_f"]
    if "camera_c" in arrays:
        kw["camera_c"] = arrays["camera_c"]
    return PoseSample(id=str(rec["id"]), joints2d=arrays["joints2d"], image_width=w, image_height=h,
                      joints3d=arrays.get("joints3d"), rotations=arrays.get("rotations"), **kw)


def write_jsonl(path, samples: Sequence[PoseSample]) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json()) + "\n")


def read_jsonl(path, num_joints: int = 17, require_3d: bool = True) -> List[PoseSample]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise DataError("record is not a JSON object")
                out.append(sample_from_json(rec, num_joints, require_3d))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


@dataclass
class Batch:
    """Stacked network inputs and targets for a list of samples."""
    ids: List[str]
    pose2d: np.ndarray
    edge_feat: np.ndarray
    pos3d_mm: Optional[np.ndarray]
    rotations: Optional[np.ndarray]


def make_batch(samples: Sequence[PoseSample], topo: Optional[SkeletonTopology] = None) -> Batch:
    topo = topo or h36m_topology()
    j2d = np.stack([s.joints2d for s in samples])
    w = np.array([s.image_width for s in samples], dtype=np.float64)
    h = np.array([s.image_height for s in samples], dtype=np.float64)
    pose2d = normalize_2d(j2d, w, h)
    has_3d = all(s.joints3d is not None and s.rotations is not None for s in samples)
    return Batch(
        ids=[s.id for s in samples],
        pose2d=pose2d,
        edge_feat=edge_features(pose2d, topo),
        pos3d_mm=root_relative(np.stack([s.joints3d for s in samples]), topo.root) if has_3d else None,
        rotations=np.stack([s.rotations for s in samples]) if has_3d else None,
    )
