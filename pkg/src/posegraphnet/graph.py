"""Skeleton topology and the graph matrices used by node/edge convolutions.

Edges are identified with their child joint and ordered by child joint
index, so edge ``k`` is the k-th non-root joint.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import TopologyError

NODE_GROUPS = ("self", "parent", "child")
EDGE_GROUPS = ("self", "parent", "child", "junction")


@dataclass(frozen=True)
class SkeletonTopology:
    joint_names: List[str]
    parent: List[Optional[int]]
    root: int

    @classmethod
    def from_parents(cls, joint_names: Sequence[str], parents: Sequence[int]) -> "SkeletonTopology":
        """Build from a parent list where -1 (or None) marks the root."""
        names = [str(n) for n in joint_names]
        if len(names) != len(parents):
            raise TopologyError(
                f"{len(names)} joint names but {len(parents)} parent entries")
        par: List[Optional[int]] = [None if p is None or p < 0 else int(p) for p in parents]
        roots = [i for i, p in enumerate(par) if p is None]
        if not roots:
            raise TopologyError("no root joint (every joint has a parent, so the skeleton has a cycle)")
        if len(roots) > 1:
            raise TopologyError(
                f"multiple roots: joint {names[roots[1]]!r} has no parent besides root {names[roots[0]]!r}")
        topo = cls(names, par, roots[0])
        topo.validate()
        return topo

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def num_edges(self) -> int:
        return len(self.joint_names) - 1

    def validate(self) -> None:
        n = len(self.joint_names)
        if n < 1:
            raise TopologyError("empty skeleton")
        if len(self.parent) != n:
            raise TopologyError("parent list length differs from joint count")
        for i, p in enumerate(self.parent):
            if i == self.root:
                if p is not None:
                    raise TopologyError(f"root joint {self.joint_names[i]!r} has a parent")
                continue
            if p is None:
                raise TopologyError(f"joint {self.joint_names[i]!r} has no parent but is not the root")
            if not 0 <= p < n:
                raise TopologyError(f"joint {self.joint_names[i]!r} has out-of-range parent {p}")
            if p == i:
                raise TopologyError(f"joint {self.joint_names[i]!r} is its own parent")
        # every joint must reach the root without revisiting a joint
        for i in range(n):
            seen = set()
            j = i
            while j != self.root:
                if j in seen:
                    raise TopologyError(f"cycle through joint {self.joint_names[i]!r}")
                seen.add(j)
                j = self.parent[j]  # type: ignore[assignment]

    def edge_children(self) -> List[int]:
        """Child joint of each edge, in canonical edge order."""
        return [i for i in range(self.num_joints) if i != self.root]

    def edge_of_child(self) -> Dict[int, int]:
        return {c: k for k, c in enumerate(self.edge_children())}

    def edge_parents(self) -> List[int]:
        """Parent joint of each edge."""
        return [self.parent[c] for c in self.edge_children()]  # type: ignore[misc]

    def topological_order(self) -> List[int]:
        """Joints ordered so that every parent precedes its children."""
        children: Dict[int, List[int]] = {i: [] for i in range(self.num_joints)}
        for i, p in enumerate(self.parent):
            if p is not None:
                children[p].append(i)
        order, stack = [], [self.root]
        while stack:
            j = stack.pop(0)
            order.append(j)
            stack.extend(children[j])
        return order

    def to_json(self) -> dict:
        return {"joints": list(self.joint_names),
                "parents": [-1 if p is None else p for p in self.parent]}


def load_topology(path) -> SkeletonTopology:
    with open(path) as fh:
        raw = json.load(fh)
    return topology_from_json(raw)


def topology_from_json(raw: dict) -> SkeletonTopology:
    try:
        return SkeletonTopology.from_parents(raw["joints"], raw["parents"])
    except KeyError as exc:
        raise TopologyError(f"topology JSON missing key {exc}") from None


def h36m_topology() -> SkeletonTopology:
    """The default 17-joint Human3.6M skeleton."""
    text = resources.files("posegraphnet.resources").joinpath("h36m_topology.json").read_text()
    return topology_from_json(json.loads(text))


def random_topology(num_joints: int, rng: np.random.Generator) -> SkeletonTopology:
    """Random rooted tree; joint i>0 hangs off a uniformly chosen earlier joint."""
    parents = [-1] + [int(rng.integers(0, i)) for i in range(1, num_joints)]
    return SkeletonTopology.from_parents([f"j{i}" for i in range(num_joints)], parents)


@dataclass(frozen=True)
class GraphMatrices:
    A_v: np.ndarray
    A_e: np.ndarray
    T: np.ndarray
    node_groups: Dict[str, np.ndarray]
    edge_groups: Dict[str, np.ndarray]
    node_norm: np.ndarray = field(repr=False)
    edge_norm: np.ndarray = field(repr=False)
    node_group_norm: Dict[str, np.ndarray] = field(repr=False)
    edge_group_norm: Dict[str, np.ndarray] = field(repr=False)
    edge_parent_joint: np.ndarray = field(repr=False)
    edge_child_joint: np.ndarray = field(repr=False)

    @property
    def num_joints(self) -> int:
        return self.A_v.shape[0]

    @property
    def num_edges(self) -> int:
        return self.A_e.shape[0]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_matrices(topo: SkeletonTopology) -> GraphMatrices:
    topo.validate()
    nv, ne = topo.num_joints, topo.num_edges
    children = topo.edge_children()
    parents = topo.edge_parents()
    edge_of = topo.edge_of_child()

    A_v = np.zeros((nv, nv))
    T = np.zeros((nv, ne))
    node_parent = np.zeros((nv, nv))
    for k, (p, c) in enumerate(zip(parents, children)):
        A_v[p, c] = A_v[c, p] = 1.0
        T[p, k] = T[c, k] = 1.0
        node_parent[c, p] = 1.0

    # edge k's parent edge is the edge whose child joint is k's parent joint
    edge_parent = np.zeros((ne, ne))
    for k, p in enumerate(parents):
        if p != topo.root:
            edge_parent[k, edge_of[p]] = 1.0
    edge_child = edge_parent.T.copy()

    A_e = T.T @ T
    np.fill_diagonal(A_e, 0.0)

    junction = np.zeros((ne, ne))
    for a in range(ne):
        for b in range(ne):
            if a != b and parents[a] == parents[b]:
                junction[a, b] = 1.0

    node_groups = {"self": np.eye(nv), "parent": node_parent, "child": node_parent.T.copy()}
    edge_groups = {"self": np.eye(ne), "parent": edge_parent, "child": edge_child,
                   "junction": junction}

    mats = GraphMatrices(
        A_v=A_v, A_e=A_e, T=T,
        node_groups=node_groups, edge_groups=edge_groups,
        node_norm=normalize_adjacency(A_v, True),
        edge_norm=normalize_adjacency(A_e, True),
        node_group_norm=group_normalize(A_v, node_groups),
        edge_group_norm=group_normalize(A_e, edge_groups),
        edge_parent_joint=np.asarray(parents, dtype=np.int64),
        edge_child_joint=np.asarray(children, dtype=np.int64),
    )
    for a in (mats.A_v, mats.A_e, mats.T, mats.node_norm, mats.edge_norm,
              mats.edge_parent_joint, mats.edge_child_joint,
              *node_groups.values(), *edge_groups.values(),
              *mats.node_group_norm.values(), *mats.edge_group_norm.values()):
        _readonly(a)
    return mats


def normalize_adjacency(A: np.ndarray, add_self_loops: bool = True) -> np.ndarray:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {A.shape}")
    A_hat = A + np.eye(A.shape[0]) if add_self_loops else A
    deg = A_hat.sum(axis=1)
    if np.any(deg == 0):
        raise ZeroDivisionError(f"zero-degree rows {np.flatnonzero(deg == 0).tolist()}")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return A_hat * inv_sqrt[:, None] * inv_sqrt[None, :]


def group_normalize(A: np.ndarray, groups: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Per-group masks scaled by the full-graph degrees of A + I.

    Using the full degrees makes the group matrices sum to the plain
    normalized adjacency, so tied group weights recover the single-kernel layer.
    """
    A = np.asarray(A, dtype=np.float64)
    A_hat = A + np.eye(A.shape[0])
    masks = [np.asarray(m, dtype=np.float64) for m in groups.values()]
    total = np.sum(masks, axis=0) if masks else np.zeros_like(A_hat)
    if any(((m != 0) & (m != 1)).any() for m in masks) or not np.array_equal(total, A_hat):
        raise TopologyError("group masks do not partition the self-looped adjacency")
    inv_sqrt = 1.0 / np.sqrt(A_hat.sum(axis=1))
    scale = inv_sqrt[:, None] * inv_sqrt[None, :]
    return {name: m * scale for name, m in zip(groups, masks)}
