"""Node/edge graph convolution layers and the full lifting model.

Parameter names follow ``<module>.<layer>.<param>``, for example
``block0.ne1.node.Wg2`` or ``rot_head.fc1.W``; see the README for the table.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import compute as C
from .compute.rng import STREAM_ADJACENCY, STREAM_INIT, make_rng
from .config import ModelConfig
from .errors import DataError, ShapeError
from .graph import EDGE_GROUPS, NODE_GROUPS, GraphMatrices, SkeletonTopology, build_matrices, h36m_topology
from .rotation import from_6d

Params = Dict[str, C.Tensor]

POSE_IN = 2
EDGE_IN = 4


@dataclass(frozen=True)
class ModelGraph:
    """Graph matrices plus the gather/scatter matrices the heads need."""
    topo: SkeletonTopology
    mats: GraphMatrices
    edge_to_child: np.ndarray   # (N_v, N_e): edge feature placed on its child joint
    parent_select: np.ndarray   # (N_e, N_v): picks each edge's parent joint
    child_select: np.ndarray    # (N_e, N_v): picks each edge's child joint
    root_mask: np.ndarray       # (N_v, 1): zero on the root joint

    @classmethod
    def build(cls, topo: Optional[SkeletonTopology] = None) -> "ModelGraph":
        topo = topo or h36m_topology()
        mats = build_matrices(topo)
        nv, ne = mats.num_joints, mats.num_edges
        child_sel = np.zeros((ne, nv))
        parent_sel = np.zeros((ne, nv))
        child_sel[np.arange(ne), mats.edge_child_joint] = 1.0
        parent_sel[np.arange(ne), mats.edge_parent_joint] = 1.0
        root_mask = np.ones((nv, 1))
        root_mask[topo.root] = 0.0
        return cls(topo, mats, child_sel.T.copy(), parent_sel, child_sel, root_mask)

    def static_adjacency(self, kind: str, kernels: str) -> List[np.ndarray]:
        if kind == "node":
            return ([self.mats.node_group_norm[g] for g in NODE_GROUPS] if kernels == "split"
                    else [self.mats.node_norm])
        return ([self.mats.edge_group_norm[g] for g in EDGE_GROUPS] if kernels == "split"
                else [self.mats.edge_norm])


# ---- parameter layout --------------------------------------------------------

def _conv_layer_specs(prefix: str, f_in: int, f_other: Optional[int], f_out: int, n: int,
                      groups: int, adaptive: bool) -> List[Tuple[str, tuple, str]]:
    specs = []
    if f_other is not None:
        # projection of the other stream into this layer's input width
        specs.append((f"{prefix}.P", (f_other, f_in), "weight"))
    for k in range(groups):
        specs.append((f"{prefix}.Wg{k}", (f_in, f_out), "weight"))
    if adaptive:
        for k in range(groups):
            specs.append((f"{prefix}.A{k}", (n, n), "adjacency"))
    specs += [(f"{prefix}.bn.gamma", (f_out,), "ones"), (f"{prefix}.bn.beta", (f_out,), "zeros"),
              (f"{prefix}.bn.running_mean", (f_out,), "buffer_zeros"),
              (f"{prefix}.bn.running_var", (f_out,), "buffer_ones")]
    return specs


def param_specs(config: ModelConfig, graph: ModelGraph) -> List[Tuple[str, tuple, str]]:
    """Deterministic list of (name, shape, init kind) for every model tensor."""
    ch = config.channels
    nv, ne = graph.mats.num_joints, graph.mats.num_edges
    ng_v = len(NODE_GROUPS) if config.kernels == "split" else 1
    ng_e = len(EDGE_GROUPS) if config.kernels == "split" else 1
    ad_v = config.adjacency_v == "adaptive"
    ad_e = config.adjacency_e == "adaptive"
    specs: List[Tuple[str, tuple, str]] = []

    def ne_module(prefix, f_v, f_e):
        if config.node_only:
            specs.extend(_conv_layer_specs(f"{prefix}.node", f_v, None, ch, nv, ng_v, ad_v))
            specs.extend(_conv_layer_specs(f"{prefix}.node2", ch, None, ch, nv, ng_v, ad_v))
        else:
            specs.extend(_conv_layer_specs(f"{prefix}.node", f_v, f_e, ch, nv, ng_v, ad_v))
            specs.extend(_conv_layer_specs(f"{prefix}.edge", f_e, f_v, ch, ne, ng_e, ad_e))

    if config.node_only:
        ne_module("input", POSE_IN + EDGE_IN, None)
    else:
        ne_module("input", POSE_IN, EDGE_IN)
    for i in range(config.blocks):
        for j in range(config.ne_modules_per_block):
            ne_module(f"block{i}.ne{j}", ch, ch)

    red = ch // config.squeeze_ratio
    specs += [("pos_head.se.W_sq", (ch, red), "weight"), ("pos_head.se.W_ex", (red, ch), "weight"),
              ("pos_head.fc.W", (ch, 3), "weight"), ("pos_head.fc.b", (3,), "zeros"),
              ("rot_head.se.W_sq", (ch, red), "weight"), ("rot_head.se.W_ex", (red, ch), "weight"),
              ("rot_head.fc1.W", (ch + 6, ch), "weight"), ("rot_head.fc1.b", (ch,), "zeros"),
              ("rot_head.bn.gamma", (ch,), "ones"), ("rot_head.bn.beta", (ch,), "zeros"),
              ("rot_head.bn.running_mean", (ch,), "buffer_zeros"),
              ("rot_head.bn.running_var", (ch,), "buffer_ones"),
              ("rot_head.fc2.W", (ch, 6), "weight"), ("rot_head.fc2.b", (6,), "identity6d")]
    return specs


def _static_for(name: str, config: ModelConfig, graph: ModelGraph) -> np.ndarray:
    layer = name.rsplit(".", 2)[-2]
    kind = "edge" if layer == "edge" else "node"
    k = int(name.rsplit(".A", 1)[1])
    return graph.static_adjacency(kind, config.kernels)[k]


def init_params(config: ModelConfig, graph: Optional[ModelGraph] = None,
                rng: Optional[np.random.Generator] = None,
                adjacency_rng: Optional[np.random.Generator] = None) -> Params:
    """Weights ~ U(-sqrt(1/F_in), sqrt(1/F_in)); adaptive adjacency = static + N(0, noise).

    Adjacency noise is drawn from its own stream so that every other tensor
    is identical between static and adaptive variants with the same seed.
    """
    config.validate()
    graph = graph or ModelGraph.build()
    rng = rng or make_rng(config.seed, STREAM_INIT)
    adjacency_rng = adjacency_rng or make_rng(config.seed, STREAM_ADJACENCY)
    params: Params = OrderedDict()
    for name, shape, kind in param_specs(config, graph):
        if kind == "weight":
            bound = np.sqrt(1.0 / shape[0])
            t = C.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
        elif kind == "adjacency":
            base = _static_for(name, config, graph)
            noise = adjacency_rng.normal(0.0, 1.0, size=shape) * config.adaptive_init_noise
            t = C.Tensor(base + noise, requires_grad=True)
        elif kind == "ones":
            t = C.Tensor(np.ones(shape), requires_grad=True)
        elif kind == "zeros":
            t = C.Tensor(np.zeros(shape), requires_grad=True)
        elif kind == "identity6d":
            t = C.Tensor(np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), requires_grad=True)
        elif kind == "buffer_zeros":
            t = C.Tensor(np.zeros(shape))
        elif kind == "buffer_ones":
            t = C.Tensor(np.ones(shape))
        else:  # pragma: no cover
            raise AssertionError(kind)
        params[name] = t
    return params


def count_parameters(params: Mapping[str, C.Tensor]) -> int:
    """Trainable scalar count (batchnorm running stats excluded)."""
    return int(sum(p.data.size for p in params.values() if p.requires_grad))


# ---- layers -------------------------------------------------------------------

def _bn(params: Params, prefix: str) -> C.BatchNormState:
    return C.BatchNormState(params[f"{prefix}.running_mean"], params[f"{prefix}.running_var"])


def _check(t, shape: tuple, what: str) -> None:
    for have, want in zip(t.shape, shape):
        if want is not None and have != want:
            raise ShapeError(f"{what} has shape {tuple(t.shape)}, expected {shape}")
    if len(t.shape) != len(shape):
        raise ShapeError(f"{what} has rank {len(t.shape)}, expected {len(shape)}")


def _adjacency(params: Params, prefix: str, kind: str, config: ModelConfig, graph: ModelGraph):
    adaptive = (config.adjacency_v if kind == "node" else config.adjacency_e) == "adaptive"
    if adaptive:
        n = len(NODE_GROUPS if kind == "node" else EDGE_GROUPS) if config.kernels == "split" else 1
        return [params[f"{prefix}.A{k}"] for k in range(n)]
    return graph.static_adjacency(kind, config.kernels)


def conv_layer(X: C.Tensor, other: Optional[C.Tensor], incidence: Optional[np.ndarray],
               params: Params, prefix: str, kind: str, config: ModelConfig, graph: ModelGraph,
               mode: str, rng: Optional[np.random.Generator]) -> C.Tensor:
    """One node or edge convolution: sum_g A_g (M other P + X) W_g -> BN -> ReLU -> dropout."""
    if other is not None:
        X = C.matmul(C.matmul(incidence, other), params[f"{prefix}.P"]) + X
    adj = _adjacency(params, prefix, kind, config, graph)
    out = None
    for k, A in enumerate(adj):
        term = C.matmul(C.matmul(A, X), params[f"{prefix}.Wg{k}"])
        out = term if out is None else out + term
    out = C.batchnorm(out, params[f"{prefix}.bn.gamma"], params[f"{prefix}.bn.beta"],
                      _bn(params, f"{prefix}.bn"), mode)
    return C.dropout(C.relu(out), config.dropout, mode, rng)


def node_edge_forward(H_v: C.Tensor, H_e: Optional[C.Tensor], graph: ModelGraph, params: Params,
                      config: ModelConfig, prefix: str, mode: str = "eval",
                      rng: Optional[np.random.Generator] = None):
    """Edge-aware node layer and node-aware edge layer, both fed the module inputs.

    In node-only mode the module is two stacked node layers and ``H_e`` is
    ignored (returned as ``None``).
    """
    nv, ne = graph.mats.num_joints, graph.mats.num_edges
    _check(H_v, (None, nv, None), "node features H_v")
    if config.node_only:
        h = conv_layer(H_v, None, None, params, f"{prefix}.node", "node", config, graph, mode, rng)
        h = conv_layer(h, None, None, params, f"{prefix}.node2", "node", config, graph, mode, rng)
        return h, None
    if H_e is None:
        raise ShapeError("edge features H_e are required unless node_only is set")
    _check(H_e, (H_v.shape[0], ne, None), "edge features H_e")
    P_e = params[f"{prefix}.node.P"]
    P_v = params[f"{prefix}.edge.P"]
    if P_e.shape != (H_e.shape[-1], H_v.shape[-1]):
        raise ShapeError(f"edge-to-node projection P_e has shape {P_e.shape}, expected "
                         f"{(H_e.shape[-1], H_v.shape[-1])}")
    if P_v.shape != (H_v.shape[-1], H_e.shape[-1]):
        raise ShapeError(f"node-to-edge projection P_v has shape {P_v.shape}, expected "
                         f"{(H_v.shape[-1], H_e.shape[-1])}")
    T = graph.mats.T
    new_v = conv_layer(H_v, H_e, T, params, f"{prefix}.node", "node", config, graph, mode, rng)
    new_e = conv_layer(H_e, H_v, T.T, params, f"{prefix}.edge", "edge", config, graph, mode, rng)
    return new_v, new_e


def se_block(X: C.Tensor, W_sq, W_ex, d: int) -> C.Tensor:
    """Squeeze-and-excitation over channels, squeezing by the mean over nodes/edges."""
    c = X.shape[-1]
    if c % d:
        raise ShapeError(f"channels {c} not divisible by squeeze ratio {d}")
    W_sq, W_ex = C.as_tensor(W_sq), C.as_tensor(W_ex)
    if W_sq.shape != (c, c // d) or W_ex.shape != (c // d, c):
        raise ShapeError(f"SE weights {W_sq.shape}/{W_ex.shape} do not match {c} channels, ratio {d}")
    desc = C.mean(X, axis=-2, keepdims=True)
    gate = C.sigmoid(C.matmul(C.relu(C.matmul(desc, W_sq)), W_ex))
    return X * gate


def model_forward(pose2d, edge_feat, params: Params, config: ModelConfig,
                  graph: Optional[ModelGraph] = None, mode: str = "eval",
                  rng: Optional[np.random.Generator] = None) -> Tuple[C.Tensor, C.Tensor]:
    """(B, N_v, 2) joints and (B, N_e, 4) bone features -> (B, N_v, 3) positions, (B, N_e, 6) rotations.

    Positions are in network units (``config.position_scale`` mm each) and
    the root joint is pinned to the origin.
    """
    graph = graph or ModelGraph.build()
    pose2d, edge_feat = C.as_tensor(pose2d), C.as_tensor(edge_feat)
    nv, ne = graph.mats.num_joints, graph.mats.num_edges
    _check(pose2d, (None, nv, POSE_IN), "pose2d")
    _check(edge_feat, (pose2d.shape[0], ne, EDGE_IN), "edge_feat")

    if config.node_only:
        H_v = C.concat([pose2d, C.matmul(graph.edge_to_child, edge_feat)], axis=-1)
        H_v, H_e = node_edge_forward(H_v, None, graph, params, config, "input", mode, rng)
    else:
        H_v, H_e = node_edge_forward(pose2d, edge_feat, graph, params, config, "input", mode, rng)

    for i in range(config.blocks):
        skip_v, skip_e = H_v, H_e
        for j in range(config.ne_modules_per_block):
            H_v, H_e = node_edge_forward(H_v, H_e, graph, params, config, f"block{i}.ne{j}", mode, rng)
        H_v = H_v + skip_v
        if H_e is not None:
            H_e = H_e + skip_e

    d = config.squeeze_ratio
    h = se_block(H_v, params["pos_head.se.W_sq"], params["pos_head.se.W_ex"], d)
    pos = (C.matmul(h, params["pos_head.fc.W"]) + params["pos_head.fc.b"]) * graph.root_mask

    edge_stream = H_e if H_e is not None else C.matmul(graph.child_select, H_v)
    e = se_block(edge_stream, params["rot_head.se.W_sq"], params["rot_head.se.W_ex"], d)
    z = C.concat([e, C.matmul(graph.parent_select, pos), C.matmul(graph.child_select, pos)], axis=-1)
    z = C.matmul(z, params["rot_head.fc1.W"]) + params["rot_head.fc1.b"]
    z = C.batchnorm(z, params["rot_head.bn.gamma"], params["rot_head.bn.beta"],
                    _bn(params, "rot_head.bn"), mode)
    rot6d = C.matmul(C.relu(z), params["rot_head.fc2.W"]) + params["rot_head.fc2.b"]
    return pos, rot6d


class PoseGraphNet:
    """Model bundle: config, graph and parameters."""

    def __init__(self, config: ModelConfig, topo: Optional[SkeletonTopology] = None,
                 params: Optional[Params] = None):
        self.config = config.validate()
        self.graph = ModelGraph.build(topo)
        self.params = params if params is not None else init_params(config, self.graph)

    def __call__(self, pose2d, edge_feat, mode: str = "eval", rng=None):
        return model_forward(pose2d, edge_feat, self.params, self.config, self.graph, mode, rng)

    def trainable(self) -> Params:
        return OrderedDict((k, p) for k, p in self.params.items() if p.requires_grad)

    def predict(self, pose2d: np.ndarray, edge_feat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Eval-mode positions in millimeters and rotation matrices."""
        pos, rot6d = self(pose2d, edge_feat, mode="eval")
        return pos.data * self.config.position_scale, from_6d(rot6d.data)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self.params.items())

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        unknown = sorted(set(state) - set(self.params))
        missing = sorted(set(self.params) - set(state))
        if unknown or missing:
            parts = []
            if unknown:
                parts.append("unknown tensors: " + ", ".join(unknown))
            if missing:
                parts.append("missing tensors: " + ", ".join(missing))
            raise DataError("; ".join(parts))
        for k, arr in state.items():
            if arr.shape != self.params[k].shape:
                raise DataError(f"tensor {k!r} has shape {arr.shape}, expected {self.params[k].shape}")
        for k, arr in state.items():
            self.params[k].data = np.array(arr, dtype=np.float64)
