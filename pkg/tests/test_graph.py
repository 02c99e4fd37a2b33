import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posegraphnet.errors import TopologyError
from posegraphnet.graph import (
    EDGE_GROUPS,
    NODE_GROUPS,
    SkeletonTopology,
    build_matrices,
    group_normalize,
    load_topology,
    normalize_adjacency,
    random_topology,
)


def chain(n):
    return SkeletonTopology.from_parents([f"j{i}" for i in range(n)], [-1] + list(range(n - 1)))


def test_two_joint_chain():
    m = build_matrices(chain(2))
    assert m.T.tolist() == [[1.0], [1.0]]
    assert m.A_v.tolist() == [[0.0, 1.0], [1.0, 0.0]]
    assert m.A_e.tolist() == [[0.0]]


def test_three_chain_edge_tree():
    m = build_matrices(chain(3))
    # edge 1 (a->b) has edge 0 (root->a) as parent
    assert m.edge_groups["parent"].tolist() == [[0, 0], [1, 0]]
    assert m.edge_groups["child"].tolist() == [[0, 1], [0, 0]]
    assert not m.edge_groups["junction"].any()


def test_h36m_shapes_and_junctions(h36m):
    m = build_matrices(h36m)
    assert m.A_v.shape == (17, 17)
    assert m.A_e.shape == (16, 16)
    assert m.T.shape == (17, 16)
    # edges are indexed by child joint - 1; pelvis junction: RHip, LHip, Spine;
    # thorax junction: Neck, LShoulder, RShoulder
    expected = set()
    for group in ([1, 4, 7], [9, 11, 14]):
        for a in group:
            for b in group:
                if a != b:
                    expected.add((a - 1, b - 1))
    got = {tuple(x) for x in np.argwhere(m.edge_groups["junction"]).tolist()}
    assert got == expected


def test_normalize_examples():
    assert normalize_adjacency(np.zeros((1, 1)), True).tolist() == [[1.0]]
    A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)
    N = normalize_adjacency(A, True)
    assert N[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert N[0, 1] == pytest.approx(1 / np.sqrt(6), abs=1e-15)
    assert N[1, 1] == pytest.approx(1 / 3, abs=1e-15)
    K3 = np.ones((3, 3)) - np.eye(3)
    np.testing.assert_allclose(normalize_adjacency(K3, True), np.full((3, 3), 1 / 3), atol=1e-15)


def test_normalize_zero_degree_without_self_loops():
    with pytest.raises(ZeroDivisionError):
        normalize_adjacency(np.zeros((2, 2)), add_self_loops=False)


def test_group_normalize_examples():
    m = build_matrices(chain(3))
    g = m.node_group_norm
    np.testing.assert_allclose(sum(g.values()), m.node_norm, atol=1e-12)
    deg = m.A_v.sum(1) + 1
    np.testing.assert_allclose(g["self"], np.diag(1 / deg), atol=1e-15)
    assert np.count_nonzero(g["parent"][1]) == 1


def test_group_normalize_rejects_bad_partition():
    A = np.array([[0, 1], [1, 0]], float)
    with pytest.raises(TopologyError):
        group_normalize(A, {"self": np.eye(2)})
    with pytest.raises(TopologyError):
        group_normalize(A, {"a": np.ones((2, 2)), "b": np.eye(2)})


@pytest.mark.parametrize("parents, culprit", [
    ([-1, 2, 1], "j1"),          # cycle hanging off a root
    ([-1, -1, 0], "j1"),         # two roots
    ([-1, 0, 7], "j2"),          # orphan: parent out of range
    ([1, 0], None),              # no root at all
])
def test_rejects_non_trees(parents, culprit):
    with pytest.raises(TopologyError) as info:
        SkeletonTopology.from_parents([f"j{i}" for i in range(len(parents))], parents)
    if culprit:
        assert culprit in str(info.value)


def test_load_topology_json(tmp_path):
    p = tmp_path / "topo.json"
    p.write_text(json.dumps({"joints": ["a", "b", "c"], "parents": [-1, 0, 0]}))
    topo = load_topology(p)
    m = build_matrices(topo)
    assert m.edge_groups["junction"].tolist() == [[0, 1], [1, 0]]


def check_invariants(m):
    A_v, A_e, T = m.A_v, m.A_e, m.T
    assert np.array_equal(A_v, A_v.T) and not np.diag(A_v).any()
    assert np.array_equal(A_e, A_e.T) and not np.diag(A_e).any()
    assert np.array_equal(T @ T.T, A_v + np.diag(A_v.sum(1)))
    TtT = T.T @ T
    assert np.array_equal(TtT - np.diag(np.diag(TtT)), A_e)
    assert np.all(np.diag(TtT) == 2)
    for groups, A in ((m.node_groups, A_v), (m.edge_groups, A_e)):
        masks = np.stack(list(groups.values()))
        assert np.array_equal(masks.sum(0), A + np.eye(len(A)))
        assert masks.max() <= 1
    np.testing.assert_allclose(sum(m.node_group_norm.values()), m.node_norm, atol=1e-12, rtol=0)
    np.testing.assert_allclose(sum(m.edge_group_norm.values()), m.edge_norm, atol=1e-12, rtol=0)
    assert np.array_equal(m.edge_groups["junction"], m.edge_groups["junction"].T)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 50), seed=st.integers(0, 2**32 - 1))
def test_random_tree_invariants(n, seed):
    topo = random_topology(n, np.random.default_rng(seed))
    m = build_matrices(topo)
    assert m.num_edges == n - 1
    check_invariants(m)
    # edge tree is a forest rooted at the root-incident edges
    edge_parent = m.edge_groups["parent"]
    roots = np.flatnonzero(edge_parent.sum(1) == 0)
    assert set(m.edge_parent_joint[roots]) <= {topo.root}
    assert set(np.flatnonzero(m.edge_parent_joint == topo.root)) == set(roots)
    assert np.all(edge_parent.sum(1) <= 1)


def test_rebuild_is_bit_identical(h36m):
    a, b = build_matrices(h36m), build_matrices(h36m)
    for name in ("A_v", "A_e", "T", "node_norm", "edge_norm"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    for g in NODE_GROUPS:
        assert a.node_group_norm[g].tobytes() == b.node_group_norm[g].tobytes()
    for g in EDGE_GROUPS:
        assert a.edge_group_norm[g].tobytes() == b.edge_group_norm[g].tobytes()


def test_matrices_are_read_only(h36m):
    m = build_matrices(h36m)
    with pytest.raises(ValueError):
        m.A_v[0, 0] = 5.0
