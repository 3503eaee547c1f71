import json
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sandtree import tree as T
from sandtree.errors import GuardError
from sandtree.rng import RandomSource


# unordered rooted trees with at most two children per vertex (Wedderburn-Etherington)
SHAPE_COUNTS = [1, 1, 2, 3, 6, 11, 23, 46, 98]


def test_shape_counts_match_wedderburn_etherington():
    shapes = T.enumerate_rooted_shapes(9)
    by_size = [sum(1 for t in shapes if t.n == k) for k in range(1, 10)]
    assert by_size == SHAPE_COUNTS
    keys = [T.canonical_key(t) for t in shapes]
    assert len(set(keys)) == len(keys)


def test_shape_guard():
    with pytest.raises(GuardError):
        T.enumerate_rooted_shapes(13)


def test_named_families():
    assert T.point().n == 1
    assert T.cherry().children == ((1, 2), (), ())
    assert T.full_tree(3).n == 15
    assert T.chain(4).height() == 3
    assert T.single_branch(3).n == 7
    bb = T.backbone(T.cherry(), 2)
    # n + 1 spine vertices, n attachments
    assert bb.n == 3 + 2 * 3
    pb = T.perturbed_branch(T.point(), 2, tail=3)
    # two branch steps, a vertex holding the attachment and a 3-step tail
    assert pb.n == 2 * 2 + 1 + 1 + T.single_branch(3).n


def test_invalid_topologies():
    with pytest.raises(ValueError):
        T.TreeTopology(((1,), (0,)), 0)
    with pytest.raises(ValueError):
        T.TreeTopology(((1, 2, 3), (), (), ()), 0)
    with pytest.raises(ValueError):
        T.TreeTopology(((1,), (), ()), 0)  # vertex 2 unreachable


def test_gw_generation_sizes():
    # E[generation k] = (2p)^k
    p, k, reps = 0.6, 4, 4000
    gen = RandomSource(11).generator()
    sizes = []
    for _ in range(reps):
        t = T.sample_gw_binary(p, k, gen)
        sizes.append(sum(1 for d in t.depth_of() if d == k))
    se = np.std(sizes) / np.sqrt(reps)
    assert abs(np.mean(sizes) - (2 * p) ** k) < 4 * se


def test_gw_extremes():
    assert T.sample_gw_binary(0.0, 5, 1).n == 1
    assert T.sample_gw_binary(1.0, 4, 1).n == 31
    with pytest.raises(ValueError):
        T.sample_gw_binary(1.5, 3, 1)


def test_seeded_sampling_is_reproducible():
    a = T.sample_gw_binary(0.55, 10, RandomSource(5).generator())
    b = T.sample_gw_binary(0.55, 10, RandomSource(5).generator())
    assert T.serialize(a) == T.serialize(b)


def test_spine_conditioned():
    for p in (0.0, 0.3, 0.9):
        t, o, v = T.build_spine_conditioned(p, 5, 3, RandomSource(2).generator())
        assert t.distance(o, v) == 5
        if p > 0:
            assert all(len(t.children[w]) == 2 for w in t.path(o, v)[:-1])


def test_path_subtrees_count_and_content():
    t = T.full_tree(3)
    u, v = 7, 9
    subs = T.path_subtrees(t, u, v)
    d = t.distance(u, v)
    assert len(subs) == d + 3
    # hanging pieces plus the path itself partition the vertices
    assert sum(s.n for s in subs) + d + 1 == t.n


def test_cluster_slots_count():
    t = T.full_tree(3)
    for size in range(1, 6):
        for c in T.enumerate_clusters(t, 0, size):
            slots = T.cluster_slots(t, c, 0)
            assert len(slots) == size + 2
            assert sum(s.n for s in T.cluster_subtrees(t, c, 0)) + size == t.n


def _brute_clusters(t, origin, k):
    out = []
    for combo in combinations(range(t.n), k):
        if origin not in combo:
            continue
        s = set(combo)
        seen, stack = {origin}, [origin]
        while stack:
            w = stack.pop()
            for z in t.adjacency[w]:
                if z in s and z not in seen:
                    seen.add(z)
                    stack.append(z)
        if seen == s:
            out.append(frozenset(combo))
    return out


def test_enumerate_clusters_against_subsets():
    t = T.join(T.full_tree(2), T.chain(3))
    for origin in (0, 7, 8):
        for k in range(1, 6):
            assert set(T.enumerate_clusters(t, origin, k)) == set(_brute_clusters(t, origin, k))
        counts = T.count_clusters_by_size(t, origin, 6)
        assert counts[1:] == [len(_brute_clusters(t, origin, k)) for k in range(1, 7)]


def test_edge_unit():
    t = T.full_tree(2)
    assert T.enumerate_clusters(t, 0, 0, unit="edges") == [frozenset({0})]
    assert len(T.enumerate_clusters(t, 0, 1, unit="edges")) == 2


def test_split_join_roundtrip():
    a, b = T.full_tree(2), T.chain(2)
    r = T.join(a, b)
    assert not r.rooted and r.n == 9
    l, rt = T.split(r)
    assert T.canonical_key(l) == T.canonical_key(a)
    assert T.canonical_key(rt) == T.canonical_key(b)
    left, right = T.split(T.cherry())
    assert left.n == right.n == 1
    assert T.split(T.chain(2))[1].is_empty


def test_serialize_roundtrip_rootless():
    r = T.join(T.cherry(), T.point())
    back = T.deserialize(T.serialize(r))
    assert back == r


@pytest.mark.parametrize("text,pos", [
    ("{nope", 1),
    (json.dumps({"format": "other"}), "format"),
    (json.dumps({"format": "sandtree-v1", "nodes": [{"id": 0, "children": [5]}]}), "nodes[0].children[0]"),
    (json.dumps({"format": "sandtree-v1", "nodes": [{"id": 1, "children": []}]}), "nodes[0]"),
])
def test_deserialize_errors(text, pos):
    with pytest.raises(T.TreeFormatError) as info:
        T.deserialize(text)
    assert info.value.position == pos


nested = st.recursive(st.just(()), lambda kids: st.one_of(st.tuples(kids), st.tuples(kids, kids)), max_leaves=12)


@settings(max_examples=150, deadline=None)
@given(nested)
def test_serialize_roundtrip_property(shape):
    t = T.from_nested(shape)
    assert T.deserialize(T.serialize(t)) == t
    assert T.to_nested(t) == shape


@settings(max_examples=100, deadline=None)
@given(nested)
def test_hanging_halves_partition(shape):
    t = T.from_nested(shape)
    for u, v in t.edges():
        a, b = T.split(t, (u, v))
        assert a.n + b.n == t.n
