import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform
from scipy.stats import binom

from helpers import make_mlp, random_mlp
from hiermod.boolean_graph import family_spec, generate, signature
from hiermod.detection import (ModuleHierarchy, agglomerative, binomial_median, choose_k,
                               cosine_distances, detect, merge_layers, modularity_metric,
                               reachability_features, separability)
from hiermod.evaluation import compare


# --- oracles -----------------------------------------------------------------

def dfs_features(net, layer):
    """Reachability by explicit depth-first search over (layer, unit) nodes."""
    L = net.n_layers
    alive = [np.ones(net.widths[0], bool), *[a > 0 for a in net.unit_alive],
             np.ones(net.widths[-1], bool)]

    def succ(l, u):
        if l == L:
            return []
        return [(l + 1, v) for v in range(net.widths[l + 1])
                if net.masks[l][v, u] > 0 and alive[l + 1][v] and alive[l][u]]

    cols = [(l, j) for l in range(layer + 1, L + 1) for j in range(net.widths[l]) if alive[l][j]]
    rows = []
    for u in range(net.widths[layer]):
        if not alive[layer][u]:
            continue
        seen, stack = set(), [(layer, u)]
        while stack:
            for nxt in succ(*stack.pop()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        rows.append([c in seen for c in cols])
    return np.array(rows, dtype=bool).reshape(-1, len(cols)), cols


def naive_average_linkage(dist):
    """Recompute every inter-cluster average from scratch; same tie rule."""
    n = len(dist)
    clusters = [frozenset([i]) for i in range(n)]
    cuts = {n: {c for c in clusters}}
    while len(clusters) > 1:
        cands = []
        for a, b in itertools.combinations(clusters, 2):
            avg = sum(dist[i][j] for i in a for j in b) / (len(a) * len(b))
            lo, hi = sorted((a, b), key=min)
            cands.append((round(avg, 9), min(lo), min(hi), a, b))
        _, _, _, a, b = min(cands, key=lambda c: c[:3])
        clusters = [c for c in clusters if c not in (a, b)] + [a | b]
        cuts[len(clusters)] = set(clusters)
    return cuts


def partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for p in partitions(rest):
        for i in range(len(p)):
            yield p[:i] + [[first] + p[i]] + p[i + 1:]
        yield [[first]] + p


def labels_from(parts, n):
    lab = np.empty(n, dtype=int)
    for c, members in enumerate(parts):
        lab[members] = c
    return lab


def partition_of(labels):
    return {frozenset(np.flatnonzero(labels == c).tolist()) for c in np.unique(labels)}


# --- reachability ------------------------------------------------------------

@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), density=st.floats(0.05, 0.6), dead=st.floats(0, 0.3))
def test_reachability_matches_dfs(seed, density, dead):
    rng = np.random.default_rng(seed)
    widths = tuple(int(w) for w in rng.integers(2, 12, size=int(rng.integers(3, 6))))
    assume(sum(widths) <= 60)
    net = random_mlp(rng, widths, density=density, dead_prob=dead)
    for layer in range(net.n_layers):
        feats = reachability_features(net, layer)
        rows, cols = dfs_features(net, layer)
        assert list(feats.columns) == cols
        np.testing.assert_array_equal(feats.rows, rows)


def test_dense_masks_give_all_ones():
    net = random_mlp(np.random.default_rng(0), (3, 5, 4, 2))
    for layer in range(3):
        assert reachability_features(net, layer).rows.all()


def test_unit_without_out_edges_has_zero_row():
    net = random_mlp(np.random.default_rng(0), (3, 5, 2))
    net.masks[1][:, 2] = 0
    net.enforce_masks()
    rows = reachability_features(net, 1).rows
    assert not rows[2].any() and rows[[0, 1, 3, 4]].all()


def test_chain_is_transitive():
    net = make_mlp([[[1.0]], [[1.0]]])
    f = reachability_features(net, 0)
    assert f.columns == ((1, 0), (2, 0)) and f.rows.tolist() == [[True, True]]


def test_bad_layer():
    with pytest.raises(ValueError):
        reachability_features(make_mlp([[[1.0]]]), 1)


# --- distances and linkage ---------------------------------------------------

def test_cosine_distance_edge_cases():
    rows = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 0], [0, 0, 1]], dtype=bool)
    d = cosine_distances(rows)
    assert d[0, 1] == 0.0 and d[0, 2] == 1.0 and d[2, 3] == 1.0 and d[0, 3] == 1.0
    assert np.allclose(d, d.T)


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 8))
def test_agglomerative_matches_naive_oracle(seed, n):
    rng = np.random.default_rng(seed)
    rows = rng.random((n, 10)) < 0.5
    rows[:, 0] = True
    dist = cosine_distances(rows)
    tree = agglomerative(dist)
    cuts = naive_average_linkage(dist.tolist())
    for k in range(1, n + 1):
        assert partition_of(tree.labels[k]) == cuts[k]


@settings(max_examples=30)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 12))
def test_merge_heights_match_scipy(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, n))
    dist = np.abs(pts - pts.T) + np.triu(pts, 1) + np.triu(pts, 1).T
    np.fill_diagonal(dist, 0)
    ours = agglomerative(dist)
    heights = [float(dist[np.ix_(a, b)].mean()) for a, b in ours.merges]
    ref = linkage(squareform(dist, checks=False), method="average")[:, 2]
    np.testing.assert_allclose(heights, ref, rtol=1e-10)


def test_four_vectors_with_known_cosines():
    rows = np.array([[1, 1, 0, 0], [1, 1, 1, 0], [0, 0, 1, 1], [0, 0, 0, 1]], dtype=bool)
    dist = cosine_distances(rows)
    np.testing.assert_allclose(dist[0, 1], 1 - 2 / np.sqrt(6))
    tree = agglomerative(dist)
    assert tree.merges[0] == ((0,), (1,))
    assert partition_of(tree.labels[2]) == {frozenset({0, 1}), frozenset({2, 3})}
    assert partition_of(tree.labels[3]) == naive_average_linkage(dist.tolist())[3]


def test_identical_rows_merge_at_zero():
    tree = agglomerative(cosine_distances(np.ones((4, 3), dtype=bool)))
    assert (tree.labels[1] == 0).all()
    assert tree.merges[0] == ((0,), (1,))


def test_two_groups_recovered_at_k2():
    rows = np.array([[1, 1, 0, 0]] * 3 + [[0, 0, 1, 1]] * 2, dtype=bool)
    lab = agglomerative(cosine_distances(rows)).labels[2]
    assert partition_of(lab) == {frozenset({0, 1, 2}), frozenset({3, 4})}


# --- modularity metric -------------------------------------------------------

@given(st.integers(1, 9), st.integers(0, 10**6))
def test_metric_is_zero_for_one_cluster(n, seed):
    d = np.random.default_rng(seed).random((n, n))
    d = d + d.T
    assert modularity_metric(d, np.zeros(n, dtype=int)) == 0.0


@given(st.integers(2, 9), st.integers(0, 10**6))
def test_metric_for_singletons(n, seed):
    d = np.random.default_rng(seed).random((n, n))
    d = d + d.T
    np.fill_diagonal(d, 0)
    mass = d.sum(axis=1) / d.sum()
    assert modularity_metric(d, np.arange(n)) == pytest.approx(-(mass**2).sum(), abs=1e-12)


def test_metric_of_zero_distances():
    assert modularity_metric(np.zeros((4, 4)), np.array([0, 1, 0, 1])) == 0.0


def exhaustive_best(dist):
    n = len(dist)
    best = min(partitions(list(range(n))),
               key=lambda p: modularity_metric(dist, labels_from(p, n)))
    return {frozenset(c) for c in best}


def test_two_tight_pairs_minimise_metric():
    pts = np.array([[0.0], [0.1], [5.0], [5.1]])
    dist = np.abs(pts - pts.T)
    assert exhaustive_best(dist) == {frozenset({0, 1}), frozenset({2, 3})}


def test_two_groups_of_three_minimise_metric():
    rows = np.array([[1, 1, 1, 0, 0, 0]] * 3 + [[0, 0, 0, 1, 1, 1]] * 3, dtype=bool)
    rows[0, 1] = rows[4, 5] = False
    dist = cosine_distances(rows)
    assert exhaustive_best(dist) == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}
    choice = choose_k(rows)
    assert choice.k == 2 and min(choice.metric.values()) < -0.2
    assert partition_of(choice.labels) == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}


# --- separability ------------------------------------------------------------

def test_all_ones_not_separable():
    s = separability(np.ones(7, bool), np.ones(7, bool))
    assert s.expected == 7 and s.o_ij == 7 and s.z == 0.0 and not s.separable


def test_disjoint_supports():
    f_i = np.zeros(9, bool)
    f_j = np.zeros(9, bool)
    f_i[:3] = True
    f_j[3:6] = True
    s = separability(f_i, f_j)
    assert s.expected == pytest.approx(1.0) and s.o_ij == 0 and s.separable
    assert s.z == pytest.approx(1.0606601717798212, rel=1e-12)


def test_equal_vectors_not_separable():
    f = np.array([1, 0, 1, 1, 0], bool)
    s = separability(f, f)
    assert s.o_ij == s.o_i >= s.expected and not s.separable


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.integers(0, 10**6))
def test_separability_bounds(bits, seed):
    f_i = np.array(bits)
    f_j = np.random.default_rng(seed).random(len(bits)) < 0.5
    s = separability(f_i, f_j)
    assert 0 <= s.o_ij <= min(s.o_i, s.o_j) <= s.g


@given(st.integers(1, 200), st.floats(0.001, 0.999))
def test_binomial_median_matches_scipy(n, p):
    m = binomial_median(n, p)
    # scipy's median is the smallest m with cdf >= 1/2 up to its own rounding
    assert binom.cdf(m, n, p) >= 0.5 - 1e-12
    assert m == 0 or binom.cdf(m - 1, n, p) < 0.5 + 1e-12
    assert abs(m - binom.median(n, p)) <= 1


def test_median_centre_reads_typical_overlap_as_neutral():
    f_i = np.ones(20, bool)
    f_i[0] = False
    f_j = np.ones(20, bool)
    f_j[1] = False
    mean = separability(f_i, f_j, "mean")
    med = separability(f_i, f_j, "median")
    assert mean.o_ij == 18 and mean.z > 0
    assert med.z == 0.0 and not med.separable


# --- choosing k --------------------------------------------------------------

def test_all_ones_gives_one_cluster():
    c = choose_k(np.ones((5, 8), bool))
    assert c.k == 1 and c.triggered and c.z_sin >= 0 == c.z_sep


def test_disjoint_supports_give_n_clusters():
    c = choose_k(np.eye(5, dtype=bool))
    assert c.k == 5 and c.z_sep > 0


def test_two_units():
    assert choose_k(np.ones((2, 3), bool)).k == 1
    assert choose_k(np.eye(2, dtype=bool)).k == 2


def test_one_unit():
    c = choose_k(np.ones((1, 3), bool))
    assert c.k == 1 and list(c.labels) == [0]


def test_threshold_must_be_negative():
    with pytest.raises(ValueError):
        choose_k(np.ones((3, 3), bool), t_m=0.1)


@settings(max_examples=60)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 9))
def test_choose_k_is_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    rows = rng.random((n, 14)) < rng.uniform(0.2, 0.8)
    rows = rows[rows.any(axis=1)]
    assume(len(rows) >= 2)
    d = cosine_distances(rows)[np.triu_indices(len(rows), 1)]
    # with tied distances the smallest-index rule depends on row order by design
    assume(len(np.unique(np.round(d, 12))) == len(d))
    a = choose_k(rows)
    p, q = rng.permutation(len(rows)), rng.permutation(rows.shape[1])
    b = choose_k(rows[p][:, q])
    assert a.k == b.k
    assert partition_of(a.labels) == {frozenset(p[list(c)].tolist()) for c in partition_of(b.labels)}


# --- merging and detection ---------------------------------------------------

def block_net(blocks, widths, rng=None):
    """Masks joining only units of the same block; ``blocks[l][u]`` is the block of unit u."""
    rng = rng or np.random.default_rng(0)
    ws, ms = [], []
    for l in range(len(widths) - 1):
        m = (np.array(blocks[l + 1])[:, None] == np.array(blocks[l])[None, :]).astype(float)
        ws.append(rng.uniform(0.5, 1.5, m.shape) * m)
        ms.append(m)
    return make_mlp(ws, masks=ms)


def test_parallel_chains_stay_apart():
    net = block_net([[0, 0, 1, 1]] * 3, (4, 4, 4))
    clusters = {0: {0: 0, 1: 0, 2: 1, 3: 1}, 1: {0: 0, 1: 0, 2: 1, 3: 1}}
    h = merge_layers(net, clusters, 0.9)
    assert len(h.modules) == 2 and not h.uses
    assert {m.inputs for m in h.modules} == {frozenset({0, 1}), frozenset({2, 3})}


def test_even_split_blocks_merging():
    # one input cluster feeds two hidden clusters equally
    masks = [np.ones((4, 2)), np.array([[1, 1, 0, 0], [0, 0, 1, 1]], float)]
    net = make_mlp([m.copy() for m in masks], masks=masks)
    clusters = {0: {0: 0, 1: 0}, 1: {0: 0, 1: 0, 2: 1, 3: 1}}
    h = merge_layers(net, clusters, 0.9)
    src = h.module_of()[(0, 0)]
    targets = {h.module_of()[(1, 0)], h.module_of()[(1, 2)]}
    assert src not in targets and len(targets) == 2
    assert {(src, t) for t in targets} <= h.uses


def test_missing_cluster_is_rejected():
    net = block_net([[0, 0]] * 3, (2, 2, 2))
    with pytest.raises(ValueError):
        merge_layers(net, {0: {0: 0, 1: 0}, 1: {0: 0}}, 0.9)


def test_hand_built_separable_net():
    net = block_net([[0, 0, 1, 1]] * 4, (4, 4, 4, 4))
    h = detect(net)
    assert len(h.modules) == 2 and not h.uses
    assert {(m.inputs, m.outputs) for m in h.modules} == {
        (frozenset({0, 1}), frozenset({0, 1})), (frozenset({2, 3}), frozenset({2, 3}))}
    truth = signature(generate(family_spec("separable"), 0))
    assert compare(h, truth).exact_structure


def test_hand_built_reused_net():
    """Four inputs into three shared units, read by two units with eight outputs each."""
    rng = np.random.default_rng(1)
    m1 = np.ones((3, 4))
    m2 = np.ones((2, 3))
    m3 = np.zeros((16, 2))
    m3[:8, 0] = m3[8:, 1] = 1
    net = make_mlp([rng.uniform(0.5, 1.5, m.shape) * m for m in (m1, m2, m3)],
                   masks=[m1, m2, m3])
    h = detect(net)
    truth = signature(generate(family_spec("reused"), 0), n_hidden=2)
    assert compare(h, truth).exact_structure


def test_dense_net_is_one_module():
    net = random_mlp(np.random.default_rng(3), (4, 12, 12, 4))
    h = detect(net)
    assert len(h.modules) == 1 and not h.uses


def test_isolated_units():
    net = block_net([[0, 0, 1, 1], [0, 0, 1, 1, 0], [0, 0, 1, 1]], (4, 5, 4))
    # hidden unit 4 keeps its in-edges from block 0 but loses every out-edge
    net.masks[1][:, 4] = 0
    net.enforce_masks()
    h = detect(net)
    by = h.module_of()
    assert by[(1, 4)] == by[(0, 0)]
    # an alive unit with no edges at all stands alone
    net.masks[0][4, :] = 0
    net.enforce_masks()
    h = detect(net)
    assert [m.units for m in h.modules if (1, 4) in m.units] == [((1, 4),)]


@settings(max_examples=30)
@given(seed=st.integers(0, 10**6), density=st.floats(0.1, 0.7))
def test_hierarchy_covers_units_once_and_is_acyclic(seed, density):
    rng = np.random.default_rng(seed)
    net = random_mlp(rng, (4, 8, 8, 4), density=density, dead_prob=0.2)
    net.prune_dangling()
    h = detect(net)
    units = [u for m in h.modules for u in m.units]
    expected = [(0, i) for i in range(4)] + [(l + 1, int(i)) for l, a in enumerate(net.unit_alive)
                                             for i in np.flatnonzero(a)] + [(3, j) for j in range(4)]
    assert sorted(units) == sorted(expected)
    dag = nx.DiGraph(list(h.uses))
    assert nx.is_directed_acyclic_graph(dag)
    assert detect(net).to_dict() == h.to_dict()


def test_hierarchy_json_round_trip():
    net = block_net([[0, 0, 1, 1]] * 3, (4, 4, 4))
    h = detect(net)
    back = ModuleHierarchy.from_json(h.to_json())
    assert back.to_dict() == h.to_dict()
    assert json.loads(h.to_json())["uses"] == []
