"""Structural module detection on a sparse network.

Each unit gets a binary reachability feature over all later alive units.
Every layer is clustered by average-linkage agglomeration on cosine
distances; the number of clusters is picked by a modularity metric, with
two binomial separability tests covering the edge cases where the metric
is uninformative. Clusters of adjacent layers that mostly talk to each
other are then merged into modules, and the remaining connections become
uses-edges of a module DAG.

Layer indices: 0 is the input layer, 1..L-1 are hidden layers, L is the
output layer. Units are addressed as ``(layer, index)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .mlp import MaskedMlp

T_M = -0.2
DELTA_M = 0.9
_TIE_TOL = 1e-12

Unit = tuple[int, int]


# ---------------------------------------------------------------------------
# features


def _alive(mlp: MaskedMlp, layer: int) -> np.ndarray:
    """Boolean alive vector for any layer, inputs and outputs included."""
    if layer == 0 or layer == mlp.n_layers:
        return np.ones(mlp.widths[layer], dtype=bool)
    return mlp.unit_alive[layer - 1] > 0


def adjacency(mlp: MaskedMlp, layer: int) -> np.ndarray:
    """Boolean (width[layer], width[layer+1]) matrix of unmasked edges
    between alive units."""
    a = (mlp.masks[layer] > 0).T.copy()
    a &= _alive(mlp, layer)[:, None]
    a &= _alive(mlp, layer + 1)[None, :]
    return a


@dataclass(frozen=True)
class FeatureMatrix:
    layer: int
    units: tuple[int, ...]  # alive unit indices of ``layer``, one per row
    columns: tuple[Unit, ...]  # later alive units, layer-major
    rows: np.ndarray  # bool (len(units), len(columns))

    @property
    def g(self) -> int:
        return len(self.columns)


def reachability_features(mlp: MaskedMlp, layer: int) -> FeatureMatrix:
    if not 0 <= layer < mlp.n_layers:
        raise ValueError(f"layer must lie in [0, {mlp.n_layers})")
    units = np.flatnonzero(_alive(mlp, layer))
    reach = np.eye(mlp.widths[layer], dtype=bool)
    blocks, columns = [], []
    for l in range(layer, mlp.n_layers):
        reach = (reach.astype(np.int64) @ adjacency(mlp, l).astype(np.int64)) > 0
        alive_next = np.flatnonzero(_alive(mlp, l + 1))
        blocks.append(reach[:, alive_next])
        columns.extend((l + 1, int(j)) for j in alive_next)
    rows = np.concatenate(blocks, axis=1)[units]
    return FeatureMatrix(layer, tuple(int(u) for u in units), tuple(columns), rows)


# ---------------------------------------------------------------------------
# clustering


def cosine_distances(rows: np.ndarray) -> np.ndarray:
    """Pairwise 1 - cosine similarity of binary rows, computed from integer
    counts so identical rows give exactly 0. A zero row is at distance 1
    from any nonzero row and 0 from another zero row."""
    r = np.asarray(rows, dtype=np.int64)
    inter = r @ r.T
    counts = np.diag(inter).astype(np.float64)
    denom = np.sqrt(np.outer(counts, counts))
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, inter / np.where(denom > 0, denom, 1.0), 0.0)
    d = np.clip(1.0 - cos, 0.0, None)
    zero = counts == 0
    d[np.ix_(zero, zero)] = 0.0
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True)
class Dendrogram:
    """Cuts at every k; ``labels[k]`` is a length-N label vector with
    clusters numbered by their smallest member. ``merges[t]`` is the pair
    of clusters (as member tuples) joined at step t, going from N to N-1
    clusters at t = 0."""

    n: int
    labels: dict[int, np.ndarray]
    merges: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]


def _labels_of(clusters: list[list[int]], n: int) -> np.ndarray:
    lab = np.empty(n, dtype=np.int64)
    for cid, members in enumerate(sorted(clusters, key=min)):
        lab[members] = cid
    return lab


def agglomerative(dist: np.ndarray) -> Dendrogram:
    """Average-linkage agglomeration. Among pairs at the minimal linkage
    distance (to within a 1e-12 relative tolerance) the pair with the
    lexicographically smallest (min member, min member) is merged."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n < 1 or dist.shape != (n, n):
        raise ValueError("distance matrix must be square and nonempty")
    clusters = [[i] for i in range(n)]
    labels = {n: _labels_of(clusters, n)}
    merges = []
    while len(clusters) > 1:
        clusters.sort(key=min)
        best, best_pair = math.inf, None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = float(dist[np.ix_(clusters[a], clusters[b])].mean())
                if best_pair is None or d < best - _TIE_TOL * max(1.0, abs(best)):
                    best, best_pair = d, (a, b)
        a, b = best_pair
        merges.append((tuple(clusters[a]), tuple(clusters[b])))
        merged = sorted(clusters[a] + clusters[b])
        clusters = [c for i, c in enumerate(clusters) if i not in (a, b)] + [merged]
        labels[len(clusters)] = _labels_of(clusters, n)
    return Dendrogram(n, labels, tuple(merges))


def modularity_metric(dist: np.ndarray, labels: np.ndarray) -> float:
    """M = sum_i (A_ii - (sum_j A_ij)^2) over clusters, where A_ij is the
    normalized distance mass between clusters i and j. Lower is better.
    An all-zero distance matrix gives 0 for every partition."""
    d = np.array(dist, dtype=np.float64)
    np.fill_diagonal(d, 0.0)
    total = d.sum()
    if total == 0:
        return 0.0
    d /= total
    labels = np.asarray(labels)
    if np.unique(labels).size == 1:
        return 0.0  # trace and squared row mass are both the total
    k = int(labels.max()) + 1
    onehot = np.zeros((d.shape[0], k))
    onehot[np.arange(d.shape[0]), labels] = 1.0
    a = onehot.T @ d @ onehot
    return float(np.trace(a) - (a.sum(axis=1) ** 2).sum())


# ---------------------------------------------------------------------------
# separability


@dataclass(frozen=True)
class SeparabilityOutcome:
    o_i: int
    o_j: int
    o_ij: int
    g: int
    expected: float
    z: float
    separable: bool


def binomial_median(n: int, p: float) -> int:
    """Smallest m with P(X <= m) >= 1/2 for X ~ Binomial(n, p)."""
    mean = n * p
    lo = math.floor(mean)
    if lo == mean or p in (0.0, 1.0):
        return int(lo)
    cdf = 0.0
    log_p, log_q = math.log(p), math.log1p(-p)
    for k in range(lo + 1):
        cdf += math.exp(math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
                        + k * log_p + (n - k) * log_q)
    return lo if cdf >= 0.5 else lo + 1


def separability(f_i: np.ndarray, f_j: np.ndarray, centre: str = "mean") -> SeparabilityOutcome:
    """Compare the overlap of two binary vectors with a binomial null in
    which each of the g positions is shared with probability o_i o_j / g^2.
    Positive z means less overlap than chance.

    ``centre="median"`` measures the overlap against the median of the null
    instead of its mean. Overlap counts are integers, so an observation equal
    to the most typical count then reads as z = 0 rather than as a faint
    separation. The two agree whenever the mean is an integer.
    """
    f_i = np.asarray(f_i, dtype=bool)
    f_j = np.asarray(f_j, dtype=bool)
    if f_i.shape != f_j.shape or f_i.ndim != 1:
        raise ValueError("feature vectors must be 1-D and equally long")
    if centre not in ("mean", "median"):
        raise ValueError(f"unknown centre {centre!r}")
    g = f_i.size
    o_i, o_j = int(f_i.sum()), int(f_j.sum())
    o_ij = int((f_i & f_j).sum())
    if g == 0:
        return SeparabilityOutcome(o_i, o_j, o_ij, g, 0.0, 0.0, False)
    p = o_i * o_j / g**2
    expected = o_i * o_j / g
    ref = expected if centre == "mean" else binomial_median(g, p)
    var = g * p * (1 - p)
    z = (ref - o_ij) / math.sqrt(var) if var > 0 else 0.0
    return SeparabilityOutcome(o_i, o_j, o_ij, g, expected, z, o_ij < ref)


# ---------------------------------------------------------------------------
# choosing the number of clusters


@dataclass(frozen=True)
class LayerChoice:
    k: int
    labels: np.ndarray
    metric: dict[int, float]  # k -> M for the scanned cuts
    triggered: bool  # whether the separability tests were consulted
    z_sep: float | None = None
    z_sin: float | None = None


def choose_k(rows: np.ndarray, t_m: float = T_M, centre: str = "median") -> LayerChoice:
    """Pick a cut of the dendrogram for one layer's feature rows.

    When the metric is uninformative (best cut at k = 2 or k = N-1, or its
    minimum above ``t_m``) two tests decide between one cluster and N:
    whether the first pair merged is separable, and whether the two groups
    of the k = 2 cut are not. A test with z = 0, no evidence either way,
    still counts for the single-cluster side, so all-identical rows give
    one cluster.

    ``centre`` applies to the second test only. Its merged groups are
    near-full OR vectors whose overlap sits just below a fractional mean,
    which would otherwise read as faint separation. The first test always
    uses the mean, so sparse disjoint rows still count as separable.
    """
    if t_m >= 0:
        raise ValueError("t_m must be negative")
    rows = np.asarray(rows, dtype=bool)
    n = rows.shape[0]
    if n == 0:
        raise ValueError("need at least one row")
    if n == 1:
        return LayerChoice(1, np.zeros(1, dtype=np.int64), {}, False)
    dist = cosine_distances(rows)
    tree = agglomerative(dist)
    metric = {k: modularity_metric(dist, tree.labels[k]) for k in range(2, n)}
    best_k = None
    for k in sorted(metric):
        # later k wins ties
        if best_k is None or metric[k] <= metric[best_k]:
            best_k = k
    triggered = best_k is None or best_k in (2, n - 1) or metric[best_k] > t_m
    if not triggered:
        return LayerChoice(best_k, tree.labels[best_k], metric, False)
    a, b = tree.merges[0]
    z_sep = separability(rows[a[0]], rows[b[0]]).z
    two = tree.labels[2]
    z_sin = -separability(rows[two == 0].any(axis=0), rows[two == 1].any(axis=0), centre).z
    if z_sin >= 0 or z_sep > 0:
        k = 1 if z_sin >= z_sep else n
    else:
        k = best_k
    return LayerChoice(k, tree.labels[k], metric, True, z_sep, z_sin)


# ---------------------------------------------------------------------------
# merging into modules


@dataclass(frozen=True)
class Module:
    id: int
    level: int  # lowest layer holding one of its units
    units: tuple[Unit, ...]
    inputs: frozenset[int]
    outputs: frozenset[int]

    def to_dict(self) -> dict:
        return {"id": self.id, "level": self.level,
                "units": [list(u) for u in self.units],
                "inputs": sorted(self.inputs), "outputs": sorted(self.outputs)}


@dataclass(frozen=True)
class LayerProvenance:
    layer: int
    units: tuple[int, ...]
    labels: tuple[int, ...]
    k: int
    triggered: bool
    z_sep: float | None
    z_sin: float | None

    def to_dict(self) -> dict:
        return {"layer": self.layer, "units": list(self.units), "labels": list(self.labels),
                "k": self.k, "triggered": self.triggered, "z_sep": self.z_sep,
                "z_sin": self.z_sin}


@dataclass(frozen=True)
class ModuleHierarchy:
    modules: tuple[Module, ...]
    uses: frozenset[tuple[int, int]]
    provenance: tuple[LayerProvenance, ...] = ()

    def module_of(self) -> dict[Unit, int]:
        return {u: m.id for m in self.modules for u in m.units}

    def to_dict(self) -> dict:
        return {"modules": [m.to_dict() for m in self.modules],
                "uses": sorted([list(e) for e in self.uses]),
                "provenance": [p.to_dict() for p in self.provenance]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModuleHierarchy":
        mods = tuple(Module(m["id"], m["level"], tuple(tuple(u) for u in m["units"]),
                            frozenset(m["inputs"]), frozenset(m["outputs"]))
                     for m in d["modules"])
        prov = tuple(LayerProvenance(p["layer"], tuple(p["units"]), tuple(p["labels"]),
                                     p["k"], p["triggered"], p["z_sep"], p["z_sin"])
                     for p in d.get("provenance", []))
        return cls(mods, frozenset(tuple(e) for e in d["uses"]), prov)

    @classmethod
    def from_json(cls, text: str) -> "ModuleHierarchy":
        return cls.from_dict(json.loads(text))


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller key as root so results do not depend on call order
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def merge_layers(mlp: MaskedMlp, clusters: dict[int, dict[int, int]],
                 delta_m: float = DELTA_M, followers: dict[Unit, Unit] | None = None,
                 provenance: tuple[LayerProvenance, ...] = ()) -> ModuleHierarchy:
    """Build the module DAG from per-layer clusterings.

    ``clusters[layer]`` maps alive unit indices of the input and hidden
    layers to a cluster id local to the layer. ``followers`` maps units left
    out of clustering to a unit whose module they join; their edges do not
    count towards merge fractions. Output units are attached afterwards.
    """
    followers = followers or {}
    if not 0 < delta_m <= 1:
        raise ValueError("delta_m must lie in (0, 1]")
    L = mlp.n_layers
    uf = _UnionFind()
    unit_cluster: dict[Unit, tuple[int, int]] = {}
    for layer in range(L):
        for u in np.flatnonzero(_alive(mlp, layer)):
            if int(u) not in clusters.get(layer, {}) and (layer, int(u)) not in followers:
                raise ValueError(f"unit ({layer}, {int(u)}) has no cluster")
        for u, c in clusters.get(layer, {}).items():
            unit_cluster[(layer, u)] = (layer, c)
            uf.find((layer, c))
    # adjacent hidden/input layers: merge cluster pairs that talk mostly to each other
    for layer in range(L - 1):
        adj = adjacency(mlp, layer)
        counts: dict[tuple, int] = {}
        for u, v in zip(*np.nonzero(adj)):
            if (layer, int(u)) in followers or (layer + 1, int(v)) in followers:
                continue
            key = (unit_cluster[(layer, int(u))], unit_cluster[(layer + 1, int(v))])
            counts[key] = counts.get(key, 0) + 1
        out_tot: dict = {}
        in_tot: dict = {}
        for (ci, cj), e in counts.items():
            out_tot[ci] = out_tot.get(ci, 0) + e
            in_tot[cj] = in_tot.get(cj, 0) + e
        for (ci, cj), e in sorted(counts.items()):
            if e / out_tot[ci] >= delta_m and e / in_tot[cj] >= delta_m:
                uf.union(ci, cj)
    group: dict[Unit, object] = {u: uf.find(c) for u, c in unit_cluster.items()}
    for u, src in followers.items():
        group[u] = group[src]
    # output units join the module supplying enough of their in-edges
    adj = adjacency(mlp, L - 1)
    for j in range(mlp.widths[L]):
        srcs = np.flatnonzero(adj[:, j])
        tally: dict = {}
        for s in srcs:
            g = group[(L - 1, int(s))]
            tally[g] = tally.get(g, 0) + 1
        attach = None
        for g, cnt in sorted(tally.items()):
            if cnt / len(srcs) >= delta_m and (attach is None or cnt > tally[attach]):
                attach = g
        group[(L, j)] = attach if attach is not None else ("out", j)
    return _assemble(mlp, group, provenance)


def _unit_edges(mlp: MaskedMlp):
    for layer in range(mlp.n_layers):
        adj = adjacency(mlp, layer)
        for u, v in zip(*np.nonzero(adj)):
            yield (layer, int(u)), (layer + 1, int(v))


def _assemble(mlp: MaskedMlp, group: dict[Unit, object],
              provenance: tuple[LayerProvenance, ...]) -> ModuleHierarchy:
    # collapse uses-cycles so the module graph stays a DAG
    dag = nx.DiGraph()
    dag.add_nodes_from(set(group.values()))
    for u, v in _unit_edges(mlp):
        if group[u] != group[v]:
            dag.add_edge(group[u], group[v])
    rep = {}
    for comp in nx.strongly_connected_components(dag):
        for g in comp:
            rep[g] = comp
    members: dict[frozenset, list[Unit]] = {}
    for u, g in group.items():
        members.setdefault(frozenset(rep[g]), []).append(u)
    ordered = sorted(members.values(), key=lambda us: (min(us)[0], min(us)))
    modules, index = [], {}
    L = mlp.n_layers
    for mid, units in enumerate(ordered):
        units = sorted(units)
        for u in units:
            index[u] = mid
        modules.append(Module(mid, units[0][0], tuple(units),
                              frozenset(i for l, i in units if l == 0),
                              frozenset(i for l, i in units if l == L)))
    uses = {(index[u], index[v]) for u, v in _unit_edges(mlp) if index[u] != index[v]}
    return ModuleHierarchy(tuple(modules), frozenset(uses), provenance)


def detect(mlp: MaskedMlp, t_m: float = T_M, delta_m: float = DELTA_M) -> ModuleHierarchy:
    """Cluster every input and hidden layer, then merge across layers."""
    clusters: dict[int, dict[int, int]] = {}
    followers: dict[Unit, Unit] = {}
    provenance = []
    for layer in range(mlp.n_layers):
        feats = reachability_features(mlp, layer)
        units = np.array(feats.units, dtype=np.int64)
        live = feats.rows.any(axis=1)
        assign: dict[int, int] = {}
        next_id = 0
        if live.any():
            choice = choose_k(feats.rows[live], t_m)
            assign = {int(u): int(c) for u, c in zip(units[live], choice.labels)}
            next_id = choice.k
            provenance.append(LayerProvenance(layer, tuple(int(u) for u in units[live]),
                                              tuple(int(c) for c in choice.labels), choice.k,
                                              choice.triggered, choice.z_sep, choice.z_sin))
        # dead-end units follow the cluster sending them most in-edges, else stand alone
        for u in (int(u) for u in units[~live]):
            srcs = np.flatnonzero(adjacency(mlp, layer - 1)[:, u]) if layer else []
            tally: dict[int, list[int]] = {}
            for s in srcs:
                s = int(s)
                if (layer - 1, s) not in followers:
                    tally.setdefault(clusters[layer - 1][s], []).append(s)
            if tally:
                best = max(sorted(tally), key=lambda c: len(tally[c]))
                followers[(layer, u)] = (layer - 1, tally[best][0])
            else:
                assign[u] = next_id
                next_id += 1
        clusters[layer] = assign
    return merge_layers(mlp, clusters, delta_m, followers, tuple(provenance))
