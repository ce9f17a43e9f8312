"""Boolean function graphs: representation, evaluation, generation, ground truth.

A function graph is a DAG whose nodes are inputs, gates (AND / OR / ID) and
outputs. Outputs carry a gate as well, so an output node may combine several
upstream gates. Edges either transfer a value or negate it.

Graphs are generated from a :class:`ModularitySpec`, which describes the
sub-function (module) structure level by level. Every family used by the
experiments has a constructor at the bottom of this module.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_INPUTS = 16
GATES = ("AND", "OR", "ID")
MAX_GENERATION_ATTEMPTS = 20000


class GraphError(ValueError):
    """Raised for structurally invalid function graphs."""


class GenerationError(ValueError):
    """Raised when a spec cannot be realised as a non-degenerate graph."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str  # "input" | "gate" | "output"
    gate: str | None = None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    negate: bool = False


@dataclass(frozen=True)
class ModularitySpec:
    """Module structure of a hierarchically modular Boolean function.

    ``levels[l]`` is the number of sub-functions at gate level ``l + 1``.
    ``input_partition[k]`` lists the inputs read by level-1 module ``k``;
    sets may overlap, and inputs read by several modules form a shared input
    module in the ground truth. ``reuse_counts[k]`` is the number of outputs
    fed by top-level module ``k``. ``widths[l]`` is the number of gates in each
    module at level ``l + 1``. ``consumes[l][k]`` lists the level-``l+1``
    modules read by module ``k`` at level ``l + 2``; ``None`` means all.
    """

    family: str
    n_inputs: int
    levels: tuple[int, ...]
    n_outputs: int
    input_partition: tuple[tuple[int, ...], ...]
    reuse_counts: tuple[int, ...]
    widths: tuple[int, ...]
    consumes: tuple[tuple[tuple[int, ...], ...], ...] | None = None

    def __post_init__(self) -> None:
        if not self.levels or any(c < 1 for c in self.levels):
            raise GenerationError("levels must be nonempty with counts >= 1")
        if len(self.widths) != len(self.levels) or any(w < 1 for w in self.widths):
            raise GenerationError("one positive width per level is required")
        if len(self.input_partition) != self.levels[0]:
            raise GenerationError("input_partition needs one entry per level-1 module")
        if any(len(p) == 0 for p in self.input_partition):
            raise GenerationError("a level-1 module was assigned zero inputs")
        covered = set(itertools.chain.from_iterable(self.input_partition))
        if covered != set(range(self.n_inputs)):
            raise GenerationError("input_partition must cover every input exactly")
        if len(self.reuse_counts) != self.levels[-1] or any(r < 1 for r in self.reuse_counts):
            raise GenerationError("reuse_counts needs a positive count per top module")
        if sum(self.reuse_counts) != self.n_outputs:
            raise GenerationError("reuse_counts must sum to n_outputs")
        if self.n_inputs > MAX_INPUTS:
            raise GenerationError(f"n_inputs > {MAX_INPUTS} is outside desk scale")
        if self.consumes is not None:
            if len(self.consumes) != len(self.levels) - 1:
                raise GenerationError("consumes needs one entry per level above the first")
            for lvl, table in enumerate(self.consumes):
                if len(table) != self.levels[lvl + 1]:
                    raise GenerationError("consumes entry has wrong module count")
                for srcs in table:
                    if not srcs or any(not 0 <= s < self.levels[lvl] for s in srcs):
                        raise GenerationError("consumes references a missing module")

    @property
    def gate_levels(self) -> int:
        return len(self.levels)

    def sources_of(self, level: int, module: int) -> tuple[int, ...]:
        """Lower-level modules read by ``module`` at 0-based ``level`` >= 1."""
        if self.consumes is None:
            return tuple(range(self.levels[level - 1]))
        return self.consumes[level - 1][module]

    def shared_inputs(self) -> tuple[int, ...]:
        counts: dict[int, int] = {}
        for part in self.input_partition:
            for i in part:
                counts[i] = counts.get(i, 0) + 1
        return tuple(sorted(i for i, c in counts.items() if c > 1))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n_inputs": self.n_inputs,
            "levels": list(self.levels),
            "n_outputs": self.n_outputs,
            "input_partition": [list(p) for p in self.input_partition],
            "reuse_counts": list(self.reuse_counts),
            "widths": list(self.widths),
            "consumes": None
            if self.consumes is None
            else [[list(s) for s in table] for table in self.consumes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModularitySpec":
        consumes = d.get("consumes")
        return cls(
            family=d.get("family", "custom"),
            n_inputs=int(d["n_inputs"]),
            levels=tuple(int(c) for c in d["levels"]),
            n_outputs=int(d["n_outputs"]),
            input_partition=tuple(tuple(int(i) for i in p) for p in d["input_partition"]),
            reuse_counts=tuple(int(r) for r in d["reuse_counts"]),
            widths=tuple(int(w) for w in d["widths"]),
            consumes=None
            if consumes is None
            else tuple(tuple(tuple(int(s) for s in srcs) for srcs in table) for table in consumes),
        )


@dataclass(frozen=True)
class FunctionGraph:
    n_inputs: int
    n_outputs: int
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    spec: ModularitySpec | None = None
    # node id -> (level index, module index); level 0 is the input layer
    module_of: tuple[tuple[int, int] | None, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        validate(self)

    @property
    def input_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "input"]

    @property
    def output_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "output"]

    def in_edges(self) -> dict[int, list[Edge]]:
        ins: dict[int, list[Edge]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            ins[e.dst].append(e)
        return ins

    def level_of(self) -> dict[int, int]:
        """Longest-path depth from the inputs."""
        ins = self.in_edges()
        level: dict[int, int] = {}
        for node in self.nodes:
            srcs = ins[node.id]
            level[node.id] = 0 if not srcs else 1 + max(level[e.src] for e in srcs)
        return level


def validate(graph: FunctionGraph) -> None:
    ids = [n.id for n in graph.nodes]
    if ids != list(range(len(ids))):
        raise GraphError("node ids must be dense integers in order")
    kinds = [n.kind for n in graph.nodes]
    if kinds.count("input") != graph.n_inputs or kinds.count("output") != graph.n_outputs:
        raise GraphError("input/output counts do not match the node list")
    if kinds[: graph.n_inputs] != ["input"] * graph.n_inputs:
        raise GraphError("inputs must come first")
    n = len(ids)
    indeg = [0] * n
    outdeg = [0] * n
    for e in graph.edges:
        if not (0 <= e.src < n and 0 <= e.dst < n):
            raise GraphError(f"edge {e} references a missing node")
        if e.src >= e.dst:
            raise GraphError("edges must point forward in topological id order")
        indeg[e.dst] += 1
        outdeg[e.src] += 1
    for node in graph.nodes:
        if node.kind == "input":
            if indeg[node.id]:
                raise GraphError(f"input {node.id} has in-edges")
            if node.gate is not None:
                raise GraphError(f"input {node.id} carries a gate")
            continue
        if node.kind not in ("gate", "output"):
            raise GraphError(f"unknown node kind {node.kind!r}")
        if node.gate not in GATES:
            raise GraphError(f"node {node.id} has unknown gate {node.gate!r}")
        if node.gate == "ID" and indeg[node.id] != 1:
            raise GraphError(f"ID node {node.id} needs exactly one in-edge")
        if indeg[node.id] < 1:
            raise GraphError(f"node {node.id} has no in-edges")
        if node.kind == "output" and outdeg[node.id]:
            raise GraphError(f"output {node.id} has out-edges")
    # every gate must lie on an input -> output path
    succ: dict[int, list[int]] = {i: [] for i in ids}
    for e in graph.edges:
        succ[e.src].append(e.dst)
    reaches_out = [False] * n
    for node in reversed(graph.nodes):
        reaches_out[node.id] = node.kind == "output" or any(reaches_out[d] for d in succ[node.id])
    for node in graph.nodes:
        if node.kind == "gate" and not reaches_out[node.id]:
            raise GraphError(f"gate {node.id} does not reach any output")


def _node_values(graph: FunctionGraph, inputs: np.ndarray) -> list[np.ndarray]:
    """Values of every node for a (rows, n_inputs) boolean array."""
    ins = graph.in_edges()
    values: list[np.ndarray] = []
    for node in graph.nodes:
        if node.kind == "input":
            values.append(inputs[:, node.id].astype(bool))
            continue
        terms = [values[e.src] ^ e.negate for e in ins[node.id]]
        if node.gate == "AND":
            values.append(np.logical_and.reduce(terms))
        elif node.gate == "OR":
            values.append(np.logical_or.reduce(terms))
        else:
            values.append(terms[0])
    return values


def evaluate(graph: FunctionGraph, bits: Sequence[int]) -> tuple[int, ...]:
    if len(bits) != graph.n_inputs:
        raise GraphError(f"expected {graph.n_inputs} input bits, got {len(bits)}")
    if any(b not in (0, 1) for b in bits):
        raise GraphError("input bits must be 0 or 1")
    row = np.asarray(bits, dtype=bool).reshape(1, -1)
    values = _node_values(graph, row)
    return tuple(int(values[o][0]) for o in graph.output_ids)


def all_input_rows(n: int) -> np.ndarray:
    """All 2**n bit rows; row i is the binary encoding of i with x1 as MSB."""
    idx = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class TruthTable:
    inputs: np.ndarray  # (2**n, n) uint8
    outputs: np.ndarray  # (2**n, m) uint8

    def __post_init__(self) -> None:
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError("row counts differ")
        for arr in (self.inputs, self.outputs):
            if arr.size and not np.isin(arr, (0, 1)).all():
                raise ValueError("truth table entries must be bits")

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.outputs.shape[1]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, TruthTable)
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.outputs, other.outputs)
        )


def truth_table(graph: FunctionGraph) -> TruthTable:
    if graph.n_inputs > MAX_INPUTS:
        raise GraphError(f"truth tables are capped at {MAX_INPUTS} inputs")
    rows = all_input_rows(graph.n_inputs)
    values = _node_values(graph, rows.astype(bool))
    outs = np.stack([values[o] for o in graph.output_ids], axis=1).astype(np.uint8)
    return TruthTable(rows, outs)


def depends_on(table: TruthTable) -> np.ndarray:
    """(n_inputs, n_outputs) boolean: does output j ever change when input i flips."""
    n = table.n_inputs
    dep = np.zeros((n, table.n_outputs), dtype=bool)
    rows = np.arange(2**n)
    for i in range(n):
        flipped = rows ^ (1 << (n - 1 - i))
        dep[i] = (table.outputs != table.outputs[flipped]).any(axis=0)
    return dep


# ---------------------------------------------------------------------------
# generation


class _Builder:
    def __init__(self, n_inputs: int):
        self.nodes: list[Node] = [Node(i, "input") for i in range(n_inputs)]
        self.edges: list[Edge] = []
        self.module_of: list[tuple[int, int] | None] = [(0, -1)] * n_inputs

    def add(self, kind: str, gate: str, srcs: Iterable[int], rng: random.Random,
            module: tuple[int, int] | None) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(nid, kind, gate))
        for s in srcs:
            self.edges.append(Edge(s, nid, rng.random() < 0.5))
        self.module_of.append(module)
        return nid


def _pick_gate(n_srcs: int, rng: random.Random) -> str:
    return "ID" if n_srcs == 1 else rng.choice(("AND", "OR"))


def _build_once(spec: ModularitySpec, rng: random.Random):
    b = _Builder(spec.n_inputs)
    reach = {i: {i} for i in range(spec.n_inputs)}
    module_gates: list[list[list[int]]] = []
    for lvl, count in enumerate(spec.levels):
        level_gates = []
        for k in range(count):
            if lvl == 0:
                srcs = list(spec.input_partition[k])
            else:
                srcs = [g for m in spec.sources_of(lvl, k) for g in module_gates[lvl - 1][m]]
            gates = []
            for _ in range(spec.widths[lvl]):
                chosen = srcs
                if lvl > 0 and len(srcs) > 2:
                    # a random subset keeps sibling gates from being nested;
                    # redraw until it still sees every input of the module
                    need = set().union(*(reach[s] for s in srcs))
                    while True:
                        size = rng.randint(2, len(srcs))
                        chosen = sorted(rng.sample(srcs, size))
                        if set().union(*(reach[s] for s in chosen)) == need:
                            break
                nid = b.add("gate", _pick_gate(len(chosen), rng), chosen, rng, (lvl + 1, k))
                reach[nid] = set().union(*(reach[s] for s in chosen))
                gates.append(nid)
            level_gates.append(gates)
        module_gates.append(level_gates)
    top = module_gates[-1]
    outputs_of: list[list[int]] = []
    for k, reuse in enumerate(spec.reuse_counts):
        srcs = top[k]
        outs = [b.add("output", _pick_gate(len(srcs), rng), srcs, rng, (len(spec.levels), k))
                for _ in range(reuse)]
        outputs_of.append(outs)
    # outputs must sit at the end of the id order; re-index
    gate_ids = [n.id for n in b.nodes if n.kind == "gate"]
    out_ids = [o for outs in outputs_of for o in outs]
    order = list(range(spec.n_inputs)) + gate_ids + out_ids
    remap = {old: new for new, old in enumerate(order)}
    nodes = tuple(Node(remap[b.nodes[old].id], b.nodes[old].kind, b.nodes[old].gate) for old in order)
    edges = tuple(sorted((Edge(remap[e.src], remap[e.dst], e.negate) for e in b.edges),
                         key=lambda e: (e.dst, e.src)))
    module_of = tuple(b.module_of[old] for old in order)
    return FunctionGraph(spec.n_inputs, spec.n_outputs, nodes, edges, spec, module_of)


def designated_inputs(spec: ModularitySpec) -> list[set[int]]:
    """Inputs each output must depend on, in output order."""
    reach = [set(p) for p in spec.input_partition]
    for lvl in range(1, len(spec.levels)):
        reach = [set().union(*(reach[m] for m in spec.sources_of(lvl, k)))
                 for k in range(spec.levels[lvl])]
    out: list[set[int]] = []
    for k, reuse in enumerate(spec.reuse_counts):
        out.extend([reach[k]] * reuse)
    return out


def _acceptable(graph: FunctionGraph, spec: ModularitySpec) -> bool:
    table = truth_table(graph)
    dep = depends_on(table)
    for j, needed in enumerate(designated_inputs(spec)):
        if set(np.flatnonzero(dep[:, j]).tolist()) != needed:
            return False
    # no two distinct sub-functions may compute the same set of columns
    rows = all_input_rows(spec.n_inputs).astype(bool)
    values = _node_values(graph, rows)
    signatures: dict[tuple[int, int], frozenset] = {}
    for nid, mod in enumerate(graph.module_of):
        if mod is None or mod[0] == 0 or graph.nodes[nid].kind != "gate":
            continue
        signatures.setdefault(mod, frozenset())
        signatures[mod] = signatures[mod] | {values[nid].tobytes()}
    seen = list(signatures.values())
    if len(set(seen)) != len(seen):
        return False
    # gates inside one module must be pairwise distinct, and nothing constant
    for (lvl, _), cols in signatures.items():
        if len(cols) != spec.widths[lvl - 1]:
            return False
    # sibling single-gate modules above level 1 read the same sources; if their
    # columns were nested (up to complement) one threshold unit could serve both
    for lvl in range(2, len(spec.levels) + 1):
        if spec.widths[lvl - 1] != 1:
            continue
        cols = [values[nid] for nid, mod in enumerate(graph.module_of)
                if mod is not None and mod[0] == lvl and graph.nodes[nid].kind == "gate"]
        for a, b in itertools.combinations(cols, 2):
            if _nested(a, b):
                return False
    for nid, node in enumerate(graph.nodes):
        if node.kind != "input":
            v = values[nid]
            if v.all() or not v.any():
                return False
    return True


def _nested(a: np.ndarray, b: np.ndarray) -> bool:
    return bool((a <= b).all() or (b <= a).all() or not (a & b).any() or (a | b).all())


def generate(spec: ModularitySpec, seed: int = 0) -> FunctionGraph:
    """Random gate/negation assignment on the modularity topology, retried until
    every output depends on exactly its designated inputs."""
    rng = random.Random(seed)
    for _ in range(MAX_GENERATION_ATTEMPTS):
        try:
            graph = _build_once(spec, rng)
        except GraphError:
            continue  # some gate ended up unused
        if _acceptable(graph, spec):
            return graph
    raise GenerationError(f"no non-degenerate realisation of {spec.family} found")


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class SigModule:
    id: int
    level: int
    inputs: frozenset[int]
    outputs: frozenset[int]


@dataclass(frozen=True)
class HierarchySignature:
    modules: tuple[SigModule, ...]
    uses: frozenset[tuple[int, int]]


def signature(graph: FunctionGraph, spec: ModularitySpec | None = None,
              n_hidden: int | None = None) -> HierarchySignature:
    """Ground-truth module DAG.

    Shared inputs form a level-0 module used by every module that reads them.
    With ``n_hidden`` below the graph's gate-level count, every level at or
    above ``n_hidden`` is fused into one module, which is the structure a
    network of that depth can express.
    """
    spec = spec or graph.spec
    if spec is None:
        raise GraphError("graph carries no spec")
    shared = set(spec.shared_inputs())
    keys: list[tuple[int, int]] = []
    for lvl, count in enumerate(spec.levels):
        keys.extend((lvl + 1, k) for k in range(count))
    fuse_from = None
    if n_hidden is not None and n_hidden < spec.gate_levels:
        fuse_from = max(n_hidden, 1)

    def canon(key: tuple[int, int]) -> tuple[int, int]:
        if fuse_from is not None and key[0] >= fuse_from:
            return (fuse_from, 0)
        return key

    owned_in: dict[tuple[int, int], set[int]] = {}
    owned_out: dict[tuple[int, int], set[int]] = {}
    for key in keys:
        owned_in.setdefault(canon(key), set())
        owned_out.setdefault(canon(key), set())
    for k, part in enumerate(spec.input_partition):
        owned_in[canon((1, k))] |= set(part) - shared
    j = 0
    top = len(spec.levels)
    for k, reuse in enumerate(spec.reuse_counts):
        owned_out[canon((top, k))] |= set(range(j, j + reuse))
        j += reuse
    raw_uses: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    for lvl in range(1, len(spec.levels)):
        for k in range(spec.levels[lvl]):
            for src in spec.sources_of(lvl, k):
                a, b = canon((lvl, src)), canon((lvl + 1, k))
                if a != b:
                    raw_uses.add((a, b))
    ordered = sorted(owned_in)
    modules: list[SigModule] = []
    index: dict[tuple[int, int], int] = {}
    if shared:
        modules.append(SigModule(0, 0, frozenset(shared), frozenset()))
    for key in ordered:
        index[key] = len(modules)
        modules.append(SigModule(len(modules), key[0], frozenset(owned_in[key]),
                                 frozenset(owned_out[key])))
    uses = {(index[a], index[b]) for a, b in raw_uses}
    if shared:
        for k, part in enumerate(spec.input_partition):
            if shared & set(part):
                uses.add((0, index[canon((1, k))]))
    return HierarchySignature(tuple(modules), frozenset(uses))


# ---------------------------------------------------------------------------
# families


def separable_spec() -> ModularitySpec:
    return ModularitySpec("separable", 4, (2,), 4, ((0, 1), (2, 3)), (2, 2), (2,))


def reused_spec(reuse: int = 8) -> ModularitySpec:
    if not 1 <= reuse <= 8:
        raise GenerationError("reuse count must be in 1..8")
    return ModularitySpec("reused", 4, (1, 2), 2 * reuse, ((0, 1, 2, 3),), (reuse, reuse), (3, 1))


def separable_reused_spec(reuse: int = 2) -> ModularitySpec:
    return ModularitySpec("separable_reused", 6, (3,), 3 * reuse, ((0, 1), (2, 3), (4, 5)),
                          (reuse,) * 3, (1,))


def dense_spec() -> ModularitySpec:
    return ModularitySpec("dense", 4, (1,), 4, ((0, 1, 2, 3),), (4,), (3,))


def overlap_spec(overlap: int = 0, reuse: int = 4) -> ModularitySpec:
    """Two sub-functions over four inputs each, sharing ``overlap`` of them."""
    if not 0 <= overlap <= 4:
        raise GenerationError("overlap must be in 0..4")
    own = 4 - overlap
    a = tuple(range(own))
    b = tuple(range(own, 2 * own))
    shared = tuple(range(2 * own, 2 * own + overlap))
    return ModularitySpec("overlap", 2 * own + overlap, (2,), 2 * reuse,
                          (a + shared, b + shared), (reuse, reuse), (1,))


def hierarchical_spec(reuse: int = 2) -> ModularitySpec:
    """Two separable modules feeding one intermediate module that is reused
    by two output modules."""
    return ModularitySpec("hierarchical", 4, (2, 1, 2), 2 * reuse, ((0, 1), (2, 3)),
                          (reuse, reuse), (2, 3, 1))


FAMILIES = {
    "separable": separable_spec,
    "reused": reused_spec,
    "separable_reused": separable_reused_spec,
    "dense": dense_spec,
    "overlap": overlap_spec,
    "hierarchical": hierarchical_spec,
}

VALIDATION_FAMILIES = ("separable", "reused", "separable_reused", "dense")


def family_spec(name: str, **params) -> ModularitySpec:
    try:
        return FAMILIES[name](**params)
    except KeyError:
        raise GenerationError(f"unknown family {name!r}") from None


# ---------------------------------------------------------------------------
# serialization


def graph_to_dict(graph: FunctionGraph) -> dict:
    nodes = []
    for n in graph.nodes:
        d = {"id": n.id, "kind": n.kind}
        if n.gate is not None:
            d["gate"] = n.gate
        nodes.append(d)
    out = {
        "n_inputs": graph.n_inputs,
        "n_outputs": graph.n_outputs,
        "nodes": nodes,
        "edges": [{"src": e.src, "dst": e.dst, "negate": e.negate} for e in graph.edges],
        "spec": None if graph.spec is None else graph.spec.to_dict(),
    }
    if graph.module_of is not None:
        out["module_of"] = [None if m is None else list(m) for m in graph.module_of]
    return out


def graph_from_dict(d: dict) -> FunctionGraph:
    nodes = tuple(Node(int(n["id"]), n["kind"], n.get("gate")) for n in d["nodes"])
    edges = tuple(Edge(int(e["src"]), int(e["dst"]), bool(e["negate"])) for e in d["edges"])
    spec = None if d.get("spec") is None else ModularitySpec.from_dict(d["spec"])
    module_of = d.get("module_of")
    if module_of is not None:
        module_of = tuple(None if m is None else (int(m[0]), int(m[1])) for m in module_of)
    return FunctionGraph(int(d["n_inputs"]), int(d["n_outputs"]), nodes, edges, spec, module_of)
