import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiermod.boolean_graph import (FAMILIES, VALIDATION_FAMILIES, Edge, FunctionGraph,
                                   GenerationError, GraphError, ModularitySpec, Node,
                                   all_input_rows, depends_on, designated_inputs, evaluate,
                                   family_spec, generate, graph_from_dict, graph_to_dict,
                                   signature, truth_table)


def graph(n_in, gates, edges, n_out):
    """Inputs, then ``gates`` as (kind, gate) pairs; the last ``n_out`` are outputs."""
    nodes = [Node(i, "input") for i in range(n_in)]
    nodes += [Node(n_in + k, kind, g) for k, (kind, g) in enumerate(gates)]
    return FunctionGraph(n_in, n_out, tuple(nodes), tuple(Edge(*e) for e in edges))


def test_and_gate():
    g = graph(2, [("output", "AND")], [(0, 2), (1, 2)], 1)
    assert evaluate(g, (1, 1)) == (1,) and evaluate(g, (1, 0)) == (0,)


def test_or_with_negated_edge():
    g = graph(2, [("output", "OR")], [(0, 2, True), (1, 2)], 1)
    assert evaluate(g, (1, 0)) == (0,)


def test_identity_chain():
    g = graph(1, [("gate", "ID"), ("output", "ID")], [(0, 1), (1, 2)], 1)
    assert evaluate(g, (1,)) == (1,) and evaluate(g, (0,)) == (0,)


def test_evaluate_checks_input():
    g = graph(2, [("output", "AND")], [(0, 2), (1, 2)], 1)
    with pytest.raises(ValueError):
        evaluate(g, (1,))
    with pytest.raises(ValueError):
        evaluate(g, (1, 2))


def test_validation_rejects_bad_graphs():
    with pytest.raises(GraphError):  # ID gate with two in-edges
        graph(2, [("output", "ID")], [(0, 2), (1, 2)], 1)
    with pytest.raises(GraphError):  # backward edge
        graph(1, [("gate", "ID"), ("output", "ID")], [(0, 2), (2, 1)], 1)
    with pytest.raises(GraphError):  # gate that reaches no output
        graph(1, [("gate", "ID"), ("output", "ID")], [(0, 1), (0, 2)], 1)


def test_truth_tables():
    t = truth_table(graph(2, [("output", "AND")], [(0, 2), (1, 2)], 1))
    assert t.outputs[:, 0].tolist() == [0, 0, 0, 1]
    ident = graph(3, [("output", "ID")] * 3, [(0, 3), (1, 4), (2, 5)], 3)
    t = truth_table(ident)
    assert t.inputs.shape == (8, 3) and np.array_equal(t.inputs, t.outputs)


@given(st.integers(1, 10))
def test_row_i_is_binary_encoding_of_i(n):
    rows = all_input_rows(n)
    weights = 1 << np.arange(n - 1, -1, -1)
    assert np.array_equal(rows @ weights, np.arange(2**n))


def test_table_capacity_guard():
    n = 17
    nodes = tuple(Node(i, "input") for i in range(n)) + (Node(n, "output", "OR"),)
    edges = tuple(Edge(i, n) for i in range(n))
    with pytest.raises((GraphError, GenerationError)):
        truth_table(FunctionGraph(n, 1, nodes, edges))


def test_dense_table_shape():
    t = truth_table(generate(family_spec("dense"), 0))
    assert t.inputs.shape == (16, 4) and t.outputs.shape == (16, 4)


def test_reused_topology():
    g = generate(family_spec("reused", reuse=8), 0)
    assert g.n_inputs == 4 and g.n_outputs == 16
    gates = [m for n, m in zip(g.nodes, g.module_of) if n.kind == "gate"]
    assert sum(1 for m in gates if m[0] == 1) == 3
    assert sum(1 for m in gates if m[0] == 2) == 2
    dep = depends_on(truth_table(g))
    assert dep.all()  # every output depends on every input


@pytest.mark.parametrize("seed", range(5))
def test_separable_outputs_ignore_foreign_inputs(seed):
    g = generate(family_spec("separable"), seed)
    dep = depends_on(truth_table(g))
    # flip-sensitivity oracle, rows are inputs: y1,y2 see only x1,x2 and y3,y4 only x3,x4
    assert dep.shape == (4, 4)
    assert not dep[:2, 2:].any() and not dep[2:, :2].any()
    assert dep[:2, :2].all() and dep[2:, 2:].all()


@pytest.mark.parametrize("name", sorted(FAMILIES))
@pytest.mark.parametrize("seed", [1, 3])
def test_every_output_depends_on_its_designated_inputs(name, seed):
    spec = family_spec(name)
    g = generate(spec, seed)
    dep = depends_on(truth_table(g))
    for j, inputs in enumerate(designated_inputs(spec)):
        assert set(np.flatnonzero(dep[:, j])) == inputs


def test_dense_outputs_reach_all_inputs():
    assert depends_on(truth_table(generate(family_spec("dense"), 3))).all()


def test_generation_is_deterministic():
    spec = family_spec("separable_reused")
    assert graph_to_dict(generate(spec, 4)) == graph_to_dict(generate(spec, 4))


def test_invalid_specs():
    with pytest.raises(GenerationError):
        ModularitySpec("x", 4, (2,), 4, ((0, 1), ()), (2, 2), (2,))
    with pytest.raises(GenerationError):
        ModularitySpec("x", 4, (2,), 4, ((0, 1), (2,)), (2, 2), (2,))
    with pytest.raises(GenerationError):
        ModularitySpec("x", 4, (2,), 5, ((0, 1), (2, 3)), (2, 2), (2,))


def test_signatures():
    sep = signature(generate(family_spec("separable"), 0))
    assert len(sep.modules) == 2 and not sep.uses
    reused = signature(generate(family_spec("reused"), 0))
    level1 = [m for m in reused.modules if m.level == 1]
    assert len(level1) == 1
    assert sum(1 for a, _ in reused.uses if a == level1[0].id) == 2
    dense = signature(generate(family_spec("dense"), 0))
    assert len(dense.modules) == 1


def test_overlap_signature_has_shared_input_module():
    sig = signature(generate(family_spec("overlap", overlap=2), 0))
    shared = [m for m in sig.modules if m.level == 0]
    assert len(shared) == 1 and len(shared[0].inputs) == 2
    assert {b for a, b in sig.uses if a == shared[0].id} == {m.id for m in sig.modules if m.level == 1}


def test_shallow_signature_fuses_upper_levels():
    g = generate(family_spec("hierarchical"), 0)
    full = signature(g)
    assert max(m.level for m in full.modules) == 3
    two = signature(g, n_hidden=2)
    assert max(m.level for m in two.modules) == 2
    assert len(signature(g, n_hidden=1).modules) == 1


@pytest.mark.parametrize("name", VALIDATION_FAMILIES)
def test_json_round_trip(name):
    g = generate(family_spec(name), 2)
    d = graph_to_dict(g)
    back = graph_from_dict(json.loads(json.dumps(d)))
    assert graph_to_dict(back) == d
    assert truth_table(back) == truth_table(g)
