import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morphovox.cppn import (ACTIVATION_NAMES, MUTATION_OPERATORS, CppnGenome, Edge, Node,
                            evaluate_network, express_controller, express_shape, mutate,
                            network_inputs, random_genome, rest_length_from_output,
                            reweight_edge)
from morphovox.errors import DomainError, MalformedGenomeError
from morphovox.morphology import DESK_QUADRUPED, PAPER_QUADRUPED, build_quadruped

PAPER_BODY = build_quadruped(PAPER_QUADRUPED)
DESK_BODY = build_quadruped(DESK_QUADRUPED)


def _inputs():
    return tuple(Node(k, "identity", "input") for k in range(5))


def _genome(role="controller", weights=(0, 0, 0, 0, 0), act="sin"):
    nodes = _inputs() + (Node(5, act, "output"),)
    edges = tuple(Edge(k, 5, float(w)) for k, w in enumerate(weights))
    return CppnGenome(nodes, edges, role)


def _acyclic(genome):
    try:
        genome.order
    except MalformedGenomeError:
        return False
    return True


# evaluation

def test_zero_weights_give_constant_output():
    g = _genome(act="neg_abs")
    rng = np.random.default_rng(0)
    outs = {evaluate_network(g, rng.uniform(-1, 1, 5)) for _ in range(20)}
    assert outs == {math.tanh(0.0)}


def test_evaluation_is_pure():
    g = random_genome("controller", np.random.default_rng(1))
    x = [0.1, -0.3, 0.5, 0.6, 1.0]
    assert evaluate_network(g, x) == evaluate_network(g, x)


def test_known_output():
    g = _genome(weights=(0.5, 0, 0, 0, 0.25), act="square")
    x = [0.4, 0, 0, 0, 1.0]
    assert evaluate_network(g, x) == pytest.approx(math.tanh((0.5 * 0.4 + 0.25) ** 2))


@pytest.mark.parametrize("seed", range(10))
def test_random_outputs_in_range(seed):
    rng = np.random.default_rng(seed)
    g = random_genome("shape", rng)
    for _ in range(5):
        g = mutate(g, rng)
    for x in rng.uniform(-1, 1, size=(100, 5)):
        assert -1.0 <= evaluate_network(g, x) <= 1.0


def test_cycle_is_malformed():
    nodes = _inputs() + (Node(5, "sin", "output"), Node(6, "abs", "hidden"),
                         Node(7, "abs", "hidden"))
    edges = (Edge(0, 6, 0.5), Edge(6, 7, 0.5), Edge(7, 6, 0.5), Edge(7, 5, 0.5))
    g = CppnGenome(nodes, edges, "controller")
    with pytest.raises(MalformedGenomeError):
        evaluate_network(g, [0, 0, 0, 0, 1])


def test_genome_invariants():
    with pytest.raises(MalformedGenomeError):
        _genome(weights=(1.5, 0, 0, 0, 0))
    with pytest.raises(MalformedGenomeError):
        CppnGenome(_inputs()[:4] + (Node(5, "sin", "output"),), (), "controller")
    with pytest.raises(MalformedGenomeError):
        CppnGenome(_inputs() + (Node(4, "sin", "output"),), (), "controller")
    with pytest.raises(MalformedGenomeError):
        _genome(role="gait")


# expression

def test_inputs_are_normalised():
    cells, rows = network_inputs(PAPER_BODY)
    assert len(cells) == 140
    assert np.allclose(rows[:, :3].mean(axis=0), 0.0, atol=1e-12)
    assert np.abs(rows[:, :3]).max() == 1.0
    assert np.all(rows[:, 4] == 1.0)
    assert np.allclose(rows[:, 3], np.linalg.norm(rows[:, :3], axis=1))


def test_zero_genome_gives_zero_phases():
    c = express_controller(_genome(), PAPER_BODY)
    assert set(c.phase.values()) == {0.0}
    assert len(c.phase) == 140
    assert set(c.phase) == set(PAPER_BODY.occupied)


def test_saturated_output_gives_full_turn():
    # forty parallel bias paths drive tanh to exactly 1.0
    nodes = _inputs() + (Node(5, "abs", "output"),) + tuple(
        Node(10 + k, "abs", "hidden") for k in range(40))
    edges = tuple(Edge(4, 10 + k, 1.0) for k in range(40)) + tuple(
        Edge(10 + k, 5, 1.0) for k in range(40))
    g = CppnGenome(nodes, edges, "controller")
    assert set(express_controller(g, PAPER_BODY).phase.values()) == {2 * math.pi}


def test_shape_mapping_endpoints():
    assert rest_length_from_output(-1.0) == 0.25
    assert rest_length_from_output(1.0) == 2.0
    assert rest_length_from_output(0.0) == 1.125


def test_role_mismatch():
    with pytest.raises(DomainError):
        express_shape(_genome("controller"), DESK_BODY)
    with pytest.raises(DomainError):
        express_controller(_genome("shape"), DESK_BODY)


def test_mirrored_inputs_agree():
    # equal input vectors give equal outputs, whatever the voxel
    g = random_genome("shape", np.random.default_rng(4))
    cells, rows = network_inputs(PAPER_BODY)
    s = express_shape(g, PAPER_BODY)
    seen = {}
    for c, r in zip(cells, rows):
        key = tuple(np.round(r, 12))
        if key in seen:
            assert s.rest_length[c] == seen[key]
        seen[key] = s.rest_length[c]


# construction and mutation

def test_random_genome_topology(rng):
    g = random_genome("controller", rng)
    assert sum(n.kind == "input" for n in g.nodes) == 5
    assert sum(n.kind == "output" for n in g.nodes) == 1
    assert len(g.edges) == 5 and not g.hidden_nodes
    assert g.output_node.activation in ACTIVATION_NAMES


def test_random_genomes_differ():
    hashes = {random_genome("shape", np.random.default_rng(s)).content_hash for s in range(100)}
    assert len(hashes) == 100


def test_reweight_clamps():
    g = _genome(weights=(0.9, 0, 0, 0, 0))
    assert reweight_edge(g, 0, 0.5).edges[0].weight == 1.0
    assert reweight_edge(g, 0, -2.5).edges[0].weight == -1.0


def test_remove_node_without_hidden_is_resampled():
    g = random_genome("controller", np.random.default_rng(0))
    rng = np.random.default_rng(7)
    for _ in range(20):
        child = mutate(g, rng, operator="remove_node")
        assert child.metadata["mutation"] != "remove_node"
        assert child.content_hash != g.content_hash


@pytest.mark.parametrize("op", MUTATION_OPERATORS)
def test_each_operator_changes_the_genome(op):
    rng = np.random.default_rng(3)
    g = random_genome("controller", rng)
    g = mutate(g, rng, operator="add_node")
    child = mutate(g, rng, operator=op)
    assert child.content_hash != g.content_hash
    assert _acyclic(child)


def test_unknown_operator():
    with pytest.raises(DomainError):
        mutate(_genome(), np.random.default_rng(0), operator="crossover")


def test_mutation_chain_safety():
    rng = np.random.default_rng(11)
    g = random_genome("shape", rng)
    for _ in range(1000):
        g = mutate(g, rng)
        assert _acyclic(g)
        assert all(-1.0 <= e.weight <= 1.0 for e in g.edges)
    b = express_shape(g, DESK_BODY).rest_length.values()
    assert 0.25 <= min(b) and max(b) <= 2.0


@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_mutation_preserves_io_nodes(seed, n):
    rng = np.random.default_rng(seed)
    g = random_genome("controller", rng)
    for _ in range(n):
        g = mutate(g, rng)
    assert [n.id for n in g.nodes if n.kind == "input"] == [0, 1, 2, 3, 4]
    assert g.output_node.id == 5
    phases = express_controller(g, DESK_BODY).phase.values()
    assert all(-2 * math.pi <= p <= 2 * math.pi for p in phases)


def test_serialization_round_trip(rng):
    g = random_genome("shape", rng)
    for _ in range(10):
        g = mutate(g, rng)
    back = CppnGenome.from_dict(g.to_dict())
    assert back == g and back.content_hash == g.content_hash
    assert CppnGenome.from_dict(json.loads(g.to_json())) == g
