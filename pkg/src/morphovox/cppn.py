"""CPPN genomes mapping voxel coordinates to phase offsets or rest lengths.

A genome is an immutable feed-forward graph: five input nodes
(x, y, z, d, bias), any number of hidden nodes and one output node.  The
output is squashed onto [-1, 1] by ``tanh`` and then mapped affinely onto
the role's range.
"""

from __future__ import annotations

import graphlib
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Optional

import numpy as np

from .errors import DomainError, MalformedGenomeError
from .physics import MAX_REST_LENGTH, MIN_REST_LENGTH

ROLES = ("controller", "shape")
INPUT_NAMES = ("x", "y", "z", "d", "bias")
N_INPUTS = len(INPUT_NAMES)
OUTPUT_ID = N_INPUTS

_NODE_CLIP = 1e12


def _sqrt_abs(v):
    return np.sqrt(np.abs(v))


_BASE = {
    "sin": np.sin,
    "abs": np.abs,
    "square": np.square,
    "sqrt_abs": _sqrt_abs,
}
ACTIVATIONS = {name: fn for name, fn in _BASE.items()}
ACTIVATIONS.update({f"neg_{name}": (lambda f: lambda v: -f(v))(fn) for name, fn in _BASE.items()})
ACTIVATION_NAMES = tuple(ACTIVATIONS)

MUTATION_OPERATORS = (
    "add_node", "add_edge", "remove_node", "remove_edge", "reweight_edge", "swap_activation",
)
REWEIGHT_SIGMA = 0.5


@dataclass(frozen=True)
class Node:
    id: int
    activation: str
    kind: str  # "input", "hidden" or "output"


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    weight: float


@dataclass(frozen=True)
class CppnGenome:
    nodes: tuple
    edges: tuple
    output_role: str
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.output_role not in ROLES:
            raise MalformedGenomeError(f"unknown output role {self.output_role!r}")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise MalformedGenomeError("duplicate node ids")
        inputs = [n for n in self.nodes if n.kind == "input"]
        outputs = [n for n in self.nodes if n.kind == "output"]
        if len(inputs) != N_INPUTS or len(outputs) != 1:
            raise MalformedGenomeError("genome needs 5 input nodes and 1 output node")
        known = set(ids)
        for e in self.edges:
            if e.source not in known or e.target not in known:
                raise MalformedGenomeError(f"edge {e.source}->{e.target} references a missing node")
            if not -1.0 <= e.weight <= 1.0:
                raise MalformedGenomeError(f"edge weight {e.weight} outside [-1, 1]")
        for n in self.nodes:
            if n.kind != "input" and n.activation not in ACTIVATIONS:
                raise MalformedGenomeError(f"unknown activation {n.activation!r}")

    @property
    def output_node(self) -> Node:
        return next(n for n in self.nodes if n.kind == "output")

    @property
    def hidden_nodes(self) -> list:
        return [n for n in self.nodes if n.kind == "hidden"]

    @cached_property
    def order(self) -> list:
        """Node ids in a topological order; raises on cycles."""
        graph = {n.id: set() for n in self.nodes}
        for e in self.edges:
            graph[e.target].add(e.source)
        try:
            return list(graphlib.TopologicalSorter(graph).static_order())
        except graphlib.CycleError as exc:
            raise MalformedGenomeError(f"genome graph has a cycle: {exc.args[1]}") from None

    def to_dict(self) -> dict:
        return {
            "role": self.output_role,
            "nodes": [[n.id, n.activation, n.kind] for n in self.nodes],
            "edges": [[e.source, e.target, e.weight] for e in self.edges],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CppnGenome":
        nodes = tuple(Node(int(i), str(a), str(k)) for i, a, k in data["nodes"])
        edges = tuple(Edge(int(s), int(t), float(w)) for s, t, w in data["edges"])
        return cls(nodes, edges, data["role"], dict(data.get("metadata", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @cached_property
    def content_hash(self) -> str:
        """Digest of the graph and role (metadata excluded)."""
        body = {k: v for k, v in self.to_dict().items() if k != "metadata"}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class Controller:
    """Phase offset per voxel (rad) plus the shared oscillation settings."""

    phase: dict
    amplitude: float = 0.145
    frequency: float = 5.0


@dataclass(frozen=True)
class Shape:
    """Resting beam length per voxel (cm)."""

    rest_length: dict

    @classmethod
    def nominal(cls, structure, length: float = 1.0) -> "Shape":
        return cls({c: length for c in _cells(structure)})


def _cells(structure) -> list:
    return sorted(tuple(c) for c in getattr(structure, "occupied", structure))


def evaluate_batch(genome: CppnGenome, inputs: np.ndarray) -> np.ndarray:
    """Squashed network output for each row of an (n, 5) input array."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != N_INPUTS:
        raise DomainError(f"expected {N_INPUTS} inputs per row, got {inputs.shape[1]}")
    kinds = {n.id: n for n in genome.nodes}
    incoming = {n.id: [] for n in genome.nodes}
    for e in genome.edges:
        incoming[e.target].append(e)
    values = {}
    for node_id in genome.order:
        node = kinds[node_id]
        if node.kind == "input":
            values[node_id] = inputs[:, node_id]
            continue
        total = np.zeros(inputs.shape[0])
        for e in incoming[node_id]:
            total = total + e.weight * values[e.source]
        out = ACTIVATIONS[node.activation](total)
        values[node_id] = np.clip(np.nan_to_num(out, nan=0.0), -_NODE_CLIP, _NODE_CLIP)
    return np.tanh(values[genome.output_node.id])


def evaluate_network(genome: CppnGenome, inputs) -> float:
    """Squashed output in [-1, 1] for a single (x, y, z, d, bias) vector."""
    return float(evaluate_batch(genome, np.asarray(inputs, dtype=float).reshape(1, -1))[0])


def network_inputs(structure) -> tuple:
    """Voxel list and the (n, 5) input rows for a structure.

    Coordinates are centred on the structure centroid and divided by the
    largest absolute offset along each axis.
    """
    cells = _cells(structure)
    c = np.array(cells, dtype=float)
    centred = c - c.mean(axis=0)
    scale = np.abs(centred).max(axis=0)
    scale[scale == 0] = 1.0
    xyz = centred / scale
    d = np.sqrt((xyz**2).sum(axis=1))
    rows = np.column_stack([xyz, d, np.ones(len(cells))])
    return cells, rows


def phase_from_output(raw):
    return 2.0 * math.pi * raw


def rest_length_from_output(raw):
    return MIN_REST_LENGTH + (raw + 1.0) / 2.0 * (MAX_REST_LENGTH - MIN_REST_LENGTH)


def _check_role(genome, role):
    if genome.output_role != role:
        raise DomainError(f"genome encodes a {genome.output_role}, not a {role}")


def express_controller(genome: CppnGenome, structure, amplitude: float = 0.145,
                       frequency: float = 5.0) -> Controller:
    _check_role(genome, "controller")
    cells, rows = network_inputs(structure)
    raw = evaluate_batch(genome, rows)
    return Controller({c: float(phase_from_output(r)) for c, r in zip(cells, raw)},
                      amplitude, frequency)


def express_shape(genome: CppnGenome, structure) -> Shape:
    _check_role(genome, "shape")
    cells, rows = network_inputs(structure)
    raw = evaluate_batch(genome, rows)
    return Shape({c: float(rest_length_from_output(r)) for c, r in zip(cells, raw)})


def _input_nodes():
    return tuple(Node(k, "identity", "input") for k in range(N_INPUTS))


def random_genome(role: str, rng: np.random.Generator) -> CppnGenome:
    """Inputs wired straight to the output with uniform weights."""
    if role not in ROLES:
        raise DomainError(f"unknown role {role!r}")
    act = ACTIVATION_NAMES[rng.integers(len(ACTIVATION_NAMES))]
    nodes = _input_nodes() + (Node(OUTPUT_ID, act, "output"),)
    weights = rng.uniform(-1.0, 1.0, size=N_INPUTS)
    edges = tuple(Edge(k, OUTPUT_ID, float(w)) for k, w in enumerate(weights))
    return CppnGenome(nodes, edges, role)


def _reaches(genome: CppnGenome, start: int, goal: int) -> bool:
    succ = {}
    for e in genome.edges:
        succ.setdefault(e.source, []).append(e.target)
    stack, seen = [start], {start}
    while stack:
        u = stack.pop()
        if u == goal:
            return True
        for v in succ.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return False


def reweight_edge(genome: CppnGenome, index: int, delta: float) -> CppnGenome:
    """Add ``delta`` to one edge weight, clamped to [-1, 1]."""
    e = genome.edges[index]
    w = min(1.0, max(-1.0, e.weight + delta))
    edges = list(genome.edges)
    edges[index] = Edge(e.source, e.target, w)
    return replace(genome, edges=tuple(edges))


def _add_node(genome, rng):
    if not genome.edges:
        return None
    k = int(rng.integers(len(genome.edges)))
    e = genome.edges[k]
    new_id = max(n.id for n in genome.nodes) + 1
    act = ACTIVATION_NAMES[rng.integers(len(ACTIVATION_NAMES))]
    edges = list(genome.edges[:k]) + list(genome.edges[k + 1:])
    edges += [Edge(e.source, new_id, 1.0), Edge(new_id, e.target, e.weight)]
    return replace(genome, nodes=genome.nodes + (Node(new_id, act, "hidden"),),
                   edges=tuple(edges))


def _add_edge(genome, rng):
    existing = {(e.source, e.target) for e in genome.edges}
    candidates = []
    for u in genome.nodes:
        if u.kind == "output":
            continue
        for v in genome.nodes:
            if v.kind == "input" or u.id == v.id or (u.id, v.id) in existing:
                continue
            if _reaches(genome, v.id, u.id):
                continue
            candidates.append((u.id, v.id))
    if not candidates:
        return None
    u, v = candidates[int(rng.integers(len(candidates)))]
    w = float(rng.uniform(-1.0, 1.0))
    return replace(genome, edges=genome.edges + (Edge(u, v, w),))


def _remove_node(genome, rng):
    hidden = genome.hidden_nodes
    if not hidden:
        return None
    gone = hidden[int(rng.integers(len(hidden)))].id
    return replace(
        genome,
        nodes=tuple(n for n in genome.nodes if n.id != gone),
        edges=tuple(e for e in genome.edges if gone not in (e.source, e.target)),
    )


def _remove_edge(genome, rng):
    if not genome.edges:
        return None
    k = int(rng.integers(len(genome.edges)))
    return replace(genome, edges=genome.edges[:k] + genome.edges[k + 1:])


def _reweight(genome, rng):
    if not genome.edges:
        return None
    k = int(rng.integers(len(genome.edges)))
    child = reweight_edge(genome, k, float(rng.normal(0.0, REWEIGHT_SIGMA)))
    return None if child.edges[k].weight == genome.edges[k].weight else child


def _swap_activation(genome, rng):
    targets = [n for n in genome.nodes if n.kind != "input"]
    node = targets[int(rng.integers(len(targets)))]
    act = ACTIVATION_NAMES[rng.integers(len(ACTIVATION_NAMES))]
    if act == node.activation:
        return None
    nodes = tuple(Node(n.id, act, n.kind) if n.id == node.id else n for n in genome.nodes)
    return replace(genome, nodes=nodes)


_OPERATORS = {
    "add_node": _add_node,
    "add_edge": _add_edge,
    "remove_node": _remove_node,
    "remove_edge": _remove_edge,
    "reweight_edge": _reweight,
    "swap_activation": _swap_activation,
}


def mutate(genome: CppnGenome, rng: np.random.Generator,
           operator: Optional[str] = None) -> CppnGenome:
    """Apply exactly one effective structural or weight mutation.

    Operators are drawn uniformly; one that cannot apply, or leaves the
    genome unchanged, is redrawn.  ``operator`` forces the first draw.
    """
    if operator is not None and operator not in _OPERATORS:
        raise DomainError(f"unknown mutation operator {operator!r}")
    for attempt in range(1000):
        name = operator if attempt == 0 and operator else MUTATION_OPERATORS[
            int(rng.integers(len(MUTATION_OPERATORS)))]
        child = _OPERATORS[name](genome, rng)
        if child is not None and child.content_hash != genome.content_hash:
            return replace(child, metadata={"mutation": name})
    raise RuntimeError("no applicable mutation found")  # unreachable: swap always applies
