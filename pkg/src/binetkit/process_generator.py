"""Likelihood-graph process model: validation, random-walk sampling, random graphs.

A likelihood graph is a directed weighted graph with one start node, one end
node, activity nodes and value nodes. Control flow alternates between an
activity node and one value node per data attribute (in a fixed attribute
order) before moving on to the next activity node or the end node. Because the
next hop hangs off the last value node, attribute values can steer control
flow. The same activity name may appear on several nodes (distinguished by a
tag) to express long-term dependencies.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .event_log import (
    Case,
    Event,
    EventLog,
    LogFormatError,
    atomic_write_text,
    normal_labels,
)

START = "start"
END = "end"
ACTIVITY_NODE = "activity"
VALUE_NODE = "value"

WEIGHT_TOLERANCE = 1e-9


class GraphValidationError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid likelihood graph:\n  " + "\n  ".join(problems))
        self.problems = problems


class GenerationError(RuntimeError):
    """Sampling could not produce a case within the configured bounds."""


@dataclass(frozen=True)
class Node:
    node_id: str
    kind: str
    activity: str | None = None
    attribute: str | None = None
    value: str | None = None


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    weight: float


@dataclass
class LikelihoodGraph:
    attributes: list[str] = field(default_factory=list)
    nodes: dict[str, Node] = field(default_factory=dict)
    edges: dict[str, list[Edge]] = field(default_factory=dict)

    def add_node(self, node: Node) -> Node:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node id {node.node_id!r}")
        self.nodes[node.node_id] = node
        self.edges.setdefault(node.node_id, [])
        return node

    def add_edge(self, source: str, target: str, weight: float) -> None:
        self.edges.setdefault(source, []).append(Edge(source, target, float(weight)))

    def successors(self, node_id: str) -> list[Edge]:
        return self.edges.get(node_id, [])

    def start_node(self) -> Node:
        return self._only(START)

    def end_node(self) -> Node:
        return self._only(END)

    def _only(self, kind: str) -> Node:
        found = [n for n in self.nodes.values() if n.kind == kind]
        if len(found) != 1:
            raise GraphValidationError([f"expected exactly one {kind} node, found {len(found)}"])
        return found[0]

    def activity_names(self) -> set[str]:
        return {n.activity for n in self.nodes.values() if n.kind == ACTIVITY_NODE}

    def value_domain(self, attribute: str) -> set[str]:
        return {
            n.value
            for n in self.nodes.values()
            if n.kind == VALUE_NODE and n.attribute == attribute
        }


def validate_graph(graph: LikelihoodGraph) -> list[str]:
    """Collect structural problems; an empty list means the graph is valid."""
    problems: list[str] = []
    starts = [n for n in graph.nodes.values() if n.kind == START]
    ends = [n for n in graph.nodes.values() if n.kind == END]
    if len(starts) != 1:
        problems.append(f"expected exactly one start node, found {len(starts)}")
    if len(ends) != 1:
        problems.append(f"expected exactly one end node, found {len(ends)}")
    if problems:
        return problems
    start, end = starts[0], ends[0]

    for node in graph.nodes.values():
        if node.kind == ACTIVITY_NODE and not node.activity:
            problems.append(f"{node.node_id}: activity node without an activity name")
        if node.kind == VALUE_NODE:
            if not node.attribute or node.value is None:
                problems.append(f"{node.node_id}: value node needs attribute and value")
            elif node.attribute not in graph.attributes:
                problems.append(
                    f"{node.node_id}: attribute {node.attribute!r} not in {graph.attributes}"
                )

    for source_id, out in graph.edges.items():
        if source_id not in graph.nodes:
            problems.append(f"edge source {source_id!r} is not a node")
            continue
        source = graph.nodes[source_id]
        for edge in out:
            if edge.target not in graph.nodes:
                problems.append(f"{source_id}: edge to unknown node {edge.target!r}")
            if edge.weight <= 0:
                problems.append(f"{source_id} -> {edge.target}: weight {edge.weight} not positive")
        if source.kind == END:
            if out:
                problems.append(f"{source_id}: end node must not have outgoing edges")
            continue
        if not out:
            problems.append(f"{source_id}: no outgoing edges")
            continue
        total = sum(e.weight for e in out)
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            problems.append(f"{source_id}: outgoing weights sum to {total!r}, expected 1")

    if problems:
        return problems

    # layer structure: activity -> value(attr 0) -> ... -> value(attr last) -> activity/end
    def expected_kinds(node: Node) -> str:
        if node.kind == START:
            return "activity"
        if node.kind == ACTIVITY_NODE:
            return graph.attributes[0] if graph.attributes else "hop"
        if node.kind == VALUE_NODE:
            idx = graph.attributes.index(node.attribute)
            if idx + 1 < len(graph.attributes):
                return graph.attributes[idx + 1]
            return "hop"
        return "none"

    for source_id, out in graph.edges.items():
        source = graph.nodes[source_id]
        want = expected_kinds(source)
        for edge in out:
            target = graph.nodes[edge.target]
            if want == "activity" and target.kind != ACTIVITY_NODE:
                problems.append(f"{source_id}: start must lead to activity nodes")
            elif want == "hop" and target.kind not in (ACTIVITY_NODE, END):
                problems.append(
                    f"{source_id}: must lead to an activity or the end, got {target.kind}"
                )
            elif want not in ("activity", "hop", "none") and (
                target.kind != VALUE_NODE or target.attribute != want
            ):
                problems.append(
                    f"{source_id}: expected value nodes of attribute {want!r}, "
                    f"got {edge.target}"
                )

    # reachability: everything reachable from start, end reachable from everything
    seen = {start.node_id}
    stack = [start.node_id]
    while stack:
        for edge in graph.successors(stack.pop()):
            if edge.target not in seen:
                seen.add(edge.target)
                stack.append(edge.target)
    for node_id in graph.nodes:
        if node_id not in seen:
            problems.append(f"{node_id}: not reachable from the start node")

    reverse: dict[str, list[str]] = {nid: [] for nid in graph.nodes}
    for source_id, out in graph.edges.items():
        for edge in out:
            reverse[edge.target].append(source_id)
    reaches_end = {end.node_id}
    stack = [end.node_id]
    while stack:
        for pred in reverse[stack.pop()]:
            if pred not in reaches_end:
                reaches_end.add(pred)
                stack.append(pred)
    for node_id in graph.nodes:
        if node_id not in reaches_end:
            problems.append(f"{node_id}: cannot reach the end node")

    return problems


def ensure_valid(graph: LikelihoodGraph) -> LikelihoodGraph:
    problems = validate_graph(graph)
    if problems:
        raise GraphValidationError(problems)
    return graph


def _pick(edges: list[Edge], rng: np.random.Generator) -> Edge:
    if len(edges) == 1:
        return edges[0]
    draw = rng.random()
    acc = 0.0
    for edge in edges:
        acc += edge.weight
        if draw < acc:
            return edge
    return edges[-1]


def sample_case(
    graph: LikelihoodGraph,
    rng: np.random.Generator,
    max_length: int = 64,
    max_attempts: int = 1000,
) -> list[Event]:
    """One random walk through the graph, resampled if it exceeds max_length."""
    for _ in range(max_attempts):
        events: list[Event] = []
        current = graph.start_node()
        schema = ["activity"] + list(graph.attributes)
        too_long = False
        while True:
            edge = _pick(graph.successors(current.node_id), rng)
            current = graph.nodes[edge.target]
            if current.kind == END:
                break
            if len(events) >= max_length:
                too_long = True
                break
            activity = current.activity
            attrs = {}
            for _ in graph.attributes:
                edge = _pick(graph.successors(current.node_id), rng)
                current = graph.nodes[edge.target]
                attrs[current.attribute] = current.value
            events.append(Event(activity=activity, attributes=attrs, labels=normal_labels(schema)))
        if not too_long:
            return events
    raise GenerationError(
        f"no walk of at most {max_length} events found in {max_attempts} attempts"
    )


@dataclass
class GeneratorConfig:
    num_cases: int
    seed: int = 0
    max_case_length: int = 64


def generate_log(graph: LikelihoodGraph, config: GeneratorConfig, name: str = "synthetic") -> EventLog:
    """Sample config.num_cases labelled-Normal cases, one RNG stream per case."""
    ensure_valid(graph)
    cases = []
    for i in range(config.num_cases):
        rng = np.random.default_rng([config.seed, i])
        events = sample_case(graph, rng, max_length=config.max_case_length)
        cases.append(Case(case_id=f"case_{i}", events=events))
    return EventLog(name=name, attributes=list(graph.attributes), cases=cases)


# ---------------------------------------------------------------------------
# random graphs


def random_graph(
    num_activities: int,
    num_attributes: int = 1,
    values_per_attribute: int = 4,
    branching: int = 3,
    seed: int = 0,
) -> LikelihoodGraph:
    """A random layered process graph.

    Activities are laid out in a random topological order with forward edges
    only, so every walk terminates. Roughly one in eight activities appears on
    two nodes (same name, different tag), which is what long-term dependencies
    are made of.
    """
    if num_activities < 2:
        raise ValueError("need at least two activities")
    rng = np.random.default_rng(seed)
    attributes = [f"attr_{i}" for i in range(num_attributes)]
    graph = LikelihoodGraph(attributes=attributes)
    graph.add_node(Node(START, START))
    graph.add_node(Node(END, END))

    names = [f"Activity {i:02d}" for i in range(num_activities)]
    duplicated = list(rng.choice(num_activities, size=num_activities // 8, replace=False))
    slots: list[tuple[str, str]] = []  # (node id, activity name)
    for idx, name in enumerate(names):
        slots.append((f"a:{name}", name))
        if idx in duplicated:
            slots.append((f"a:{name}#2", name))
    order = rng.permutation(len(slots))
    slots = [slots[i] for i in order]

    domains = {
        attr: [f"{attr} value {v:02d}" for v in range(values_per_attribute)]
        for attr in attributes
    }

    exits: list[list[str]] = []  # per slot: node ids whose out-edges carry the next hop
    for node_id, name in slots:
        node = graph.add_node(Node(node_id, ACTIVITY_NODE, activity=name))
        layer = [node.node_id]
        for attr in attributes:
            size = int(rng.integers(1, min(3, values_per_attribute) + 1))
            group = rng.choice(values_per_attribute, size=size, replace=False)
            weights = rng.dirichlet(np.ones(size) * 4.0)
            weights = weights / weights.sum()
            next_layer = []
            for value_idx, weight in zip(group, weights):
                value = domains[attr][int(value_idx)]
                vid = f"v:{node_id[2:]}/{attr}={value}"
                graph.add_node(Node(vid, VALUE_NODE, attribute=attr, value=value))
                for source in layer:
                    graph.add_edge(source, vid, weight)
                next_layer.append(vid)
            layer = next_layer
        exits.append(layer)

    targets_of: list[list[int]] = []
    n = len(slots)
    for i in range(n):
        if i == n - 1:
            targets_of.append([])
            continue
        window = list(range(i + 1, min(i + 1 + branching + 1, n)))
        size = int(rng.integers(1, min(branching, len(window)) + 1))
        chosen = sorted(rng.choice(window, size=size, replace=False).tolist())
        targets_of.append(chosen)
    # make sure every slot has an incoming edge
    incoming = {j for targets in targets_of for j in targets}
    for j in range(1, n):
        if j not in incoming:
            targets_of[j - 1].append(j)

    graph.add_edge(START, slots[0][0], 1.0)
    for i in range(n):
        targets = targets_of[i]
        target_ids = [slots[j][0] for j in targets] if targets else [END]
        weights = rng.dirichlet(np.ones(len(target_ids)) * 4.0)
        weights = weights / weights.sum()
        for source in exits[i]:
            for target_id, weight in zip(target_ids, weights):
                graph.add_edge(source, target_id, weight)
    return ensure_valid(graph)


# ---------------------------------------------------------------------------
# JSON persistence


def save_graph(graph: LikelihoodGraph, path: str) -> None:
    nodes = []
    for node in graph.nodes.values():
        item: dict = {"id": node.node_id, "kind": node.kind}
        if node.activity is not None:
            item["activity"] = node.activity
        if node.attribute is not None:
            item["attribute"] = node.attribute
        if node.value is not None:
            item["value"] = node.value
        nodes.append(item)
    edges = [
        {"from": e.source, "to": e.target, "w": e.weight}
        for out in graph.edges.values()
        for e in out
    ]
    obj = {"attributes": list(graph.attributes), "nodes": nodes, "edges": edges}
    atomic_write_text(path, json.dumps(obj, separators=(",", ":")) + "\n")


def load_graph(path: str) -> LikelihoodGraph:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except json.JSONDecodeError as err:
        raise LogFormatError(f"{path}: not valid JSON (line {err.lineno}, column {err.colno})")
    for key in ("attributes", "nodes", "edges"):
        if key not in obj:
            raise LogFormatError(f"{path}: missing required key {key!r}")
    graph = LikelihoodGraph(attributes=list(obj["attributes"]))
    for raw in obj["nodes"]:
        if "id" not in raw or "kind" not in raw:
            raise LogFormatError(f"{path}: node needs 'id' and 'kind': {raw!r}")
        graph.add_node(
            Node(
                node_id=raw["id"],
                kind=raw["kind"],
                activity=raw.get("activity"),
                attribute=raw.get("attribute"),
                value=raw.get("value"),
            )
        )
    for raw in obj["edges"]:
        if not {"from", "to", "w"} <= set(raw):
            raise LogFormatError(f"{path}: edge needs 'from', 'to' and 'w': {raw!r}")
        graph.add_edge(raw["from"], raw["to"], float(raw["w"]))
    return graph
