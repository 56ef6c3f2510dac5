"""Classical anomaly detectors producing score tensors comparable to the
recurrent models: an n-gram conditional-frequency scorer, variant-frequency
case scoring, and scoring against a likelihood graph mined from the log.
"""
from __future__ import annotations

from collections import Counter, defaultdict

import numpy as np

from .event_log import BOS, EncodedLog, EventLog, SchemaError, valid_mask
from .process_generator import (
    ACTIVITY_NODE,
    END,
    START,
    VALUE_NODE,
    LikelihoodGraph,
    Node,
    ensure_valid,
)

NAIVE_MIN_FREQUENCY = 0.02
_SEP = "\x1f"


# ------------------------------------------------------------------ n-grams

def _context_key(features: np.ndarray, case: int, event: int, k: int) -> tuple:
    """Codes of the k-1 rows preceding original event `event`, BOS-padded."""
    parts = []
    for pos in range(event - k + 2, event + 1):  # row indices into the tensor
        if pos < 0:
            parts.extend([BOS] * features.shape[2])
        else:
            parts.extend(int(c) for c in features[case, pos])
    return tuple(parts)


def tstide_scores(enc: EncodedLog, k: int = 2) -> np.ndarray:
    """1 - (window frequency / most frequent window), per attribute.

    A window is the k-1 preceding full events (begin-marker padded at case
    starts) plus the scored attribute's value; counts come from the scored
    log itself. Rarity is measured against the most common window of the
    same attribute, so uniform logs score 0 everywhere. Rare-but-legitimate
    behavior scores high as well - the method cannot tell rarity from
    anomaly, which is its documented weakness.
    """
    if k < 2:
        raise ValueError("window size must be at least 2")
    feats = enc.features
    C, E, A = feats.shape
    lengths = enc.case_lengths
    counts = [Counter() for _ in range(A)]
    keys: list[list[tuple]] = []
    for i in range(C):
        row_keys = []
        for j in range(int(lengths[i])):
            ctx = _context_key(feats, i, j, k)
            row_keys.append(ctx)
            for a in range(A):
                counts[a][(ctx, int(feats[i, j + 1, a]))] += 1
        keys.append(row_keys)
    top = [max(counts[a].values()) for a in range(A)]
    scores = np.zeros((C, E - 1, A))
    for i in range(C):
        for j, ctx in enumerate(keys[i]):
            for a in range(A):
                seen = counts[a][(ctx, int(feats[i, j + 1, a]))]
                scores[i, j, a] = 1.0 - seen / top[a]
    return scores


# ------------------------------------------------------------------ variants

def case_variants(enc: EncodedLog) -> list[tuple]:
    """Activity-code sequence of every case."""
    feats = enc.features
    return [
        tuple(int(c) for c in feats[i, 1 : int(n) + 1, 0])
        for i, n in enumerate(enc.case_lengths)
    ]


def naive_case_scores(enc: EncodedLog) -> np.ndarray:
    """1 - variant count / most frequent variant count, per case."""
    variants = case_variants(enc)
    counts = Counter(variants)
    top = max(counts.values())
    return np.array([1.0 - counts[v] / top for v in variants])


def naive_case_flags(enc: EncodedLog,
                     min_frequency: float = NAIVE_MIN_FREQUENCY) -> np.ndarray:
    """Fixed-threshold detector: flag cases of rare activity variants."""
    variants = case_variants(enc)
    counts = Counter(variants)
    C = len(variants)
    return np.array([counts[v] / C < min_frequency for v in variants])


def naive_score_tensor(enc: EncodedLog) -> np.ndarray:
    """Case scores broadcast onto the activity column for tensor compatibility."""
    C, E, A = enc.features.shape
    scores = np.zeros((C, E - 1, A))
    per_case = naive_case_scores(enc)
    mask = valid_mask(enc.case_lengths, E - 1)
    scores[:, :, 0] = np.where(mask, per_case[:, None], 0.0)
    return scores


# ------------------------------------------------------------------ mining

def _activity_id(activity: str) -> str:
    return f"a{_SEP}{activity}"

def _value_id(activity: str, prefix: list[tuple[str, str]]) -> str:
    tail = "".join(f"{_SEP}{attr}{_SEP}{value}" for attr, value in prefix)
    return f"v{_SEP}{activity}{tail}"


def mine_likelihood_graph(log: EventLog) -> LikelihoodGraph:
    """Build a likelihood graph whose weights are the log's transition shares.

    One activity node per observed activity symbol; one value node per
    observed (activity, leading attribute values) chain, in schema order.
    """
    if not log.cases:
        raise SchemaError("cannot mine an empty log")
    graph = LikelihoodGraph(attributes=list(log.attributes))
    graph.add_node(Node(START, START))
    graph.add_node(Node(END, END))
    transitions: dict[str, Counter] = defaultdict(Counter)
    for case in log.cases:
        previous = START
        for event in case:
            node_id = _activity_id(event.activity)
            if node_id not in graph.nodes:
                graph.add_node(Node(node_id, ACTIVITY_NODE, activity=event.activity))
            transitions[previous][node_id] += 1
            previous = node_id
            prefix = []
            for attr in log.attributes:
                value = event.value(attr)
                prefix.append((attr, value))
                value_node = _value_id(event.activity, prefix)
                if value_node not in graph.nodes:
                    graph.add_node(
                        Node(value_node, VALUE_NODE, attribute=attr, value=value)
                    )
                transitions[previous][value_node] += 1
                previous = value_node
        transitions[previous][END] += 1
    for source, targets in transitions.items():
        total = sum(targets.values())
        for target, count in sorted(targets.items()):
            graph.add_edge(source, target, count / total)
    ensure_valid(graph)
    return graph


# ------------------------------------------------------------------ scoring

def likelihood_scores(graph: LikelihoodGraph, enc: EncodedLog) -> np.ndarray:
    """Score every attribute against the graph's outgoing distributions.

    The score is the probability mass of transitions strictly more likely
    than the observed one; a transition the graph has never seen scores 1.
    If a case walks onto a node the graph lacks entirely, the rest of that
    case stays at score 1.
    """
    feats = enc.features
    C, E, A = feats.shape
    if list(graph.attributes) != [name for name in enc.schema[1:]]:
        raise SchemaError("graph attributes do not match the log schema")
    scores = np.zeros((C, E - 1, A))
    lengths = enc.case_lengths
    for i in range(C):
        current = START
        lost = False
        for j in range(int(lengths[i])):
            activity = enc.decoders[0][feats[i, j + 1, 0]]
            prefix = []
            target = _activity_id(activity)
            scores[i, j, 0] = _transition_score(graph, current, target, lost)
            current, lost = _advance(graph, target, lost)
            for a in range(1, A):
                attr = enc.schema[a]
                value = enc.decoders[a][feats[i, j + 1, a]]
                prefix.append((attr, value))
                target = _value_id(activity, prefix)
                scores[i, j, a] = _transition_score(graph, current, target, lost)
                current, lost = _advance(graph, target, lost)
    return scores


def _transition_score(graph: LikelihoodGraph, current: str, target: str,
                      lost: bool) -> float:
    if lost:
        return 1.0
    p_v = 0.0
    mass_above = 0.0
    edges = graph.edges.get(current, [])
    for edge in edges:
        if edge.target == target:
            p_v = edge.weight
    for edge in edges:
        if edge.weight > p_v:
            mass_above += edge.weight
    return mass_above if p_v > 0 else sum(e.weight for e in edges)


def _advance(graph: LikelihoodGraph, target: str, lost: bool) -> tuple[str, bool]:
    if lost or target not in graph.nodes:
        return target, True
    return target, False


def likelihood_flags(graph: LikelihoodGraph, enc: EncodedLog) -> np.ndarray:
    """Fixed-threshold variant: flag scores above 1 - delta with delta = 0.

    Mining and flagging the same log can never produce a score above 1, so
    this detector flags nothing there; it exists as the degenerate
    fixed-threshold counterpart of the heuristic-thresholded scorer.
    """
    scores = likelihood_scores(graph, enc)
    return (scores > 1.0).astype(np.uint8)
