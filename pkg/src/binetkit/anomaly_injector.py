"""Inject labelled control-flow and attribute anomalies into a clean log.

Exactly round(anomaly_fraction * C) cases receive exactly one anomaly each.
Six anomaly types exist; a type that cannot be applied to the drawn case (for
example Skip on a one-event case) is resampled. The Shift label is never
injected directly: it marks the place an Early or Late block came from.

All transforms copy; the input log is never modified.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .event_log import ACTIVITY, AnomalyLabel, Case, Event, EventLog, normal_labels
from .process_generator import ACTIVITY_NODE, VALUE_NODE, LikelihoodGraph

SKIP = "Skip"
INSERT = "Insert"
REWORK = "Rework"
EARLY = "Early"
LATE = "Late"
ATTRIBUTE = "Attribute"
ANOMALY_TYPES = (SKIP, INSERT, REWORK, EARLY, LATE, ATTRIBUTE)

_INSERT_POOL_SIZE = 20


class InjectionError(ValueError):
    pass


@dataclass
class InjectionConfig:
    anomaly_fraction: float = 0.30
    type_weights: dict[str, float] | None = None  # None: uniform over ANOMALY_TYPES
    seed: int = 0
    max_skip: int = 3
    max_insert: int = 3
    max_rework: int = 3
    max_shift: int = 2       # bounds Early and Late block length
    max_attribute: int = 3

    def weights(self) -> dict[str, float]:
        if self.type_weights is None:
            return {t: 1.0 for t in ANOMALY_TYPES}
        unknown = set(self.type_weights) - set(ANOMALY_TYPES)
        if unknown:
            raise InjectionError(
                f"unknown anomaly types {sorted(unknown)}; Shift is derived, not injected"
            )
        if any(w < 0 for w in self.type_weights.values()):
            raise InjectionError("type weights must be non-negative")
        if not any(w > 0 for w in self.type_weights.values()):
            raise InjectionError("at least one type weight must be positive")
        return {t: float(self.type_weights.get(t, 0.0)) for t in ANOMALY_TYPES}


def _copy_event(event: Event, schema: list[str]) -> Event:
    return Event(
        activity=event.activity,
        attributes=dict(event.attributes),
        labels=normal_labels(schema),
    )


def _copy_events(events: list[Event], schema: list[str]) -> list[Event]:
    return [_copy_event(e, schema) for e in events]


def _randint(rng: np.random.Generator, low: int, high_inclusive: int) -> int:
    return int(rng.integers(low, high_inclusive + 1))


def apply_skip(events: list[Event], schema: list[str], max_skip: int,
               rng: np.random.Generator) -> list[Event] | None:
    n = len(events)
    if n < 2 or max_skip < 1:
        return None
    k = _randint(rng, 1, min(max_skip, n - 1))
    start = _randint(rng, 0, n - k)
    out = _copy_events(events[:start] + events[start + k:], schema)
    marker = start if start < len(out) else len(out) - 1
    out[marker].labels[ACTIVITY] = AnomalyLabel.SKIP
    return out


def apply_insert(events: list[Event], schema: list[str], max_insert: int,
                 rng: np.random.Generator, pools: dict[str, list[str]]) -> list[Event]:
    k = _randint(rng, 1, max_insert)
    out = _copy_events(events, schema)
    for _ in range(k):
        position = _randint(rng, 0, len(out))
        made = Event(
            activity=pools[ACTIVITY][_randint(rng, 0, len(pools[ACTIVITY]) - 1)],
            attributes={
                name: pools[name][_randint(rng, 0, len(pools[name]) - 1)]
                for name in schema[1:]
            },
            labels={name: AnomalyLabel.INSERT for name in schema},
        )
        out.insert(position, made)
    return out


def apply_rework(events: list[Event], schema: list[str], max_rework: int,
                 rng: np.random.Generator) -> list[Event] | None:
    n = len(events)
    if n < 1 or max_rework < 1:
        return None
    k = _randint(rng, 1, min(max_rework, n))
    start = _randint(rng, 0, n - k)
    out = _copy_events(events, schema)
    copies = _copy_events(events[start:start + k], schema)
    for copy in copies:
        copy.labels[ACTIVITY] = AnomalyLabel.REWORK
    out[start + k:start + k] = copies
    return out


def _move_block(events: list[Event], schema: list[str], max_shift: int,
                rng: np.random.Generator, direction: str) -> list[Event] | None:
    n = len(events)
    if n < 2 or max_shift < 1:
        return None
    k = _randint(rng, 1, min(max_shift, n - 1))
    label = AnomalyLabel.EARLY if direction == "early" else AnomalyLabel.LATE
    if direction == "early":
        start = _randint(rng, 1, n - k)           # must have room to the left
        target = _randint(rng, 0, start - 1)      # index in the reduced sequence
    else:
        if n - k - 1 < 0 or n - k < 1:
            return None
        start = _randint(rng, 0, n - k - 1)       # block may not touch the end
        target = _randint(rng, start + 1, n - k)  # strictly later
    block = _copy_events(events[start:start + k], schema)
    for moved in block:
        moved.labels[ACTIVITY] = label
    reduced = _copy_events(events[:start] + events[start + k:], schema)
    # the event that now follows the vacated position marks the shift; when the
    # block was taken from the very end, the last remaining event marks it
    shift_index = start if start < len(reduced) else len(reduced) - 1
    reduced[shift_index].labels[ACTIVITY] = AnomalyLabel.SHIFT
    return reduced[:target] + block + reduced[target:]


def apply_early(events, schema, max_shift, rng):
    return _move_block(events, schema, max_shift, rng, "early")


def apply_late(events, schema, max_shift, rng):
    return _move_block(events, schema, max_shift, rng, "late")


def apply_attribute(events: list[Event], schema: list[str], max_attribute: int,
                    rng: np.random.Generator, allowed, domains: dict[str, set[str]],
                    ) -> list[Event] | None:
    """Replace a data attribute value with one that no graph walk could produce here.

    allowed(event, attr_name) returns the set of values reachable at that slot;
    the replacement is drawn from the attribute's global domain minus that set.
    """
    if len(schema) < 2 or max_attribute < 1:
        return None
    candidates: list[tuple[int, list[tuple[str, list[str]]]]] = []
    for idx, event in enumerate(events):
        options = []
        for name in schema[1:]:
            pool = sorted(domains.get(name, set()) - allowed(event, name))
            if pool:
                options.append((name, pool))
        if options:
            candidates.append((idx, options))
    if not candidates:
        return None
    k = _randint(rng, 1, min(max_attribute, len(candidates)))
    chosen = rng.choice(len(candidates), size=k, replace=False)
    out = _copy_events(events, schema)
    for c in sorted(int(x) for x in chosen):
        idx, options = candidates[c]
        name, pool = options[_randint(rng, 0, len(options) - 1)]
        out[idx].attributes[name] = pool[_randint(rng, 0, len(pool) - 1)]
        out[idx].labels[name] = AnomalyLabel.ATTRIBUTE
    return out


# ---------------------------------------------------------------------------
# successor sets


def graph_successor_fn(graph: LikelihoodGraph):
    """allowed(event, attr) from graph structure.

    The same activity name may live on several nodes, and which one a finished
    case actually traversed is ambiguous, so the union over all nodes matching
    the observed activity and the observed earlier values of the event is used.
    A value outside that union can not be produced by any walk at this slot.
    """
    by_activity: dict[str, list[str]] = {}
    for node in graph.nodes.values():
        if node.kind == ACTIVITY_NODE:
            by_activity.setdefault(node.activity, []).append(node.node_id)

    def allowed(event: Event, attr: str) -> set[str]:
        target_index = graph.attributes.index(attr)
        frontier = by_activity.get(event.activity, [])
        for depth in range(target_index):
            value = event.attributes[graph.attributes[depth]]
            nxt = []
            for node_id in frontier:
                for edge in graph.successors(node_id):
                    node = graph.nodes[edge.target]
                    if node.kind == VALUE_NODE and node.value == value:
                        nxt.append(node.node_id)
            frontier = nxt
        result = set()
        for node_id in frontier:
            for edge in graph.successors(node_id):
                node = graph.nodes[edge.target]
                if node.kind == VALUE_NODE:
                    result.add(node.value)
        return result

    return allowed


def empirical_successor_fn(log: EventLog):
    """allowed(event, attr) mined from the log itself (for logs without a graph)."""
    attrs = list(log.attributes)
    seen: dict[tuple, set[str]] = {}
    for case in log:
        for event in case:
            prefix: tuple = (event.activity,)
            for name in attrs:
                key = (name,) + prefix
                seen.setdefault(key, set()).add(event.attributes[name])
                prefix = prefix + (event.attributes[name],)

    def allowed(event: Event, attr: str) -> set[str]:
        prefix: tuple = (event.activity,)
        for name in attrs:
            if name == attr:
                break
            prefix = prefix + (event.attributes[name],)
        return seen.get((attr,) + prefix, set())

    return allowed


def _alphabets(log: EventLog) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {name: set() for name in log.schema}
    for case in log:
        for event in case:
            out[ACTIVITY].add(event.activity)
            for name, value in event.attributes.items():
                out[name].add(value)
    return out


def _fresh_pools(log: EventLog, rng: np.random.Generator) -> dict[str, list[str]]:
    """Bounded pools of symbols guaranteed to be outside the log's alphabets."""
    alphabets = _alphabets(log)
    pools: dict[str, list[str]] = {}
    for name in log.schema:
        pool = []
        while len(pool) < _INSERT_POOL_SIZE:
            token = f"{name} x{int(rng.integers(0, 16 ** 6)):06x}"
            if token not in alphabets[name] and token not in pool:
                pool.append(token)
        pools[name] = pool
    return pools


def anomalous_case_count(num_cases: int, fraction: float) -> int:
    return int(np.floor(fraction * num_cases + 0.5))


def inject(log: EventLog, config: InjectionConfig,
           graph: LikelihoodGraph | None = None) -> EventLog:
    """Return a fully labelled copy of log with anomalies in a fixed share of cases."""
    if not 0.0 <= config.anomaly_fraction <= 1.0:
        raise InjectionError(f"anomaly_fraction {config.anomaly_fraction} outside [0, 1]")
    schema = log.schema
    rng = np.random.default_rng(config.seed)
    count = anomalous_case_count(log.num_cases, config.anomaly_fraction)
    chosen = set(int(i) for i in rng.choice(log.num_cases, size=count, replace=False))
    weights = config.weights()
    pools = _fresh_pools(log, rng)
    if graph is not None:
        allowed = graph_successor_fn(graph)
        domains = {name: graph.value_domain(name) for name in log.attributes}
    else:
        allowed = empirical_successor_fn(log)
        domains = _alphabets(log)

    limits = {
        SKIP: config.max_skip,
        INSERT: config.max_insert,
        REWORK: config.max_rework,
        EARLY: config.max_shift,
        LATE: config.max_shift,
        ATTRIBUTE: config.max_attribute,
    }

    def transform(kind: str, events: list[Event]) -> list[Event] | None:
        if kind == SKIP:
            return apply_skip(events, schema, limits[kind], rng)
        if kind == INSERT:
            return apply_insert(events, schema, limits[kind], rng, pools)
        if kind == REWORK:
            return apply_rework(events, schema, limits[kind], rng)
        if kind == EARLY:
            return apply_early(events, schema, limits[kind], rng)
        if kind == LATE:
            return apply_late(events, schema, limits[kind], rng)
        return apply_attribute(events, schema, limits[kind], rng, allowed, domains)

    cases = []
    for i, case in enumerate(log.cases):
        if i not in chosen:
            cases.append(Case(case_id=case.case_id, events=_copy_events(case.events, schema)))
            continue
        remaining = dict(weights)
        new_events = None
        while remaining and new_events is None:
            names = [t for t in ANOMALY_TYPES if remaining.get(t, 0.0) > 0]
            probs = np.array([remaining[t] for t in names], dtype=float)
            kind = names[int(rng.choice(len(names), p=probs / probs.sum()))]
            new_events = transform(kind, case.events)
            if new_events is None:
                del remaining[kind]
        if new_events is None:
            # Insert can always be applied, so this only happens when the
            # configured weights exclude every applicable type
            raise InjectionError(
                f"case {case.case_id!r}: no applicable anomaly type under the given weights"
            )
        cases.append(Case(case_id=case.case_id, events=new_events))
    return EventLog(name=log.name, attributes=list(log.attributes), cases=cases)
