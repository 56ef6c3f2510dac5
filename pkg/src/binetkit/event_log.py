"""Event log data model, integer encoding and JSON persistence.

A log is a list of cases, a case is a list of events, and an event carries an
activity name plus a fixed set of categorical attributes. Attribute 0 of every
log is the activity itself; the remaining attribute names are shared by all
events of the log. Events may carry a per-attribute anomaly label.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

ACTIVITY = "activity"

# reserved integer codes in encoded feature tensors
PAD = 0
BOS = 1


class AnomalyLabel(str, Enum):
    NORMAL = "Normal"
    SKIP = "Skip"
    INSERT = "Insert"
    REWORK = "Rework"
    EARLY = "Early"
    LATE = "Late"
    SHIFT = "Shift"
    ATTRIBUTE = "Attribute"


# fixed class order; code 0 is Normal so a zeroed tensor means "nothing anomalous"
LABEL_CLASSES = (
    AnomalyLabel.NORMAL,
    AnomalyLabel.SKIP,
    AnomalyLabel.INSERT,
    AnomalyLabel.REWORK,
    AnomalyLabel.EARLY,
    AnomalyLabel.LATE,
    AnomalyLabel.SHIFT,
    AnomalyLabel.ATTRIBUTE,
)
LABEL_CODES = {label: code for code, label in enumerate(LABEL_CLASSES)}


class SchemaError(ValueError):
    """Log or tensor violates the schema contract."""


class VocabularyError(KeyError):
    """Symbol or integer code outside the known dictionary."""


class LogFormatError(ValueError):
    """Log or graph file cannot be parsed."""


@dataclass
class Event:
    activity: str
    attributes: dict[str, str] = field(default_factory=dict)
    labels: dict[str, AnomalyLabel] | None = None

    def value(self, name: str) -> str:
        if name == ACTIVITY:
            return self.activity
        return self.attributes[name]

    def label(self, name: str) -> AnomalyLabel:
        if self.labels is None:
            return AnomalyLabel.NORMAL
        return self.labels[name]


@dataclass
class Case:
    case_id: str
    events: list[Event] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass
class EventLog:
    name: str
    attributes: list[str] = field(default_factory=list)  # data attributes, no activity
    cases: list[Case] = field(default_factory=list)

    @property
    def schema(self) -> list[str]:
        return [ACTIVITY] + list(self.attributes)

    @property
    def num_cases(self) -> int:
        return len(self.cases)

    @property
    def num_events(self) -> int:
        return sum(len(c) for c in self.cases)

    @property
    def max_case_length(self) -> int:
        return max((len(c) for c in self.cases), default=0)

    def case_lengths(self) -> np.ndarray:
        return np.array([len(c) for c in self.cases], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)


def normal_labels(schema: list[str]) -> dict[str, AnomalyLabel]:
    return {name: AnomalyLabel.NORMAL for name in schema}


@dataclass
class EncodedLog:
    """Integer view of a log.

    features has shape (C, E, A) where E is the maximum case length plus one
    slot for the beginning-of-case marker. Row layout per case: position 0 is
    all BOS codes, positions 1..L hold the events, the rest is PAD. Real
    symbols are coded from 2 upward, per attribute, in sorted symbol order.
    """

    name: str
    schema: list[str]
    features: np.ndarray
    case_lengths: np.ndarray
    case_ids: list[str]
    encoders: list[dict[str, int]]   # one per schema attribute: symbol -> code
    decoders: list[list[str]]        # code -> symbol; slots 0 and 1 are reserved
    labels: np.ndarray | None = None  # (C, E, A) label codes, aligned with features

    @property
    def num_cases(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_positions(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_attributes(self) -> int:
        return int(self.features.shape[2])

    def vocabulary_size(self, attr_index: int) -> int:
        """Number of real symbols of an attribute (reserved codes excluded)."""
        return len(self.decoders[attr_index]) - 2


def _check_event_schema(log: EventLog, case: Case, event: Event) -> None:
    expected = set(log.attributes)
    actual = set(event.attributes)
    if actual != expected:
        raise SchemaError(
            f"case {case.case_id!r}: event attributes {sorted(actual)} do not match "
            f"log attributes {sorted(expected)}"
        )
    if event.labels is not None:
        want = set(log.schema)
        have = set(event.labels)
        if have != want:
            raise SchemaError(
                f"case {case.case_id!r}: labels must cover {sorted(want)}, got {sorted(have)}"
            )


def encode(log: EventLog) -> EncodedLog:
    """Turn a log into the (C, E, A) integer tensor plus per-attribute dictionaries."""
    if not log.cases:
        raise SchemaError("cannot encode an empty log")
    for case in log.cases:
        if len(case) == 0:
            raise SchemaError(f"case {case.case_id!r} has no events")

    schema = log.schema
    labelled = [ev.labels is not None for case in log for ev in case]
    if any(labelled) and not all(labelled):
        raise SchemaError("log mixes labelled and unlabelled events")
    has_labels = all(labelled)

    symbols: list[set[str]] = [set() for _ in schema]
    for case in log.cases:
        for event in case:
            _check_event_schema(log, case, event)
            for k, name in enumerate(schema):
                symbols[k].add(event.value(name))

    encoders = []
    decoders = []
    for vocab in symbols:
        ordered = sorted(vocab)
        encoders.append({sym: code + 2 for code, sym in enumerate(ordered)})
        decoders.append(["\x00pad", "\x00bos"] + ordered)

    C = log.num_cases
    E = log.max_case_length + 1
    A = len(schema)
    features = np.zeros((C, E, A), dtype=np.int64)
    features[:, 0, :] = BOS
    labels = np.zeros((C, E, A), dtype=np.int8) if has_labels else None

    lengths = log.case_lengths()
    for i, case in enumerate(log.cases):
        for j, event in enumerate(case, start=1):
            for k, name in enumerate(schema):
                features[i, j, k] = encoders[k][event.value(name)]
                if has_labels:
                    labels[i, j, k] = LABEL_CODES[event.labels[name]]

    return EncodedLog(
        name=log.name,
        schema=list(schema),
        features=features,
        case_lengths=lengths,
        case_ids=[c.case_id for c in log.cases],
        encoders=encoders,
        decoders=decoders,
        labels=labels,
    )


def decode(enc: EncodedLog) -> EventLog:
    """Inverse of encode(). Raises VocabularyError on codes outside the dictionaries."""
    C, E, A = enc.features.shape
    if A != len(enc.schema) or A != len(enc.decoders):
        raise SchemaError("feature tensor width does not match the schema")
    cases = []
    for i in range(C):
        length = int(enc.case_lengths[i])
        if length < 1:
            raise SchemaError(f"case {enc.case_ids[i]!r} has length {length}")
        if length >= E:
            raise SchemaError(f"case {enc.case_ids[i]!r} longer than the tensor allows")
        events = []
        for j in range(1, length + 1):
            values = []
            for k in range(A):
                code = int(enc.features[i, j, k])
                if code < 2 or code >= len(enc.decoders[k]):
                    raise VocabularyError(
                        f"code {code} of attribute {enc.schema[k]!r} at case {i} "
                        f"position {j - 1} is not in the dictionary"
                    )
                values.append(enc.decoders[k][code])
            labels = None
            if enc.labels is not None:
                labels = {
                    name: LABEL_CLASSES[int(enc.labels[i, j, k])]
                    for k, name in enumerate(enc.schema)
                }
            events.append(
                Event(
                    activity=values[0],
                    attributes=dict(zip(enc.schema[1:], values[1:])),
                    labels=labels,
                )
            )
        cases.append(Case(case_id=enc.case_ids[i], events=events))
    return EventLog(name=enc.name, attributes=list(enc.schema[1:]), cases=cases)


def label_tensor(log: EventLog) -> np.ndarray:
    """Label codes as a (C, E', A) tensor aligned with score tensors (no BOS slot).

    E' is the maximum case length; positions beyond a case's length are 0.
    Requires a fully labelled log.
    """
    C = log.num_cases
    Ep = log.max_case_length
    A = len(log.schema)
    out = np.zeros((C, Ep, A), dtype=np.int8)
    for i, case in enumerate(log.cases):
        for j, event in enumerate(case):
            if event.labels is None:
                raise SchemaError(f"case {case.case_id!r} is not labelled")
            for k, name in enumerate(log.schema):
                out[i, j, k] = LABEL_CODES[event.labels[name]]
    return out


def case_level_labels(log: EventLog) -> np.ndarray:
    """Boolean per case: True when any attribute of any event is labelled anomalous."""
    out = np.zeros(log.num_cases, dtype=bool)
    for i, case in enumerate(log.cases):
        for event in case:
            if event.labels is None:
                raise SchemaError(f"case {case.case_id!r} is not labelled")
            if any(lab != AnomalyLabel.NORMAL for lab in event.labels.values()):
                out[i] = True
                break
    return out


def valid_mask(case_lengths: np.ndarray, num_positions: int) -> np.ndarray:
    """(C, E') boolean mask of real event positions given per-case lengths."""
    positions = np.arange(num_positions)[None, :]
    return positions < np.asarray(case_lengths)[:, None]


# ---------------------------------------------------------------------------
# JSON persistence


def _log_to_obj(log: EventLog) -> dict:
    cases = []
    for case in log.cases:
        events = []
        for event in case:
            item: dict = {"activity": event.activity, "attrs": dict(event.attributes)}
            if event.labels is not None:
                item["labels"] = {k: v.value for k, v in event.labels.items()}
            events.append(item)
        cases.append({"id": case.case_id, "events": events})
    return {"name": log.name, "attributes": list(log.attributes), "cases": cases}


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the target directory, then rename into place."""
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_log(log: EventLog, path: str) -> None:
    atomic_write_text(path, json.dumps(_log_to_obj(log), separators=(",", ":")) + "\n")


def load_log(path: str) -> EventLog:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except json.JSONDecodeError as err:
        raise LogFormatError(f"{path}: not valid JSON (line {err.lineno}, column {err.colno})")
    return log_from_obj(obj, origin=path)


def log_from_obj(obj: dict, origin: str = "<memory>") -> EventLog:
    if not isinstance(obj, dict):
        raise LogFormatError(f"{origin}: top level must be an object")
    for key in ("name", "attributes", "cases"):
        if key not in obj:
            raise LogFormatError(f"{origin}: missing required key {key!r}")
    attributes = list(obj["attributes"])
    label_values = {label.value for label in AnomalyLabel}
    cases = []
    for c_idx, raw_case in enumerate(obj["cases"]):
        if "id" not in raw_case or "events" not in raw_case:
            raise LogFormatError(f"{origin}: case {c_idx} needs 'id' and 'events'")
        events = []
        for e_idx, raw in enumerate(raw_case["events"]):
            if "activity" not in raw:
                raise LogFormatError(
                    f"{origin}: case {raw_case['id']!r} event {e_idx} has no 'activity'"
                )
            attrs = dict(raw.get("attrs", {}))
            if set(attrs) != set(attributes):
                raise LogFormatError(
                    f"{origin}: case {raw_case['id']!r} event {e_idx} attributes "
                    f"{sorted(attrs)} do not match header {sorted(attributes)}"
                )
            labels = None
            if "labels" in raw:
                bad = [v for v in raw["labels"].values() if v not in label_values]
                if bad:
                    raise LogFormatError(
                        f"{origin}: case {raw_case['id']!r} event {e_idx} has unknown "
                        f"label value {bad[0]!r}"
                    )
                labels = {k: AnomalyLabel(v) for k, v in raw["labels"].items()}
            events.append(Event(activity=raw["activity"], attributes=attrs, labels=labels))
        cases.append(Case(case_id=str(raw_case["id"]), events=events))
    return EventLog(name=str(obj["name"]), attributes=attributes, cases=cases)
