"""Rule-based explanation of flagged anomaly positions.

Detection only says *where* a log looks wrong. This module turns each flagged
attribute slot into one of eight classes (Normal, Skip, Insert, Rework, Early,
Late, Shift, Attribute) by comparing the detector's prediction sets against
what actually happened in the case, and scores the result against ground-truth
labels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .event_log import (
    LABEL_CLASSES,
    LABEL_CODES,
    AnomalyLabel,
    EncodedLog,
    EventLog,
    _log_to_obj,
    atomic_write_text,
    valid_mask,
)
from .thresholding import ThresholdAssignment


class ClassifierError(ValueError):
    """Inputs violate the classification contract."""


CLASS_NAMES = tuple(label.value for label in LABEL_CLASSES)

NORMAL = LABEL_CODES[AnomalyLabel.NORMAL]
SKIP = LABEL_CODES[AnomalyLabel.SKIP]
INSERT = LABEL_CODES[AnomalyLabel.INSERT]
REWORK = LABEL_CODES[AnomalyLabel.REWORK]
EARLY = LABEL_CODES[AnomalyLabel.EARLY]
LATE = LABEL_CODES[AnomalyLabel.LATE]
SHIFT = LABEL_CODES[AnomalyLabel.SHIFT]
ATTRIBUTE = LABEL_CODES[AnomalyLabel.ATTRIBUTE]

RULE_SKIP = "skip"
RULE_INSERT = "insert"
RULE_REWORK = "rework"
RULE_LATE = "late"
RULE_EARLY = "early"
RULE_SHIFT = "shift"

# The displaced-event rules (late/early) run before the moved-prediction rule
# (shift). Whenever any prediction occurs in the case and no occurrence is
# unflagged, a flagged occurrence must exist, so a shift-first order could
# never reach late/early: the three occurrence rules (skip/insert/shift) cover
# every possible input between them.
DEFAULT_RULE_ORDER = (RULE_SKIP, RULE_INSERT, RULE_REWORK,
                      RULE_LATE, RULE_EARLY, RULE_SHIFT)

PredictionSets = dict[tuple[int, int, int], tuple[str, ...]]


def prediction_sets(probs: list[np.ndarray], enc: EncodedLog, flags: np.ndarray,
                    assignment: ThresholdAssignment) -> PredictionSets:
    """Plausible values per flagged slot: everything scoring at most tau.

    probs holds one (C, E', vocab) distribution tensor per attribute, as
    produced by a detector's prediction pass. Special dictionary entries
    (padding, case-start) never enter a set; the most probable real value is
    always included, so sets are never empty.
    """
    C, Ep, A = flags.shape
    if len(probs) != A:
        raise ClassifierError(f"{len(probs)} probability tensors for {A} attributes")
    tau = assignment.per_slot(Ep, A)
    out: PredictionSets = {}
    for c, e, a in np.argwhere(flags):
        p = probs[a][c, e]
        above = (p[None, :] > p[:, None]) @ p  # mass strictly above each value
        real = p[2:]
        keep = above[2:] <= tau[e, a]  # same score the detector used for the slot
        keep[int(np.argmax(real))] = True
        symbols = enc.decoders[a]
        chosen = sorted(
            (int(i) for i in np.flatnonzero(keep)),
            key=lambda i: (-real[i], symbols[i + 2]),
        )
        out[(int(c), int(e), int(a))] = tuple(symbols[i + 2] for i in chosen)
    return out


def _rule_matches(rule: str, e: int, own: str, preds: frozenset[str],
                  acts: list[str], act_flags: np.ndarray,
                  preds_at: dict[int, frozenset[str]]) -> bool:
    if rule == RULE_SKIP:
        return not any(acts[j] in preds for j in range(len(acts)) if j != e)
    if rule == RULE_INSERT:
        return any(acts[j] in preds and not act_flags[j]
                   for j in range(len(acts)) if j != e)
    if rule == RULE_REWORK:
        return any(acts[j] == own and not act_flags[j] for j in range(e))
    if rule == RULE_LATE:
        return any(act_flags[j] and own in preds_at[j] for j in range(e))
    if rule == RULE_EARLY:
        return any(act_flags[j] and own in preds_at[j]
                   for j in range(e + 1, len(acts)))
    if rule == RULE_SHIFT:
        return any(acts[j] in preds and act_flags[j]
                   for j in range(len(acts)) if j != e)
    raise ClassifierError(f"unknown rule {rule!r}")


_RULE_CLASS = {
    RULE_SKIP: SKIP,
    RULE_INSERT: INSERT,
    RULE_REWORK: REWORK,
    RULE_LATE: LATE,
    RULE_EARLY: EARLY,
    RULE_SHIFT: SHIFT,
}


def classify(enc: EncodedLog, flags: np.ndarray, predictions: PredictionSets,
             rule_order: tuple[str, ...] = DEFAULT_RULE_ORDER) -> np.ndarray:
    """Class codes per attribute slot, (C, E', A) int8; unflagged slots stay 0.

    Flagged data-perspective slots are always Attribute. Flagged activity
    slots take the first matching rule in rule_order; a flagged activity no
    rule explains falls back to Insert. rule_order exists so tests can pin the
    precedence; reorderings change results on cases matching several rules.
    """
    C, E, A = enc.features.shape
    if flags.shape != (C, E - 1, A):
        raise ClassifierError(f"flag tensor {flags.shape} does not match log {(C, E - 1, A)}")
    if set(rule_order) != set(DEFAULT_RULE_ORDER) or len(rule_order) != len(DEFAULT_RULE_ORDER):
        raise ClassifierError(f"rule_order must permute {DEFAULT_RULE_ORDER}")
    mask = valid_mask(enc.case_lengths, E - 1)
    if np.any(flags.astype(bool) & ~mask[:, :, None]):
        raise ClassifierError("flags set on padding positions")
    for c, e in np.argwhere(flags[:, :, 0]):
        if (int(c), int(e), 0) not in predictions:
            raise ClassifierError(f"no prediction set for flagged activity slot ({c}, {e})")

    out = np.zeros((C, E - 1, A), dtype=np.int8)
    decoder = enc.decoders[0]
    for c in range(C):
        if not flags[c].any():
            continue
        n = int(enc.case_lengths[c])
        acts = [decoder[code] for code in enc.features[c, 1:n + 1, 0]]
        act_flags = flags[c, :n, 0]
        preds_at = {
            int(e): frozenset(predictions[(c, int(e), 0)])
            for e in np.flatnonzero(act_flags)
        }
        for e in preds_at:
            own = acts[e]
            for rule in rule_order:
                if _rule_matches(rule, e, own, preds_at[e], acts, act_flags, preds_at):
                    out[c, e, 0] = _RULE_CLASS[rule]
                    break
            else:
                out[c, e, 0] = INSERT
        for e, a in np.argwhere(flags[c, :, 1:]):
            out[c, e, a + 1] = ATTRIBUTE
    return out


@dataclass
class ClassificationReport:
    confusion: np.ndarray               # (8, 8) counts, rows = truth, cols = predicted
    per_class_f1: dict[str, float]      # anomaly classes, detection errors excluded
    macro_f1: float
    joint_per_class_f1: dict[str, float]  # anomaly classes, every valid slot counts
    joint_macro_f1: float


def _macro_f1(truth: np.ndarray, predicted: np.ndarray) -> tuple[dict[str, float], float]:
    scores: dict[str, float] = {}
    for code, label in enumerate(LABEL_CLASSES):
        if code == NORMAL:
            continue
        tp = int(np.sum((truth == code) & (predicted == code)))
        fp = int(np.sum((truth != code) & (predicted == code)))
        fn = int(np.sum((truth == code) & (predicted != code)))
        if tp + fp + fn == 0:
            continue
        scores[label.value] = 2 * tp / (2 * tp + fp + fn)
    macro = float(np.mean(list(scores.values()))) if scores else 0.0
    return scores, macro


def classification_report(predicted: np.ndarray, truth: np.ndarray,
                          case_lengths: np.ndarray) -> ClassificationReport:
    """Confusion matrix plus two macro-F1 views of the classification.

    per_class_f1/macro_f1 judge only the explanation step: slots both truly
    anomalous and predicted anomalous (a detector miss or false alarm is not
    the rule set's mistake). joint_* scores the combined pipeline over every
    real slot, so detection errors count against it. Classes absent from both
    truth and prediction in scope are left out of the averages.
    """
    if truth is None:
        raise ClassifierError("ground-truth labels are required")
    if predicted.shape != truth.shape:
        raise ClassifierError(f"predicted {predicted.shape} vs truth {truth.shape}")
    mask = valid_mask(case_lengths, predicted.shape[1])[:, :, None]
    mask = np.broadcast_to(mask, predicted.shape)

    confusion = np.zeros((len(LABEL_CLASSES), len(LABEL_CLASSES)), dtype=np.int64)
    t, p = truth[mask], predicted[mask]
    np.add.at(confusion, (t.astype(int), p.astype(int)), 1)

    both = (t != NORMAL) & (p != NORMAL)
    per_class, macro = _macro_f1(t[both], p[both])
    joint_per_class, joint = _macro_f1(t, p)
    return ClassificationReport(confusion, per_class, macro, joint_per_class, joint)


def confusion_csv(report: ClassificationReport) -> str:
    lines = ["truth\\predicted," + ",".join(CLASS_NAMES)]
    for name, row in zip(CLASS_NAMES, report.confusion):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def export_classified(log: EventLog, predicted: np.ndarray, path: str) -> None:
    """Write the log as JSON with a per-event "predicted" class mapping."""
    obj = _log_to_obj(log)
    schema = log.schema
    for i, case in enumerate(obj["cases"]):
        for j, event in enumerate(case["events"]):
            event["predicted"] = {
                name: LABEL_CLASSES[int(predicted[i, j, k])].value
                for k, name in enumerate(schema)
            }
    atomic_write_text(path, json.dumps(obj, separators=(",", ":")) + "\n")
