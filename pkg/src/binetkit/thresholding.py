"""Anomaly scores, threshold heuristics and thresholding strategies.

The anomaly score of an observed value under a predicted distribution is the
probability mass strictly above the observed value's probability: 0 means the
value was the top prediction, values near 1 mean almost everything was more
likely. A threshold tau flags scores strictly greater than tau. Score tensors
have shape (C, E', A) with E' = maximum case length; padding slots are exactly
zero and are never flagged or counted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .event_log import valid_mask

GLOBAL = "global"
PER_ATTRIBUTE = "per_attribute"
PER_EVENT = "per_event"
PER_EVENT_ATTRIBUTE = "per_event_attribute"
STRATEGIES = (GLOBAL, PER_ATTRIBUTE, PER_EVENT, PER_EVENT_ATTRIBUTE)

LP_LEFT = "lp_left"
LP_CENTER = "lp_center"
LP_RIGHT = "lp_right"
ELBOW_DOWN = "elbow_down"
ELBOW_UP = "elbow_up"
BEST = "best"
HEURISTICS = (LP_LEFT, LP_CENTER, LP_RIGHT, ELBOW_DOWN, ELBOW_UP, BEST)

MAX_CANDIDATES = 10_000

# resolution of the uniform threshold grid behind the curve heuristics
RATIO_GRID = 1001
# a plateau must span this fraction of the curve range to be eligible
MIN_PLATEAU_SPAN = 0.01

# threshold used for empty cross-sections: flags nothing
EMPTY_SECTION_TAU = 1.0


class ThresholdingError(ValueError):
    pass


def anomaly_score(distribution: np.ndarray, observed_probability: float) -> float:
    """Probability mass strictly greater than the observed value's probability."""
    p = np.asarray(distribution, dtype=np.float64)
    return float(p[p > observed_probability].sum())


def scores_from_distributions(probs: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Vectorized anomaly scores.

    probs: (..., V) probability vectors; observed: (...) integer codes into the
    last axis. Returns scores with the leading shape.
    """
    p_v = np.take_along_axis(probs, observed[..., None], axis=-1)
    return np.where(probs > p_v, probs, 0.0).sum(axis=-1)


@dataclass
class ThresholdAssignment:
    strategy: str
    values: np.ndarray  # (), (A,), (E',) or (E', A) depending on strategy

    def per_slot(self, num_events: int, num_attributes: int) -> np.ndarray:
        """Thresholds broadcast to (E', A)."""
        tau = np.asarray(self.values, dtype=np.float64)
        if self.strategy == GLOBAL:
            return np.full((num_events, num_attributes), float(tau))
        if self.strategy == PER_ATTRIBUTE:
            return np.broadcast_to(tau[None, :], (num_events, num_attributes)).copy()
        if self.strategy == PER_EVENT:
            return np.broadcast_to(tau[:, None], (num_events, num_attributes)).copy()
        if self.strategy == PER_EVENT_ATTRIBUTE:
            return tau.copy()
        raise ThresholdingError(f"unknown strategy {self.strategy!r}")


def apply_thresholds(scores: np.ndarray, assignment: ThresholdAssignment,
                     case_lengths: np.ndarray) -> np.ndarray:
    """Binary flag tensor: score strictly above its threshold, padding never flagged."""
    C, Ep, A = scores.shape
    tau = assignment.per_slot(Ep, A)
    flags = scores > tau[None, :, :]
    flags &= valid_mask(case_lengths, Ep)[:, :, None]
    return flags.astype(np.uint8)


def anomaly_ratio(scores: np.ndarray, tau: float, case_lengths: np.ndarray) -> float:
    """Share of non-padding attribute slots whose score exceeds tau."""
    C, Ep, A = scores.shape
    mask = valid_mask(case_lengths, Ep)[:, :, None]
    total = int(mask.sum()) * A
    flagged = int(((scores > tau) & mask).sum())
    return flagged / total if total else 0.0


def candidate_thresholds(values: np.ndarray, cap: int = MAX_CANDIDATES) -> np.ndarray:
    """Sorted distinct scores, uniformly subsampled down to cap if necessary."""
    distinct = np.unique(np.asarray(values, dtype=np.float64))
    if distinct.size <= cap:
        return distinct
    idx = np.unique(np.linspace(0, distinct.size - 1, cap).round().astype(np.int64))
    return distinct[idx]


def ratio_curve(scores: np.ndarray,
                resolution: int = RATIO_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Anomaly-ratio curve on a uniform threshold grid over [0, max score].

    Evaluating the curve on an even grid rather than on the raw score values
    keeps the flatness test independent of how scores happen to cluster; the
    grid stops at the maximum score because every threshold beyond it flags
    nothing and adds no structure.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ThresholdingError("cannot build a ratio curve without scores")
    taus = np.linspace(0.0, float(scores.max()), resolution)
    ordered = np.sort(scores)
    ratios = 1.0 - np.searchsorted(ordered, taus, side="right") / scores.size
    return taus, ratios


def ratio_derivatives(taus: np.ndarray, ratios: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First derivative by forward difference, second by 3-point central difference.

    Endpoints reuse their nearest one-sided stencil. Requires >= 3 candidates.
    """
    taus = np.asarray(taus, dtype=np.float64)
    ratios = np.asarray(ratios, dtype=np.float64)
    n = taus.size
    if n < 3:
        raise ThresholdingError(f"need at least 3 candidates for derivatives, got {n}")
    diffs = np.diff(ratios) / np.diff(taus)
    first = np.empty(n)
    first[:-1] = diffs
    first[-1] = diffs[-1]

    second = np.empty(n)
    left = taus[:-2] - taus[1:-1]
    right = taus[2:] - taus[1:-1]
    span = taus[2:] - taus[:-2]
    second[1:-1] = 2.0 * (
        ratios[:-2] / (-left * span) - ratios[1:-1] / (-left * right) + ratios[2:] / (right * span)
    )
    second[0] = second[1]
    second[-1] = second[-2]
    return first, second


@dataclass
class Plateau:
    start: int   # candidate index, inclusive
    end: int     # candidate index, inclusive
    level: float


def find_plateaus(taus: np.ndarray, ratios: np.ndarray) -> list[Plateau]:
    """Maximal runs where |slope| is below twice the curve's average slope.

    The flatness scale is 2 * |r_last - r_first| / (tau_last - tau_first): the
    average slope of the curve itself, which unlike a mean of per-step slopes
    is not inflated by tightly clustered sample points. A run of flat forward
    differences [a..b] spans points [a..b+1]. Constant curves plateau over
    the whole range.
    """
    taus = np.asarray(taus, dtype=np.float64)
    ratios = np.asarray(ratios, dtype=np.float64)
    n = taus.size
    if n < 2:
        return [Plateau(0, n - 1, float(ratios[0]))] if n else []
    span = float(taus[-1] - taus[0])
    if span <= 0.0:
        return [Plateau(0, n - 1, float(ratios.mean()))]
    diffs = np.abs(np.diff(ratios) / np.diff(taus))
    epsilon = 2.0 * abs(float(ratios[-1] - ratios[0])) / span
    flat = diffs < epsilon
    if not flat.any():
        if np.allclose(diffs, 0.0):
            return [Plateau(0, n - 1, float(ratios.mean()))]
        first, _ = ratio_derivatives(taus, ratios) if n >= 3 else (diffs, None)
        i = int(np.argmin(np.abs(first)))
        return [Plateau(i, i, float(ratios[i]))]
    plateaus = []
    i = 0
    while i < flat.size:
        if not flat[i]:
            i += 1
            continue
        j = i
        while j + 1 < flat.size and flat[j + 1]:
            j += 1
        plateaus.append(Plateau(i, j + 1, float(ratios[i : j + 2].mean())))
        i = j + 2
    return plateaus


def _f1_over_candidates(scores: np.ndarray, labels: np.ndarray,
                        candidates: np.ndarray) -> np.ndarray:
    """F1 of (scores > tau) against labels, for every candidate tau."""
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    positives_sorted = labels[order].astype(np.int64)
    suffix_tp = np.concatenate([np.cumsum(positives_sorted[::-1])[::-1], [0]])
    total_positive = int(positives_sorted.sum())
    # index of the first score strictly greater than tau
    first_above = np.searchsorted(sorted_scores, candidates, side="right")
    predicted_positive = scores.size - first_above
    tp = suffix_tp[first_above]
    denom = predicted_positive + total_positive
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(denom > 0, 2.0 * tp / denom, 0.0)
    return f1


def select_threshold(scores: np.ndarray, kind: str,
                     labels: np.ndarray | None = None) -> float:
    """Pick a threshold for one cross-section of scores (1-D, padding removed)."""
    if kind not in HEURISTICS:
        raise ThresholdingError(f"unknown heuristic {kind!r}")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        return EMPTY_SECTION_TAU
    candidates = candidate_thresholds(scores)

    if kind == BEST:
        if labels is None:
            raise ThresholdingError("the best heuristic needs ground-truth labels")
        labels = np.asarray(labels).ravel().astype(bool)
        if labels.shape != scores.shape:
            raise ThresholdingError("scores and labels must align")
        f1 = _f1_over_candidates(scores, labels, candidates)
        return float(candidates[int(np.argmax(f1))])  # first argmax = smallest tau

    if candidates.size < 3:
        # not enough structure for a curve; be conservative and flag nothing
        return float(candidates[-1])

    taus, ratios = ratio_curve(scores)

    if kind in (LP_LEFT, LP_CENTER, LP_RIGHT):
        plateaus = find_plateaus(taus, ratios)
        span = float(taus[-1] - taus[0])
        wide = [p for p in plateaus
                if taus[p.end] - taus[p.start] >= MIN_PLATEAU_SPAN * span]
        pool = wide or plateaus  # noise-sized runs only matter if nothing else
        lowest = min(pool, key=lambda p: (p.level, taus[p.start]))
        if kind == LP_LEFT:
            return float(taus[lowest.start])
        if kind == LP_RIGHT:
            return float(taus[lowest.end])
        return float(taus[lowest.start : lowest.end + 1].mean())

    _, second = ratio_derivatives(taus, ratios)
    if kind == ELBOW_DOWN:
        return float(taus[int(np.argmax(second))])
    return float(taus[int(np.argmin(second))])


def apply_strategy(scores: np.ndarray, case_lengths: np.ndarray, kind: str,
                   strategy: str, labels: np.ndarray | None = None) -> ThresholdAssignment:
    """Run a heuristic on every cross-section the strategy defines."""
    if strategy not in STRATEGIES:
        raise ThresholdingError(f"unknown strategy {strategy!r}")
    C, Ep, A = scores.shape
    mask = valid_mask(case_lengths, Ep)

    def pick(section_scores, section_labels):
        return select_threshold(section_scores, kind, section_labels)

    if strategy == GLOBAL:
        sel = np.broadcast_to(mask[:, :, None], scores.shape)
        values = np.float64(pick(scores[sel], labels[sel] if labels is not None else None))
    elif strategy == PER_ATTRIBUTE:
        values = np.array(
            [pick(scores[:, :, k][mask], labels[:, :, k][mask] if labels is not None else None)
             for k in range(A)]
        )
    elif strategy == PER_EVENT:
        values = np.array(
            [pick(scores[mask[:, j], j, :], labels[mask[:, j], j, :] if labels is not None else None)
             for j in range(Ep)]
        )
    else:
        values = np.empty((Ep, A))
        for j in range(Ep):
            rows = mask[:, j]
            for k in range(A):
                values[j, k] = pick(
                    scores[rows, j, k], labels[rows, j, k] if labels is not None else None
                )
    return ThresholdAssignment(strategy=strategy, values=values)
