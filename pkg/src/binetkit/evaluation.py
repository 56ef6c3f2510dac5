"""Detection metrics, method ranking, and significance reporting.

Scores flag tensors against ground truth at the attribute or case level,
ranks methods per dataset by F1, runs the Friedman test over the rank table,
and derives Nemenyi critical-difference groupings. emit_report writes the
whole comparison as CSV + JSON + an SVG critical-difference diagram, all
byte-deterministic given the same inputs.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .event_log import atomic_write_text, valid_mask

CASE = "case"
ATTRIBUTE_LEVEL = "attribute"
LEVELS = (CASE, ATTRIBUTE_LEVEL)

RESULT_COLUMNS = ("dataset", "method", "level", "heuristic", "strategy",
                  "seed", "precision", "recall", "f1")

# Two-tailed studentized-range quantiles / sqrt(2) at 95%, indexed by the
# number of methods k = 2..20. Verified against scipy in the test suite.
NEMENYI_Q_05 = {
    2: 1.959964, 3: 2.343701, 4: 2.569032, 5: 2.727774, 6: 2.849705,
    7: 2.948319, 8: 3.030879, 9: 3.101730, 10: 3.163684, 11: 3.218654,
    12: 3.268004, 13: 3.312739, 14: 3.353618, 15: 3.391230, 16: 3.426041,
    17: 3.458425, 18: 3.488685, 19: 3.517073, 20: 3.543799,
}


class EvaluationError(ValueError):
    """Inputs violate an evaluation contract."""


@dataclass
class DetectionResult:
    dataset: str
    method: str
    level: str
    heuristic: str
    strategy: str
    seed: int
    precision: float
    recall: float
    f1: float
    flags: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> str:
        return ",".join([
            self.dataset, self.method, self.level, self.heuristic,
            self.strategy, str(self.seed),
            f"{self.precision:.6f}", f"{self.recall:.6f}", f"{self.f1:.6f}",
        ])


def binary_metrics(predicted: np.ndarray, actual: np.ndarray) -> tuple[float, float, float]:
    """Precision/recall/F1 with the anomaly (nonzero) side as positive."""
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def detection_metrics(flags: np.ndarray, labels: np.ndarray,
                      case_lengths: np.ndarray, level: str) -> tuple[float, float, float]:
    """Score a flag tensor against ground-truth label codes.

    Attribute level compares every real (non-padding) attribute slot;
    case level collapses both sides to "does the case contain anything".
    """
    if labels is None:
        raise EvaluationError("ground-truth labels are required")
    if flags.shape != labels.shape:
        raise EvaluationError(f"flags {flags.shape} vs labels {labels.shape}")
    if level not in LEVELS:
        raise EvaluationError(f"level must be one of {LEVELS}, got {level!r}")
    if level == CASE:
        return binary_metrics(flags.any(axis=(1, 2)), labels.any(axis=(1, 2)))
    mask = valid_mask(case_lengths, flags.shape[1])[:, :, None]
    mask = np.broadcast_to(mask, flags.shape)
    return binary_metrics(flags[mask], labels[mask])


# ---------------------------------------------------------------------------
# Ranking


@dataclass
class RankTable:
    datasets: list[str]
    methods: list[str]
    f1: np.ndarray      # (N, k)
    ranks: np.ndarray   # (N, k), rank 1 = best F1, ties get mean ranks

    @property
    def mean_ranks(self) -> np.ndarray:
        return self.ranks.mean(axis=0)


def _mean_ranks_desc(row: np.ndarray) -> np.ndarray:
    """Rank a row with 1 for the largest value; equal values share mean rank."""
    order = np.argsort(-row, kind="stable")
    ranks = np.empty(len(row))
    i = 0
    while i < len(row):
        j = i
        while j + 1 < len(row) and row[order[j + 1]] == row[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def rank_table(datasets: list[str], methods: list[str], f1: np.ndarray) -> RankTable:
    f1 = np.asarray(f1, dtype=np.float64)
    if f1.shape != (len(datasets), len(methods)):
        raise EvaluationError(f"F1 matrix {f1.shape} does not match "
                              f"{len(datasets)} datasets x {len(methods)} methods")
    ranks = np.vstack([_mean_ranks_desc(row) for row in f1])
    return RankTable(list(datasets), list(methods), f1, ranks)


def rank_from_results(results: list[DetectionResult], level: str) -> RankTable:
    """Build the per-dataset rank table at one level, averaging F1 over seeds."""
    cells: dict[tuple[str, str], list[float]] = {}
    for r in results:
        if r.level == level:
            cells.setdefault((r.dataset, r.method), []).append(r.f1)
    if not cells:
        raise EvaluationError(f"no results at level {level!r}")
    datasets = sorted({d for d, _ in cells})
    methods = sorted({m for _, m in cells})
    f1 = np.empty((len(datasets), len(methods)))
    for i, d in enumerate(datasets):
        for j, m in enumerate(methods):
            if (d, m) not in cells:
                raise EvaluationError(f"method {m!r} has no result on dataset {d!r}")
            f1[i, j] = float(np.mean(cells[(d, m)]))
    return rank_table(datasets, methods, f1)


# ---------------------------------------------------------------------------
# Friedman test


def _gamma_upper_regularized(a: float, x: float) -> float:
    """Q(a, x) = Γ(a, x)/Γ(a) via power series (x < a+1) or continued fraction."""
    if x < 0 or a <= 0:
        raise EvaluationError("gamma tail needs a > 0 and x >= 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        # series for the lower tail P(a, x), then Q = 1 - P
        term = 1.0 / a
        total = term
        n = a
        for _ in range(500):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        log_p = -x + a * math.log(x) - math.lgamma(a)
        return 1.0 - total * math.exp(log_p)
    # Lentz's continued fraction for the upper tail
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi_square_upper_tail(statistic: float, dof: int) -> float:
    """P[X >= statistic] for a chi-square variable with dof degrees of freedom."""
    if dof < 1:
        raise EvaluationError("chi-square needs at least one degree of freedom")
    if statistic <= 0.0:
        return 1.0
    return min(1.0, max(0.0, _gamma_upper_regularized(dof / 2.0, statistic / 2.0)))


@dataclass
class FriedmanResult:
    statistic: float
    p_value: float
    dof: int


def friedman_test(table: RankTable) -> FriedmanResult:
    """Rank-based test that all methods perform alike across datasets."""
    N, k = table.ranks.shape
    if N < 2 or k < 2:
        raise EvaluationError("Friedman test needs at least 2 datasets and 2 methods")
    mean = table.mean_ranks
    statistic = 12.0 * N / (k * (k + 1)) * (float(np.sum(mean ** 2)) - k * (k + 1) ** 2 / 4.0)
    statistic = max(0.0, statistic)  # all-equal ranks can round to -0.0
    return FriedmanResult(statistic, chi_square_upper_tail(statistic, k - 1), k - 1)


# ---------------------------------------------------------------------------
# Nemenyi critical difference


def nemenyi_cd(k: int, N: int, alpha: float = 0.05) -> float:
    """Minimal mean-rank gap that is significant at the given level."""
    if alpha != 0.05:
        raise EvaluationError("only alpha = 0.05 is tabulated")
    if k not in NEMENYI_Q_05:
        raise EvaluationError(f"k = {k} outside the tabulated range 2..20")
    if N < 1:
        raise EvaluationError("need at least one dataset")
    return NEMENYI_Q_05[k] * math.sqrt(k * (k + 1) / (6.0 * N))


def cd_groups(methods: list[str], mean_ranks: np.ndarray, cd: float) -> list[tuple[str, ...]]:
    """Maximal runs of rank-adjacent methods whose spread stays within cd."""
    order = np.argsort(mean_ranks, kind="stable")
    ranks = np.asarray(mean_ranks)[order]
    names = [methods[i] for i in order]
    intervals = []
    for i in range(len(names)):
        j = i
        while j + 1 < len(names) and ranks[j + 1] - ranks[i] <= cd:
            j += 1
        intervals.append((i, j))
    maximal = [
        (a, b) for a, b in intervals
        if not any((c <= a and b <= d) and (c, d) != (a, b) for c, d in intervals)
    ]
    out = []
    for a, b in sorted(set(maximal)):
        out.append(tuple(names[a:b + 1]))
    return out


# ---------------------------------------------------------------------------
# Report emission


def _cd_diagram_svg(table: RankTable, cd: float) -> str:
    """A critical-difference diagram: rank axis, method ticks, group bars."""
    k = len(table.methods)
    width, left, right = 640, 60, 580
    scale = (right - left) / max(k - 1, 1)

    def x_of(rank: float) -> float:
        return left + (rank - 1.0) * scale

    order = np.argsort(table.mean_ranks, kind="stable")
    groups = cd_groups(table.methods, table.mean_ranks, cd)
    label_y = {}
    for slot, idx in enumerate(order):
        label_y[table.methods[idx]] = 70 + 18 * slot
    height = 90 + 18 * k + 22 * len(groups)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<line x1="{left}" y1="40" x2="{right}" y2="40" stroke="black"/>',
    ]
    for tick in range(1, k + 1):
        x = x_of(tick)
        parts.append(f'<line x1="{x:.2f}" y1="35" x2="{x:.2f}" y2="45" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="30" text-anchor="middle">{tick}</text>')
    parts.append(
        f'<text x="{left}" y="14">CD = {cd:.4f} (k={k}, N={len(table.datasets)})</text>'
    )
    for idx in order:
        name = table.methods[idx]
        rank = float(table.mean_ranks[idx])
        x, y = x_of(rank), label_y[name]
        parts.append(f'<line x1="{x:.2f}" y1="40" x2="{x:.2f}" y2="{y - 10}" stroke="gray"/>')
        parts.append(f'<text x="{x:.2f}" y="{y}" text-anchor="middle">{name} ({rank:.2f})</text>')
    base = 80 + 18 * k
    by_name = {m: float(r) for m, r in zip(table.methods, table.mean_ranks)}
    for g, group in enumerate(groups):
        lo = min(by_name[m] for m in group)
        hi = max(by_name[m] for m in group)
        y = base + 22 * g
        parts.append(
            f'<line x1="{x_of(lo):.2f}" y1="{y}" x2="{x_of(hi):.2f}" y2="{y}" '
            f'stroke="black" stroke-width="4" class="group"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(results: list[DetectionResult], out_dir: str, level: str = ATTRIBUTE_LEVEL,
                alpha: float = 0.05, failures: list[dict] | None = None) -> dict[str, str]:
    """Write results.csv, summary.json, and cd_diagram.svg under out_dir.

    Ranking, the Friedman test, and the CD diagram use the results at `level`
    (F1 averaged over seeds). Failed runs, if any, are recorded verbatim in
    the JSON summary instead of being scored as zero.
    """
    if not results:
        raise EvaluationError("nothing to report")
    os.makedirs(out_dir, exist_ok=True)

    ordered = sorted(results, key=lambda r: (r.dataset, r.method, r.level,
                                             r.heuristic, r.strategy, r.seed))
    csv_path = os.path.join(out_dir, "results.csv")
    atomic_write_text(csv_path, "\n".join(
        [",".join(RESULT_COLUMNS)] + [r.row() for r in ordered]) + "\n")

    table = rank_from_results(results, level)
    friedman = friedman_test(table) if table.ranks.shape[0] >= 2 and len(table.methods) >= 2 else None
    cd = nemenyi_cd(len(table.methods), len(table.datasets), alpha) if len(table.methods) >= 2 else None

    summary = {
        "level": level,
        "datasets": table.datasets,
        "methods": table.methods,
        "f1": [[round(v, 6) for v in row] for row in table.f1.tolist()],
        "mean_ranks": [round(v, 6) for v in table.mean_ranks.tolist()],
        "friedman": None if friedman is None else {
            "statistic": round(friedman.statistic, 10),
            "p_value": round(friedman.p_value, 10),
            "dof": friedman.dof,
        },
        "nemenyi_cd": None if cd is None else round(cd, 10),
        "groups": None if cd is None else cd_groups(table.methods, table.mean_ranks, cd),
        "failed_runs": list(failures or []),
    }
    json_path = os.path.join(out_dir, "summary.json")
    atomic_write_text(json_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")

    paths = {"csv": csv_path, "json": json_path}
    if cd is not None:
        svg_path = os.path.join(out_dir, "cd_diagram.svg")
        atomic_write_text(svg_path, _cd_diagram_svg(table, cd))
        paths["svg"] = svg_path
    return paths
