"""Offline metrics against the probe set: AUC, precision/recall/diversity@L."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .dataset import DataSplit
from .spreading import OBSERVED, ScoreMatrix
from .imputation import IllsTrace


@dataclass(frozen=True)
class RecommendationList:
    user: int
    items: tuple[int, ...]
    scores: tuple[float, ...]


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    precision: dict[int, float]
    recall: dict[int, float]
    diversity: dict[int, float]
    nrmse_trace: tuple[float, ...]
    seed: int
    ratio: float
    threshold: float | None = None
    chosen_k: int | None = None
    mode: str | None = None


def _probe_by_user(split: DataSplit) -> dict[int, np.ndarray]:
    probe = split.probe.as_array()
    out: dict[int, np.ndarray] = {}
    if probe.size == 0:
        return out
    order = np.argsort(probe[:, 1], kind="stable")
    items = probe[order, 0]
    users = probe[order, 1]
    starts = np.searchsorted(users, np.arange(split.training.user_count + 1))
    for u in range(split.training.user_count):
        if starts[u + 1] > starts[u]:
            out[u] = items[starts[u]:starts[u + 1]]
    return out


def _candidates(scores: ScoreMatrix, user: int) -> np.ndarray:
    """Item indices outside the user's training profile, ascending."""
    return np.nonzero(scores.provenance[:, user] != OBSERVED)[0]


def recommend(scores: ScoreMatrix, user: int, L: int) -> RecommendationList:
    """Top-L non-training items by score; ties go to the lower item index."""
    if L < 1:
        raise ValueError("L must be >= 1")
    cand = _candidates(scores, user)
    vals = scores.values[cand, user]
    order = np.argsort(-vals, kind="stable")[:L]
    picked = cand[order]
    return RecommendationList(user, tuple(int(i) for i in picked),
                              tuple(float(v) for v in vals[order]))


def _top_items_matrix(scores: ScoreMatrix, L: int):
    """Stacked top-L picks for every user with at least one candidate."""
    lists = []
    users = []
    for u in range(scores.user_count):
        cand = _candidates(scores, u)
        if cand.size == 0:
            continue
        vals = scores.values[cand, u]
        order = np.argsort(-vals, kind="stable")[:L]
        lists.append(cand[order])
        users.append(u)
    return users, lists


def auc(scores: ScoreMatrix, split: DataSplit) -> float:
    """Exact probability that a probe link outscores a non-link (ties half).

    Every (probe entry, non-link entry) pair of the same user enters the
    pooled count; per user the wins come from midrank statistics, which is
    identical to brute-force pair counting.
    """
    probe_map = _probe_by_user(split)
    if not probe_map:
        raise ValueError("probe set is empty")
    wins = 0.0
    pairs = 0
    for u in sorted(probe_map):
        probe_items = probe_map[u]
        cand = _candidates(scores, u)
        n_probe = probe_items.size
        n_non = cand.size - n_probe
        if n_non <= 0:
            continue
        ranks = scipy.stats.rankdata(scores.values[cand, u], method="average")
        pos = np.searchsorted(cand, probe_items)
        wins += float(ranks[pos].sum()) - n_probe * (n_probe + 1) / 2.0
        pairs += n_probe * n_non
    if pairs == 0:
        raise ValueError("graph complete: no non-link entries to compare against")
    return wins / pairs


def precision_at(scores: ScoreMatrix, split: DataSplit, L: int) -> float:
    """Mean fraction of the top-L list hitting probe items, over probe users."""
    if L < 1:
        raise ValueError("L must be >= 1")
    probe_map = _probe_by_user(split)
    if not probe_map:
        raise ValueError("probe set is empty")
    terms = []
    for u in sorted(probe_map):
        top = recommend(scores, u, L).items
        hits = len(set(top) & set(probe_map[u].tolist()))
        terms.append(hits / L)
    return math.fsum(terms) / len(terms)


def recall_at(scores: ScoreMatrix, split: DataSplit, L: int) -> float:
    """Mean fraction of each user's probe items recovered in the top-L."""
    if L < 1:
        raise ValueError("L must be >= 1")
    probe_map = _probe_by_user(split)
    if not probe_map:
        raise ValueError("probe set is empty")
    terms = []
    for u in sorted(probe_map):
        top = recommend(scores, u, L).items
        probe_items = probe_map[u]
        hits = len(set(top) & set(probe_items.tolist()))
        terms.append(hits / probe_items.size)
    return math.fsum(terms) / len(terms)


def diversity_at(scores: ScoreMatrix, L: int) -> float:
    """Mean over user pairs of one minus the top-L overlap fraction."""
    if L < 1:
        raise ValueError("L must be >= 1")
    users, lists = _top_items_matrix(scores, L)
    if len(users) < 2:
        raise ValueError("diversity needs at least 2 users with candidates")
    indicator = np.zeros((len(users), scores.item_count))
    for row, picked in enumerate(lists):
        indicator[row, picked] = 1.0
    overlaps = indicator @ indicator.T
    total_off = float(overlaps.sum() - np.trace(overlaps))
    count = len(users)
    return 1.0 - (total_off / (count * (count - 1))) / L


def build_report(scores: ScoreMatrix, split: DataSplit, Ls, trace: IllsTrace | None,
                 threshold: float | None = None, mode: str | None = None) -> MetricsReport:
    """Assemble every metric at each list length, deterministically."""
    Ls = [int(L) for L in Ls]
    return MetricsReport(
        auc=auc(scores, split),
        precision={L: precision_at(scores, split, L) for L in Ls},
        recall={L: recall_at(scores, split, L) for L in Ls},
        diversity={L: diversity_at(scores, L) for L in Ls},
        nrmse_trace=tuple(trace.nrmse_per_iteration) if trace else (),
        seed=split.seed,
        ratio=split.ratio,
        threshold=threshold,
        chosen_k=trace.chosen_k if trace else None,
        mode=mode,
    )


def report_to_json(report: MetricsReport) -> str:
    payload = {
        "auc": report.auc,
        "precision": {str(k): v for k, v in report.precision.items()},
        "recall": {str(k): v for k, v in report.recall.items()},
        "diversity": {str(k): v for k, v in report.diversity.items()},
        "nrmse_trace": list(report.nrmse_trace),
        "seed": report.seed,
        "ratio": report.ratio,
        "threshold": report.threshold,
        "chosen_k": report.chosen_k,
        "mode": report.mode,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def curves_to_csv(report: MetricsReport) -> str:
    lines = ["L,precision,recall,diversity"]
    for L in sorted(report.precision):
        lines.append(f"{L},{report.precision[L]!r},{report.recall[L]!r},{report.diversity[L]!r}")
    return "\n".join(lines) + "\n"
