"""All-item top-K ranking, Recall@K / NDCG@K, and per-period evaluation.

Evaluation of a model trained through period n runs on period n + 1: the
first 10% of its records (by timestamp order) belong to early stopping, the
remaining 90% form the test slice. Candidates are all items seen till the
end of period n; previously interacted items are excluded from a user's
candidates by default. Users and items the model never saw are scored with
freshly initialized vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import InteractionLog, PeriodSplit, group_items_by_user, universe_at
from .errors import DataError

INIT_SCALE = 0.05  # uniform init range for nodes unknown to the model


@dataclass(frozen=True)
class RankingTask:
    """Per-user relevance and exclusions against a fixed candidate universe.

    Relevant sets are non-empty for every listed user; excluded items never
    appear in rankings produced against the task.
    """

    candidate_count: int
    relevant: dict[int, np.ndarray]
    excluded: dict[int, np.ndarray]

    def __post_init__(self):
        for u, rel in self.relevant.items():
            if rel.size == 0:
                raise ValueError(f"RankingTask: empty relevant set for user {u}")


@dataclass
class PeriodMetrics:
    """User-averaged metrics of one evaluated period (full precision)."""

    index: int
    recall: dict[int, float]
    ndcg: dict[int, float]
    users_evaluated: int
    unseen_users: int
    unseen_items: int


@dataclass
class MetricsReport:
    """Report mirror of the JSON schema; metric values carry 6 decimals."""

    run: dict
    periods: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)


def _round6(v: float) -> float:
    return float(f"{v:.6f}")


def rank_topk(
    user_vectors: np.ndarray,
    item_vectors: np.ndarray,
    k: int,
    excluded: Sequence[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Top-k item ids per user row by dot-product score.

    Ties break toward the lower item index; excluded items never appear. If
    fewer than k candidates remain, all of them are returned ranked.
    """
    if k < 1:
        raise ValueError(f"rank_topk: k must be >= 1, got {k}")
    scores = user_vectors @ item_vectors.T
    n_items = item_vectors.shape[0]
    item_ids = np.arange(n_items)
    out = []
    for r in range(scores.shape[0]):
        row = scores[r]
        n_excluded = 0
        if excluded is not None and excluded[r].size:
            row = row.copy()
            row[excluded[r]] = -np.inf
            n_excluded = int(excluded[r].size)
        order = np.lexsort((item_ids, -row))
        out.append(order[: min(k, n_items - n_excluded)])
    return out


def ranked_from_scores(scores: np.ndarray, k: int, excluded: np.ndarray | None = None) -> np.ndarray:
    """Rank one user's precomputed scores (same tie and exclusion rules)."""
    n_items = scores.shape[0]
    n_excluded = 0
    if excluded is not None and excluded.size:
        scores = scores.copy()
        scores[excluded] = -np.inf
        n_excluded = int(excluded.size)
    order = np.lexsort((np.arange(n_items), -scores))
    return order[: min(k, n_items - n_excluded)]


def recall_at_k(ranked: np.ndarray, relevant, k: int) -> float:
    """Fraction of the relevant items that appear in the top k."""
    relevant = set(int(x) for x in relevant)
    if not relevant:
        raise ValueError("recall_at_k: empty relevant set")
    hits = sum(1 for item in ranked[:k] if int(item) in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked: np.ndarray, relevant, k: int) -> float:
    """Binary-relevance NDCG with the standard log2 position discount."""
    relevant = set(int(x) for x in relevant)
    if not relevant:
        raise ValueError("ndcg_at_k: empty relevant set")
    dcg = 0.0
    for rank, item in enumerate(ranked[:k], start=1):
        if int(item) in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


def build_ranking_task(
    log: InteractionLog,
    slice_range: tuple[int, int],
    horizon_end: int,
    exclude_seen: bool,
    skip_users: set[int] | None = None,
) -> RankingTask:
    """Relevance/exclusion sets for one record slice.

    Candidates are the items seen before ``horizon_end``. With exclusion on,
    a user's previously interacted items leave both the candidates and that
    user's relevant set; users left with nothing relevant are dropped.
    """
    s, e = slice_range
    users = log.users[s:e]
    items = log.items[s:e]
    n_users_h, n_items_h = universe_at(log, horizon_end)
    rel_offsets, rel_items = group_items_by_user(users, items, max(int(users.max()) + 1, 1))
    hist_offsets, hist_items = group_items_by_user(
        log.users[:horizon_end], log.items[:horizon_end], max(n_users_h, 1)
    )
    relevant: dict[int, np.ndarray] = {}
    excluded: dict[int, np.ndarray] = {}
    empty = np.empty(0, dtype=np.int64)
    for u in np.unique(users):
        u = int(u)
        if skip_users and u in skip_users:
            continue
        rel = rel_items[rel_offsets[u] : rel_offsets[u + 1]]
        seen = hist_items[hist_offsets[u] : hist_offsets[u + 1]] if u < n_users_h else empty
        if exclude_seen and seen.size:
            rel = np.setdiff1d(rel, seen, assume_unique=True)
        if rel.size == 0:
            continue
        relevant[u] = rel
        excluded[u] = seen if exclude_seen else empty
    return RankingTask(candidate_count=n_items_h, relevant=relevant, excluded=excluded)


def _task_metrics(
    task: RankingTask,
    user_vectors_for,
    item_matrix: np.ndarray,
    ks: Sequence[int],
) -> tuple[dict[int, float], dict[int, float], int]:
    """Macro-averaged Recall@K and NDCG@K over a ranking task."""
    kmax = max(ks)
    recall_sum = {k: 0.0 for k in ks}
    ndcg_sum = {k: 0.0 for k in ks}
    eval_users = sorted(task.relevant)
    if not eval_users:
        return recall_sum, ndcg_sum, 0
    vecs = np.vstack([user_vectors_for(u) for u in eval_users])
    scores = vecs @ item_matrix.T
    for r, u in enumerate(eval_users):
        ranked = ranked_from_scores(scores[r], kmax, task.excluded[u])
        rel_set = set(int(x) for x in task.relevant[u])
        for k in ks:
            recall_sum[k] += recall_at_k(ranked, rel_set, k)
            ndcg_sum[k] += ndcg_at_k(ranked, rel_set, k)
    n = len(eval_users)
    return {k: v / n for k, v in recall_sum.items()}, {k: v / n for k, v in ndcg_sum.items()}, n


def validation_split_point(start: int, end: int) -> int:
    """Index separating the first-10% early-stop slice from the 90% test slice."""
    size = end - start
    return start + max(1, size // 10)


def evaluate_period(
    user_finals: np.ndarray,
    item_finals: np.ndarray,
    log: InteractionLog,
    split: PeriodSplit,
    period_index: int,
    ks: Sequence[int],
    exclude_seen: bool,
    rng: np.random.Generator,
) -> PeriodMetrics:
    """Evaluate frozen final representations on one period's 90% test slice.

    ``user_finals``/``item_finals`` cover the nodes the model was trained on;
    nodes in the candidate universe or test slice beyond those rows get
    deterministic uniform[-0.05, 0.05] vectors from ``rng`` (items first, then
    users in ascending id order).
    """
    start, end = split.periods[period_index]
    if end - start < 10:
        raise DataError(
            f"period {period_index} too small to split ({end - start} records, need >= 10)"
        )
    test_start = validation_split_point(start, end)
    horizon_end = start
    n_users_h, n_items_h = universe_at(log, horizon_end)
    dim = item_finals.shape[1]
    model_items = item_finals.shape[0]
    model_users = user_finals.shape[0]
    if model_items > n_items_h or model_users > n_users_h:
        raise DataError("evaluate_period: model covers nodes beyond the candidate horizon")

    item_matrix = np.empty((n_items_h, dim))
    item_matrix[:model_items] = item_finals
    if n_items_h > model_items:
        item_matrix[model_items:] = rng.uniform(-INIT_SCALE, INIT_SCALE, (n_items_h - model_items, dim))

    test_users = np.unique(log.users[test_start:end])
    extra_vecs: dict[int, np.ndarray] = {}
    for u in test_users:
        if u >= model_users:
            extra_vecs[int(u)] = rng.uniform(-INIT_SCALE, INIT_SCALE, dim)

    def user_vec(u: int):
        if u < model_users:
            return user_finals[u]
        return extra_vecs[u]

    task = build_ranking_task(log, (test_start, end), horizon_end, exclude_seen)
    recall, ndcg, evaluated = _task_metrics(task, user_vec, item_matrix, ks)
    test_items = set(int(x) for x in np.unique(log.items[test_start:end]))
    unseen_users = int(sum(1 for u in test_users if u >= model_users))
    unseen_items = int(sum(1 for i in test_items if i >= model_items))
    return PeriodMetrics(
        index=period_index,
        recall=recall,
        ndcg=ndcg,
        users_evaluated=evaluated,
        unseen_users=unseen_users,
        unseen_items=unseen_items,
    )


def validation_recall(
    user_finals: np.ndarray,
    item_finals: np.ndarray,
    log: InteractionLog,
    split: PeriodSplit,
    period_index: int,
    k: int,
    exclude_seen: bool,
) -> float:
    """Recall@k on the first 10% of a period, for early stopping.

    Users unknown to the model are skipped here; their vectors would be
    training-independent noise.
    """
    start, end = split.periods[period_index]
    val_end = validation_split_point(start, end)
    model_users = user_finals.shape[0]
    skip = {int(u) for u in np.unique(log.users[start:val_end]) if u >= model_users}
    task = build_ranking_task(log, (start, val_end), start, exclude_seen, skip_users=skip)
    recall, _, evaluated = _task_metrics(task, lambda u: user_finals[u], item_finals, [k])
    return recall[k] if evaluated else 0.0


def aggregate_report(
    period_metrics: Sequence[PeriodMetrics],
    primary_k: int,
    strategy: str,
    seed: int,
    config_hash: str,
    aggregate_indices: Sequence[int] | None = None,
) -> MetricsReport:
    """Combine per-period metrics into the report structure.

    The aggregate is the arithmetic mean over the periods named by
    ``aggregate_indices`` (all periods when omitted or when none match).
    Metric values are fixed to 6 decimals so serialized forms round-trip.
    """
    if not period_metrics:
        raise ValueError("aggregate_report: no period metrics")
    rows = []
    for pm in sorted(period_metrics, key=lambda m: m.index):
        rows.append(
            {
                "index": pm.index,
                "recall": _round6(pm.recall[primary_k]),
                "ndcg": _round6(pm.ndcg[primary_k]),
                "users_evaluated": pm.users_evaluated,
                "unseen_users": pm.unseen_users,
                "unseen_items": pm.unseen_items,
            }
        )
    wanted = set(aggregate_indices) if aggregate_indices is not None else None
    agg_rows = [r for r in rows if wanted is None or r["index"] in wanted]
    if not agg_rows:
        agg_rows = rows
    aggregate = {
        "recall": _round6(sum(r["recall"] for r in agg_rows) / len(agg_rows)),
        "ndcg": _round6(sum(r["ndcg"] for r in agg_rows) / len(agg_rows)),
    }
    run = {"strategy": strategy, "seed": int(seed), "config_hash": config_hash}
    return MetricsReport(run=run, periods=rows, aggregate=aggregate)
