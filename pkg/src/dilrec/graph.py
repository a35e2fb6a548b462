"""Per-period bipartite graphs, node activity labels, and quad sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionLog, PeriodSplit, group_items_by_user, universe_at
from .engine import SparseMatrix
from .errors import DataError

# node activity labels for one period
ACTIVE, INACTIVE, NEW = 0, 1, 2


@dataclass(frozen=True)
class BipartiteGraph:
    """Symmetrically normalized user-item adjacency over a node universe.

    Nodes are stacked users-then-items; edge (u, i) carries weight
    1/sqrt(deg(u) * deg(i)) in both directions, with degrees counted from this
    period's edges only. Zero-degree nodes stay in the universe.
    """

    user_count: int
    item_count: int
    adjacency: SparseMatrix
    degrees: np.ndarray

    @property
    def node_count(self) -> int:
        return self.user_count + self.item_count


def build_graph(users: np.ndarray, items: np.ndarray, user_count: int, item_count: int) -> BipartiteGraph:
    """Build the normalized adjacency for one period's interactions.

    Repeated (user, item) pairs within the period collapse to a single edge.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size and (users.min() < 0 or users.max() >= user_count):
        raise DataError("build_graph: user id outside the universe")
    if items.size and (items.min() < 0 or items.max() >= item_count):
        raise DataError("build_graph: item id outside the universe")
    codes = np.unique(users * np.int64(item_count) + items) if users.size else np.empty(0, np.int64)
    eu = codes // item_count
    ei = codes % item_count
    deg_u = np.bincount(eu, minlength=user_count).astype(np.float64)
    deg_i = np.bincount(ei, minlength=item_count).astype(np.float64)
    w = 1.0 / np.sqrt(deg_u[eu] * deg_i[ei]) if codes.size else np.empty(0)
    n = user_count + item_count
    rows = np.concatenate([eu, user_count + ei])
    cols = np.concatenate([user_count + ei, eu])
    weights = np.concatenate([w, w])
    adjacency = SparseMatrix.from_coo(n, n, rows, cols, weights)
    degrees = np.concatenate([deg_u, deg_i])
    return BipartiteGraph(user_count, item_count, adjacency, degrees)


def graph_for_records(log: InteractionLog, start: int, end: int, user_count: int, item_count: int) -> BipartiteGraph:
    return build_graph(log.users[start:end], log.items[start:end], user_count, item_count)


@dataclass(frozen=True)
class NodeActivity:
    """Activity label per node known by the given period.

    ``active``: known before the period and interacting in the previous
    window; ``new``: first interaction inside the period; ``inactive``: known
    but silent in the previous window. The previous window of period 0 is the
    warm-up.
    """

    period_index: int
    user_labels: np.ndarray
    item_labels: np.ndarray

    def count(self, label: int) -> tuple[int, int]:
        return int((self.user_labels == label).sum()), int((self.item_labels == label).sum())


def classify_nodes(log: InteractionLog, split: PeriodSplit, period_index: int) -> NodeActivity:
    if not (0 <= period_index < split.period_count):
        raise DataError(f"classify_nodes: period {period_index} out of range")
    start, end = split.periods[period_index]
    prev_start, prev_end = split.warmup if period_index == 0 else split.periods[period_index - 1]
    n_users, n_items = universe_at(log, end)
    known_users, known_items = universe_at(log, start)

    def _labels(count: int, known: int, prev_active: np.ndarray) -> np.ndarray:
        labels = np.full(count, INACTIVE, dtype=np.int8)
        labels[known:] = NEW
        active = prev_active[prev_active < known]
        labels[active] = ACTIVE
        return labels

    prev_users = np.unique(log.users[prev_start:prev_end])
    prev_items = np.unique(log.items[prev_start:prev_end])
    return NodeActivity(
        period_index,
        _labels(n_users, known_users, prev_users),
        _labels(n_items, known_items, prev_items),
    )


class PeriodSampler:
    """Serves (u, i, k, j) training quadruples for one retraining window.

    ``i`` is a current-window positive, ``k`` a uniformly sampled strictly
    earlier item of the same user (-1 when the user has no history), and ``j``
    a uniform negative among items the user never touched up to the end of
    the window.
    """

    def __init__(
        self,
        log: InteractionLog,
        pos_range: tuple[int, int],
        hist_end: int,
        seen_end: int,
        user_count: int,
        item_count: int,
    ):
        start, end = pos_range
        if end <= start:
            raise DataError("PeriodSampler: empty positive range")
        self.user_count = int(user_count)
        self.item_count = int(item_count)
        self.pos_users = log.users[start:end].copy()
        self.pos_items = log.items[start:end].copy()
        self.cur_offsets, self.cur_items = group_items_by_user(
            self.pos_users, self.pos_items, user_count
        )
        self.hist_offsets, self.hist_items = group_items_by_user(
            log.users[:hist_end], log.items[:hist_end], user_count
        )
        seen_u = log.users[:seen_end]
        seen_i = log.items[:seen_end]
        self.seen_codes = np.unique(seen_u * np.int64(item_count) + seen_i)
        # per-user count of distinct seen items, for the saturation check
        per_user = np.bincount((self.seen_codes // item_count).astype(np.int64), minlength=user_count)
        saturated = np.flatnonzero(per_user >= item_count)
        if saturated.size and np.isin(self.pos_users, saturated).any():
            raise DataError(
                "PeriodSampler: a user has interacted with every item; no negatives exist"
            )
        self._seen_per_user = per_user

    def __len__(self) -> int:
        return int(self.pos_users.shape[0])

    def _seen(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        if self.seen_codes.size == 0:
            return np.zeros(users.shape[0], dtype=bool)
        codes = users.astype(np.int64) * self.item_count + items
        pos = np.searchsorted(self.seen_codes, codes)
        pos = np.minimum(pos, self.seen_codes.size - 1)
        return self.seen_codes[pos] == codes

    def current_items(self, user: int) -> np.ndarray:
        return self.cur_items[self.cur_offsets[user] : self.cur_offsets[user + 1]]

    def history_items(self, user: int) -> np.ndarray:
        return self.hist_items[self.hist_offsets[user] : self.hist_offsets[user + 1]]

    def sample_negative(self, user: int, rng: np.random.Generator) -> int:
        if self._seen_per_user[user] >= self.item_count:
            raise DataError(f"user {user} has interacted with every item; no negatives exist")
        while True:
            j = int(rng.integers(0, self.item_count))
            if not self._seen(np.array([user]), np.array([j]))[0]:
                return j

    def sample_quad(self, user: int, rng: np.random.Generator) -> tuple[int, int, int, int]:
        cur = self.current_items(user)
        if cur.size == 0:
            raise DataError(f"user {user} has no interactions in the current window")
        i = int(cur[rng.integers(0, cur.size)])
        hist = self.history_items(user)
        k = int(hist[rng.integers(0, hist.size)]) if hist.size else -1
        j = self.sample_negative(user, rng)
        return user, i, k, j

    def epoch_batches(self, rng: np.random.Generator, batch_size: int):
        """One pass over the window: each positive appears once; k, j are fresh.

        Yields (users, pos_items, hist_items, neg_items) arrays, hist item -1
        where the user has no earlier interactions.
        """
        order = rng.permutation(len(self))
        hist_len = np.diff(self.hist_offsets)
        for lo in range(0, len(self), batch_size):
            sel = order[lo : lo + batch_size]
            u = self.pos_users[sel]
            i = self.pos_items[sel]
            lens = hist_len[u]
            k = np.full(u.shape[0], -1, dtype=np.int64)
            with_hist = lens > 0
            if with_hist.any():
                picks = (rng.random(int(with_hist.sum())) * lens[with_hist]).astype(np.int64)
                k[with_hist] = self.hist_items[self.hist_offsets[u[with_hist]] + picks]
            j = rng.integers(0, self.item_count, size=u.shape[0])
            bad = self._seen(u, j)
            while bad.any():
                j[bad] = rng.integers(0, self.item_count, size=int(bad.sum()))
                bad = self._seen(u, j)
            yield u, i, k, j


def sample_training_quad(
    sampler: PeriodSampler, user: int, rng: np.random.Generator
) -> tuple[int, int, int, int]:
    """Draw one (u, i, k, j) quadruple; k is -1 when the user has no history."""
    return sampler.sample_quad(user, rng)
