"""Interaction ingestion, k-core filtering, and time-window splitting.

The on-disk interaction format is a UTF-8 TSV with one record per line:
``user_id<TAB>item_id<TAB>timestamp`` (no header, LF line endings,
timestamps are non-negative base-10 integers).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int


class InteractionLog:
    """Timestamp-sorted interactions with dense integer ids.

    Dense ids are assigned in first-appearance order over the sorted records,
    so the users (items) seen among records[:k] always occupy the contiguous
    id range [0, max_id + 1). Instances are immutable after construction.
    """

    __slots__ = ("users", "items", "timestamps", "user_keys", "item_keys")

    def __init__(self, users, items, timestamps, user_keys, item_keys):
        self.users = np.ascontiguousarray(users, dtype=np.int64)
        self.items = np.ascontiguousarray(items, dtype=np.int64)
        self.timestamps = np.ascontiguousarray(timestamps, dtype=np.int64)
        self.user_keys = list(user_keys)
        self.item_keys = list(item_keys)
        if not (len(self.users) == len(self.items) == len(self.timestamps)):
            raise DataError("InteractionLog: column lengths differ")

    def __len__(self) -> int:
        return int(self.users.shape[0])

    @property
    def n_users(self) -> int:
        return len(self.user_keys)

    @property
    def n_items(self) -> int:
        return len(self.item_keys)

    def record(self, idx: int) -> InteractionRecord:
        return InteractionRecord(
            self.user_keys[self.users[idx]],
            self.item_keys[self.items[idx]],
            int(self.timestamps[idx]),
        )


def _build_log(raw_users: list[str], raw_items: list[str], raw_ts: list[int]) -> InteractionLog:
    ts = np.asarray(raw_ts, dtype=np.int64)
    order = np.argsort(ts, kind="stable")  # ties keep input order
    seen_triples: set[tuple[str, str, int]] = set()
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []
    stamps: list[int] = []
    for idx in order:
        key = (raw_users[idx], raw_items[idx], raw_ts[idx])
        if key in seen_triples:
            continue
        seen_triples.add(key)
        u = user_ids.setdefault(key[0], len(user_ids))
        i = item_ids.setdefault(key[1], len(item_ids))
        users.append(u)
        items.append(i)
        stamps.append(key[2])
    return InteractionLog(users, items, stamps, list(user_ids), list(item_ids))


def load_interactions(path: str | os.PathLike) -> InteractionLog:
    """Parse an interaction TSV into a deduplicated, sorted log.

    Exact duplicate (user, item, timestamp) triples collapse to one record.
    Malformed lines raise with their line number; an empty file is an error.
    """
    raw_users: list[str] = []
    raw_items: list[str] = []
    raw_ts: list[int] = []
    try:
        fh = open(path, "r", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise DataError(f"cannot read interactions from {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            user_id, item_id, ts_text = parts
            if not user_id or not item_id:
                raise DataError(f"{path}: line {lineno}: empty user or item id")
            try:
                ts = int(ts_text)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer timestamp {ts_text!r}") from None
            if ts < 0:
                raise DataError(f"{path}: line {lineno}: negative timestamp {ts}")
            raw_users.append(user_id)
            raw_items.append(item_id)
            raw_ts.append(ts)
    if not raw_ts:
        raise DataError(f"{path}: no interaction records")
    return _build_log(raw_users, raw_items, raw_ts)


def log_from_records(records) -> InteractionLog:
    """Build a log directly from (user_id, item_id, timestamp) triples."""
    triples = list(records)
    if not triples:
        raise DataError("no interaction records")
    return _build_log([t[0] for t in triples], [t[1] for t in triples], [int(t[2]) for t in triples])


def k_core_filter(log: InteractionLog, k: int) -> InteractionLog:
    """Iteratively drop users/items with fewer than k interactions.

    Counts are over records (not distinct partners). Runs to a fixpoint and
    returns a re-indexed log; raises if nothing survives.
    """
    if k < 1:
        raise ValueError(f"k_core_filter: k must be >= 1, got {k}")
    keep = np.ones(len(log), dtype=bool)
    while True:
        u_deg = np.bincount(log.users[keep], minlength=log.n_users)
        i_deg = np.bincount(log.items[keep], minlength=log.n_items)
        drop = keep & ((u_deg[log.users] < k) | (i_deg[log.items] < k))
        if not drop.any():
            break
        keep &= ~drop
        if not keep.any():
            raise DataError(f"{k}-core filtering removed every interaction; use a smaller k")
    kept = np.flatnonzero(keep)
    return _build_log(
        [log.user_keys[log.users[i]] for i in kept],
        [log.item_keys[log.items[i]] for i in kept],
        [int(log.timestamps[i]) for i in kept],
    )


@dataclass(frozen=True)
class PeriodSplit:
    """Contiguous record ranges: a warm-up slice plus ordered period slices.

    Windows are half-open in time: a record with timestamp exactly on a
    boundary belongs to the later window.
    """

    warmup: tuple[int, int]
    periods: tuple[tuple[int, int], ...]
    boundaries: tuple[int, ...]

    @property
    def period_count(self) -> int:
        return len(self.periods)


def split_by_time(
    log: InteractionLog, warmup_end: int, period_length: int, period_count: int
) -> PeriodSplit:
    """Split a log into warm-up plus fixed-length retraining windows.

    Records past the last period boundary are dropped (with a logged count).
    Raises if the warm-up or any period would be empty.
    """
    if period_count < 2:
        raise DataError(f"period_count must be >= 2, got {period_count}")
    if period_length <= 0:
        raise DataError(f"period_length must be positive, got {period_length}")
    ts = log.timestamps
    warm_end_idx = int(np.searchsorted(ts, warmup_end, side="left"))
    if warm_end_idx == 0:
        raise DataError(f"warm-up window is empty (no records before {warmup_end})")
    bounds = [warmup_end + p * period_length for p in range(period_count + 1)]
    cuts = [warm_end_idx] + [int(np.searchsorted(ts, b, side="left")) for b in bounds[1:]]
    empty = [p for p in range(period_count) if cuts[p] == cuts[p + 1]]
    if empty:
        raise DataError(f"empty retraining period(s): {empty}")
    dropped = len(log) - cuts[-1]
    if dropped:
        logger.info("split_by_time: dropping %d records past the last period boundary", dropped)
    periods = tuple((cuts[p], cuts[p + 1]) for p in range(period_count))
    return PeriodSplit(warmup=(0, warm_end_idx), periods=periods, boundaries=tuple(bounds))


def universe_at(log: InteractionLog, end_index: int) -> tuple[int, int]:
    """Distinct user/item counts among records[:end_index].

    Because dense ids follow first-appearance order this is just the max id
    plus one on the prefix.
    """
    if end_index <= 0:
        return 0, 0
    return int(log.users[:end_index].max()) + 1, int(log.items[:end_index].max()) + 1


def group_items_by_user(
    users: np.ndarray, items: np.ndarray, user_count: int, unique: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """CSR-style (offsets, items) index of a record slice, grouped per user."""
    if users.size == 0:
        return np.zeros(user_count + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
    order = np.lexsort((items, users))
    u_sorted = users[order]
    i_sorted = items[order]
    if unique:
        first = np.ones(u_sorted.shape[0], dtype=bool)
        first[1:] = (u_sorted[1:] != u_sorted[:-1]) | (i_sorted[1:] != i_sorted[:-1])
        u_sorted = u_sorted[first]
        i_sorted = i_sorted[first]
    counts = np.bincount(u_sorted, minlength=user_count)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return offsets, i_sorted.astype(np.int64)
