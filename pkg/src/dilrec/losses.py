"""Ranking losses for one training step.

The pairwise objective is -ln sigmoid(positive - negative), computed as
softplus(negative - positive) for numerical stability. The joint objective
adds historical supervision on the extracted embeddings (scored directly,
not through propagation), the decorrelation penalty, and L2 over
batch-touched embedding rows plus all dense weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .disentangle import DcorrBatch, dcorr_loss
from .engine import (
    Tensor,
    add,
    gather_rows,
    mul,
    reduce_mean,
    reduce_sum,
    scale,
    softplus,
    sub,
)
from .errors import EngineUsageError, ShapeError


@dataclass(frozen=True)
class QuadBatch:
    """One mini-batch of (user, positive, historical, negative) ids.

    ``hist_items`` is -1 where the user has no interactions before the
    current window; those rows skip the historical supervision term.
    """

    users: np.ndarray
    pos_items: np.ndarray
    hist_items: np.ndarray
    neg_items: np.ndarray

    def __post_init__(self):
        n = self.users.shape[0]
        for arr in (self.pos_items, self.hist_items, self.neg_items):
            if arr.shape != (n,):
                raise ShapeError("QuadBatch: column lengths differ")


def bpr_loss(pos_scores: Tensor, neg_scores: Tensor) -> Tensor:
    """Mean of -ln sigmoid(pos - neg) over the batch."""
    if pos_scores.data.ndim != 1 or pos_scores.data.shape != neg_scores.data.shape:
        raise ShapeError(
            f"bpr_loss: expected equal-length score vectors, got "
            f"{pos_scores.data.shape} and {neg_scores.data.shape}"
        )
    if pos_scores.data.shape[0] < 1:
        raise ShapeError("bpr_loss: empty batch")
    return reduce_mean(softplus(sub(neg_scores, pos_scores)))


def _row_dots(a: Tensor, b: Tensor) -> Tensor:
    return reduce_sum(mul(a, b), axis=1)


def _capped_unique(ids: np.ndarray, cap: int, rng: np.random.Generator | None) -> np.ndarray:
    uniq = np.unique(ids)
    if uniq.size <= cap:
        return uniq
    if rng is None:
        raise EngineUsageError(
            "dil_total_loss: a decorrelation population exceeds the row cap; pass dcorr_rng"
        )
    return np.sort(rng.choice(uniq, size=cap, replace=False))


def dil_total_loss(
    batch: QuadBatch,
    finals: Tensor,
    user_count: int,
    e_hist_users: Tensor,
    e_hist_items: Tensor,
    e_new_users: Tensor,
    e_new_items: Tensor,
    *,
    lam: float,
    l2_coefficient: float,
    e_extract_users: Tensor | None = None,
    e_extract_items: Tensor | None = None,
    weight_tensors: Sequence[Tensor] = (),
    dcorr_rng: np.random.Generator | None = None,
    dcorr_cap: int = 256,
) -> Tensor:
    """Full retraining objective for one quad batch.

    With lam == 0, no history in the batch, and l2_coefficient == 0 this
    reduces exactly to :func:`bpr_loss` on the propagated scores.
    """
    u = batch.users
    i = batch.pos_items
    j = batch.neg_items
    u_f = gather_rows(finals, u)
    pos = _row_dots(u_f, gather_rows(finals, user_count + i))
    neg = _row_dots(u_f, gather_rows(finals, user_count + j))
    loss = bpr_loss(pos, neg)

    with_hist = batch.hist_items >= 0
    if with_hist.any():
        hu = gather_rows(e_hist_users, u[with_hist])
        hk = gather_rows(e_hist_items, batch.hist_items[with_hist])
        hj = gather_rows(e_hist_items, j[with_hist])
        hist_pos = _row_dots(hu, hk)
        hist_neg = _row_dots(hu, hj)
        loss = add(loss, reduce_mean(softplus(sub(hist_neg, hist_pos))))

    if lam > 0.0:
        users_pop = _capped_unique(u, dcorr_cap, dcorr_rng)
        items_pop = _capped_unique(np.concatenate([i, j]), dcorr_cap, dcorr_rng)
        user_batch = None
        if users_pop.size >= 2:
            user_batch = DcorrBatch(
                gather_rows(e_hist_users, users_pop), gather_rows(e_new_users, users_pop)
            )
        item_batch = None
        if items_pop.size >= 2:
            item_batch = DcorrBatch(
                gather_rows(e_hist_items, items_pop), gather_rows(e_new_items, items_pop)
            )
        loss = add(loss, scale(dcorr_loss(user_batch, item_batch), lam))

    if l2_coefficient > 0.0:
        users_pop = np.unique(u)
        touched_items = np.concatenate([i, j, batch.hist_items[with_hist]])
        items_pop = np.unique(touched_items)
        pieces = [
            gather_rows(e_new_users, users_pop),
            gather_rows(e_new_items, items_pop),
        ]
        if e_extract_users is not None:
            pieces.append(gather_rows(e_extract_users, users_pop))
        if e_extract_items is not None:
            pieces.append(gather_rows(e_extract_items, items_pop))
        pieces.extend(weight_tensors)
        total_sq = None
        count = 0
        for piece in pieces:
            sq = reduce_sum(mul(piece, piece))
            total_sq = sq if total_sq is None else add(total_sq, sq)
            count += piece.data.size
        loss = add(loss, scale(total_sq, l2_coefficient / count))

    return loss


def plain_bpr_objective(
    batch: QuadBatch,
    finals: Tensor,
    user_count: int,
    emb_users: Tensor,
    emb_items: Tensor,
    *,
    l2_coefficient: float,
    weight_tensors: Sequence[Tensor] = (),
) -> Tensor:
    """BPR plus L2 for the plain (no-extraction) training paths.

    Same objective as :func:`dil_total_loss` with the historical and
    decorrelation terms switched off.
    """
    no_hist = QuadBatch(
        batch.users,
        batch.pos_items,
        np.full(batch.users.shape[0], -1, dtype=np.int64),
        batch.neg_items,
    )
    return dil_total_loss(
        no_hist,
        finals,
        user_count,
        emb_users,
        emb_items,
        emb_users,
        emb_items,
        lam=0.0,
        l2_coefficient=l2_coefficient,
        weight_tensors=weight_tensors,
    )
