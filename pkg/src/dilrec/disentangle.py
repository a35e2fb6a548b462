"""Fusion of historical and new embeddings, and their decorrelation loss.

The decorrelation term is the distance correlation between the historical and
new embedding populations of a mini-batch: pairwise Euclidean distance
matrices are double-centered, their products give distance covariance and
variances, and the ratio lands in [0, 1] (0 meaning independent). Every
square root is floored with 1e-12 to keep gradients finite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .engine import (
    Tensor,
    add,
    add_colvec,
    add_rowvec,
    clamp,
    div,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    scale,
    sqrt,
    transpose,
)
from .errors import DegenerateBatchError, ShapeError

logger = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class DcorrBatch:
    """Aligned historical/new embedding rows for one node population."""

    hist: Tensor
    new: Tensor

    def __post_init__(self):
        if self.hist.data.ndim != 2 or self.new.data.ndim != 2:
            raise ShapeError("DcorrBatch: expected matrices")
        if self.hist.data.shape != self.new.data.shape:
            raise ShapeError(
                f"DcorrBatch: shapes {self.hist.data.shape} and {self.new.data.shape} differ"
            )
        if self.hist.data.shape[0] < 2:
            raise ShapeError("DcorrBatch: needs at least two rows")


def fuse_initial(e_hist: Tensor, e_new: Tensor) -> Tensor:
    """Initial node feature: historical plus new embedding, gradients to both."""
    if e_hist.data.shape != e_new.data.shape:
        raise ShapeError(
            f"fuse_initial: shapes {e_hist.data.shape} and {e_new.data.shape} differ"
        )
    return add(e_hist, e_new)


def _sqrt_floored(x: Tensor) -> Tensor:
    return sqrt(add(clamp(x, lo=0.0), EPS))


def pairwise_distances(x: Tensor) -> Tensor:
    """Matrix of Euclidean distances between rows.

    Off-diagonal entries are floored inside the sqrt; the diagonal is masked
    to its exact value of zero so the floor cannot perturb scale invariance.
    """
    n = x.data.shape[0]
    gram = matmul(x, transpose(x))
    sq = reduce_sum(mul(x, x), axis=1)
    d2 = add_colvec(add_rowvec(scale(gram, -2.0), sq), sq)
    off_diagonal = Tensor(1.0 - np.eye(n))
    return mul(_sqrt_floored(d2), off_diagonal)


def _double_center(a: Tensor) -> Tensor:
    row_means = reduce_mean(a, axis=1)
    col_means = reduce_mean(a, axis=0)
    grand = reduce_mean(a)
    centered = add_colvec(add_rowvec(a, scale(col_means, -1.0)), scale(row_means, -1.0))
    return add(centered, grand)


def distance_correlation(x: Tensor, y: Tensor) -> Tensor:
    """Distance correlation of two row-aligned matrices, as a scalar in [0, 1].

    Raises :class:`DegenerateBatchError` when either input has all rows
    identical (zero distance variance makes the ratio meaningless).
    """
    if x.data.ndim != 2 or y.data.ndim != 2 or x.data.shape[0] != y.data.shape[0]:
        raise ShapeError(
            f"distance_correlation: incompatible shapes {x.data.shape} and {y.data.shape}"
        )
    if x.data.shape[0] < 2:
        raise ShapeError("distance_correlation: needs at least two rows")
    if np.all(x.data == x.data[0]):
        raise DegenerateBatchError("distance_correlation: all rows of the first input are identical")
    if np.all(y.data == y.data[0]):
        raise DegenerateBatchError("distance_correlation: all rows of the second input are identical")
    a = _double_center(pairwise_distances(x))
    b = _double_center(pairwise_distances(y))
    dcov2 = reduce_mean(mul(a, b))
    dvar2_x = reduce_mean(mul(a, a))
    dvar2_y = reduce_mean(mul(b, b))
    dcov = _sqrt_floored(dcov2)
    denom = sqrt(add(mul(_sqrt_floored(dvar2_x), _sqrt_floored(dvar2_y)), EPS))
    return clamp(div(dcov, denom), 0.0, 1.0)


def dcorr_loss(user_batch: DcorrBatch | None, item_batch: DcorrBatch | None) -> Tensor:
    """Sum of the user-side and item-side distance correlations.

    An absent or degenerate population contributes zero (and the degenerate
    case is logged rather than raised).
    """
    total: Tensor | None = None
    for name, batch in (("user", user_batch), ("item", item_batch)):
        if batch is None:
            continue
        try:
            term = distance_correlation(batch.hist, batch.new)
        except DegenerateBatchError as exc:
            logger.info("skipping degenerate %s decorrelation batch: %s", name, exc)
            continue
        total = term if total is None else add(total, term)
    if total is None:
        return Tensor(0.0)
    return total
