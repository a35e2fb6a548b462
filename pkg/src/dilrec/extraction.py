"""Extraction of historical node embeddings from a frozen previous model.

Two designs are supported. Design 1 gates each frozen layer with
sigmoid(e_extract * e_layer + pos_layer) before aggregating; design 2 maps
e_extract * e_layer through a learnable per-layer matrix. The frozen layer
arrays never receive gradients; only the extractor parameters do. Nodes
missing from the snapshot (zero-padded rows) yield a zero historical vector
because every term multiplies the frozen layer values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (
    Tensor,
    add,
    add_rowvec,
    concat_cols,
    concat_rows,
    matmul,
    matvec,
    mul,
    scale,
    sigmoid,
    take_row,
    transpose,
)
from .errors import ShapeError

AGG_SUM = "sum"
AGG_MEAN = "mean"
AGG_CONCAT = "concat"
AGGREGATIONS = (AGG_SUM, AGG_MEAN, AGG_CONCAT)


@dataclass
class ModelSnapshot:
    """Frozen per-layer and final representations of a trained model.

    ``user_layers``/``item_layers`` hold h^0..h^L for the nodes known when the
    snapshot was taken; all arrays are constants from the consumer's point of
    view.
    """

    period_index: int
    user_layers: list[np.ndarray]
    item_layers: list[np.ndarray]
    user_final: np.ndarray
    item_final: np.ndarray

    def __post_init__(self):
        if len(self.user_layers) != len(self.item_layers) or not self.user_layers:
            raise ShapeError("ModelSnapshot: user/item layer counts differ or are empty")
        for arr in [*self.user_layers, *self.item_layers, self.user_final, self.item_final]:
            if not np.all(np.isfinite(arr)):
                raise ShapeError("ModelSnapshot: non-finite values")

    @property
    def levels(self) -> int:
        """Number of stored representations, L + 1."""
        return len(self.user_layers)

    @property
    def user_rows(self) -> int:
        return int(self.user_layers[0].shape[0])

    @property
    def item_rows(self) -> int:
        return int(self.item_layers[0].shape[0])

    @property
    def dim(self) -> int:
        return int(self.user_layers[0].shape[1])

    def layers_for(self, kind: str) -> list[np.ndarray]:
        return self.user_layers if kind == "user" else self.item_layers

    def padded_layers(self, kind: str, rows: int) -> list[np.ndarray]:
        """Layer arrays zero-padded at the bottom to cover ``rows`` nodes."""
        out = []
        for arr in self.layers_for(kind):
            if arr.shape[0] > rows:
                raise ShapeError("ModelSnapshot: snapshot covers more nodes than the universe")
            padded = np.zeros((rows, arr.shape[1]))
            padded[: arr.shape[0]] = arr
            out.append(padded)
        return out


@dataclass
class ExtractorParams:
    """Learnable pieces of the historical-information extractor.

    Exactly one of ``pos`` (design 1) or ``w`` (design 2) is populated;
    ``proj`` exists only for concat aggregation and maps the stacked layer
    terms back to d dimensions.
    """

    design: int
    aggregation: str
    e_extract_users: Tensor
    e_extract_items: Tensor
    pos: list[Tensor] = field(default_factory=list)
    w: list[Tensor] = field(default_factory=list)
    proj: Tensor | None = None

    def __post_init__(self):
        if self.design not in (1, 2):
            raise ShapeError(f"extractor design must be 1 or 2, got {self.design}")
        if self.aggregation not in AGGREGATIONS:
            raise ShapeError(f"unknown aggregation '{self.aggregation}'")
        if self.design == 1 and (not self.pos or self.w):
            raise ShapeError("design 1 uses positional vectors, not layer matrices")
        if self.design == 2 and (not self.w or self.pos):
            raise ShapeError("design 2 uses layer matrices, not positional vectors")
        if self.aggregation == AGG_CONCAT and self.proj is None:
            raise ShapeError("concat aggregation needs a projection matrix")

    @property
    def levels(self) -> int:
        return len(self.pos) if self.design == 1 else len(self.w)

    def e_extract(self, kind: str) -> Tensor:
        return self.e_extract_users if kind == "user" else self.e_extract_items

    def named(self) -> dict[str, Tensor]:
        out = {
            "e_extract_users": self.e_extract_users,
            "e_extract_items": self.e_extract_items,
        }
        for l, t in enumerate(self.pos):
            out[f"iem_pos_{l}"] = t
        for l, t in enumerate(self.w):
            out[f"iem_w_{l}"] = t
        if self.proj is not None:
            out["iem_proj"] = self.proj
        return out

    def weight_tensors(self) -> list[Tensor]:
        """Dense (non-embedding-table) parameters, for regularization."""
        out: list[Tensor] = list(self.pos) + list(self.w)
        if self.proj is not None:
            out.append(self.proj)
        return out


def init_extractor(
    design: int,
    aggregation: str,
    levels: int,
    dim: int,
    user_rows: int,
    item_rows: int,
    rng: np.random.Generator,
) -> ExtractorParams:
    """Fresh extractor parameters with a near-pass-through start.

    Extractor embeddings are small uniform noise, positional vectors start at
    zero, and layer matrices start at identity plus noise so early training
    behaves like plain fine-tuning.
    """
    e_u = Tensor(rng.uniform(-0.05, 0.05, (user_rows, dim)), requires_grad=True)
    e_i = Tensor(rng.uniform(-0.05, 0.05, (item_rows, dim)), requires_grad=True)
    pos: list[Tensor] = []
    w: list[Tensor] = []
    if design == 1:
        pos = [Tensor(np.zeros(dim), requires_grad=True) for _ in range(levels)]
    else:
        w = [
            Tensor(np.eye(dim) + rng.uniform(-0.01, 0.01, (dim, dim)), requires_grad=True)
            for _ in range(levels)
        ]
    proj = None
    if aggregation == AGG_CONCAT:
        # stacked identities / levels == mean aggregation at init
        proj = Tensor(np.vstack([np.eye(dim)] * levels) / levels, requires_grad=True)
    return ExtractorParams(design, aggregation, e_u, e_i, pos=pos, w=w, proj=proj)


def extend_extractor(
    params: ExtractorParams, user_rows: int, item_rows: int, rng: np.random.Generator
) -> ExtractorParams:
    """Copy extractor params into a larger universe; new rows get fresh init."""

    def _grow(t: Tensor, rows: int) -> Tensor:
        old = t.data.shape[0]
        if rows < old:
            raise ShapeError("extend_extractor: universe cannot shrink")
        grown = np.empty((rows, t.data.shape[1]))
        grown[:old] = t.data
        grown[old:] = rng.uniform(-0.05, 0.05, (rows - old, t.data.shape[1]))
        return Tensor(grown, requires_grad=True)

    return ExtractorParams(
        params.design,
        params.aggregation,
        _grow(params.e_extract_users, user_rows),
        _grow(params.e_extract_items, item_rows),
        pos=[Tensor(t.data.copy(), requires_grad=True) for t in params.pos],
        w=[Tensor(t.data.copy(), requires_grad=True) for t in params.w],
        proj=None if params.proj is None else Tensor(params.proj.data.copy(), requires_grad=True),
    )


def layer_weight_design1(e_extract: Tensor, e_layer: Tensor, pos_layer: Tensor) -> Tensor:
    """Gate vector sigmoid(e_extract * e_layer + pos_layer), componentwise in (0, 1)."""
    return sigmoid(add(mul(e_extract, e_layer), pos_layer))


def _aggregate_vectors(terms: list[Tensor], params: ExtractorParams) -> Tensor:
    if params.aggregation == AGG_CONCAT:
        stacked = concat_rows(terms)
        return matvec(transpose(params.proj), stacked)
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    if params.aggregation == AGG_MEAN:
        acc = scale(acc, 1.0 / len(terms))
    return acc


def _node_row(snapshot: ModelSnapshot, params: ExtractorParams, node: int, kind: str):
    layers = snapshot.layers_for(kind)
    rows = layers[0].shape[0]
    if not (0 <= node < rows):
        raise IndexError(
            f"node {node} is missing from the snapshot ({rows} rows); nodes first seen "
            "after the snapshot take a zero historical vector via the training path"
        )
    if len(layers) != params.levels:
        raise ShapeError(
            f"snapshot has {len(layers)} levels but the extractor expects {params.levels}"
        )
    return layers, take_row(params.e_extract(kind), node)


def extract_design1(snapshot: ModelSnapshot, params: ExtractorParams, node: int, kind: str = "user") -> Tensor:
    """Historical vector of one node under the gated (design 1) extractor."""
    layers, e_ex = _node_row(snapshot, params, node, kind)
    terms = []
    for l, arr in enumerate(layers):
        e_l = Tensor(arr[node])
        alpha = layer_weight_design1(e_ex, e_l, params.pos[l])
        terms.append(mul(alpha, e_l))
    return _aggregate_vectors(terms, params)


def extract_design2(snapshot: ModelSnapshot, params: ExtractorParams, node: int, kind: str = "user") -> Tensor:
    """Historical vector of one node under the per-layer-matrix (design 2) extractor."""
    layers, e_ex = _node_row(snapshot, params, node, kind)
    terms = []
    for l, arr in enumerate(layers):
        e_l = Tensor(arr[node])
        terms.append(matvec(params.w[l], mul(e_ex, e_l)))
    return _aggregate_vectors(terms, params)


def extract_over_table(layer_tensors: list[Tensor], e_extract: Tensor, params: ExtractorParams) -> Tensor:
    """Historical vectors for a whole node table at once.

    ``layer_tensors`` are constant tensors (rows x d per level), already
    padded to the current universe; rows absent from the snapshot are zero and
    therefore produce zero output under either design.
    """
    if len(layer_tensors) != params.levels:
        raise ShapeError(
            f"extract_over_table: {len(layer_tensors)} levels vs extractor's {params.levels}"
        )
    terms = []
    for l, e_l in enumerate(layer_tensors):
        gated = mul(e_extract, e_l)
        if params.design == 1:
            alpha = sigmoid(add_rowvec(gated, params.pos[l]))
            terms.append(mul(alpha, e_l))
        else:
            terms.append(matmul(gated, transpose(params.w[l])))
    if params.aggregation == AGG_CONCAT:
        return matmul(concat_cols(terms), params.proj)
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    if params.aggregation == AGG_MEAN:
        acc = scale(acc, 1.0 / len(terms))
    return acc


def extract_table(snapshot: ModelSnapshot, params: ExtractorParams, kind: str, rows: int) -> Tensor:
    """Convenience wrapper: pad the snapshot to ``rows`` nodes and extract."""
    consts = [Tensor(arr) for arr in snapshot.padded_layers(kind, rows)]
    return extract_over_table(consts, params.e_extract(kind), params)
