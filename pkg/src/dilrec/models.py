"""LightGCN and NGCF message propagation over a bipartite graph."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (
    Tensor,
    add,
    add_rowvec,
    leaky_relu,
    matmul,
    mul,
    scale,
    spmm,
)
from .errors import ShapeError
from .graph import BipartiteGraph

LIGHTGCN = "lightgcn"
NGCF = "ngcf"


@dataclass
class ModelConfig:
    kind: str = LIGHTGCN
    layers: int = 2
    dim: int = 32
    leaky_relu_slope: float = 0.2

    def validate(self) -> None:
        if self.kind not in (LIGHTGCN, NGCF):
            raise ShapeError(f"unknown model kind '{self.kind}'")
        if self.layers < 1:
            raise ShapeError("model needs at least one propagation layer")
        if self.dim < 1:
            raise ShapeError("embedding dimension must be positive")
        if not (0.0 < self.leaky_relu_slope < 1.0):
            raise ShapeError("leaky_relu_slope must lie in (0, 1)")


@dataclass
class NgcfWeights:
    """Per-layer transform matrices and biases for the two NGCF message terms."""

    w1: list[Tensor] = field(default_factory=list)
    b1: list[Tensor] = field(default_factory=list)
    w2: list[Tensor] = field(default_factory=list)
    b2: list[Tensor] = field(default_factory=list)

    def named(self, prefix: str = "ngcf") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for l in range(len(self.w1)):
            out[f"{prefix}_w1_{l}"] = self.w1[l]
            out[f"{prefix}_b1_{l}"] = self.b1[l]
            out[f"{prefix}_w2_{l}"] = self.w2[l]
            out[f"{prefix}_b2_{l}"] = self.b2[l]
        return out

    def copy(self) -> "NgcfWeights":
        return NgcfWeights(
            w1=[Tensor(t.data.copy(), requires_grad=True) for t in self.w1],
            b1=[Tensor(t.data.copy(), requires_grad=True) for t in self.b1],
            w2=[Tensor(t.data.copy(), requires_grad=True) for t in self.w2],
            b2=[Tensor(t.data.copy(), requires_grad=True) for t in self.b2],
        )


def init_ngcf_weights(cfg: ModelConfig, rng: np.random.Generator) -> NgcfWeights:
    # fan-based uniform init; biases start at zero
    bound = np.sqrt(6.0 / (2.0 * cfg.dim))
    weights = NgcfWeights()
    for _ in range(cfg.layers):
        weights.w1.append(Tensor(rng.uniform(-bound, bound, (cfg.dim, cfg.dim)), requires_grad=True))
        weights.b1.append(Tensor(np.zeros(cfg.dim), requires_grad=True))
        weights.w2.append(Tensor(rng.uniform(-bound, bound, (cfg.dim, cfg.dim)), requires_grad=True))
        weights.b2.append(Tensor(np.zeros(cfg.dim), requires_grad=True))
    return weights


@dataclass
class LayerStack:
    """Representations h^0..h^L plus their elementwise mean as the final one."""

    layers: list[Tensor]
    final: Tensor


def final_representation(layers: list[Tensor]) -> Tensor:
    """Mean-pool the per-layer node representations."""
    acc = layers[0]
    for h in layers[1:]:
        acc = add(acc, h)
    return scale(acc, 1.0 / len(layers))


def propagate(
    cfg: ModelConfig,
    graph: BipartiteGraph,
    h0: Tensor,
    weights: NgcfWeights | None = None,
) -> LayerStack:
    """Run L rounds of neighbor aggregation from the initial node features.

    LightGCN layers are plain normalized-adjacency products. NGCF layers are
    LeakyReLU(W1 (h + n) + b1 + W2 (n * h) + b2) with n the aggregated
    neighbor message; note sum_i w_ui (h_i * h_u) = (sum_i w_ui h_i) * h_u,
    which is what makes the elementwise form exact.
    """
    if h0.data.ndim != 2 or h0.data.shape[0] != graph.node_count:
        raise ShapeError(
            f"propagate: h0 shape {h0.data.shape} does not cover {graph.node_count} nodes"
        )
    if cfg.kind == NGCF:
        if weights is None or len(weights.w1) != cfg.layers:
            raise ShapeError("propagate: NGCF needs one weight set per layer")
    layers = [h0]
    h = h0
    for l in range(cfg.layers):
        n = spmm(graph.adjacency, h)
        if cfg.kind == LIGHTGCN:
            h = n
        else:
            term1 = add_rowvec(matmul(add(h, n), weights.w1[l]), weights.b1[l])
            term2 = add_rowvec(matmul(mul(n, h), weights.w2[l]), weights.b2[l])
            h = leaky_relu(add(term1, term2), cfg.leaky_relu_slope)
        layers.append(h)
    return LayerStack(layers=layers, final=final_representation(layers))


def score(h_user: np.ndarray, h_item: np.ndarray) -> float:
    """Predicted preference: dot product of two final representations."""
    h_user = np.asarray(h_user, dtype=np.float64)
    h_item = np.asarray(h_item, dtype=np.float64)
    if h_user.shape != h_item.shape or h_user.ndim != 1:
        raise ShapeError(f"score: expected equal-length vectors, got {h_user.shape} and {h_item.shape}")
    return float(np.dot(h_user, h_item))
