import numpy as np
import pytest

from dilrec.engine import Tape, Tensor, backward, reduce_sum
from dilrec.errors import ShapeError
from dilrec.graph import build_graph
from dilrec.models import (
    LayerStack,
    ModelConfig,
    NgcfWeights,
    final_representation,
    init_ngcf_weights,
    propagate,
    score,
)

from test_graph import dense_normalized_adjacency


def random_graph(rng, n_users=None, n_items=None):
    n_users = n_users or int(rng.integers(2, 8))
    n_items = n_items or int(rng.integers(2, 8))
    m = int(rng.integers(1, 4 * max(n_users, n_items)))
    users = rng.integers(0, n_users, m)
    items = rng.integers(0, n_items, m)
    return build_graph(users, items, n_users, n_items), users, items


def dense_lightgcn(adj, h0, layers):
    out = [h0]
    h = h0
    for _ in range(layers):
        h = adj @ h
        out.append(h)
    return out


def dense_ngcf(adj, h0, weights, slope):
    out = [h0]
    h = h0
    for l in range(len(weights.w1)):
        n = adj @ h
        pre = (h + n) @ weights.w1[l].data + weights.b1[l].data + (n * h) @ weights.w2[l].data + weights.b2[l].data
        h = np.where(pre > 0, pre, slope * pre)
        out.append(h)
    return out


# --- propagate --------------------------------------------------------------

def test_lightgcn_single_edge_swaps_rows():
    g = build_graph(np.array([0]), np.array([0]), 1, 1)
    h0 = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    stack = propagate(ModelConfig("lightgcn", layers=1, dim=2), g, h0)
    assert np.allclose(stack.layers[1].data[0], h0.data[1])
    assert np.allclose(stack.layers[1].data[1], h0.data[0])


def test_lightgcn_zero_degree_node_becomes_zero():
    g = build_graph(np.array([0]), np.array([0]), 2, 1)  # user 1 isolated
    h0 = Tensor(np.ones((3, 2)))
    stack = propagate(ModelConfig("lightgcn", layers=2, dim=2), g, h0)
    for l in (1, 2):
        assert np.array_equal(stack.layers[l].data[1], np.zeros(2))


def test_lightgcn_matches_dense_oracle():
    rng = np.random.default_rng(21)
    g, users, items = random_graph(rng, 4, 3)
    h0 = rng.normal(size=(7, 5))
    stack = propagate(ModelConfig("lightgcn", layers=2, dim=5), g, Tensor(h0))
    ref = dense_lightgcn(dense_normalized_adjacency(users, items, 4, 3), h0, 2)
    for l in range(3):
        assert np.max(np.abs(stack.layers[l].data - ref[l])) < 1e-10


def test_ngcf_matches_dense_oracle():
    rng = np.random.default_rng(22)
    g, users, items = random_graph(rng, 5, 4)
    cfg = ModelConfig("ngcf", layers=2, dim=3, leaky_relu_slope=0.2)
    weights = init_ngcf_weights(cfg, rng)
    h0 = rng.normal(size=(9, 3))
    stack = propagate(cfg, g, Tensor(h0), weights)
    ref = dense_ngcf(g.adjacency.to_dense(), h0, weights, 0.2)
    for l in range(3):
        assert np.max(np.abs(stack.layers[l].data - ref[l])) < 1e-10


def test_ngcf_degenerates_to_lightgcn_plus_self_loop():
    rng = np.random.default_rng(23)
    g, _, _ = random_graph(rng, 3, 4)
    dim = 4
    cfg = ModelConfig("ngcf", layers=2, dim=dim, leaky_relu_slope=1.0)  # built directly
    weights = NgcfWeights(
        w1=[Tensor(np.eye(dim), requires_grad=True) for _ in range(2)],
        b1=[Tensor(np.zeros(dim), requires_grad=True) for _ in range(2)],
        w2=[Tensor(np.zeros((dim, dim)), requires_grad=True) for _ in range(2)],
        b2=[Tensor(np.zeros(dim), requires_grad=True) for _ in range(2)],
    )
    h0 = rng.normal(size=(g.node_count, dim))
    stack = propagate(cfg, g, Tensor(h0), weights)
    adj = g.adjacency.to_dense()
    h = h0
    for l in (1, 2):
        h = h + adj @ h
        assert np.max(np.abs(stack.layers[l].data - h)) < 1e-10


def test_propagate_shape_mismatch():
    g = build_graph(np.array([0]), np.array([0]), 2, 2)
    with pytest.raises(ShapeError):
        propagate(ModelConfig("lightgcn", layers=1, dim=2), g, Tensor(np.zeros((3, 2))))


def test_ngcf_requires_weights():
    g = build_graph(np.array([0]), np.array([0]), 1, 1)
    with pytest.raises(ShapeError):
        propagate(ModelConfig("ngcf", layers=1, dim=2), g, Tensor(np.zeros((2, 2))))


def test_lightgcn_is_linear_in_h0():
    rng = np.random.default_rng(24)
    g, _, _ = random_graph(rng, 4, 4)
    cfg = ModelConfig("lightgcn", layers=3, dim=3)
    x = rng.normal(size=(g.node_count, 3))
    y = rng.normal(size=(g.node_count, 3))
    a, b = 0.7, -1.3
    lhs = propagate(cfg, g, Tensor(a * x + b * y)).final.data
    rhs = a * propagate(cfg, g, Tensor(x)).final.data + b * propagate(cfg, g, Tensor(y)).final.data
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_permutation_equivariance():
    rng = np.random.default_rng(25)
    n_users, n_items = 4, 5
    m = 12
    users = rng.integers(0, n_users, m)
    items = rng.integers(0, n_items, m)
    cfg = ModelConfig("lightgcn", layers=2, dim=3)
    h0 = rng.normal(size=(n_users + n_items, 3))
    base = propagate(cfg, build_graph(users, items, n_users, n_items), Tensor(h0))
    # permute users and items independently (keeps the bipartite stacking)
    pu = rng.permutation(n_users)
    pi = rng.permutation(n_items)
    perm = np.concatenate([pu, n_users + pi])
    g2 = build_graph(pu[users], pi[items], n_users, n_items)
    permuted = propagate(cfg, g2, Tensor(h0[np.argsort(perm)]))
    for l in range(3):
        assert np.max(np.abs(permuted.layers[l].data[perm] - base.layers[l].data)) < 1e-10


# --- final representation / score -------------------------------------------

def test_final_is_mean_of_two_layers():
    x = Tensor(np.array([[2.0, 4.0]]))
    y = Tensor(np.array([[4.0, 8.0]]))
    assert np.allclose(final_representation([x, y]).data, [[3.0, 6.0]])


def test_final_identical_layers():
    x = np.array([[1.0, -1.0], [0.5, 2.0]])
    out = final_representation([Tensor(x)] * 4)
    assert np.allclose(out.data, x)


def test_final_matches_per_coordinate_mean():
    rng = np.random.default_rng(26)
    layers = [rng.normal(size=(3, 2)) for _ in range(4)]
    out = final_representation([Tensor(a) for a in layers])
    for r in range(3):
        for c in range(2):
            expected = sum(a[r, c] for a in layers) / 4
            assert out.data[r, c] == pytest.approx(expected, abs=1e-12)


def test_final_zero_tail_layers_gives_h0_over_count():
    h0 = np.array([[3.0, 9.0]])
    layers = [Tensor(h0), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2)))]
    assert np.allclose(final_representation(layers).data, h0 / 3)


def test_score_orthogonal_is_zero():
    assert score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_score_unit_match():
    v = np.array([1.0, 0.0, 0.0])
    assert score(v, v) == 1.0


def test_score_matches_loop_oracle():
    rng = np.random.default_rng(27)
    u = rng.normal(size=6)
    v = rng.normal(size=6)
    expected = sum(u[c] * v[c] for c in range(6))
    assert score(u, v) == pytest.approx(expected, abs=1e-12)


def test_propagate_gradients_reach_h0_and_weights():
    rng = np.random.default_rng(28)
    g, _, _ = random_graph(rng, 3, 3)
    cfg = ModelConfig("ngcf", layers=1, dim=2)
    weights = init_ngcf_weights(cfg, rng)
    h0 = Tensor(rng.normal(size=(g.node_count, 2)), requires_grad=True)
    with Tape() as tape:
        stack = propagate(cfg, g, h0, weights)
        loss = reduce_sum(stack.final)
    backward(loss, tape)
    assert h0.grad is not None and np.any(h0.grad != 0)
    assert weights.w1[0].grad is not None and np.any(weights.w1[0].grad != 0)
