import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loadbench import models as m
from loadbench import numcore as nc
from loadbench.models import ModelConfig, ModelKind
from loadbench.numcore import ShapeError, Tensor

PATH3 = ((0, 1), (1, 2))


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def zero_all(params):
    for p in params.parameters():
        p.data[...] = 0.0


def tiny_config(kind, **kw):
    base = dict(hidden_dim=3, lookback=5, num_nodes=2, gcn_out=2, attention_dim=2)
    base.update(kw)
    if ModelKind.parse(kind) is ModelKind.A3TGCN:
        base.setdefault("edges", ((0, 1),))
    return ModelConfig(kind, **base)


# hand oracles: scalar loops over plain python lists

def hand_matvec(W, x):
    return [sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]


def hand_lstm_step(P, x, h, c):
    def pre(g):
        a = hand_matvec(P["W_x"][g], x)
        b = hand_matvec(P["W_h"][g], h)
        return [a[i] + b[i] + P["b"][g][i] for i in range(len(h))]

    f = [sig(v) for v in pre("forget")]
    i_ = [sig(v) for v in pre("input")]
    o = [sig(v) for v in pre("output")]
    g = [math.tanh(v) for v in pre("cell")]
    c_new = [f[k] * c[k] + i_[k] * g[k] for k in range(len(h))]
    h_new = [o[k] * math.tanh(c_new[k]) for k in range(len(h))]
    return h_new, c_new


def hand_gru_step(P, x, h):
    def lin(g, hv):
        a = hand_matvec(P["W_x"][g], x)
        b = hand_matvec(P["W_h"][g], hv)
        return [a[i] + b[i] + P["b"][g][i] for i in range(len(h))]

    z = [sig(v) for v in lin("update", h)]
    r = [sig(v) for v in lin("reset", h)]
    cand = [math.tanh(v) for v in lin("candidate", [r[k] * h[k] for k in range(len(h))])]
    return [(1 - z[k]) * h[k] + z[k] * cand[k] for k in range(len(h))]


def as_lists(cell):
    return {
        name: {g: t.data.tolist() for g, t in getattr(cell, name).items()} for name in ("W_x", "W_h", "b")
    }


def randomize(params, seed):
    rng = np.random.default_rng(seed)
    for p in params.parameters():
        p.data[...] = rng.uniform(-1, 1, size=p.shape)


# init

def test_init_is_deterministic_per_seed():
    cfg = ModelConfig(ModelKind.LSTM, hidden_dim=8)
    a, b = m.init_params(cfg, 5), m.init_params(cfg, 5)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), b.parameters()))
    c = m.init_params(cfg, 6)
    assert any(not np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), c.parameters()))


def test_fnn_parameter_count():
    assert m.init_params(ModelConfig(ModelKind.FNN, hidden_dim=64), 0).count() == 140_952


def test_glorot_bounds_and_zero_bias():
    p = m.init_params(ModelConfig(ModelKind.FNN, hidden_dim=64), 1)
    limit = math.sqrt(6 / (2112 + 64))
    assert np.abs(p.hidden.W.data).max() <= limit
    assert np.abs(p.hidden.W.data).max() > 0.9 * limit
    assert not p.hidden.b.data.any() and not p.head.b.data.any()


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        ModelConfig(ModelKind.GRU, lookback=0)
    with pytest.raises(ValueError):
        ModelKind.parse("transformer")
    assert ModelConfig("a3t-gcn").kind is ModelKind.A3TGCN


# FNN

def test_fnn_zero_weights_zero_output():
    p = m.init_params(ModelConfig(ModelKind.FNN, hidden_dim=4), 0)
    zero_all(p)
    out = m.fnn_forward(p, Tensor(np.random.default_rng(0).normal(size=(3, 24, 88))))
    assert not out.data.any()


def test_fnn_batch_rows_independent():
    p = m.init_params(ModelConfig(ModelKind.FNN, hidden_dim=4), 0)
    row = np.random.default_rng(1).normal(size=(1, 24, 88))
    one = m.fnn_forward(p, Tensor(row)).data
    two = m.fnn_forward(p, Tensor(np.concatenate([row, row]))).data
    assert np.array_equal(two[0], two[1])
    # B=1 and B=2 may take different BLAS kernels
    np.testing.assert_allclose(two[0], one[0], rtol=0, atol=1e-14)


def test_fnn_tiny_matches_hand_arithmetic():
    cfg = ModelConfig(ModelKind.FNN, hidden_dim=3, lookback=2, num_nodes=1, node_feature_dim=2)
    p = m.init_params(cfg, 3)
    randomize(p, 4)
    x = [[0.3, -1.2], [0.7, 0.5]]
    flat = [v for row in x for v in row]
    hid = [max(0.0, a + b) for a, b in zip(hand_matvec(p.hidden.W.data.tolist(), flat), p.hidden.b.data)]
    want = [a + b for a, b in zip(hand_matvec(p.head.W.data.tolist(), hid), p.head.b.data)]
    got = m.fnn_forward(p, Tensor([x])).data[0]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_fnn_shape_mismatch():
    p = m.init_params(ModelConfig(ModelKind.FNN, hidden_dim=4), 0)
    with pytest.raises(ShapeError):
        m.fnn_forward(p, Tensor(np.zeros((1, 23, 88))))


# RNN

def test_rnn_cell_zero_params():
    cell = m.RNNCellParams(nc.zeros(2, 3), nc.zeros(2, 2), nc.zeros(2))
    h = m.rnn_cell(cell, Tensor(np.ones((1, 3))), Tensor([[0.4, -0.9]]))
    assert not h.data.any()


def test_rnn_cell_bias_only():
    cell = m.RNNCellParams(nc.zeros(1, 2), nc.zeros(1, 1), Tensor([1.0]))
    h = m.rnn_cell(cell, Tensor([[5.0, -3.0]]), Tensor([[0.2]]))
    assert h.item() == pytest.approx(0.7615941559557649, abs=1e-15)


def test_rnn_two_step_unroll_is_composition():
    cfg = ModelConfig(ModelKind.RNN, hidden_dim=3, lookback=2, num_nodes=1)
    p = m.init_params(cfg, 2)
    x = np.random.default_rng(2).normal(size=(1, 2, 2))
    h = m.rnn_cell(p.cell, Tensor(x[:, 0]), nc.zeros(1, 3))
    h = m.rnn_cell(p.cell, Tensor(x[:, 1]), h)
    np.testing.assert_array_equal(m.rnn_forward(p, Tensor(x)).data, m.dense(p.head, h).data)


def test_rnn_cell_shape_errors():
    cell = m.RNNCellParams(nc.zeros(2, 3), nc.zeros(2, 2), nc.zeros(2))
    with pytest.raises(ShapeError):
        m.rnn_cell(cell, Tensor(np.ones((1, 4))), nc.zeros(1, 2))
    with pytest.raises(ShapeError):
        m.rnn_cell(cell, Tensor(np.ones((1, 3))), nc.zeros(2, 2))


# LSTM

def _zero_lstm(h=2, d=3):
    return m.LSTMCellParams(
        {g: nc.zeros(h, d) for g in m.LSTM_GATES},
        {g: nc.zeros(h, h) for g in m.LSTM_GATES},
        {g: nc.zeros(h) for g in m.LSTM_GATES},
    )


def test_lstm_zero_params_closed_form():
    c_prev = np.array([[0.8, -2.0]])
    h, c = m.lstm_cell(_zero_lstm(), Tensor(np.ones((1, 3))), (Tensor([[0.3, 0.1]]), Tensor(c_prev)))
    np.testing.assert_allclose(c.data, 0.5 * c_prev, rtol=0, atol=1e-12)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c_prev), rtol=0, atol=1e-12)


def test_lstm_zero_state_fixed_point():
    h, c = m.lstm_cell(_zero_lstm(), Tensor(np.ones((1, 3))), (nc.zeros(1, 2), nc.zeros(1, 2)))
    assert not h.data.any() and not c.data.any()


def test_lstm_tiny_matches_hand_recurrence():
    cfg = ModelConfig(ModelKind.LSTM, hidden_dim=2, lookback=3, num_nodes=1)
    p = m.init_params(cfg, 0)
    randomize(p, 8)
    xs = np.random.default_rng(9).uniform(-1, 1, size=(3, 2))
    h, c = [0.0, 0.0], [0.0, 0.0]
    for x in xs:
        h, c = hand_lstm_step(as_lists(p.cell), x.tolist(), h, c)
    hh, cc = nc.zeros(1, 2), nc.zeros(1, 2)
    for x in xs:
        hh, cc = m.lstm_cell(p.cell, Tensor(x[None]), (hh, cc))
    np.testing.assert_allclose(hh.data[0], h, rtol=0, atol=1e-12)
    np.testing.assert_allclose(cc.data[0], c, rtol=0, atol=1e-12)


# GRU

def _zero_gru(h=2, d=3):
    return m.GRUCellParams(
        {g: nc.zeros(h, d) for g in m.GRU_GATES},
        {g: nc.zeros(h, h) for g in m.GRU_GATES},
        {g: nc.zeros(h) for g in m.GRU_GATES},
    )


def test_gru_zero_params_halves_state():
    h_prev = np.array([[0.6, -1.4]])
    h = m.gru_cell(_zero_gru(), Tensor(np.ones((1, 3))), Tensor(h_prev))
    np.testing.assert_allclose(h.data, 0.5 * h_prev, rtol=0, atol=1e-12)


def test_gru_zero_state_fixed_point():
    assert not m.gru_cell(_zero_gru(), Tensor(np.ones((1, 3))), nc.zeros(1, 2)).data.any()


def test_gru_tiny_matches_hand_recurrence():
    cfg = ModelConfig(ModelKind.GRU, hidden_dim=2, lookback=3, num_nodes=1)
    p = m.init_params(cfg, 0)
    randomize(p, 10)
    xs = np.random.default_rng(11).uniform(-1, 1, size=(3, 2))
    h = [0.0, 0.0]
    for x in xs:
        h = hand_gru_step(as_lists(p.cell), x.tolist(), h)
    hh = nc.zeros(1, 2)
    for x in xs:
        hh = m.gru_cell(p.cell, Tensor(x[None]), hh)
    np.testing.assert_allclose(hh.data[0], h, rtol=0, atol=1e-12)


# adjacency

def brute_adjacency(n, edges):
    A = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    for a, b in edges:
        A[a][b] = A[b][a] = 1.0
    deg = [sum(row) for row in A]
    return [[A[i][j] / (math.sqrt(deg[i]) * math.sqrt(deg[j])) for j in range(n)] for i in range(n)]


def test_adjacency_isolated_node():
    assert m.normalize_adjacency([], 1).data.tolist() == [[1.0]]


def test_adjacency_single_edge():
    np.testing.assert_allclose(m.normalize_adjacency([(0, 1)], 2).data, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_adjacency_path():
    assert m.normalize_adjacency(PATH3, 3).data[0, 1] == pytest.approx(1 / math.sqrt(6), abs=1e-15)


def test_adjacency_errors():
    with pytest.raises(ValueError):
        m.normalize_adjacency([(0, 3)], 3)
    with pytest.raises(ValueError):
        m.normalize_adjacency([(1, 1)], 3)
    with pytest.raises(ValueError):
        m.normalize_adjacency([(0, 1), (1, 0)], 3)


def test_adjacency_exhaustive_small_graphs():
    for n in range(1, 6):
        pairs = list(itertools.combinations(range(n), 2))
        for mask in range(1 << len(pairs)):
            edges = [pairs[k] for k in range(len(pairs)) if mask >> k & 1]
            got = m.normalize_adjacency(edges, n).data
            assert np.array_equal(got, got.T)
            np.testing.assert_allclose(got, brute_adjacency(n, edges), rtol=0, atol=1e-12)


# GCN

def test_gcn_identity_propagation():
    p = m.GCNLayerParams(nc.identity(2), m.normalize_adjacency([], 3))
    X = np.random.default_rng(0).normal(size=(2, 3, 2))
    np.testing.assert_array_equal(m.gcn_layer(p, Tensor(X)).data, np.maximum(X, 0))


def test_gcn_two_node_graph_equal_outputs():
    W = Tensor(np.random.default_rng(1).normal(size=(4, 2)))
    p = m.GCNLayerParams(W, m.normalize_adjacency([(0, 1)], 2))
    X = np.array([[[0.3, 2.0], [1.1, -0.4]]])
    out = m.gcn_layer(p, Tensor(X)).data
    # A_hat rows are both [0.5, 0.5], so both nodes see the same mean feature
    want = np.maximum(X.mean(axis=1) @ W.data.T, 0)
    np.testing.assert_allclose(out[0, 0], want[0], atol=1e-15)
    np.testing.assert_allclose(out[0, 1], want[0], atol=1e-15)


def test_gcn_zero_weight():
    p = m.GCNLayerParams(nc.zeros(3, 2), m.normalize_adjacency(PATH3, 3))
    assert not m.gcn_layer(p, Tensor(np.ones((2, 3, 2)))).data.any()


def test_gcn_shape_error():
    p = m.GCNLayerParams(nc.zeros(3, 2), m.normalize_adjacency(PATH3, 3))
    with pytest.raises(ShapeError):
        m.gcn_layer(p, Tensor(np.ones((2, 4, 2))))


# A3T-GCN

def test_attention_uniform_when_scores_equal():
    cfg = tiny_config("A3TGCN")
    p = m.init_params(cfg, 0)
    p.attention.W1.data[...] = 0.0
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 4)))
    H = m.a3tgcn_hidden_states(p, x)
    alpha = m.attention_weights(p.attention, H).data
    np.testing.assert_allclose(alpha, np.full((2, 5), 0.2), atol=1e-15)
    want = m.dense(p.head, Tensor(H.data.mean(axis=1))).data
    np.testing.assert_allclose(m.a3tgcn_forward(p, x).data, want, atol=1e-12)


def test_a3tgcn_zero_recurrent_params_output_is_bias():
    p = m.init_params(tiny_config("A3TGCN"), 0)
    for t in [p.gcn.W, *p.cell.W_x.values(), *p.cell.W_h.values(), *p.cell.b.values()]:
        t.data[...] = 0.0
    p.head.b.data[...] = [1.0, -2.0, 3.0, 0.5]
    out = m.a3tgcn_forward(p, Tensor(np.random.default_rng(1).normal(size=(3, 5, 4)))).data
    np.testing.assert_allclose(out, np.tile([1.0, -2.0, 3.0, 0.5], (3, 1)), atol=1e-15)


def test_a3tgcn_tiny_matches_hand_unroll():
    cfg = tiny_config("A3TGCN", lookback=3, hidden_dim=2)
    p = m.init_params(cfg, 0)
    randomize(p, 12)
    window = np.random.default_rng(13).uniform(-1, 1, size=(3, 4))  # [T, P0 P1 Q0 Q1]
    A = brute_adjacency(2, [(0, 1)])
    Wg = p.gcn.W.data.tolist()
    cell = as_lists(p.cell)
    h = [0.0, 0.0]
    states = []
    for row in window:
        feats = [[row[0], row[2]], [row[1], row[3]]]
        mixed = [[sum(A[i][j] * feats[j][f] for j in range(2)) for f in range(2)] for i in range(2)]
        u = [max(0.0, v) for i in range(2) for v in hand_matvec(Wg, mixed[i])]
        h = hand_gru_step(cell, u, h)
        states.append(h)
    W1, b1, w2 = p.attention.W1.data.tolist(), p.attention.b1.data, p.attention.w2.data
    scores = []
    for s in states:
        pre = hand_matvec(W1, s)
        scores.append(sum(w2[k] * math.tanh(pre[k] + b1[k]) for k in range(len(w2))))
    ex = [math.exp(v) for v in scores]
    alpha = [v / sum(ex) for v in ex]
    context = [sum(alpha[t] * states[t][k] for t in range(3)) for k in range(2)]
    want = [a + b for a, b in zip(hand_matvec(p.head.W.data.tolist(), context), p.head.b.data)]
    got = m.a3tgcn_forward(p, Tensor(window[None])).data[0]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_a3tgcn_requires_edges():
    with pytest.raises(ValueError):
        m.init_params(ModelConfig(ModelKind.A3TGCN, num_nodes=3), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_attention_weights_are_a_distribution(seed, scale):
    p = m.init_params(tiny_config("A3TGCN"), seed)
    for t in p.parameters():
        t.data *= scale
    H = m.a3tgcn_hidden_states(p, Tensor(np.random.default_rng(seed).normal(size=(2, 5, 4))))
    alpha = m.attention_weights(p.attention, H).data
    assert (alpha > 0).all()
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, rtol=0, atol=1e-9)


# dispatch

@pytest.mark.parametrize("kind", list(ModelKind))
def test_full_size_output_shape(kind):
    edges = tuple((i, i + 1) for i in range(43))
    cfg = ModelConfig(kind, hidden_dim=8, edges=edges if kind is ModelKind.A3TGCN else ())
    p = m.init_params(cfg, 0)
    assert m.unroll_and_predict(p, np.zeros((1, 24, 88))).shape == (1, 88)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_batch_permutation_equivariance_and_determinism(kind):
    p = m.init_params(tiny_config(kind), 1)
    x = np.random.default_rng(2).normal(size=(4, 5, 4))
    out = m.unroll_and_predict(p, x).data
    perm = [2, 0, 3, 1]
    np.testing.assert_allclose(m.unroll_and_predict(p, x[perm]).data, out[perm], rtol=0, atol=1e-14)
    assert np.array_equal(m.unroll_and_predict(p, x).data, out)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(list(ModelKind)), st.integers(1, 6))
def test_output_shape_any_batch(kind, B):
    p = m.init_params(tiny_config(kind), 0)
    assert m.unroll_and_predict(p, np.zeros((B, 5, 4))).shape == (B, 4)


def test_rnn_without_recurrence_is_dense_map_of_last_hour():
    p = m.init_params(tiny_config("RNN"), 3)
    p.cell.W_hh.data[...] = 0.0
    p.cell.b_h.data[...] = [0.1, -0.2, 0.3]
    x = np.random.default_rng(4).normal(size=(2, 5, 4))
    last = x[:, -1, :]
    h = np.tanh(last @ p.cell.W_xh.data.T + p.cell.b_h.data)
    want = h @ p.head.W.data.T + p.head.b.data
    np.testing.assert_allclose(m.unroll_and_predict(p, x).data, want, rtol=0, atol=1e-12)


def test_horizon_widens_head():
    p = m.init_params(tiny_config("GRU", horizon=3), 0)
    assert m.unroll_and_predict(p, np.zeros((2, 5, 4))).shape == (2, 12)


# BPTT gradients

@pytest.mark.parametrize("kind", list(ModelKind))
def test_five_step_unroll_gradients(kind):
    p = m.init_params(tiny_config(kind), 7)
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(-2, 2, size=(2, 5, 4)))
    y = rng.uniform(-1, 1, size=(2, 4))
    assert nc.grad_check(lambda: nc.mse_loss(m.unroll_and_predict(p, x), y), p.parameters()) <= 1e-4


# checkpoints

@pytest.mark.parametrize("kind", list(ModelKind))
def test_checkpoint_round_trip_is_exact(kind, tmp_path):
    p = m.init_params(tiny_config(kind), 4)
    randomize(p, 5)
    path = tmp_path / "ckpt.json"
    m.save_checkpoint(p, path, {"note": "x"})
    q, doc = m.load_checkpoint(path)
    assert doc["note"] == "x" and q.config == p.config
    for (na, a), (nb, b) in zip(p.named_parameters(), q.named_parameters()):
        assert na == nb and np.array_equal(a.data, b.data)
