"""The five next-hour forecasters: FNN, RNN, LSTM, GRU and A3T-GCN.

Every model maps a window ``[B, lookback, 88]`` (columns ``P_0..P_43,
Q_0..Q_43``) to ``[B, horizon * 88]``. Recurrent kinds read the window hour
by hour and predict from the last hidden state through a dense head;
A3T-GCN pools all hidden states with softmax attention first.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import numcore as nc
from .numcore import ShapeError, Tensor


class ModelKind(str, enum.Enum):
    FNN = "FNN"
    RNN = "RNN"
    LSTM = "LSTM"
    GRU = "GRU"
    A3TGCN = "A3TGCN"

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        key = name.strip().upper().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown model kind {name!r}; choose from {', '.join(k.value for k in cls)}")


LSTM_GATES = ("forget", "input", "output", "cell")
GRU_GATES = ("update", "reset", "candidate")


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind
    hidden_dim: int = 64
    lookback: int = 24
    horizon: int = 1
    num_nodes: int = 44
    node_feature_dim: int = 2
    gcn_out: int = 8
    attention_dim: int = 32
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind) if isinstance(self.kind, str) else self.kind)
        object.__setattr__(self, "edges", tuple(tuple(int(v) for v in e) for e in self.edges))
        if self.lookback < 1 or self.horizon < 1:
            raise ValueError("lookback and horizon must be >= 1")
        for name in ("hidden_dim", "num_nodes", "node_feature_dim", "gcn_out", "attention_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def input_dim(self) -> int:
        return self.num_nodes * self.node_feature_dim

    @property
    def output_dim(self) -> int:
        return self.input_dim

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value
        d["edges"] = [list(e) for e in self.edges]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["edges"] = tuple(tuple(e) for e in d.get("edges", ()))
        return cls(**d)


# parameter containers

@dataclass
class DenseLayer:
    W: Tensor
    b: Tensor


@dataclass
class RNNCellParams:
    W_xh: Tensor
    W_hh: Tensor
    b_h: Tensor


@dataclass
class LSTMCellParams:
    W_x: dict[str, Tensor]
    W_h: dict[str, Tensor]
    b: dict[str, Tensor]


@dataclass
class GRUCellParams:
    W_x: dict[str, Tensor]
    W_h: dict[str, Tensor]
    b: dict[str, Tensor]


@dataclass
class GCNLayerParams:
    W: Tensor
    A_hat: Tensor  # fixed, excluded from the learnable set


@dataclass
class AttentionParams:
    W1: Tensor
    b1: Tensor
    w2: Tensor


_FROZEN_FIELDS = {"A_hat"}


@dataclass
class ModelParams:
    config: ModelConfig
    seed: int
    parts: dict[str, object] = field(default_factory=dict)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for part_name, part in self.parts.items():
            for f in dataclasses.fields(part):
                if f.name in _FROZEN_FIELDS:
                    continue
                value = getattr(part, f.name)
                if isinstance(value, dict):
                    for key, t in value.items():
                        yield f"{part_name}.{f.name}.{key}", t
                else:
                    yield f"{part_name}.{f.name}", value

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def count(self) -> int:
        return sum(t.size for t in self.parameters())

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} != {t.shape}")
            t.data[...] = arr

    def __getattr__(self, item):
        parts = self.__dict__.get("parts", {})
        if item in parts:
            return parts[item]
        raise AttributeError(item)


# initialisation

def _glorot(rng: np.random.Generator, out_dim: int, in_dim: int) -> Tensor:
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    return Tensor(rng.uniform(-limit, limit, size=(out_dim, in_dim)), requires_grad=True)


def _bias(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def _dense(rng, out_dim, in_dim) -> DenseLayer:
    return DenseLayer(_glorot(rng, out_dim, in_dim), _bias(out_dim))


def _gated(rng, gates, in_dim, h):
    W_x = {g: _glorot(rng, h, in_dim) for g in gates}
    W_h = {g: _glorot(rng, h, h) for g in gates}
    b = {g: _bias(h) for g in gates}
    return W_x, W_h, b


def normalize_adjacency(edges, n: int) -> Tensor:
    """Symmetric GCN propagation matrix D^-1/2 (A + I) D^-1/2."""
    A = np.eye(n)
    seen = set()
    for a, b in edges:
        a, b = int(a), int(b)
        if not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"edge ({a}, {b}) out of range for {n} nodes")
        if a == b:
            raise ValueError(f"self-loop at node {a} in edge list")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen.add(key)
        A[a, b] = A[b, a] = 1.0
    d = 1.0 / np.sqrt(A.sum(axis=1))
    A_hat = d[:, None] * A * d[None, :]
    return Tensor(A_hat)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    c = config
    out_dim = c.output_dim * c.horizon
    parts: dict[str, object] = {}
    if c.kind is ModelKind.FNN:
        parts["hidden"] = _dense(rng, c.hidden_dim, c.lookback * c.input_dim)
        parts["head"] = _dense(rng, out_dim, c.hidden_dim)
    elif c.kind is ModelKind.RNN:
        parts["cell"] = RNNCellParams(
            _glorot(rng, c.hidden_dim, c.input_dim), _glorot(rng, c.hidden_dim, c.hidden_dim), _bias(c.hidden_dim)
        )
        parts["head"] = _dense(rng, out_dim, c.hidden_dim)
    elif c.kind is ModelKind.LSTM:
        parts["cell"] = LSTMCellParams(*_gated(rng, LSTM_GATES, c.input_dim, c.hidden_dim))
        parts["head"] = _dense(rng, out_dim, c.hidden_dim)
    elif c.kind is ModelKind.GRU:
        parts["cell"] = GRUCellParams(*_gated(rng, GRU_GATES, c.input_dim, c.hidden_dim))
        parts["head"] = _dense(rng, out_dim, c.hidden_dim)
    elif c.kind is ModelKind.A3TGCN:
        if not c.edges and c.num_nodes > 1:
            raise ValueError("A3TGCN needs the feeder edge list in its config")
        parts["gcn"] = GCNLayerParams(
            _glorot(rng, c.gcn_out, c.node_feature_dim), normalize_adjacency(c.edges, c.num_nodes)
        )
        parts["cell"] = GRUCellParams(*_gated(rng, GRU_GATES, c.num_nodes * c.gcn_out, c.hidden_dim))
        parts["attention"] = AttentionParams(
            _glorot(rng, c.attention_dim, c.hidden_dim),
            _bias(c.attention_dim),
            Tensor(_glorot(rng, 1, c.attention_dim).data.reshape(-1), requires_grad=True),
        )
        parts["head"] = _dense(rng, out_dim, c.hidden_dim)
    else:  # pragma: no cover
        raise ValueError(f"unknown model kind {c.kind}")
    return ModelParams(config, seed, parts)


# cells

def _check_step(x_t: Tensor, h_prev: Tensor, W_x: Tensor, W_h: Tensor) -> None:
    if x_t.ndim != 2 or x_t.shape[1] != W_x.shape[1]:
        raise ShapeError(f"cell input {x_t.shape} does not match weight {W_x.shape}")
    if h_prev.ndim != 2 or h_prev.shape != (x_t.shape[0], W_h.shape[0]):
        raise ShapeError(f"cell state {h_prev.shape} does not match batch {x_t.shape[0]} x hidden {W_h.shape[0]}")


def dense(layer: DenseLayer, x: Tensor) -> Tensor:
    return nc.linear(x, layer.W, layer.b)


def rnn_cell(p: RNNCellParams, x_t: Tensor, h_prev: Tensor) -> Tensor:
    _check_step(x_t, h_prev, p.W_xh, p.W_hh)
    return nc.tanh(nc.linear(x_t, p.W_xh, p.b_h) + nc.linear(h_prev, p.W_hh))


def _gate(p, g: str, x_t: Tensor, h: Tensor) -> Tensor:
    return nc.linear(x_t, p.W_x[g], p.b[g]) + nc.linear(h, p.W_h[g])


def lstm_cell(p: LSTMCellParams, x_t: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
    h_prev, c_prev = state
    _check_step(x_t, h_prev, p.W_x["forget"], p.W_h["forget"])
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"cell memory {c_prev.shape} != hidden {h_prev.shape}")
    f = nc.sigmoid(_gate(p, "forget", x_t, h_prev))
    i = nc.sigmoid(_gate(p, "input", x_t, h_prev))
    o = nc.sigmoid(_gate(p, "output", x_t, h_prev))
    g = nc.tanh(_gate(p, "cell", x_t, h_prev))
    c_t = f * c_prev + i * g
    h_t = o * nc.tanh(c_t)
    return h_t, c_t


def gru_cell(p: GRUCellParams, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """h_t = (1 - z) * h_prev + z * candidate."""
    _check_step(x_t, h_prev, p.W_x["update"], p.W_h["update"])
    z = nc.sigmoid(_gate(p, "update", x_t, h_prev))
    r = nc.sigmoid(_gate(p, "reset", x_t, h_prev))
    cand = nc.tanh(nc.linear(x_t, p.W_x["candidate"], p.b["candidate"]) + nc.linear(r * h_prev, p.W_h["candidate"]))
    return (1.0 - z) * h_prev + z * cand


def gcn_layer(p: GCNLayerParams, X: Tensor) -> Tensor:
    """ReLU(A_hat X W^T) for each of the M graphs in X[M, nodes, features]."""
    n = p.A_hat.shape[0]
    if X.ndim != 3 or X.shape[1] != n or X.shape[2] != p.W.shape[1]:
        raise ShapeError(f"gcn_layer: input {X.shape} incompatible with {n} nodes x {p.W.shape[1]} features")
    M, _, f = X.shape
    # nodes to the front so one 2-D product propagates every graph at once
    cols = nc.reshape(nc.transpose(X, (1, 0, 2)), (n, M * f))
    mixed = nc.matmul(p.A_hat, cols)
    rows = nc.reshape(nc.transpose(nc.reshape(mixed, (n, M, f)), (1, 0, 2)), (M * n, f))
    out = nc.relu(nc.linear(rows, p.W))
    return nc.reshape(out, (M, n, p.W.shape[0]))


def attention_weights(p: AttentionParams, H: Tensor) -> Tensor:
    """Softmax over time of w2 . tanh(W1 h_t + b1) for H[B, T, hidden]."""
    B, T, h = H.shape
    scores = nc.tanh(nc.linear(nc.reshape(H, (B * T, h)), p.W1, p.b1))
    e = nc.matmul(scores, nc.reshape(p.w2, (p.w2.shape[0], 1)))
    return nc.softmax(nc.reshape(e, (B, T)))


# forward passes

def _check_window(config: ModelConfig, window: Tensor) -> None:
    expected = (config.lookback, config.input_dim)
    if window.ndim != 3 or window.shape[1:] != expected:
        raise ShapeError(f"window shape {window.shape} does not match (B, {expected[0]}, {expected[1]})")


def fnn_forward(params: ModelParams, window: Tensor) -> Tensor:
    c = params.config
    _check_window(c, window)
    B = window.shape[0]
    flat = nc.reshape(window, (B, c.lookback * c.input_dim))
    return dense(params.head, nc.relu(dense(params.hidden, flat)))


def _steps(window: Tensor) -> list[Tensor]:
    return [window[:, t, :] for t in range(window.shape[1])]


def rnn_forward(params: ModelParams, window: Tensor) -> Tensor:
    _check_window(params.config, window)
    h = nc.zeros(window.shape[0], params.config.hidden_dim)
    for x_t in _steps(window):
        h = rnn_cell(params.cell, x_t, h)
    return dense(params.head, h)


def lstm_forward(params: ModelParams, window: Tensor) -> Tensor:
    _check_window(params.config, window)
    h = nc.zeros(window.shape[0], params.config.hidden_dim)
    c = nc.zeros(window.shape[0], params.config.hidden_dim)
    for x_t in _steps(window):
        h, c = lstm_cell(params.cell, x_t, (h, c))
    return dense(params.head, h)


def gru_forward(params: ModelParams, window: Tensor) -> Tensor:
    _check_window(params.config, window)
    h = nc.zeros(window.shape[0], params.config.hidden_dim)
    for x_t in _steps(window):
        h = gru_cell(params.cell, x_t, h)
    return dense(params.head, h)


def a3tgcn_hidden_states(params: ModelParams, window: Tensor) -> Tensor:
    c = params.config
    _check_window(c, window)
    B, T, _ = window.shape
    n, f = c.num_nodes, c.node_feature_dim
    # [P_0..P_n-1, Q_0..Q_n-1] -> per-node (P, Q) features
    nodes = nc.transpose(nc.reshape(window, (B * T, f, n)), (0, 2, 1))
    feats = gcn_layer(params.gcn, nodes)
    u = nc.reshape(feats, (B, T, n * c.gcn_out))
    h = nc.zeros(B, c.hidden_dim)
    states = []
    for t in range(T):
        h = gru_cell(params.cell, u[:, t, :], h)
        states.append(h)
    return nc.stack(states, axis=1)


def a3tgcn_forward(params: ModelParams, window: Tensor) -> Tensor:
    H = a3tgcn_hidden_states(params, window)
    B, T, h = H.shape
    alpha = attention_weights(params.attention, H)
    context = nc.matmul(nc.reshape(alpha, (B, 1, T)), H)
    return dense(params.head, nc.reshape(context, (B, h)))


_FORWARD = {
    ModelKind.FNN: fnn_forward,
    ModelKind.RNN: rnn_forward,
    ModelKind.LSTM: lstm_forward,
    ModelKind.GRU: gru_forward,
    ModelKind.A3TGCN: a3tgcn_forward,
}


def unroll_and_predict(params: ModelParams, window) -> Tensor:
    if not isinstance(window, Tensor):
        window = Tensor._wrap(np.asarray(window, dtype=np.float64))
    try:
        fn = _FORWARD[params.config.kind]
    except KeyError:
        raise ValueError(f"unknown model kind {params.config.kind!r}") from None
    return fn(params, window)


def predict(params: ModelParams, inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Tape-free batched inference over a numpy array of windows."""
    outs = []
    with nc.no_grad():
        for start in range(0, len(inputs), batch_size):
            outs.append(unroll_and_predict(params, inputs[start:start + batch_size]).data)
    if not outs:
        return np.zeros((0, params.config.output_dim * params.config.horizon))
    return np.concatenate(outs, axis=0)


# checkpoint I/O

def _fmt_array(a: np.ndarray) -> str:
    return "[" + ",".join(format(float(v), ".17g") for v in a.reshape(-1)) + "]"


def checkpoint_json(params: ModelParams, extra: dict | None = None) -> str:
    """Checkpoint document with every float written to 17 significant digits."""
    head = {"config": params.config.to_dict(), "seed": params.seed}
    if extra:
        head.update(extra)
    body = json.dumps(head, indent=1, sort_keys=True)
    entries = []
    for name, t in params.named_parameters():
        entries.append(f' "{name}": {{"shape": {json.dumps(list(t.shape))}, "data": {_fmt_array(t.data)}}}')
    params_block = '"params": {\n' + ",\n".join(entries) + "\n}"
    return body[:-2] + ",\n " + params_block + "\n}\n"


def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    Path(path).write_text(checkpoint_json(params, extra))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    doc = json.loads(Path(path).read_text())
    config = ModelConfig.from_dict(doc["config"])
    params = init_params(config, doc["seed"])
    state = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    params.load_state(state)
    return params, doc
