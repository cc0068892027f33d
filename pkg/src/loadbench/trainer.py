"""Normalisation, chronological splits and mini-batch training."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluator
from . import numcore as nc
from .gridgen import LoadDataset, WindowedSamples, window
from .models import ModelConfig, ModelKind, ModelParams, checkpoint_json, init_params, predict, unroll_and_predict

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    eval_tolerances: tuple[float, ...] = (0.10, 0.15, 0.20)

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        object.__setattr__(self, "eval_tolerances", tuple(float(t) for t in self.eval_tolerances))
        object.__setattr__(self, "optimizer", self.optimizer.lower())
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions {self.split} must be three nonnegative values summing to 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        d["eval_tolerances"] = list(self.eval_tolerances)
        return d


# normalisation

@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def fit_norm(rows: np.ndarray) -> NormStats:
    rows = np.asarray(rows, dtype=float)
    return NormStats(rows.mean(axis=0), np.maximum(rows.std(axis=0), STD_FLOOR))


def apply_norm(x: np.ndarray, stats: NormStats | None) -> np.ndarray:
    if stats is None:
        raise ValueError("normalisation statistics not fitted")
    return (x - stats.mean) / stats.std


def invert_norm(z: np.ndarray, stats: NormStats | None) -> np.ndarray:
    if stats is None:
        raise ValueError("normalisation statistics not fitted")
    return z * stats.std + stats.mean


# splitting

def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    n_train = int(math.floor(n * fractions[0] + 1e-9))
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(f"split {tuple(fractions)} of {n} samples leaves an empty partition")
    return n_train, n_val, n_test


def chronological_split(samples: WindowedSamples, fractions=(0.8, 0.1, 0.1), gap: int = 0):
    """Contiguous train/val/test blocks in time order.

    The first ``gap`` samples of the validation and test blocks are dropped so
    their input windows can be made to start after the previous block's last
    target.
    """
    n_train, n_val, n_test = split_sizes(len(samples), fractions)
    if gap < 0 or gap >= min(n_val, n_test):
        raise ValueError(f"gap {gap} leaves an empty validation or test partition")
    v0, t0 = n_train + gap, n_train + n_val + gap
    cut = (slice(0, n_train), slice(v0, n_train + n_val), slice(t0, len(samples)))
    return tuple(
        WindowedSamples(samples.inputs[s], samples.targets[s], samples.lookback, samples.horizon) for s in cut
    )


@dataclass
class PreparedData:
    stats: NormStats
    train: WindowedSamples
    val: WindowedSamples
    test: WindowedSamples
    train_rows: int
    lookback: int
    test_offset: int = 0  # sample index of the first test window

    @property
    def test_first_hour(self) -> int:
        """Row of the dataset holding the first test target."""
        return self.test_offset + self.lookback


def prepare(
    dataset: LoadDataset,
    lookback: int = 24,
    fractions=(0.8, 0.1, 0.1),
    horizon: int = 1,
    stats: NormStats | None = None,
) -> PreparedData:
    """Fit statistics on the rows the training windows touch (unless given),
    then window the normalised matrix and split it chronologically.

    Validation and test blocks are purged of windows whose inputs reach back
    into the previous block's targets.
    """
    matrix = dataset.matrix
    S = matrix.shape[0] - lookback - horizon + 1
    if S < 1:
        raise ValueError(f"{matrix.shape[0]} rows cannot fill a {lookback}-hour window plus {horizon}-hour horizon")
    n_train, _, _ = split_sizes(S, fractions)
    train_rows = n_train + lookback + horizon - 1
    if stats is None:
        stats = fit_norm(matrix[:train_rows])
    samples = window(apply_norm(matrix, stats), lookback, horizon)
    gap = lookback + horizon - 1
    train, val, test = chronological_split(samples, fractions, gap)
    n_train, n_val, _ = split_sizes(S, fractions)
    return PreparedData(stats, train, val, test, train_rows, lookback, n_train + n_val + gap)


# optimisers

class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}

    def step(self, params: list[nc.Tensor]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(params):
            if p.grad is None:
                continue
            g = p.grad
            if i not in self.m:
                self.m[i] = np.zeros_like(p.data)
                self.v[i] = np.zeros_like(p.data)
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class SGD:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, params: list[nc.Tensor]) -> None:
        for p in params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    return SGD(config.learning_rate)


# training

def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(params: ModelParams, data: WindowedSamples, batches, optimizer) -> float:
    """One pass of MSE gradient steps; returns the sample-weighted mean loss."""
    plist = params.parameters()
    total, count = 0.0, 0
    for idx in batches:
        x = nc.Tensor._wrap(np.asarray(data.inputs[idx], dtype=np.float64))
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss = nc.mse_loss(unroll_and_predict(params, x), data.targets[idx])
        except nc.NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite activations ({exc}); learning rate is likely too high") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite training loss {value}; learning rate is likely too high")
        nc.zero_grad(plist)
        nc.backward(loss)
        optimizer.step(plist)
        total += value * len(idx)
        count += len(idx)
    nc.zero_grad(plist)
    return total / count


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mae: float
    val_mse: float
    val_mape: float
    tolerance_accuracies: dict[float, float]
    wall_seconds: float


@dataclass
class TrainLog:
    tolerances: tuple[float, ...]
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def header(self, include_time: bool = True) -> list[str]:
        cols = ["epoch", "train_mse", "val_mae", "val_mse", "val_mape"]
        cols += [f"val_acc_{round(t * 100):d}" for t in self.tolerances]
        return cols + (["wall_seconds"] if include_time else [])

    def rows(self, include_time: bool = True) -> list[list]:
        out = []
        for r in self.records:
            row = [r.epoch, repr(r.train_mse), repr(r.val_mae), repr(r.val_mse), repr(r.val_mape)]
            row += [repr(r.tolerance_accuracies[t]) for t in self.tolerances]
            if include_time:
                row.append(f"{r.wall_seconds:.3f}")
            out.append(row)
        return out

    def to_csv(self, include_time: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header(include_time))
        w.writerows(self.rows(include_time))
        return buf.getvalue()

    def save(self, path, include_time: bool = True) -> None:
        Path(path).write_text(self.to_csv(include_time))

    def seconds_per_epoch(self) -> float:
        return float(np.mean([r.wall_seconds for r in self.records])) if self.records else float("nan")


@dataclass
class FittedModel:
    params: ModelParams
    stats: NormStats

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """Predictions in physical units for normalised windows."""
        return invert_norm(predict(self.params, inputs), self.stats)


@dataclass
class FitResult:
    params: ModelParams  # best-validation-MAE weights
    log: TrainLog
    data: PreparedData
    best_epoch: int
    train_config: TrainConfig

    @property
    def model(self) -> FittedModel:
        return FittedModel(self.params, self.data.stats)

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return self.model.predict(inputs)

    def checkpoint(self, extra: dict | None = None) -> str:
        doc = {
            "norm_stats": self.data.stats.to_dict(),
            "train_config": self.train_config.to_dict(),
            "best_epoch": self.best_epoch,
        }
        doc.update(extra or {})
        return checkpoint_json(self.params, doc)

    def save_checkpoint(self, path, extra: dict | None = None) -> None:
        Path(path).write_text(self.checkpoint(extra))


def evaluate_split(params: ModelParams, split: WindowedSamples, stats: NormStats, tolerances) -> dict:
    pred = invert_norm(predict(params, split.inputs), stats)
    truth = invert_norm(split.targets, stats)
    return evaluator.metrics(pred, truth, tolerances)


def fit(
    kind,
    dataset: LoadDataset | PreparedData,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    *,
    init_seed: int | None = None,
    edges=(),
) -> FitResult:
    """Train one model, scoring the validation split after every epoch and
    keeping the weights with the lowest validation MAE."""
    kind = ModelKind.parse(kind) if isinstance(kind, str) else kind
    if model_config is None:
        model_config = ModelConfig(kind, edges=tuple(edges) if kind is ModelKind.A3TGCN else ())
    data = dataset if isinstance(dataset, PreparedData) else prepare(dataset, model_config.lookback, config.split, model_config.horizon)
    params = init_params(model_config, config.seed if init_seed is None else init_seed)
    optimizer = make_optimizer(config)
    tlog = TrainLog(config.eval_tolerances)
    best_state, best_mae, best_epoch = params.state(), math.inf, 0

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        batches = epoch_batches(len(data.train), config.batch_size, config.seed, epoch)
        train_mse = train_epoch(params, data.train, batches, optimizer)
        wall = time.perf_counter() - start
        m = evaluate_split(params, data.val, data.stats, config.eval_tolerances)
        tlog.records.append(
            EpochRecord(epoch, train_mse, m["mae"], m["mse"], m["mape"], m["tolerance_accuracy"], wall)
        )
        log.info("%s epoch %d train_mse=%.5f val_mae=%.4f (%.1fs)", model_config.kind.value, epoch, train_mse, m["mae"], wall)
        if m["mae"] < best_mae:
            best_mae, best_epoch, best_state = m["mae"], epoch, params.state()

    params.load_state(best_state)
    return FitResult(params, tlog, data, best_epoch, config)
