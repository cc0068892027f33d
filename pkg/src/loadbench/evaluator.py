"""Error metrics, tolerance accuracy, bus traces and the cross-model report.

Sums go through :func:`math.fsum`, so every metric is the correctly rounded
mean of its per-entry terms and does not depend on summation order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

MAPE_FLOOR = 1e-6
DEFAULT_TOLERANCES = (0.10, 0.15, 0.20)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} != truth shape {y.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return p.reshape(-1), y.reshape(-1)


def mae(pred, truth) -> float:
    p, y = _pair(pred, truth)
    return math.fsum(np.abs(p - y)) / p.size


def mse(pred, truth) -> float:
    p, y = _pair(pred, truth)
    d = p - y
    return math.fsum(d * d) / p.size


def _kept(p, y, floor):
    keep = np.abs(y) >= floor
    if not keep.any():
        raise ValueError("MAPE undefined: every truth value is below the floor")
    return p[keep], y[keep]


def mape(pred, truth, floor: float = MAPE_FLOOR) -> float:
    """Percent error averaged over entries with |truth| >= floor."""
    p, y = _kept(*_pair(pred, truth), floor)
    return 100.0 * (math.fsum(np.abs(p - y) / np.abs(y)) / p.size)


def tolerance_accuracy(pred, truth, tol: float, floor: float = MAPE_FLOOR) -> float:
    """Percent of entries whose relative error is within ``tol``."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    p, y = _kept(*_pair(pred, truth), floor)
    hits = int(np.count_nonzero(np.abs(p - y) <= tol * np.abs(y)))
    return 100.0 * (hits / p.size)


def metrics(pred, truth, tolerances=DEFAULT_TOLERANCES) -> dict:
    return {
        "mae": mae(pred, truth),
        "mse": mse(pred, truth),
        "mape": mape(pred, truth),
        "tolerance_accuracy": {float(t): tolerance_accuracy(pred, truth, t) for t in tolerances},
    }


def per_column(pred, truth) -> pd.DataFrame:
    """MAE/MSE/MAPE for every output column, for diagnosis."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    n = pred.shape[1] // 2
    names = [f"P_{i}" for i in range(n)] + [f"Q_{i}" for i in range(n)]
    rows = []
    for j, name in enumerate(names):
        row = {"column": name, "mae": mae(pred[:, j], truth[:, j]), "mse": mse(pred[:, j], truth[:, j])}
        try:
            row["mape"] = mape(pred[:, j], truth[:, j])
        except ValueError:
            row["mape"] = float("nan")
        rows.append(row)
    return pd.DataFrame(rows)


def per_bus_trace(model, dataset, bus_id: int, span: tuple[int, int] | None = None) -> pd.DataFrame:
    """True and predicted (P, Q) for one bus over a stretch of the test split.

    ``model`` is anything with ``predict(inputs) -> physical-unit array``
    (e.g. a :class:`~loadbench.trainer.FitResult`); ``dataset`` is the
    matching prepared data. ``span`` is ``(offset, length)`` into the test
    split and defaults to the whole split.
    """
    test = dataset.test
    n_nodes = test.targets.shape[1] // 2
    if not 0 <= bus_id < n_nodes:
        raise ValueError(f"bus {bus_id} outside [0, {n_nodes})")
    start, length = span if span is not None else (0, len(test))
    if start < 0 or length < 1 or start + length > len(test):
        raise ValueError(f"span ({start}, {length}) outside the {len(test)}-sample test split")
    sel = slice(start, start + length)
    pred = np.asarray(model.predict(test.inputs[sel]))
    stats = dataset.stats
    truth = test.targets[sel] * stats.std + stats.mean
    t0 = dataset.test_first_hour + start
    return pd.DataFrame(
        {
            "t": np.arange(t0, t0 + length),
            "P_true": truth[:, bus_id],
            "P_pred": pred[:, bus_id],
            "Q_true": truth[:, n_nodes + bus_id],
            "Q_pred": pred[:, n_nodes + bus_id],
        }
    )


# comparison report

@dataclass
class CellResult:
    model: str
    years: int
    mae: float
    mse: float
    mape: float
    tolerance_accuracy: dict[float, float]
    seconds_per_epoch: float
    train_config: dict
    curves: dict[str, list[float]] = field(default_factory=dict)


@dataclass
class EvalReport:
    cells: list[CellResult]
    tolerances: tuple[float, ...] = DEFAULT_TOLERANCES

    def table(self) -> pd.DataFrame:
        rows = []
        for c in self.cells:
            row = {"dataset_years": c.years, "model": c.model, "MAE_kW": c.mae, "MSE_kW2": c.mse, "MAPE_pct": c.mape}
            for t in self.tolerances:
                row[f"acc_{round(t * 100):d}pct"] = c.tolerance_accuracy[t]
            rows.append(row)
        return pd.DataFrame(rows)

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        frame = self.table()
        w.writerow(frame.columns)
        for rec in frame.itertuples(index=False):
            w.writerow([v if isinstance(v, (int, str, np.integer)) else repr(float(v)) for v in rec])
        return buf.getvalue()

    def curves_json(self) -> str:
        doc = {
            "tolerances": list(self.tolerances),
            "cells": [
                {"model": c.model, "years": c.years, "train_config": c.train_config, "curves": c.curves}
                for c in self.cells
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset_years", "model", "seconds_per_epoch"])
        for c in self.cells:
            w.writerow([c.years, c.model, f"{c.seconds_per_epoch:.3f}"])
        return buf.getvalue()

    def metric_cells(self) -> int:
        return len(self.cells) * 3


def compare(results: dict) -> EvalReport:
    """Assemble the model x dataset-size report.

    ``results`` maps ``(model_name, years)`` to a dict with ``train_config``
    (a :class:`~loadbench.trainer.TrainConfig`), ``log`` (its
    :class:`~loadbench.trainer.TrainLog`) and ``test`` (test-split metrics).
    Every cell for one dataset size must share a training configuration.
    """
    by_years: dict[int, dict] = {}
    for (name, years), res in results.items():
        cfg = res["train_config"].to_dict()
        ref = by_years.setdefault(years, cfg)
        if ref != cfg:
            raise ValueError(f"training config for {name} on {years}-year data differs from its peers")
    tolerances = None
    cells = []
    for (name, years), res in sorted(results.items(), key=lambda kv: kv[0][1]):
        tlog, test, cfg = res["log"], res["test"], res["train_config"]
        tolerances = tuple(cfg.eval_tolerances)
        curves = {"train_mse": [r.train_mse for r in tlog.records], "val_mae": [r.val_mae for r in tlog.records]}
        for t in tolerances:
            curves[f"val_acc_{round(t * 100):d}"] = [r.tolerance_accuracies[t] for r in tlog.records]
        cells.append(
            CellResult(
                name, years, test["mae"], test["mse"], test["mape"], test["tolerance_accuracy"],
                tlog.seconds_per_epoch(), cfg.to_dict(), curves,
            )
        )
    return EvalReport(cells, tolerances or DEFAULT_TOLERANCES)
