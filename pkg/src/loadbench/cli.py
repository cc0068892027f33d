"""``loadbench`` command line: gen-data, train, eval, compare."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import evaluator, gridgen, trainer
from .config import ALL_KINDS, ConfigError, ExperimentConfig
from .models import ModelKind, load_checkpoint

log = logging.getLogger("loadbench")

NETWORK_FILE = "network.json"


def _model_kind(text: str) -> str:
    try:
        return ModelKind.parse(text).value
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown model {text!r}; choose from {', '.join(ALL_KINDS)}") from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _resolve(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    return cfg.override(
        seed=getattr(args, "seed", None),
        years=getattr(args, "years", None),
        model=getattr(args, "model", None),
        epochs=getattr(args, "epochs", None),
        out=getattr(args, "out", None),
        data=getattr(args, "data", None),
    )


# gen-data

def write_dataset(cfg: ExperimentConfig, years: int, out_dir: Path) -> Path:
    network = gridgen.build_network(cfg.dataset.network_seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    network.save(out_dir / NETWORK_FILE)
    ds = gridgen.generate_dataset(network, years, cfg.dataset.seed, noise_std=cfg.dataset.noise_std)
    ds.meta["network_file"] = NETWORK_FILE
    ds.meta["config"] = cfg.to_dict(portable=True)
    path = out_dir / f"dataset_{years}y.csv"
    ds.save(path)
    return path


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    out = Path(cfg.run.output_dir)
    for years in cfg.dataset.years:
        path = write_dataset(cfg, years, out)
        rows = years * gridgen.HOURS_PER_YEAR
        print(f"wrote {path}: {rows} rows x {2 * gridgen.NUM_NODES} load columns (+timestamp)")
    return 0


# train

def _load_data(path) -> tuple[gridgen.LoadDataset, gridgen.DistributionNetwork]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found (run gen-data first)")
    ds = gridgen.LoadDataset.load(path)
    net_path = path.parent / ds.meta.get("network_file", NETWORK_FILE)
    network = gridgen.DistributionNetwork.load(net_path)
    if ds.meta.get("network_hash") not in (None, network.hash()):
        raise ValueError(f"{net_path} does not match the network the dataset was generated on")
    return ds, network


def train_one(cfg: ExperimentConfig, kind: str, data_path, out_dir: Path, prefix: str = "") -> dict:
    """Fit one model on one dataset file and write its artifacts."""
    ds, network = _load_data(data_path)
    model_cfg = cfg.model.model_config(kind, network.edges)
    data = trainer.prepare(ds, model_cfg.lookback, cfg.train.split, model_cfg.horizon)
    fit = trainer.fit(kind, data, cfg.train, model_cfg)
    test = trainer.evaluate_split(fit.params, data.test, data.stats, cfg.train.eval_tolerances)

    embedded = {"experiment": cfg.to_dict(portable=True), "dataset_meta": {k: v for k, v in ds.meta.items() if k != "config"}}
    out_dir.mkdir(parents=True, exist_ok=True)
    fit.save_checkpoint(out_dir / f"{prefix}checkpoint.json", embedded)
    fit.log.save(out_dir / f"{prefix}train_log.csv", include_time=False)
    _write(out_dir / f"{prefix}timing.csv", "epoch,wall_seconds\n" + "".join(
        f"{r.epoch},{r.wall_seconds:.3f}\n" for r in fit.log.records))
    _write(out_dir / f"{prefix}test_metrics.json", _metrics_json(test))

    bus, (start, length) = cfg.eval.trace_bus, cfg.eval.trace_span
    length = min(length, len(data.test) - start)
    trace = evaluator.per_bus_trace(fit.model, data, bus, (start, length))
    trace.to_csv(out_dir / f"{prefix}trace_bus{bus}.csv", index=False, lineterminator="\n")
    return {"log": fit.log, "test": test, "train_config": fit.train_config}


def _metrics_json(m: dict) -> str:
    doc = dict(m)
    doc["tolerance_accuracy"] = {f"{t:g}": v for t, v in m["tolerance_accuracy"].items()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_train(args) -> int:
    cfg = _resolve(args)
    if len(cfg.model.kinds) != 1:
        raise ConfigError("train fits one model per invocation; pass --model")
    if not cfg.dataset.path:
        raise ConfigError("no dataset given; pass --data or set dataset.path")
    kind = cfg.model.kinds[0]
    out = Path(cfg.run.output_dir)
    result = train_one(cfg, kind, cfg.dataset.path, out, prefix=f"{kind}_")
    _write(out / f"{kind}_run_config.json", cfg.dumps())
    last = result["log"].records[-1]
    accs = " ".join(f"acc@{t:g}={v:.2f}%" for t, v in last.tolerance_accuracies.items())
    print(f"{kind}: epochs={len(result['log'])} val_mae={last.val_mae:.4f} val_mse={last.val_mse:.4f} "
          f"val_mape={last.val_mape:.3f} {accs}")
    return 0


# eval

def cmd_eval(args) -> int:
    cfg = _resolve(args)
    params, doc = load_checkpoint(args.checkpoint)
    if not cfg.dataset.path:
        raise ConfigError("no dataset given; pass --data or set dataset.path")
    ds, _ = _load_data(cfg.dataset.path)
    tcfg = doc.get("train_config", {})
    stats = trainer.NormStats.from_dict(doc["norm_stats"])
    data = trainer.prepare(ds, params.config.lookback, tcfg.get("split", cfg.train.split), params.config.horizon, stats)
    model = trainer.FittedModel(params, stats)
    pred = model.predict(data.test.inputs)
    truth = trainer.invert_norm(data.test.targets, stats)
    m = evaluator.metrics(pred, truth, cfg.eval.tolerances)
    kind = params.config.kind.value
    out = Path(cfg.run.output_dir)
    _write(out / f"{kind}_eval.json", _metrics_json(m))
    evaluator.per_column(pred, truth).to_csv(out / f"{kind}_per_column.csv", index=False, lineterminator="\n")
    bus, (start, length) = cfg.eval.trace_bus, cfg.eval.trace_span
    length = min(length, len(data.test) - start)
    evaluator.per_bus_trace(model, data, bus, (start, length)).to_csv(
        out / f"{kind}_trace_bus{bus}.csv", index=False, lineterminator="\n"
    )
    accs = " ".join(f"acc@{t:g}={v:.2f}%" for t, v in m["tolerance_accuracy"].items())
    print(f"{kind} test: mae={m['mae']:.4f} mse={m['mse']:.4f} mape={m['mape']:.3f} {accs}")
    return 0


# compare

def _cell(payload) -> tuple[str, int, dict | None, str | None]:
    cfg_doc, kind, years, data_path, cell_dir = payload
    # artifacts embed the config of this cell alone, so `train` can rerun it
    cfg = ExperimentConfig.from_dict(cfg_doc).override(model=kind, years=years)
    try:
        return kind, years, train_one(cfg, kind, data_path, Path(cell_dir)), None
    except Exception:  # reported per cell, the grid carries on
        return kind, years, None, traceback.format_exc()


def cmd_compare(args) -> int:
    cfg = _resolve(args)
    out = Path(cfg.run.output_dir)
    cells = [(kind, years) for years in cfg.dataset.years for kind in cfg.model.kinds]
    if args.dry_run:
        print(f"plan for run {cfg.run.name!r} -> {out}")
        for years in cfg.dataset.years:
            print(f"  generate {years}-year dataset (seed {cfg.dataset.seed}, network seed {cfg.dataset.network_seed})")
        for kind, years in cells:
            hidden = cfg.model.hidden_sizes.get(kind, cfg.model.hidden_dim)
            print(f"  train {kind:<6} on {years}y: hidden={hidden} epochs={cfg.train.epochs} seed={cfg.train.seed}")
        print(f"  report: {len(cells)} cells x 3 metrics, tolerances {cfg.eval.tolerances}")
        return 0

    _write(out / "run_config.json", cfg.dumps())
    data_paths = {years: write_dataset(cfg, years, out / "data") for years in cfg.dataset.years}
    doc = cfg.to_dict()
    payloads = [(doc, kind, years, str(data_paths[years]), str(out / "cells" / f"{kind}_{years}y")) for kind, years in cells]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_cell, payloads))
    else:
        outcomes = [_cell(p) for p in payloads]

    results, failures = {}, []
    for kind, years, res, err in outcomes:
        if err is None:
            results[(kind, years)] = res
        else:
            failures.append({"model": kind, "years": years, "error": err})
            log.error("cell %s/%sy failed:\n%s", kind, years, err)

    if results:
        report = evaluator.compare(results)
        _write(out / "report" / "table1.csv", report.table_csv())
        _write(out / "report" / "curves.json", report.curves_json())
        _write(out / "report" / "timing.csv", report.timing_csv())
        print(report.table().to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    if failures:
        _write(out / "report" / "failures.json", json.dumps(failures, indent=2) + "\n")
        names = ", ".join(f"{f['model']}/{f['years']}y" for f in failures)
        print(f"failed cells: {names}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loadbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment JSON; flags override its values")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("gen-data", help="write the synthetic feeder dataset")
    common(p)
    p.add_argument("--years", type=int, choices=[1, 5])
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model on a dataset file")
    common(p)
    p.add_argument("--model", type=_model_kind, help=f"one of {', '.join(ALL_KINDS)}")
    p.add_argument("--epochs", type=int)
    p.add_argument("--data", help="dataset CSV written by gen-data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset CSV written by gen-data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run the full model x dataset grid")
    common(p)
    p.add_argument("--years", type=int, choices=[1, 5])
    p.add_argument("--model", type=_model_kind)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dry-run", action="store_true", help="print the plan without training")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, trainer.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
