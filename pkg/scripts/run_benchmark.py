"""Run the model x dataset-size grid and print the 1y -> 5y MAE change per model.

    python3 scripts/run_benchmark.py --config scripts/configs/desk.json
    python3 scripts/run_benchmark.py --config scripts/configs/benchmark.json --jobs 2
"""
import argparse
import csv
import sys
from pathlib import Path

from loadbench.cli import main as cli_main
from loadbench.config import ExperimentConfig


def summarize(report: Path) -> None:
    with report.open() as fh:
        rows = list(csv.DictReader(fh))
    mae = {(r["model"], int(r["dataset_years"])): float(r["MAE_kW"]) for r in rows}
    models = list(dict.fromkeys(r["model"] for r in rows))
    print(f"\n{'model':<8}{'1y MAE':>10}{'5y MAE':>10}  5y better")
    for name in models:
        one, five = mae.get((name, 1)), mae.get((name, 5))
        if one is None or five is None:
            continue
        print(f"{name:<8}{one:>10.3f}{five:>10.3f}  {five < one}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(Path(__file__).with_name("configs") / "desk.json"))
    ap.add_argument("--out")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    argv = ["compare", "--config", args.config, "--jobs", str(args.jobs)]
    if args.out:
        argv += ["--out", args.out]
    code = cli_main(argv)
    out = Path(args.out or ExperimentConfig.load(args.config).run.output_dir)
    table = out / "report" / "table1.csv"
    if table.exists():
        summarize(table)
    return code


if __name__ == "__main__":
    sys.exit(main())
