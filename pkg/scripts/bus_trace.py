"""Train one model on 1-year data and write a week of bus-14 true/predicted
load to CSV for external plotting.

    python3 scripts/bus_trace.py --model lstm --epochs 10 --out trace.csv
"""
import argparse

from loadbench import evaluator, gridgen, trainer
from loadbench.models import ModelConfig, ModelKind


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", default="lstm")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--bus", type=int, default=14)
    ap.add_argument("--hours", type=int, default=168)
    ap.add_argument("--out", default="trace.csv")
    args = ap.parse_args()

    kind = ModelKind.parse(args.model)
    network = gridgen.build_network(0)
    data = trainer.prepare(gridgen.generate_dataset(network, 1, 0), 24)
    edges = network.edges if kind is ModelKind.A3TGCN else ()
    fit = trainer.fit(kind, data, trainer.TrainConfig(epochs=args.epochs), ModelConfig(kind, hidden_dim=args.hidden, edges=edges))
    trace = evaluator.per_bus_trace(fit.model, data, args.bus, (0, args.hours))
    trace.to_csv(args.out, index=False, lineterminator="\n")
    err = evaluator.mae(trace[["P_pred", "Q_pred"]].to_numpy(), trace[["P_true", "Q_true"]].to_numpy())
    print(f"wrote {args.out}: {len(trace)} hours of bus {args.bus}, MAE {err:.3f} kW")


if __name__ == "__main__":
    main()
