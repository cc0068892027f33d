"""Per-epoch wall time of every model kind at default sizes on 1-year data.

Absolute seconds depend on the machine; the ratio to FNN is the quantity of
interest.

    python3 scripts/timing_contrast.py --epochs 1
"""
import argparse

from loadbench import gridgen, trainer
from loadbench.models import ModelConfig, ModelKind


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--epochs", type=int, default=1)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    network = gridgen.build_network(args.seed)
    data = trainer.prepare(gridgen.generate_dataset(network, 1, args.seed), 24)
    config = trainer.TrainConfig(epochs=args.epochs, seed=args.seed)
    seconds = {}
    for kind in ModelKind:
        edges = network.edges if kind is ModelKind.A3TGCN else ()
        fit = trainer.fit(kind, data, config, ModelConfig(kind, hidden_dim=args.hidden, edges=edges))
        seconds[kind] = fit.log.seconds_per_epoch()
        print(f"{kind.value:<7} {seconds[kind]:8.2f} s/epoch  {seconds[kind] / seconds[ModelKind.FNN]:6.1f}x FNN")


if __name__ == "__main__":
    main()
