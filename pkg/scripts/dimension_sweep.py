"""Held-out NN purity across embedding dimensions on the planted corpus,
plus a delta sweep of the dataless toy pipeline.

    python3 scripts/dimension_sweep.py --dims 10 25 50 100
"""

import argparse

from catembed.experiments import dataless_pipeline, planted_recovery
from catembed.synthetic import dataless_toy
from catembed.dataless import evaluate_dataless


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dims", type=int, nargs="+", default=[10, 25, 50, 100])
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--deltas", type=float, nargs="+", default=[0.0, 0.5, 0.8, 0.95, 1.0])
    args = parser.parse_args()

    print("dim\tfinal_loss\tnn_purity\tkmeans_purity")
    for dim in args.dims:
        res = planted_recovery(seed=args.seed, dim=dim)
        km = res.cluster_purity[("kmeans", "euclidean", None)]
        print(f"{dim}\t{res.epoch_losses[-1]:.4f}\t{res.nn_purity:.4f}\t{km:.4f}")

    print(f"default_pipeline_micro_f1={dataless_pipeline(seed=args.seed).micro_f1:.4f}")
    toy = dataless_toy(seed=args.seed)
    print("delta\tmicro_f1\tmacro_f1\tmicro_f1_at_1")
    for delta in args.deltas:
        r = evaluate_dataless(toy.docs, toy.tree, toy.gold, toy.store, delta=delta)
        print(f"{delta}\t{r.micro_f1:.4f}\t{r.macro_f1:.4f}\t{r.micro_f1_at_1:.4f}")


if __name__ == "__main__":
    main()
