"""Compare CE and HCE held-out purity on the three-level synthetic taxonomy.

Entities are classified against parent categories, which have no direct
members, over several seeds.

    python3 scripts/hierarchy_trend.py --seeds 0 1 2 3 4
"""

import argparse

from catembed.experiments import hierarchy_trend


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    parser.add_argument("--dim", type=int, default=30)
    parser.add_argument("--epochs", type=int, default=5)
    args = parser.parse_args()

    wins = 0
    print("seed\tce\thce")
    for seed in args.seeds:
        out = hierarchy_trend(seed, dim=args.dim, epochs=args.epochs)
        wins += out["hce"] >= out["ce"]
        print(f"{seed}\t{out['ce']:.4f}\t{out['hce']:.4f}")
    print(f"hce_at_least_ce={wins}/{len(args.seeds)}")


if __name__ == "__main__":
    main()
