"""Regenerate the small synthetic fixtures shipped in the package data directory.

    python3 scripts/make_fixtures.py            # writes into src/catembed/data
    python3 scripts/make_fixtures.py --out DIR
"""

import argparse
from pathlib import Path

from catembed.synthetic import dataless_toy, planted_corpus, planted_taxonomy, write_dataless, write_planted

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "src" / "catembed" / "data"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    flat = planted_corpus(per_category=8, repeats=8, seed=args.seed)
    taxonomy = planted_taxonomy(per_leaf=6, repeats=10, seed=args.seed)
    for prefix, data in (("planted_", flat), ("taxonomy_", taxonomy)):
        paths = write_planted(data, args.out, prefix)
        print(f"{prefix}*: {data.pair_count} pairs -> {paths['corpus']}")
    paths = write_dataless(dataless_toy(docs_per_leaf=3, seed=args.seed), args.out, "toy_")
    print(f"toy_*: -> {paths['docs']}")


if __name__ == "__main__":
    main()
