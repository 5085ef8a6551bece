"""Regenerate the shipped synthetic subgroup dataset.

Usage: python3 scripts/make_synthetic_data.py [--seed N] [--out PATH]
"""

import argparse
from pathlib import Path

from shrinkchoice.synthetic import DEFAULT_SEED, generate

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "shrinkchoice" / "data" / "synthetic_subgroups.csv"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = parser.parse_args()
    generate(args.seed).to_csv(args.out, index=False, lineterminator="\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
