"""Write the synthetic toy corpus and its stand-in property table.

    python scripts/make_toy_corpus.py --out data/toy_corpus.txt --properties data/toy_properties.csv
"""

import argparse
from pathlib import Path

from tnbench.toy import property_table_csv, toy_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("data/toy_corpus.txt"))
    ap.add_argument("--properties", type=Path, default=None,
                    help="also write properties for the corpus strings")
    ap.add_argument("--size", type=int, default=300)
    ap.add_argument("--max-len", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    strings = toy_corpus(args.size, args.max_len, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text("".join(s + "\n" for s in strings), encoding="utf-8")
    if args.properties:
        args.properties.write_text(property_table_csv(strings), encoding="utf-8")
    print(f"{len(strings)} strings -> {args.out}")


if __name__ == "__main__":
    main()
