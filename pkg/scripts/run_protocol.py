"""Run the full benchmark protocol: search, repetitions, sampling, folds and evaluation.

    python scripts/run_protocol.py --out runs/protocol
    python scripts/run_protocol.py --out runs/full --dataset data/toy_corpus.txt --epochs 200 --search-epochs 50

Without --dataset the toy corpus is generated from --seed.
"""

import argparse
import logging
from pathlib import Path

from tnbench.protocol import TN_KINDS, ProtocolConfig, run_protocol


def main():
    defaults = ProtocolConfig(out=Path("."))
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--dataset", type=Path, default=None)
    ap.add_argument("--seed", type=int, default=defaults.seed)
    ap.add_argument("--models", default=",".join(defaults.models),
                    help=f"comma-separated subset of {', '.join(TN_KINDS)}, gan")
    ap.add_argument("--bond-dims", default=",".join(map(str, defaults.bond_dims)))
    ap.add_argument("--search-epochs", type=int, default=defaults.search_epochs)
    ap.add_argument("--epochs", type=int, default=defaults.epochs)
    ap.add_argument("--gan-epochs", type=int, default=defaults.gan_epochs)
    ap.add_argument("--repetitions", type=int, default=defaults.repetitions)
    ap.add_argument("--eval-samples", type=int, default=defaults.eval_samples)
    ap.add_argument("--folds", type=int, default=defaults.folds)
    ap.add_argument("--sample-source", choices=("best-run", "pooled"), default=defaults.sample_source)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = ProtocolConfig(
        out=args.out, dataset=args.dataset, seed=args.seed,
        models=tuple(m.strip() for m in args.models.split(",") if m.strip()),
        bond_dims=tuple(int(r) for r in args.bond_dims.split(",")),
        search_epochs=args.search_epochs, epochs=args.epochs, gan_epochs=args.gan_epochs,
        repetitions=args.repetitions, eval_samples=args.eval_samples, folds=args.folds,
        sample_source=args.sample_source,
    )
    paths = run_protocol(cfg)
    for task, path in paths.items():
        print(f"{task}: {path / 'summary.csv'}")


if __name__ == "__main__":
    main()
