"""Command-line entry point: ``tnbench {train,sample,eval,search}``.

Options come from built-in defaults, then an INI config file (``--config``,
sections ``[common]`` and the subcommand name), then command-line flags.
Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from . import gan as gan_mod
from . import harness, tn, training
from .archive import CheckpointError, atomic_write_text
from .metrics import (FeatureCloud, NGramFeaturizer, fit_gaussian, frechet_distance,
                      load_feature_file, read_property_table)
from .sequences import TokenAlphabet, decode_samples, load_dataset

log = logging.getLogger("tnbench")

KINDS = tuple(k.value for k in tn.TNKind) + ("gan",)


class UsageError(Exception):
    pass


def _csv_floats(text):
    return tuple(float(v) for v in str(text).split(","))


def _csv_ints(text):
    return tuple(int(v) for v in str(text).split(","))


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (type, default, help); default REQUIRED marks mandatory options
REQUIRED = object()
COMMON = {
    "seed": (int, 0, "random seed"),
    "out": (str, REQUIRED, "output directory or file"),
    "jobs": (int, 1, "worker processes"),
}
OPTIONS = {
    "train": {
        "dataset": (str, REQUIRED, "corpus file, one tokenized string per line"),
        "kind": (str, REQUIRED, "model kind: " + ", ".join(KINDS)),
        "length": (int, None, "sequence length N (default: longest line)"),
        "bond_dim": (int, 2, "TN bond dimension r"),
        "purif_dim": (int, 2, "LPS purification dimension"),
        "lr": (float, None, "learning rate (TN default 1e-3, GAN 1e-4)"),
        "batch_size": (int, 64, "minibatch size"),
        "epochs": (int, 200, "training epochs"),
        "eval_samples": (int, 10_000, "samples drawn per evaluation"),
        "eval_every": (int, 1, "epochs between evaluations (0 disables)"),
        "featurizer": (str, "ngram:2", "ngram:K"),
        "hidden_layers": (int, 1, "GAN hidden layers (1-3)"),
        "hidden_units": (int, 300, "GAN hidden units"),
        "prior_dim": (int, 50, "GAN prior dimension"),
        "dropout": (float, 0.0, "GAN discriminator dropout rate"),
    },
    "sample": {
        "checkpoint": (str, REQUIRED, "checkpoint.zip from a training run"),
        "count": (int, 1000, "number of samples"),
    },
    "eval": {
        "samples": (str, REQUIRED, "comma-separated sample files, each optionally TAG=PATH"),
        "dataset": (str, REQUIRED, "training corpus (novelty reference)"),
        "properties": (str, REQUIRED, "property table CSV keyed by sample string"),
        "criteria": (str, "none", "none, i, ii, or 'flag;PROP>value;...'"),
        "objectives": (str, REQUIRED, "e.g. BDE:min,IP:max,SA:min"),
        "ref": (_csv_floats, REQUIRED, "reference point, comma-separated"),
        "folds": (int, 10, "folds per model"),
        "combine": (_bool, False, "also evaluate the union of all models"),
        "subset_search": (_bool, False, "exhaustive best-subset search"),
        "featurizer": (str, None, "ngram:K or file:REFERENCE.npy for Fréchet distances"),
        "sample_features": (str, None, "comma-separated TAG=PATH feature files (with file:)"),
    },
    "search": {
        "dataset": (str, REQUIRED, "corpus file"),
        "kind": (str, REQUIRED, "model kind: " + ", ".join(KINDS)),
        "bond_dims": (_csv_ints, (2, 3, 5), "TN bond dimensions"),
        "purif_dim": (int, 2, "LPS purification dimension"),
        "trials": (int, 1, "random draws per stratum"),
        "budget": (int, 200, "epochs per trial"),
        "lr": (float, 1e-3, "TN learning rate"),
        "search_lr": (_bool, False, "also draw the TN learning rate log-uniformly in [1e-4, 1e-2]"),
        "batch_size": (int, 64, "minibatch size"),
        "eval_samples": (int, 10_000, "samples drawn per evaluation"),
        "eval_every": (int, 1, "epochs between evaluations"),
        "featurizer": (str, "ngram:2", "ngram:K"),
        "layers": (_csv_ints, (1, 2, 3), "GAN hidden-layer counts"),
        "units": (_csv_ints, (300, 3000), "GAN hidden units range"),
        "prior": (_csv_ints, (50, 300), "GAN prior dimension range"),
        "dropout_range": (_csv_floats, (0.0, 0.8), "GAN dropout range"),
        "lr_exp": (_csv_floats, (-7.0, -4.0), "GAN log10 learning-rate range"),
    },
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tnbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file with [common] and [%s] sections" % name)
        for key, (_, default, help_) in {**COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            if default is REQUIRED:
                help_ += " (required)"
            elif default is not None and "default" not in help_:
                shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
                help_ += f" (default {shown})"
            sp.add_argument(flag, dest=key, default=None, help=help_)
    return p


def merge_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults < config file < flags; unknown config keys are rejected."""
    spec = {**COMMON, **OPTIONS[command]}
    raw: dict = {}
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config, encoding="utf-8"):
            raise UsageError(f"cannot read config file {args.config}")
        for section in cp.sections():
            if section not in ("common", command):
                if section in OPTIONS:
                    continue
                raise UsageError(f"unknown config section [{section}]")
            for key, value in cp.items(section):
                key = key.replace("-", "_")
                if key not in spec:
                    raise UsageError(f"unknown config key {key!r} in [{section}]")
                if section == command or key not in raw:
                    raw[key] = value
    for key in spec:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    merged = {}
    for key, (typ, default, _) in spec.items():
        if key in raw:
            try:
                merged[key] = typ(raw[key]) if not isinstance(raw[key], (tuple, bool)) else raw[key]
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {exc}") from None
        elif default is REQUIRED:
            raise UsageError(f"missing required option --{key.replace('_', '-')}")
        else:
            merged[key] = default
    return merged


def config_text(command: str, cfg: dict) -> str:
    lines = [f"[{command}]"]
    for key, value in cfg.items():
        if isinstance(value, tuple):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"


def _featurizer(spec: str, dataset):
    kind, _, arg = spec.partition(":")
    if kind != "ngram":
        raise UsageError(f"featurizer {spec!r} cannot featurize new samples; use ngram:K")
    try:
        k = int(arg or 2)
    except ValueError:
        raise UsageError(f"bad featurizer {spec!r}") from None
    return NGramFeaturizer(min(k, dataset.length), dataset.alphabet.size, dataset.alphabet.pad_index)


def _kind(text: str) -> str:
    if text not in KINDS:
        raise UsageError(f"invalid kind {text!r}; choose from {', '.join(KINDS)}")
    return text


def cmd_train(cfg: dict) -> Path:
    kind = _kind(cfg["kind"])
    dataset = load_dataset(cfg["dataset"], length=cfg["length"])
    lr = cfg["lr"] if cfg["lr"] is not None else (1e-4 if kind == "gan" else 1e-3)
    tc = training.TrainConfig(learning_rate=lr, batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                              seed=cfg["seed"], eval_sample_count=cfg["eval_samples"],
                              eval_every=cfg["eval_every"])
    feat = _featurizer(cfg["featurizer"], dataset)
    evaluator = training.FrechetEvaluator(feat, feat(dataset.indices)) if cfg["eval_every"] else None
    meta = {"tokens": list(dataset.alphabet.tokens), "alphabet_mode": dataset.alphabet.mode}
    if kind == "gan":
        model = gan_mod.init_gan(dataset.length, dataset.alphabet.size, cfg["prior_dim"],
                                 cfg["hidden_layers"], cfg["hidden_units"], cfg["dropout"],
                                 dataset.alphabet.pad_index, seed=cfg["seed"])
        model, hist = training.train_gan(model, dataset, tc, evaluator)

        def write(path):
            if hist.best_params is not None:
                n = len(model.g_params())
                model.set_g_params(hist.best_params[:n])
                model.set_d_params(hist.best_params[n:])
            gan_mod.save_gan(model, path, meta)
    else:
        k = tn.TNKind(kind)
        model = tn.init_model(k, dataset.alphabet.size, dataset.length, cfg["bond_dim"],
                              cfg["purif_dim"] if k.is_lps else 1, seed=cfg["seed"])
        model, hist = training.train_tn(model, dataset, tc, evaluator)

        def write(path):
            best = model.copy()
            if hist.best_params is not None:
                best.set_params(hist.best_params)
            tn.save_model(best, path, meta)
    return training.write_run_dir(cfg["out"], config_text("train", cfg), hist, write,
                                  hist.best_samples, dataset.alphabet)


def _alphabet(meta: dict, path) -> TokenAlphabet:
    if "tokens" not in meta:
        raise CheckpointError(f"{path}: checkpoint missing field 'tokens'")
    return TokenAlphabet(tuple(meta["tokens"]), mode=meta.get("alphabet_mode", "bracket"))


def cmd_sample(cfg: dict) -> Path:
    path = cfg["checkpoint"]
    if cfg["count"] < 1:
        raise UsageError("count must be >= 1")
    rng = np.random.default_rng(cfg["seed"])
    try:
        model, meta = tn.load_model(path)
        indices = tn.sample_indices(model, rng, cfg["count"])
    except CheckpointError as exc:
        if "version" not in str(exc) or "tnbench-gan" not in str(exc):
            raise
        model, meta = gan_mod.load_gan(path)
        indices = gan_mod.gan_sample_indices(model, rng, cfg["count"])
    alphabet = _alphabet(meta, path)
    out = Path(cfg["out"])
    atomic_write_text(out, "".join(s + "\n" for s in decode_samples(indices, alphabet)))
    return out


def _tagged(spec: str) -> list[tuple[str, str]]:
    items = []
    for part in filter(None, (p.strip() for p in spec.split(","))):
        tag, sep, path = part.partition("=")
        if not sep:
            tag, path = Path(part).stem, part
        items.append((tag, path))
    tags = [t for t, _ in items]
    if len(set(tags)) != len(tags):
        raise UsageError(f"duplicate sample tags {tags}")
    return items


def cmd_eval(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg["dataset"])
    table = read_property_table(cfg["properties"])
    criteria = harness.parse_criteria(cfg["criteria"])
    objectives = harness.Objectives.parse(cfg["objectives"])
    sample_files = _tagged(cfg["samples"])
    texts = {}
    for tag, path in sample_files:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        texts[tag] = lines
    foldsets = [harness.fold_split(texts[tag], cfg["folds"], tag) for tag, _ in sample_files]
    report = harness.evaluate(foldsets, table, criteria, objectives, cfg["ref"], dataset.strings(),
                              combine=cfg["combine"], subset_search=cfg["subset_search"])
    atomic_write_text(out / "per_fold.csv", report.per_fold_csv())
    atomic_write_text(out / "summary.csv", report.summary_csv())
    if cfg["subset_search"]:
        atomic_write_text(out / "subsets.csv", report.subsets_csv())
    if cfg["featurizer"]:
        atomic_write_text(out / "frechet.csv", _frechet_table(cfg, dataset, texts))
    atomic_write_text(out / "config.ini", config_text("eval", cfg))
    return out


def _frechet_table(cfg, dataset, texts) -> str:
    spec = cfg["featurizer"]
    rows = ["model,frechet"]
    if spec.startswith("file:"):
        ref = fit_gaussian(load_feature_file(spec[5:]))
        if not cfg["sample_features"]:
            raise UsageError("file: featurizer needs --sample-features TAG=PATH,...")
        clouds = {tag: load_feature_file(p) for tag, p in _tagged(cfg["sample_features"])}
    else:
        from .sequences import encode

        feat = _featurizer(spec, dataset)
        ref = fit_gaussian(feat(dataset.indices))
        clouds = {}
        for tag, lines in texts.items():
            idx = np.array([encode(s, dataset.alphabet, dataset.length).indices for s in lines])
            clouds[tag] = feat(idx)
    for tag, cloud in clouds.items():
        rows.append(f"{tag},{frechet_distance(fit_gaussian(cloud), ref)!r}")
    return "\n".join(rows) + "\n"


def cmd_search(cfg: dict) -> Path:
    kind = _kind(cfg["kind"])
    dataset = load_dataset(cfg["dataset"])
    try:
        if kind == "gan":
            space = training.gan_space(cfg["trials"], cfg["layers"], cfg["units"], cfg["prior"],
                                       cfg["dropout_range"], cfg["lr_exp"])
        else:
            space = training.tn_space(cfg["bond_dims"], cfg["trials"], cfg["search_lr"])
            if tn.TNKind(kind).is_lps:
                space.fixed["purif_dim"] = cfg["purif_dim"]
    except ValueError as exc:
        raise UsageError(f"invalid search space: {exc}") from None
    base = training.TrainConfig(learning_rate=cfg["lr"], batch_size=cfg["batch_size"],
                                epochs=cfg["budget"], seed=cfg["seed"],
                                eval_sample_count=cfg["eval_samples"], eval_every=cfg["eval_every"])
    feat = _featurizer(cfg["featurizer"], dataset)
    results = training.random_search(space, kind, dataset, cfg["budget"], cfg["seed"], base,
                                     training.FrechetEvaluator(feat, feat(dataset.indices)),
                                     jobs=cfg["jobs"])
    out = Path(cfg["out"])
    atomic_write_text(out, training.results_to_csv(results))
    return out


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "search": cmd_search}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = merge_config(args.command, args)
        result = COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tnbench {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, ArithmeticError, CheckpointError) as exc:
        print(f"tnbench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
