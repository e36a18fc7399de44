"""End-to-end benchmark protocol on one corpus.

search bond dimension -> train repetitions -> keep the lowest-Fréchet epoch's
samples -> 10 folds per model -> per-task criteria, fidelity and hypervolume
-> all-model combination -> exhaustive subset search.
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import gan as gan_mod
from . import harness, tn, training
from .archive import atomic_write_text
from .metrics import read_property_table
from .sequences import SequenceDataset, dataset_from_strings, decode_samples, load_dataset
from .toy import property_table_csv, toy_corpus

log = logging.getLogger(__name__)

TN_KINDS = tuple(k.value for k in tn.TNKind)


@dataclass(frozen=True)
class Task:
    name: str
    criteria: str
    objectives: str
    ref: tuple[float, ...]


DEFAULT_TASKS = (
    Task("qm9-style", "none", "QED:max,logP:max,SA:max", (0.0, -7.0, 1.0)),
    Task("criteria-i", "i", "BDE:min,IP:max,SA:min", (140.0, 0.0, 10.0)),
    Task("criteria-ii", "ii", "BDE:min,IP:max,SA:min", (85.0, 182.0, 10.0)),
)


@dataclass(frozen=True)
class ProtocolConfig:
    out: Path
    dataset: Path | None = None  # None -> generate the toy corpus
    corpus_size: int = 300
    corpus_max_len: int = 10
    bond_dims: tuple[int, ...] = (2, 3, 5)
    purif_dim: int = 2
    search_epochs: int = 4
    epochs: int = 8
    repetitions: int = 5
    eval_samples: int = 10_000
    folds: int = 10
    ngram_k: int = 2
    tn_lr: float = 0.02
    batch_size: int = 64
    gan_trials: int = 1
    gan_layers: tuple[int, ...] = (1, 2, 3)
    gan_units: tuple[int, int] = (32, 96)
    gan_prior: tuple[int, int] = (8, 32)
    gan_dropout: tuple[float, float] = (0.0, 0.5)
    gan_lr_exp: tuple[float, float] = (-3.5, -2.5)
    gan_epochs: int = 8
    tasks: tuple[Task, ...] = DEFAULT_TASKS
    seed: int = 0
    models: tuple[str, ...] = field(default=TN_KINDS + ("gan",))
    # "best-run": best-epoch samples of the lowest-distance repetition;
    # "pooled": best-epoch samples of every repetition, concatenated in run order
    sample_source: str = "best-run"

    def __post_init__(self):
        if self.sample_source not in ("best-run", "pooled"):
            raise ValueError(f"unknown sample_source {self.sample_source!r}")
        unknown = set(self.models) - set(TN_KINDS) - {"gan"}
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _ini(section: str, values: dict) -> str:
    lines = [f"[{section}]"] + [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}"
                                for k, v in values.items()]
    return "\n".join(lines) + "\n"


def _protocol_ini(cfg: ProtocolConfig) -> str:
    values = {}
    for k, v in vars(cfg).items():
        if k in ("out", "tasks"):
            continue
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        values[k] = "" if v is None else v
    tasks = {t.name: f"{t.criteria} | {t.objectives} | {','.join(repr(r) for r in t.ref)}" for t in cfg.tasks}
    return _ini("protocol", values) + "\n" + _ini("tasks", tasks)


def _search_space(cfg: ProtocolConfig, model: str) -> training.SearchSpace:
    if model == "gan":
        return training.gan_space(cfg.gan_trials, cfg.gan_layers, cfg.gan_units, cfg.gan_prior,
                                  cfg.gan_dropout, cfg.gan_lr_exp)
    return training.tn_space(cfg.bond_dims)


def run_protocol(cfg: ProtocolConfig) -> dict[str, Path]:
    """Run everything and return the paths of the main report files."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "protocol.ini", _protocol_ini(cfg))
    if cfg.dataset is None:
        strings = toy_corpus(cfg.corpus_size, cfg.corpus_max_len, cfg.seed)
        atomic_write_text(out / "corpus.txt", "".join(s + "\n" for s in strings))
        dataset = dataset_from_strings(strings)
    else:
        dataset = load_dataset(cfg.dataset)
    evaluator = training.default_evaluator(dataset, cfg.ngram_k)
    base = training.TrainConfig(learning_rate=cfg.tn_lr, batch_size=cfg.batch_size,
                                epochs=cfg.epochs, seed=cfg.seed, eval_sample_count=cfg.eval_samples)
    best_samples: dict[str, np.ndarray] = {}
    pooled: dict[str, list[np.ndarray]] = {}
    learning_rows, summary_rows = [], []
    for m_i, model in enumerate(cfg.models):
        seed0 = cfg.seed + 1000 * (m_i + 1)
        search = training.random_search(_search_space(cfg, model), model, dataset, cfg.search_epochs,
                                        seed0, base, evaluator)
        (out / "search").mkdir(exist_ok=True)
        atomic_write_text(out / "search" / f"{model}.csv", training.results_to_csv(search))
        chosen = dict(search[0].config)
        if model != "gan":
            chosen["purif_dim"] = cfg.purif_dim
        run_base = replace(base, epochs=cfg.gan_epochs if model == "gan" else cfg.epochs)
        best_rep, best_fd = None, None
        distances = []
        for rep in range(cfg.repetitions):
            seed = seed0 + 100 + rep
            trained, hist = training.run_trial(model, dataset, chosen, run_base, evaluator, seed,
                                               cfg.purif_dim)
            epoch, samples = training.select_best_epoch(hist)
            distances.append(hist.best_frechet)
            pooled.setdefault(model, []).append(samples)
            learning_rows.append([model, rep, epoch, repr(hist.best_frechet)])
            _write_run(out / "runs" / model / f"rep{rep}", model, chosen, run_base, seed,
                       trained, hist, dataset)
            if best_fd is None or hist.best_frechet < best_fd:
                best_rep, best_fd = rep, hist.best_frechet
                best_samples[model] = samples
        summary_rows.append([model, repr(min(distances)), repr(statistics.median(distances)),
                             repr(statistics.stdev(distances) if len(distances) > 1 else 0.0), best_rep])
        log.info("%s: best Fréchet %.4f (rep %d)", model, best_fd, best_rep)

    atomic_write_text(out / "learning.csv", _csv(learning_rows, ["model", "rep", "best_epoch", "best_frechet"]))
    atomic_write_text(out / "learning_summary.csv",
                      _csv(summary_rows, ["model", "min_frechet", "median_frechet", "std_frechet", "best_rep"]))

    if cfg.sample_source == "pooled":
        best_samples = {m: np.concatenate(v) for m, v in pooled.items()}
    (out / "samples").mkdir(exist_ok=True)
    texts = {m: decode_samples(s, dataset.alphabet) for m, s in best_samples.items()}
    for m, lines in texts.items():
        atomic_write_text(out / "samples" / f"{m}.txt", "".join(s + "\n" for s in lines))
    # stand-in for an external property estimator, consumed through the CSV interface
    atomic_write_text(out / "properties.csv",
                      property_table_csv(t for lines in texts.values() for t in lines))
    table = read_property_table(out / "properties.csv")

    foldsets = [harness.fold_split(texts[m], cfg.folds, tag=m) for m in cfg.models]
    train_set = dataset.strings()
    paths = {}
    for task in cfg.tasks:
        report = harness.evaluate(foldsets, table, harness.parse_criteria(task.criteria),
                                  harness.Objectives.parse(task.objectives), task.ref, train_set,
                                  combine=True, subset_search=True)
        tdir = out / "eval" / task.name
        tdir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(tdir / "per_fold.csv", report.per_fold_csv())
        atomic_write_text(tdir / "summary.csv", report.summary_csv())
        atomic_write_text(tdir / "subsets.csv", report.subsets_csv())
        paths[task.name] = tdir
    return paths


def _write_run(run_dir: Path, model: str, chosen: dict, base: training.TrainConfig, seed: int,
               trained, hist: training.TrainHistory, dataset: SequenceDataset) -> None:
    values = {"kind": model, **chosen, **training.config_dict(replace(base, seed=seed))}
    if model == "gan":
        def write(path):
            best = gan_mod.init_gan(dataset.length, dataset.alphabet.size, chosen["prior_dim"],
                                    chosen["hidden_layers"], chosen["hidden_units"],
                                    chosen.get("dropout_rate", 0.0), dataset.alphabet.pad_index, zero=True)
            n = len(best.g_params())
            best.set_g_params(hist.best_params[:n])
            best.set_d_params(hist.best_params[n:])
            gan_mod.save_gan(best, path, {"tokens": list(dataset.alphabet.tokens)})
    else:
        def write(path):
            best = trained.copy()
            best.set_params(hist.best_params)
            tn.save_model(best, path, {"tokens": list(dataset.alphabet.tokens),
                                       "alphabet_mode": dataset.alphabet.mode})
    training.write_run_dir(run_dir, _ini("train", values), hist, write, hist.best_samples, dataset.alphabet)
