"""Minibatch Adam training, Fréchet-based epoch selection and random search."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import gan as gan_mod
from . import tn
from .adam import AdamState, adam_step
from .archive import atomic_write_text
from .metrics import FeatureCloud, GaussianSummary, NGramFeaturizer, fit_gaussian, frechet_distance
from .sequences import SequenceDataset, decode_samples

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    eval_sample_count: int = 10_000
    eval_every: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_sample_count < 1:
            raise ValueError("epochs, batch_size and eval_sample_count must be >= 1")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0 (0 disables evaluation)")


@dataclass
class TrainHistory:
    """Per-epoch losses and per-evaluation Fréchet distances (epochs are 1-based)."""

    losses: list[dict[str, float]] = field(default_factory=list)
    eval_epochs: list[int] = field(default_factory=list)
    frechet: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_samples: np.ndarray | None = None
    best_params: list[np.ndarray] | None = None

    def record_eval(self, epoch: int, distance: float, samples: np.ndarray, params) -> None:
        self.eval_epochs.append(epoch)
        self.frechet.append(distance)
        if self.best_epoch is None or distance < min(self.frechet[:-1]):
            self.best_epoch = epoch
            self.best_samples = samples
            self.best_params = [np.array(p, copy=True) for p in params]

    @property
    def best_frechet(self) -> float:
        return min(self.frechet) if self.frechet else math.inf

    def to_csv(self) -> str:
        keys = list(self.losses[0]) if self.losses else []
        by_epoch = dict(zip(self.eval_epochs, self.frechet))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", *keys, "frechet"])
        for i, row in enumerate(self.losses, start=1):
            fd = by_epoch.get(i)
            w.writerow([i, *(repr(row[k]) for k in keys), "" if fd is None else repr(fd)])
        return buf.getvalue()


def select_best_epoch(history: TrainHistory) -> tuple[int, np.ndarray | None]:
    """Epoch with the lowest recorded Fréchet distance; ties go to the earliest."""
    if not history.frechet:
        raise ValueError("no evaluations recorded")
    i = int(np.argmin(history.frechet))
    return history.eval_epochs[i], history.best_samples


class FrechetEvaluator:
    """Fréchet distance of generated index arrays to a fixed reference cloud."""

    def __init__(self, featurizer, reference: FeatureCloud | GaussianSummary):
        self.featurizer = featurizer
        self.reference = reference if isinstance(reference, GaussianSummary) else fit_gaussian(reference)

    def __call__(self, indices: np.ndarray) -> float:
        return frechet_distance(fit_gaussian(self.featurizer(indices)), self.reference)


class ValidationNLL:
    """Scores a TN model directly by its mean NLL on held-out sequences.

    Used in place of a Fréchet evaluator for early stopping when exact
    likelihoods are the quantity of interest; no samples are drawn.
    """

    scores_model = True

    def __init__(self, indices: np.ndarray):
        self.indices = np.asarray(indices)

    def __call__(self, model: tn.TNModel) -> float:
        return tn.nll(model, self.indices)


def default_evaluator(dataset: SequenceDataset, k: int = 2) -> FrechetEvaluator:
    feat = NGramFeaturizer(min(k, dataset.length), dataset.alphabet.size, dataset.alphabet.pad_index)
    return FrechetEvaluator(feat, feat(dataset.indices))


def _should_eval(config: TrainConfig, epoch: int) -> bool:
    if config.eval_every == 0:
        return False
    return epoch % config.eval_every == 0 or epoch == config.epochs


def train_tn(model: tn.TNModel, dataset: SequenceDataset, config: TrainConfig,
             evaluator: FrechetEvaluator | None = None) -> tuple[tn.TNModel, TrainHistory]:
    """Shuffled minibatch Adam on the NLL; evaluates and keeps the best epoch.

    The input model is copied, not modified. Returns the final model and the
    history; ``history.best_params`` holds the lowest-distance checkpoint.
    """
    if dataset.length != model.n_sites or dataset.alphabet.size != model.d:
        raise ValueError("dataset and model dimensions differ")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(model.params)
    hist = TrainHistory()
    x = dataset.indices
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], config.batch_size):
            batch = x[order[start:start + config.batch_size]]
            try:
                grads = tn.nll_gradient(model, batch)
            except (tn.DegenerateModelError, tn.ZeroProbabilityError) as exc:
                raise tn.DegenerateModelError(f"epoch {epoch}: {exc}") from exc
            params, state = adam_step(model.params, grads, state, config.learning_rate)
            model.set_params(params)
        hist.losses.append({"nll": tn.nll(model, x)})
        if evaluator is not None and _should_eval(config, epoch):
            if getattr(evaluator, "scores_model", False):
                hist.record_eval(epoch, evaluator(model), None, model.params)
            else:
                samples = tn.sample_indices(model, rng, config.eval_sample_count)
                hist.record_eval(epoch, evaluator(samples), samples, model.params)
            log.debug("epoch %d nll %.4f score %.4f", epoch, hist.losses[-1]["nll"], hist.frechet[-1])
    return model, hist


def train_gan(gan: gan_mod.GANModel, dataset: SequenceDataset, config: TrainConfig,
              evaluator: FrechetEvaluator | None = None) -> tuple[gan_mod.GANModel, TrainHistory]:
    """One epoch = one pass over the data in minibatches of ``gan_train_step``."""
    rng = np.random.default_rng(config.seed)
    hist = TrainHistory()
    x = dataset.indices
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(x.shape[0])
        d_losses, g_losses = [], []
        for start in range(0, x.shape[0], config.batch_size):
            batch = x[order[start:start + config.batch_size]]
            dl, gl = gan_mod.gan_train_step(gan, batch, rng, config.learning_rate)
            d_losses.append(dl)
            g_losses.append(gl)
        hist.losses.append({"d_loss": float(np.mean(d_losses)), "g_loss": float(np.mean(g_losses))})
        if evaluator is not None and _should_eval(config, epoch):
            samples = gan_mod.gan_sample_indices(gan, rng, config.eval_sample_count)
            hist.record_eval(epoch, evaluator(samples), samples, gan.g_params() + gan.d_params())
    return gan, hist


# --- run directories ---------------------------------------------------------------

def write_run_dir(out, config_text: str, history: TrainHistory, checkpoint_writer,
                  samples: np.ndarray | None, alphabet) -> Path:
    """Write config, history CSV, best-epoch checkpoint and samples into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.ini", config_text)
    atomic_write_text(out / "history.csv", history.to_csv())
    checkpoint_writer(out / "checkpoint.zip")
    if samples is not None:
        atomic_write_text(out / "samples.txt", "".join(s + "\n" for s in decode_samples(samples, alphabet)))
    return out


# --- random search -------------------------------------------------------------------

@dataclass(frozen=True)
class LogUniform:
    """10**u with u uniform on [low_exp, high_exp]."""
    low_exp: float
    high_exp: float

    def draw(self, rng):
        return float(10.0 ** rng.uniform(self.low_exp, self.high_exp))


@dataclass(frozen=True)
class IntUniform:
    low: int
    high: int

    def draw(self, rng):
        return int(rng.integers(self.low, self.high + 1))


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def draw(self, rng):
        return float(rng.uniform(self.low, self.high))


@dataclass(frozen=True)
class Choice:
    values: tuple

    def draw(self, rng):
        return self.values[int(rng.integers(len(self.values)))]


@dataclass(frozen=True)
class SearchSpace:
    """Grid over ``strata`` crossed with ``trials`` random draws from ``rules``."""

    strata: dict[str, tuple] = field(default_factory=dict)
    rules: dict[str, Any] = field(default_factory=dict)
    trials: int = 1
    fixed: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.strata and not self.rules:
            raise ValueError("search space is empty")
        for name, values in self.strata.items():
            if len(values) == 0:
                raise ValueError(f"stratum {name!r} has no values")
        for name, rule in self.rules.items():
            lo, hi = _bounds(rule)
            if lo is not None and lo > hi:
                raise ValueError(f"rule {name!r} has unordered bounds")


def _bounds(rule):
    if isinstance(rule, LogUniform):
        return rule.low_exp, rule.high_exp
    if isinstance(rule, (IntUniform, Uniform)):
        return rule.low, rule.high
    if isinstance(rule, Choice):
        if not rule.values:
            raise ValueError("empty choice")
        return None, None
    raise TypeError(f"unknown sampling rule {rule!r}")


def tn_space(bond_dims=(2, 3, 5), trials: int = 1, search_lr: bool = False) -> SearchSpace:
    rules = {"learning_rate": LogUniform(-4, -2)} if search_lr else {}
    return SearchSpace({"bond_dim": tuple(bond_dims)}, rules, trials)


def gan_space(trials: int = 200, layers=(1, 2, 3), units=(300, 3000), prior=(50, 300),
              dropout=(0.0, 0.8), lr_exp=(-7, -4)) -> SearchSpace:
    return SearchSpace(
        {"hidden_layers": tuple(layers)},
        {"learning_rate": LogUniform(*lr_exp), "hidden_units": IntUniform(*units),
         "prior_dim": IntUniform(*prior), "dropout_rate": Uniform(*dropout)},
        trials,
    )


def draw_configs(space: SearchSpace, seed: int) -> list[dict[str, Any]]:
    """All trial configurations, strata in grid order, rules in sorted-name order."""
    rng = np.random.default_rng(seed)
    names = list(space.strata)
    grid = [dict()]
    for name in names:
        grid = [{**g, name: v} for g in grid for v in space.strata[name]]
    configs = []
    for cell in grid:
        for _ in range(space.trials):
            cfg = dict(space.fixed)
            cfg.update(cell)
            for name in sorted(space.rules):
                cfg[name] = space.rules[name].draw(rng)
            configs.append(cfg)
    return configs


@dataclass
class TrialResult:
    config: dict[str, Any]
    best_frechet: float
    best_epoch: int | None


def run_trial(kind: str, dataset: SequenceDataset, cfg: dict[str, Any], base: TrainConfig,
              evaluator: FrechetEvaluator, seed: int, purif_dim: int = 2) -> tuple[Any, TrainHistory]:
    """Train one configuration; ``kind`` is a TN kind value or ``"gan"``."""
    tc = replace(base, seed=seed, **{k: cfg[k] for k in ("learning_rate", "batch_size") if k in cfg})
    if kind == "gan":
        g = gan_mod.init_gan(dataset.length, dataset.alphabet.size, cfg["prior_dim"],
                             cfg["hidden_layers"], cfg["hidden_units"], cfg.get("dropout_rate", 0.0),
                             dataset.alphabet.pad_index, seed=seed)
        return train_gan(g, dataset, tc, evaluator)
    k = tn.TNKind(kind)
    model = tn.init_model(k, dataset.alphabet.size, dataset.length, cfg["bond_dim"],
                          cfg.get("purif_dim", purif_dim) if k.is_lps else 1, seed=seed)
    return train_tn(model, dataset, tc, evaluator)


def _trial_worker(args):
    kind, dataset, cfg, base, evaluator, seed = args
    _, hist = run_trial(kind, dataset, cfg, base, evaluator, seed)
    return TrialResult(cfg, hist.best_frechet, hist.best_epoch)


def random_search(space: SearchSpace, kind: str, dataset: SequenceDataset, budget: int,
                  seed: int, base: TrainConfig | None = None,
                  evaluator: FrechetEvaluator | None = None, jobs: int = 1) -> list[TrialResult]:
    """Train every drawn configuration for ``budget`` epochs; rank by best Fréchet distance.

    Trial ``i`` trains with seed ``seed + i``; the ranking is stable, so equal
    distances keep draw order.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1 epoch")
    base = replace(base or TrainConfig(), epochs=budget)
    evaluator = evaluator or default_evaluator(dataset)
    configs = draw_configs(space, seed)
    work = [(kind, dataset, cfg, base, evaluator, seed + i) for i, cfg in enumerate(configs)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_worker, work))
    else:
        results = [_trial_worker(w) for w in work]
    return sorted(results, key=lambda r: r.best_frechet)


def results_to_csv(results: Sequence[TrialResult]) -> str:
    keys = sorted({k for r in results for k in r.config})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", *keys, "best_frechet", "best_epoch"])
    for rank, r in enumerate(results, start=1):
        w.writerow([rank, *(_fmt(r.config.get(k, "")) for k in keys), repr(r.best_frechet),
                    "" if r.best_epoch is None else r.best_epoch])
    return buf.getvalue()


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
