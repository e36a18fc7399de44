"""Evaluation protocol: folds, criteria filters, per-fold metrics, model combination."""

from __future__ import annotations

import csv
import io
import itertools
import math
import operator
import re
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metrics import MAXIMIZE, MINIMIZE, PropertyTable, ReferencePoint, fidelity, hypervolume, pareto_front

LOG_FLOOR = 1e-12

_OPS = {">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le}


@dataclass(frozen=True)
class Threshold:
    prop: str
    op: str
    bound: float
    unit: str = ""

    def __call__(self, value: float) -> bool:
        return _OPS[self.op](value, self.bound)

    def __str__(self):
        return f"{self.prop}{self.op}{self.bound:g}"


@dataclass(frozen=True)
class CriteriaSpec:
    name: str
    flags: tuple[str, ...] = ()
    thresholds: tuple[Threshold, ...] = ()

    def columns(self) -> tuple[set, set]:
        return set(self.flags), {t.prop for t in self.thresholds}

    def check(self, table: PropertyTable) -> None:
        flags, props = self.columns()
        missing = (flags - set(table.flag_names)) | (props - set(table.value_names))
        if missing:
            raise KeyError(f"criteria {self.name!r} reference unknown columns {sorted(missing)}")

    def passes(self, table: PropertyTable, key: str) -> bool:
        f, v = table.flags[key], table.values[key]
        return all(f[name] for name in self.flags) and all(t(v[t.prop]) for t in self.thresholds)


NO_CRITERIA = CriteriaSpec("none")
# at least one O-H bond and strictly positive BDE and IP (kcal/mol)
CRITERIA_I = CriteriaSpec("i", ("has_OH",), (Threshold("BDE", ">", 0.0, "kcal/mol"),
                                              Threshold("IP", ">", 0.0, "kcal/mol")))
CRITERIA_II = CriteriaSpec("ii", CRITERIA_I.flags, CRITERIA_I.thresholds + (
    Threshold("IP", ">", 182.0, "kcal/mol"), Threshold("BDE", "<", 85.0, "kcal/mol")))
CRITERIA = {c.name: c for c in (NO_CRITERIA, CRITERIA_I, CRITERIA_II)}

_THRESHOLD_RE = re.compile(r"^\s*(\w+)\s*(>=|<=|>|<)\s*([-+0-9.eE]+)\s*$")


def parse_criteria(text: str) -> CriteriaSpec:
    """Named criteria (none, i, ii) or a ';'-separated list like ``has_OH;IP>182``."""
    if text in CRITERIA:
        return CRITERIA[text]
    flags, thresholds = [], []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        m = _THRESHOLD_RE.match(part)
        if m:
            thresholds.append(Threshold(m.group(1), m.group(2), float(m.group(3))))
        elif re.fullmatch(r"\w+", part):
            flags.append(part)
        else:
            raise ValueError(f"cannot parse criterion {part!r}")
    return CriteriaSpec(text, tuple(flags), tuple(thresholds))


@dataclass(frozen=True)
class Objectives:
    names: tuple[str, ...]
    senses: tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> Objectives:
        """``"BDE:min,IP:max,SA:min"``."""
        names, senses = [], []
        for item in text.split(","):
            name, _, sense = item.strip().partition(":")
            if sense not in (MAXIMIZE, MINIMIZE):
                raise ValueError(f"objective {item!r} needs a :max or :min sense")
            names.append(name)
            senses.append(sense)
        return cls(tuple(names), tuple(senses))


# --- folds ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    id: str  # "<model tag>:<position in the source sample list>"
    text: str


@dataclass
class FoldSet:
    tag: str
    folds: list[list[Sample]]

    @property
    def k(self) -> int:
        return len(self.folds)


def fold_split(samples: Sequence[str], k: int = 10, tag: str = "model") -> FoldSet:
    """Deterministic round-robin split: sample i goes to fold i mod k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(samples) < k:
        raise ValueError(f"{len(samples)} samples cannot fill {k} folds")
    folds = [[] for _ in range(k)]
    for i, s in enumerate(samples):
        folds[i % k].append(Sample(f"{tag}:{i}", s))
    return FoldSet(tag, folds)


def combine_models(foldsets: Sequence[FoldSet]) -> FoldSet:
    """Fold j of the result is the union of every model's fold j."""
    if not foldsets:
        raise ValueError("nothing to combine")
    k = foldsets[0].k
    if any(fs.k != k for fs in foldsets):
        raise ValueError("fold sets have different fold counts")
    if len(foldsets) == 1:
        return foldsets[0]
    folds = [[s for fs in foldsets for s in fs.folds[j]] for j in range(k)]
    return FoldSet("+".join(fs.tag for fs in foldsets), folds)


class MissingPropertiesError(KeyError):
    def __init__(self, ids):
        self.ids = list(ids)
        shown = ", ".join(self.ids[:10]) + (" ..." if len(self.ids) > 10 else "")
        super().__init__(f"{len(self.ids)} samples have no property row: {shown}")


def apply_criteria(fold: Sequence[Sample], table: PropertyTable, criteria: CriteriaSpec) -> list[Sample]:
    """Samples whose property row (keyed by sample text) satisfies every criterion."""
    missing = [s.id for s in fold if s.text not in table]
    if missing:
        raise MissingPropertiesError(missing)
    criteria.check(table)
    return [s for s in fold if criteria.passes(table, s.text)]


def objective_matrix(samples: Sequence[Sample], table: PropertyTable, objectives: Objectives) -> np.ndarray:
    return np.array([[table.values[s.text][n] for n in objectives.names] for s in samples],
                    dtype=float).reshape(len(samples), len(objectives.names))


# --- reports -------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldResult:
    group: str
    fold: int
    n_samples: int
    n_new: int
    n_passing: int
    n_new_valid: int
    fidelity: float | None
    rate: float
    hv: float

    @property
    def log_hv(self) -> float:
        return math.log(self.hv + LOG_FLOOR)


def evaluate_folds(foldset: FoldSet, table: PropertyTable, criteria: CriteriaSpec,
                   objectives: Objectives, ref, train_set=()) -> list[FoldResult]:
    """Fidelity, rate and hypervolume of the criteria-passing samples, per fold."""
    train = set(train_set)
    ref = _ref(ref, objectives)
    out = []
    for j, fold in enumerate(foldset.folds):
        passing = apply_criteria(fold, table, criteria)
        ok_ids = {s.id for s in passing}
        fid = fidelity([s.text for s in fold], train, [s.id in ok_ids for s in fold])
        hv = hypervolume(objective_matrix(passing, table, objectives), ref, objectives.senses)
        out.append(FoldResult(foldset.tag, j, len(fold), fid.n_new, len(passing), fid.n_new_valid,
                              fid.fidelity, fid.rate, hv))
    return out


def _ref(ref, objectives: Objectives) -> ReferencePoint:
    values = ref.values if isinstance(ref, ReferencePoint) else tuple(float(v) for v in ref)
    if len(values) != len(objectives.names):
        raise ValueError("reference point length differs from objective count")
    return ReferencePoint(tuple(values), objectives.senses)


def median(values) -> float | None:
    vals = [v for v in values if v is not None]
    return statistics.median(vals) if vals else None


def _std(values) -> float | None:
    vals = [v for v in values if v is not None]
    return statistics.stdev(vals) if len(vals) > 1 else (0.0 if vals else None)


@dataclass
class SubsetResult:
    tags: tuple[str, ...]
    median_hv: float
    fold_hv: list[float]


def best_subset(foldsets: Sequence[FoldSet], table: PropertyTable, criteria: CriteriaSpec,
                objectives: Objectives, ref) -> tuple[SubsetResult, list[SubsetResult]]:
    """Exhaustive search over nonempty model subsets for the highest median fold HV.

    Ties go to the smaller subset, then to the lexicographically first tuple of
    model positions. Returns the winner and every subset's result in
    enumeration order (by size, then position).
    """
    if len(foldsets) > 20:
        raise ValueError("subset search is limited to 20 models")
    ref = _ref(ref, objectives)
    k = foldsets[0].k
    if any(fs.k != k for fs in foldsets):
        raise ValueError("fold sets have different fold counts")
    # HV of a union only depends on the union of per-model Pareto fronts
    fronts = []
    for fs in foldsets:
        per_fold = []
        for fold in fs.folds:
            pts = objective_matrix(apply_criteria(fold, table, criteria), table, objectives)
            per_fold.append(pareto_front(pts, objectives.senses) if len(pts) else pts)
        fronts.append(per_fold)
    results = []
    best, best_key = None, None
    for size in range(1, len(foldsets) + 1):
        for combo in itertools.combinations(range(len(foldsets)), size):
            fold_hv = [hypervolume(np.vstack([fronts[i][j] for i in combo]), ref, objectives.senses)
                       for j in range(k)]
            res = SubsetResult(tuple(foldsets[i].tag for i in combo), median(fold_hv), fold_hv)
            results.append(res)
            key = (-res.median_hv, size, combo)
            if best_key is None or key < best_key:
                best, best_key = res, key
    return best, results


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass
class EvalReport:
    folds: list[FoldResult] = field(default_factory=list)
    subsets: list[SubsetResult] = field(default_factory=list)
    best_subset: SubsetResult | None = None

    def groups(self) -> list[str]:
        return list(dict.fromkeys(r.group for r in self.folds))

    def summary(self) -> list[dict]:
        rows = []
        for g in self.groups():
            rs = [r for r in self.folds if r.group == g]
            hv = [r.hv for r in rs]
            rows.append({
                "group": g, "n_folds": len(rs),
                "hv_median": median(hv), "hv_std": _std(hv), "hv_min": min(hv), "hv_max": max(hv),
                "log_hv_median": median([r.log_hv for r in rs]),
                "fidelity_median": median([r.fidelity for r in rs]),
                "rate_median": median([r.rate for r in rs]),
            })
        return rows

    def per_fold_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "fold", "n_samples", "n_new", "n_passing", "n_new_valid",
                    "fidelity", "rate", "hv", "log_hv", "log_floored"])
        for r in self.folds:
            w.writerow([r.group, r.fold, r.n_samples, r.n_new, r.n_passing, r.n_new_valid,
                        _fmt(r.fidelity), _fmt(r.rate), _fmt(r.hv), _fmt(r.log_hv),
                        "true" if r.hv == 0 else "false"])
        return buf.getvalue()

    def summary_csv(self) -> str:
        rows = self.summary()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = ["group", "n_folds", "hv_median", "hv_std", "hv_min", "hv_max",
                "log_hv_median", "fidelity_median", "rate_median"]
        w.writerow(keys)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in keys])
        return buf.getvalue()

    def subsets_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subset", "size", "hv_median", "log_hv_median", "selected"])
        for s in self.subsets:
            w.writerow(["+".join(s.tags), len(s.tags), _fmt(s.median_hv),
                        _fmt(median([math.log(h + LOG_FLOOR) for h in s.fold_hv])),
                        "true" if self.best_subset is not None and s.tags == self.best_subset.tags else "false"])
        return buf.getvalue()


def evaluate(foldsets: Sequence[FoldSet], table: PropertyTable, criteria: CriteriaSpec,
             objectives: Objectives, ref, train_set=(), combine: bool = False,
             subset_search: bool = False) -> EvalReport:
    """Per-model fold metrics, optionally the all-model combination and subset search."""
    report = EvalReport()
    for fs in foldsets:
        report.folds += evaluate_folds(fs, table, criteria, objectives, ref, train_set)
    if combine and len(foldsets) > 1:
        report.folds += evaluate_folds(combine_models(foldsets), table, criteria, objectives, ref, train_set)
    if subset_search:
        report.best_subset, report.subsets = best_subset(foldsets, table, criteria, objectives, ref)
    return report
