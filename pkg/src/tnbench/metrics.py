"""Sample-quality metrics: Fréchet distance, fidelity, Pareto dominance, hypervolume."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

MAXIMIZE = "max"
MINIMIZE = "min"


# --- feature clouds and Fréchet distance ---------------------------------------

@dataclass(frozen=True)
class FeatureCloud:
    features: np.ndarray  # (n, f)
    provenance: str = "ngram"

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 2:
            raise ValueError("feature cloud must be a 2-D array")
        if not np.all(np.isfinite(f)):
            raise ValueError("feature cloud has non-finite entries")
        object.__setattr__(self, "features", f)

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray


def ngram_featurize(indices, k: int, d: int, pad_index: int | None = None) -> FeatureCloud:
    """Normalized k-gram counts per sequence, counting only windows before the first pad.

    Feature ``j`` is the k-gram whose base-``d`` digits (most significant first)
    spell ``j``. Sequences with no complete k-gram get an all-zero row.
    """
    x = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    n, length = x.shape
    if k < 1 or k > length:
        raise ValueError(f"k must be in [1, N={length}]")
    pad_index = d - 1 if pad_index is None else pad_index
    n_windows = length - k + 1
    codes = np.zeros((n, n_windows), dtype=np.int64)
    valid = np.ones((n, n_windows), dtype=bool)
    for t in range(k):
        window = x[:, t:t + n_windows]
        codes = codes * d + window
        valid &= window != pad_index
    counts = np.zeros((n, d ** k))
    rows = np.broadcast_to(np.arange(n)[:, None], codes.shape)
    np.add.at(counts, (rows[valid], codes[valid]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return FeatureCloud(counts / np.where(totals > 0, totals, 1.0), provenance=f"ngram:{k}")


class NGramFeaturizer:
    """Callable featurizer: index array (n, N) -> FeatureCloud."""

    def __init__(self, k: int, d: int, pad_index: int | None = None):
        self.k, self.d = k, d
        self.pad_index = d - 1 if pad_index is None else pad_index

    def __call__(self, indices) -> FeatureCloud:
        return ngram_featurize(indices, self.k, self.d, self.pad_index)


Featurizer = Callable[[np.ndarray], FeatureCloud]


def load_feature_file(path) -> FeatureCloud:
    """Feature matrix from ``.npy`` or comma-separated text (no header)."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path, allow_pickle=False)
    else:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return FeatureCloud(arr, provenance=f"file:{path.name}")


def fit_gaussian(cloud: FeatureCloud | np.ndarray, ridge: float = 1e-6) -> GaussianSummary:
    """Mean and unbiased covariance; adds ``ridge * I`` when n < f."""
    x = cloud.features if isinstance(cloud, FeatureCloud) else np.asarray(cloud, dtype=float)
    n, f = x.shape
    if n < 2:
        raise ValueError("need at least 2 samples to fit a Gaussian")
    mu = x.mean(axis=0)
    centered = x - mu
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    if n < f and ridge:
        cov = cov + ridge * np.eye(f)
    return GaussianSummary(mu, cov)


def _psd_sqrt(mat: np.ndarray, clamp: float) -> np.ndarray:
    try:
        w, v = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigendecomposition failed: {exc}") from None
    scale = max(np.abs(w).max(initial=0.0), 1.0)
    if w.size and w.min() < -clamp * scale:
        raise ArithmeticError(f"covariance has eigenvalue {w.min():.3g}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary, clamp: float = 1e-8) -> float:
    """Squared Wasserstein-2 distance between two Gaussians.

    tr sqrt(S1 S2) equals the sum of singular values of sqrt(S1) sqrt(S2).
    Taking it from an SVD avoids square-rooting tiny eigenvalues of a product,
    which would amplify round-off to about sqrt(eps) * |S|, and the result is
    symmetric in the two arguments by construction. Covariance eigenvalues
    down to ``-clamp`` times the largest count as round-off and are zeroed.
    """
    if g1.mean.shape != g2.mean.shape or g1.cov.shape != g2.cov.shape:
        raise ValueError("feature dimensions differ")
    m = _psd_sqrt(g1.cov, clamp) @ _psd_sqrt(g2.cov, clamp)
    try:
        tr_sqrt = np.linalg.svd(m, compute_uv=False).sum()
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"singular value decomposition failed: {exc}") from None
    diff = g1.mean - g2.mean
    value = float(diff @ diff + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * tr_sqrt)
    return max(value, 0.0)


# --- fidelity --------------------------------------------------------------------

@dataclass(frozen=True)
class FidelityResult:
    fidelity: float | None  # None when no sample is new
    rate: float
    n_samples: int
    n_new: int
    n_new_valid: int


def fidelity(samples: Sequence[str], train_set, valid: Sequence[bool] | Callable[[str], bool]) -> FidelityResult:
    """Fraction of new samples that are valid, plus the rate over all samples.

    ``valid`` is either a per-sample flag list or a predicate on the sample.
    Novelty is exact string equality against ``train_set``.
    """
    train = set(train_set)
    flags = [valid(s) for s in samples] if callable(valid) else list(valid)
    if len(flags) != len(samples):
        raise ValueError("need one validity flag per sample")
    new = [s not in train for s in samples]
    n_new = sum(new)
    n_new_valid = sum(1 for is_new, ok in zip(new, flags) if is_new and ok)
    fid = n_new_valid / n_new if n_new else None
    rate = n_new_valid / len(samples) if samples else 0.0
    return FidelityResult(fid, rate, len(samples), n_new, n_new_valid)


# --- dominance and hypervolume ---------------------------------------------------

def _signs(senses: Sequence[str] | None, m: int) -> np.ndarray:
    if senses is None:
        return np.ones(m)
    if len(senses) != m:
        raise ValueError(f"{len(senses)} senses given for {m} objectives")
    out = []
    for s in senses:
        if s not in (MAXIMIZE, MINIMIZE):
            raise ValueError(f"unknown objective sense {s!r}")
        out.append(1.0 if s == MAXIMIZE else -1.0)
    return np.array(out)


@dataclass(frozen=True)
class ObjectiveVector:
    values: tuple[float, ...]
    senses: tuple[str, ...]

    def __post_init__(self):
        _signs(self.senses, len(self.values))
        if not all(np.isfinite(self.values)):
            raise ValueError("objective values must be finite")


def dominates(a, b, senses: Sequence[str] | None = None) -> bool:
    """True iff ``a`` is at least as good as ``b`` everywhere and strictly better somewhere."""
    if isinstance(a, ObjectiveVector) or isinstance(b, ObjectiveVector):
        if not (isinstance(a, ObjectiveVector) and isinstance(b, ObjectiveVector)) or a.senses != b.senses:
            raise ValueError("objective sense mismatch")
        senses, a, b = a.senses, a.values, b.values
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("objective vectors differ in length")
    s = _signs(senses, a.size)
    a, b = a * s, b * s
    return bool(np.all(a >= b) and np.any(a > b))


def pareto_front(points, senses: Sequence[str] | None = None) -> np.ndarray:
    """Non-dominated points in input order, duplicates kept once."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 0)
    keep = _nondominated_mask(pts * _signs(senses, pts.shape[1]))
    return pts[keep]


def _nondominated_mask(maxpts: np.ndarray) -> np.ndarray:
    """Mask of first occurrences of non-dominated rows (all objectives maximized).

    Rows are visited in descending lexicographic order, so every dominator is
    seen before the rows it dominates; lexsort is stable, so among exact
    duplicates the earliest index wins.
    """
    n, m = maxpts.shape
    order = np.lexsort(-maxpts.T[::-1])
    keep = np.zeros(n, dtype=bool)
    front = np.empty((0, m))
    for i in order:
        p = maxpts[i]
        if front.shape[0] and np.any(np.all(front >= p, axis=1)):
            continue
        front = np.vstack([front, p])
        keep[i] = True
    return keep


@dataclass(frozen=True)
class ReferencePoint:
    values: tuple[float, ...]
    senses: tuple[str, ...] | None = None


def _to_minimization(points, ref, senses):
    """Shift to a minimization problem with the reference point at the origin."""
    if isinstance(ref, ReferencePoint):
        if senses is None:
            senses = ref.senses
        elif ref.senses is not None and tuple(ref.senses) != tuple(senses):
            raise ValueError("reference point senses differ from objective senses")
        ref = ref.values
    ref = np.asarray(ref, dtype=float)
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.empty((0, ref.size))
    pts = np.atleast_2d(pts)
    if pts.shape[1] != ref.size:
        raise ValueError(f"points have {pts.shape[1]} objectives, reference has {ref.size}")
    # negative coordinates mean "better than the reference"
    return (pts - ref) * -_signs(senses, ref.size)


def hypervolume(points, ref, senses: Sequence[str] | None = None) -> float:
    """Exact Lebesgue measure of the region dominated by ``points`` and bounded by ``ref``.

    Points that do not strictly beat the reference on every objective add
    nothing, and the value is bit-identical under any reordering of the
    points. Three or fewer objectives use a dimension sweep; more use
    recursive slicing.
    """
    q = _to_minimization(points, ref, senses)
    if q.shape[0] == 0:
        return 0.0
    q = q[np.all(q < 0, axis=1)]
    if q.shape[0] == 0:
        return 0.0
    # sorted distinct rows: the result then does not depend on input order,
    # including the rounding of the sweep's running sums
    q = np.unique(q[_nondominated_mask(-q)], axis=0)
    return float(_hv_min(q))


def _hv_min(q: np.ndarray) -> float:
    """HV of points q < 0 (minimization) against the origin."""
    m = q.shape[1]
    if m == 1:
        return float(-q[:, 0].min())
    if m == 2:
        return _hv2(q)
    if m == 3:
        return _hv3(q)
    return _hv_slice(q)


def _hv2(q: np.ndarray) -> float:
    order = np.argsort(q[:, 0], kind="stable")
    xs, ys = q[order, 0], q[order, 1]
    total = 0.0
    best_y = 0.0
    for x, y in zip(xs, ys):
        if y < best_y:
            total += (-x) * (best_y - y)
            best_y = y
    return total


def _hv3(q: np.ndarray) -> float:
    """Sweep along the last objective, accumulating 2-D slice areas."""
    order = np.argsort(q[:, 2], kind="stable")
    q = q[order]
    total = 0.0
    # 2-D staircase kept as x-sorted lists of non-dominated (x, y)
    stair_x: list[float] = []
    stair_y: list[float] = []
    area = 0.0
    for i in range(q.shape[0]):
        x, y, z = q[i]
        if i:
            total += area * (z - q[i - 1, 2])
        area = _stair_insert(stair_x, stair_y, x, y, area)
    total += area * (0.0 - q[-1, 2])
    return total


def _stair_insert(sx: list, sy: list, x: float, y: float, area: float) -> float:
    """Insert (x, y) into a 2-D minimization staircase; return the updated area.

    The staircase keeps x increasing and y decreasing. Column j spans
    [sx[j], sx[j+1]) (the last one ends at 0) and has height -sy[j].
    """
    pos = bisect.bisect_left(sx, x)
    if pos > 0 and sy[pos - 1] <= y:
        return area
    if pos < len(sx) and sx[pos] == x and sy[pos] <= y:
        return area
    end = pos
    while end < len(sx) and sy[end] >= y:
        end += 1
    next_x = sx[end] if end < len(sx) else 0.0
    prev_y = sy[pos - 1] if pos > 0 else 0.0
    bounds = [x] + sx[pos:end] + [next_x]
    heights = [-prev_y] + [-v for v in sy[pos:end]]
    old = sum((bounds[j + 1] - bounds[j]) * h for j, h in enumerate(heights))
    new = (next_x - x) * -y
    sx[pos:end] = [x]
    sy[pos:end] = [y]
    return area - old + new


def _hv_slice(q: np.ndarray) -> float:
    """Recursive slicing along the last objective for m >= 4."""
    order = np.argsort(q[:, -1], kind="stable")
    q = q[order]
    total = 0.0
    for i in range(q.shape[0]):
        upper = q[i + 1, -1] if i + 1 < q.shape[0] else 0.0
        depth = upper - q[i, -1]
        if depth <= 0:
            continue
        sub = q[: i + 1, :-1]
        sub = sub[_nondominated_mask(-sub)]
        total += depth * _hv_min(sub)
    return total


def hv_contribution(points, ref, index: int, senses: Sequence[str] | None = None) -> float:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not 0 <= index < pts.shape[0]:
        raise IndexError(f"index {index} out of range for {pts.shape[0]} points")
    rest = np.delete(pts, index, axis=0)
    return hypervolume(pts, ref, senses) - hypervolume(rest, ref, senses)


# --- property tables ---------------------------------------------------------------

_TRUE = {"true", "yes", "1", "t", "y"}
_FALSE = {"false", "no", "0", "f", "n"}


@dataclass
class PropertyTable:
    """Per-sample boolean flags and real-valued properties keyed by sample id."""

    flags: dict[str, dict[str, bool]]
    values: dict[str, dict[str, float]]
    flag_names: tuple[str, ...]
    value_names: tuple[str, ...]

    def __contains__(self, sample_id):
        return sample_id in self.values

    def missing(self, sample_ids) -> list[str]:
        return [s for s in sample_ids if s not in self.values]


def read_property_table(path, flag_columns: Sequence[str] | None = None) -> PropertyTable:
    """Parse a CSV with header ``sample_id, <flags...>, <reals...>``.

    Without ``flag_columns``, a column is a flag when every entry is one of
    true/false/yes/no (case-insensitive).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id":
            raise ValueError(f"{path}: first header column must be 'sample_id'")
        rows = list(reader)
    cols = header[1:]
    if flag_columns is None:
        words = {"true", "false", "yes", "no"}
        flag_columns = [c for j, c in enumerate(cols, start=1)
                        if rows and all(r[j].strip().lower() in words for r in rows)]
    flag_set = set(flag_columns)
    unknown = flag_set - set(cols)
    if unknown:
        raise ValueError(f"{path}: flag columns not in header: {sorted(unknown)}")
    flags, values = {}, {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[0]
        f, v = {}, {}
        for name, cell in zip(cols, row[1:]):
            cell = cell.strip()
            if name in flag_set:
                low = cell.lower()
                if low not in _TRUE | _FALSE:
                    raise ValueError(f"{path}:{lineno}: bad flag {cell!r} in column {name}")
                f[name] = low in _TRUE
            else:
                try:
                    v[name] = float(cell)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad number {cell!r} in column {name}") from None
        flags[sid], values[sid] = f, v
    value_names = tuple(c for c in cols if c not in flag_set)
    return PropertyTable(flags, values, tuple(c for c in cols if c in flag_set), value_names)
