"""Independent reference implementations used by the tests.

None of these import the package's contraction, hypervolume or Fréchet code.
They are slow on purpose: brute-force enumeration, dense tensors, Monte Carlo.
"""

from __future__ import annotations

import itertools

import numba
import numpy as np


def all_sequences(d: int, n: int) -> np.ndarray:
    """Every length-n index string over d symbols, in lexicographic order."""
    return np.array(list(itertools.product(range(d), repeat=n)), dtype=np.int64)


def effective_cores(model) -> list[np.ndarray]:
    """Site tensors (d, mu, Dl, Dr) from raw parameters, using the documented parametrization.

    Positive MPS stores square roots of its nonnegative entries; complex kinds
    store real and imaginary parts separately.
    """
    if model.kind.value == "positive-mps":
        return [r ** 2 for r in model.raw]
    if model.raw_imag is not None:
        return [r + 1j * i for r, i in zip(model.raw, model.raw_imag)]
    return [np.asarray(r, dtype=float) for r in model.raw]


def dense_weights(model) -> np.ndarray:
    """Full tensor of unnormalized weights, shape (d,)*N.

    The amplitude tensor A[x1, b1, x2, b2, ..., right_bond] is grown one site
    at a time. Positive MPS weights are the amplitudes themselves; Born and LPS
    weights sum |A|^2 over every purification index.
    """
    cores = effective_cores(model)
    n = len(cores)
    amp = cores[0][:, :, 0, :]  # (d, mu, r)
    for a in cores[1:]:
        amp = np.tensordot(amp, a, axes=([-1], [2]))  # (..., d, mu, r)
    amp = amp[..., 0]
    w = amp.real if model.kind.value == "positive-mps" else np.abs(amp) ** 2
    return w.sum(axis=tuple(range(1, 2 * n, 2)))


def brute_weight(model, seq) -> float:
    """Weight of one sequence by summing over every purification path explicitly."""
    cores = effective_cores(model)
    mu = cores[0].shape[1]
    total = 0.0
    for path in itertools.product(range(mu), repeat=len(cores)):
        vec = np.ones(1, dtype=complex)
        for a, x, b in zip(cores, seq, path):
            vec = vec @ a[x, b]
        val = complex(vec[0])
        total += val.real if model.kind.value == "positive-mps" else abs(val) ** 2
    return total


def central_difference(f, params: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar f over every entry of every array."""
    grads = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[i][idx] += h
            minus[i][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """max over entries of |a - f| / max(|a|, |f|, floor)."""
    worst = 0.0
    for a, f in zip(analytic, numeric):
        a = np.asarray(a, dtype=float)
        f = np.asarray(f, dtype=float)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def naive_front(points: np.ndarray) -> np.ndarray:
    """Maximization Pareto mask by all-pairs comparison."""
    n = len(points)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        for j in range(n):
            if i != j and np.all(points[j] >= points[i]) and np.any(points[j] > points[i]):
                keep[i] = False
                break
    return keep


@numba.njit(cache=True)
def _splitmix(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _mc_hits(pts, lo, hi, draws, seed):
    n, m = pts.shape
    state = np.uint64(seed)
    u = np.empty(m)
    hits = 0
    scale = 1.0 / 9007199254740992.0  # 2**-53
    for _ in range(draws):
        for j in range(m):
            state, z = _splitmix(state)
            u[j] = lo[j] + (hi[j] - lo[j]) * (float(z >> np.uint64(11)) * scale)
        for i in range(n):
            inside = True
            for j in range(m):
                if pts[i, j] < u[j]:
                    inside = False
                    break
            if inside:
                hits += 1
                break
    return hits


def mc_hypervolume(points, ref, draws: int = 10_000_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo dominated volume for maximization, with its standard error.

    Uniform draws in the box [ref, max(points)]; a draw counts when some point
    is >= it on every axis. Seeded splitmix64, so results are reproducible.
    """
    pts = np.asarray(points, dtype=float)
    lo = np.asarray(ref, dtype=float)
    pts = pts[np.all(pts > lo, axis=1)]
    if len(pts) == 0:
        return 0.0, 0.0
    hi = pts.max(axis=0)
    box = float(np.prod(hi - lo))
    hits = _mc_hits(pts, lo, hi, draws, seed)
    p = hits / draws
    return box * p, box * np.sqrt(p * (1.0 - p) / draws)


def gaussian_frechet_1d(m1: float, v1: float, m2: float, v2: float) -> float:
    """(m1 - m2)^2 + v1 + v2 - 2 sqrt(v1 v2)."""
    return (m1 - m2) ** 2 + v1 + v2 - 2.0 * np.sqrt(v1 * v2)


def grid_hypervolume(points, ref) -> float:
    """Exact dominated volume (maximization) by coordinate compression.

    Each axis is cut at the reference value and every point coordinate above
    it. A grid cell is dominated when some point is >= its upper corner; the
    "some point" test is a reverse cumulative OR along every axis. Cost is
    O(n^m), fine for the few-hundred-point, m <= 4 sets used here.
    """
    pts = np.asarray(points, dtype=float)
    lo = np.asarray(ref, dtype=float)
    if pts.size == 0:
        return 0.0
    pts = pts[np.all(pts > lo, axis=1)]
    if len(pts) == 0:
        return 0.0
    m = pts.shape[1]
    cuts = [np.unique(np.concatenate([[lo[j]], pts[:, j]])) for j in range(m)]
    occupied = np.zeros(tuple(len(c) - 1 for c in cuts), dtype=bool)
    # point p covers cell i on axis j iff cuts[j][i + 1] <= p_j
    idx = tuple(np.searchsorted(cuts[j], pts[:, j]) - 1 for j in range(m))
    occupied[idx] = True
    for j in range(m):
        occupied = np.flip(np.logical_or.accumulate(np.flip(occupied, axis=j), axis=j), axis=j)
    widths = [np.diff(c) for c in cuts]
    cell = widths[0]
    for w in widths[1:]:
        cell = np.multiply.outer(cell, w)
    return float(cell[occupied].sum())


def front_mask(points: np.ndarray) -> np.ndarray:
    """Vectorized all-pairs non-dominance mask (maximization); duplicates all kept."""
    pts = np.asarray(points, dtype=float)
    keep = np.ones(len(pts), dtype=bool)
    for i, p in enumerate(pts):
        ge = np.all(pts >= p, axis=1)
        gt = np.any(pts > p, axis=1)
        keep[i] = not np.any(ge & gt)
    return keep
