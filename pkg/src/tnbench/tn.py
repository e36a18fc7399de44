"""Tensor-network probability models over fixed-length discrete sequences.

Five kinds share one storage layout: site ``k`` holds a raw array of shape
``(d, mu, Dl, Dr)`` with ``Dl = 1`` on the first site and ``Dr = 1`` on the
last. ``mu`` is the purification dimension and equals 1 except for LPS.

* positive MPS: effective tensor ``raw**2``; T(x) is the matrix chain product.
* Born machine: T(x) = |chain product|**2, i.e. an LPS with ``mu = 1``.
* LPS: T(x) contracts each site with its conjugate over the purification
  index, so the left environment is a Hermitian ``Dl x Dl`` matrix.

Every chain contraction is rescaled to unit max-norm per site and the log of
the scale is accumulated, so the models stay finite for long sequences.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .archive import CheckpointError, read_archive, write_archive
from .sequences import TokenSequence

CHECKPOINT_VERSION = "tnbench-tn/1"


class TNKind(enum.Enum):
    POSITIVE_MPS = "positive-mps"
    BORN_REAL = "born-real"
    BORN_COMPLEX = "born-complex"
    LPS_REAL = "lps-real"
    LPS_COMPLEX = "lps-complex"

    @property
    def is_complex(self) -> bool:
        return self in (TNKind.BORN_COMPLEX, TNKind.LPS_COMPLEX)

    @property
    def is_lps(self) -> bool:
        return self in (TNKind.LPS_REAL, TNKind.LPS_COMPLEX)

    @property
    def is_positive(self) -> bool:
        return self is TNKind.POSITIVE_MPS


class DegenerateModelError(ArithmeticError):
    """Partition function is zero or a conditioning prefix has zero mass."""


class ZeroProbabilityError(ArithmeticError):
    def __init__(self, index: int):
        super().__init__(f"sequence {index} has zero weight under the model")
        self.index = index


@dataclass
class TNModel:
    """Raw parameters plus cached normalization.

    ``raw`` holds real parts, ``raw_imag`` imaginary parts (complex kinds only).
    Mutate parameters only through :meth:`set_params` so caches invalidate.
    """

    kind: TNKind
    d: int
    n_sites: int
    bond_dim: int
    purif_dim: int
    raw: list[np.ndarray]
    raw_imag: list[np.ndarray] | None = None
    seed: int | None = None
    _log_z: float | None = field(default=None, init=False, repr=False)
    _right_env: list | None = field(default=None, init=False, repr=False)

    @property
    def params(self) -> list[np.ndarray]:
        return list(self.raw) + (list(self.raw_imag) if self.raw_imag is not None else [])

    def set_params(self, params: list[np.ndarray]) -> None:
        n = self.n_sites
        if len(params) != len(self.params):
            raise ValueError("parameter list length mismatch")
        for old, new in zip(self.params, params):
            if old.shape != new.shape:
                raise ValueError(f"parameter shape mismatch {old.shape} vs {new.shape}")
        self.raw = [np.array(p, dtype=float) for p in params[:n]]
        if self.raw_imag is not None:
            self.raw_imag = [np.array(p, dtype=float) for p in params[n:]]
        self.invalidate()

    def invalidate(self) -> None:
        self._log_z = None
        self._right_env = None

    def copy(self) -> TNModel:
        return TNModel(self.kind, self.d, self.n_sites, self.bond_dim, self.purif_dim,
                       [r.copy() for r in self.raw],
                       None if self.raw_imag is None else [r.copy() for r in self.raw_imag],
                       self.seed)

    def site_tensor(self, k: int) -> np.ndarray:
        """Effective tensor of site k in internal (d, mu, Dl, Dr) layout."""
        if self.kind.is_positive:
            return self.raw[k] ** 2
        if self.kind.is_complex:
            return self.raw[k] + 1j * self.raw_imag[k]
        return self.raw[k]

    @property
    def cores(self) -> list[np.ndarray]:
        """Effective cores in public shapes (boundary bond and unit mu axes dropped)."""
        out = []
        for k in range(self.n_sites):
            a = self.site_tensor(k)
            drop = [ax for ax, size in ((2, a.shape[2]), (3, a.shape[3]))
                    if size == 1 and ((ax == 2 and k == 0) or (ax == 3 and k == self.n_sites - 1))]
            if not self.kind.is_lps:
                drop.append(1)
            out.append(a.squeeze(axis=tuple(drop)))
        return out


def _bond_dims(n_sites: int, bond_dim: int, k: int) -> tuple[int, int]:
    return (1 if k == 0 else bond_dim, 1 if k == n_sites - 1 else bond_dim)


def init_model(kind: TNKind | str, d: int, n_sites: int, bond_dim: int,
               purif_dim: int = 1, seed: int | None = None, init: str = "uniform") -> TNModel:
    """Random model.

    ``init="uniform"`` draws real parts from U[0.9, 1.1] and imaginary parts
    from N(0, 0.1**2), so every kind starts close to the uniform distribution.
    ``init="gaussian"`` draws both parts from N(0, 1/r), which is kept for
    comparison; Born and LPS models train poorly from it.
    """
    kind = TNKind(kind)
    if d < 2 or n_sites < 1 or bond_dim < 1 or purif_dim < 1:
        raise ValueError("need d >= 2, N >= 1, bond_dim >= 1, purif_dim >= 1")
    if purif_dim != 1 and not kind.is_lps:
        raise ValueError(f"purif_dim must be 1 for {kind.value}")
    if init not in ("uniform", "gaussian"):
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    shapes = [(d, purif_dim) + _bond_dims(n_sites, bond_dim, k) for k in range(n_sites)]
    if init == "uniform" or kind.is_positive:
        raw = [rng.uniform(0.9, 1.1, size=s) for s in shapes]
        imag_scale = 0.1
    else:
        raw = [rng.normal(0.0, bond_dim ** -0.5, size=s) for s in shapes]
        imag_scale = bond_dim ** -0.5
    imag = [rng.normal(0.0, imag_scale, size=s) for s in shapes] if kind.is_complex else None
    return TNModel(kind, d, n_sites, bond_dim, purif_dim, raw, imag, seed)


def model_from_cores(kind: TNKind | str, raw: list[np.ndarray], raw_imag=None,
                     d: int | None = None) -> TNModel:
    """Build a model from raw arrays already in (d, mu, Dl, Dr) layout."""
    kind = TNKind(kind)
    raw = [np.asarray(r, dtype=float) for r in raw]
    n = len(raw)
    bond = max([r.shape[3] for r in raw[:-1]] or [1])
    mu = raw[0].shape[1]
    model = TNModel(kind, raw[0].shape[0] if d is None else d, n, bond, mu, raw,
                    None if raw_imag is None else [np.asarray(r, dtype=float) for r in raw_imag])
    for k, r in enumerate(raw):
        if r.shape != (model.d, mu) + _bond_dims(n, bond, k):
            raise ValueError(f"site {k} has shape {r.shape}")
    if kind.is_complex != (raw_imag is not None):
        raise ValueError("imaginary parts required exactly for complex kinds")
    return model


def _as_batch(seqs, model: TNModel) -> np.ndarray:
    if hasattr(seqs, "indices") and not isinstance(seqs, TokenSequence):
        seqs = seqs.indices
    if isinstance(seqs, TokenSequence):
        seqs = [seqs]
    x = np.asarray([np.asarray(s) for s in seqs] if isinstance(seqs, list) else seqs,
                   dtype=np.int64)
    x = np.atleast_2d(x)
    if x.shape[1] != model.n_sites:
        raise ValueError(f"sequence length {x.shape[1]} != N={model.n_sites}")
    if x.size and (x.min() < 0 or x.max() >= model.d):
        raise ValueError("token index outside [0, d)")
    return x


# --- chain contractions -----------------------------------------------------
#
# Positive MPS environments are vectors, quadratic (Born/LPS) environments are
# Hermitian matrices. ``_push_*`` applies one site, ``_rescale`` normalizes.

def _rescale(env: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axes = tuple(range(1, env.ndim))
    scale = np.abs(env).max(axis=axes)
    safe = np.where(scale > 0, scale, 1.0)
    return env / safe.reshape((-1,) + (1,) * len(axes)), scale


def _push_left(model: TNModel, env: np.ndarray, a: np.ndarray) -> np.ndarray:
    # env: (B, Dl) or (B, Dl, Dl); a: (B, mu, Dl, Dr)
    if model.kind.is_positive:
        return np.einsum("bi,bij->bj", env, a[:, 0])
    return np.einsum("bij,bmik,bmjl->bkl", env, a, a.conj(), optimize=True)


def _push_right(model: TNModel, env: np.ndarray, a: np.ndarray) -> np.ndarray:
    if model.kind.is_positive:
        return np.einsum("bij,bj->bi", a[:, 0], env)
    return np.einsum("bmik,bkl,bmjl->bij", a, env, a.conj(), optimize=True)


def _transfer_left(model: TNModel, env: np.ndarray, a: np.ndarray) -> np.ndarray:
    # sum over physical index; env: (Dl,) or (Dl, Dl); a: (d, mu, Dl, Dr)
    if model.kind.is_positive:
        return env @ a[:, 0].sum(axis=0)
    return np.einsum("ij,xmik,xmjl->kl", env, a, a.conj(), optimize=True)


def _transfer_right(model: TNModel, env: np.ndarray, a: np.ndarray) -> np.ndarray:
    if model.kind.is_positive:
        return a[:, 0].sum(axis=0) @ env
    return np.einsum("xmik,kl,xmjl->ij", a, env, a.conj(), optimize=True)


def _ones_env(model: TNModel, batch: int | None = None) -> np.ndarray:
    dtype = complex if model.kind.is_complex else float
    shape = (1,) if model.kind.is_positive else (1, 1)
    if batch is not None:
        shape = (batch,) + shape
    return np.ones(shape, dtype=dtype)


def _scalar(model: TNModel, env: np.ndarray) -> np.ndarray:
    flat = env.reshape(env.shape[0], -1)[:, 0]
    return flat.real


def _push_factor(v: np.ndarray, a: np.ndarray) -> np.ndarray:
    """One site on a factor V of the left environment rho = V V^H.

    v: (B, Dl, K), a: (B, mu, Dl, Dr) -> (B, Dr, K') with K' <= max(Dr, mu K).
    Stacking A_m^T V over m keeps rho exact; a QR of the conjugate transpose
    shrinks the factor back to Dr columns once it grows wider than that.
    """
    w = np.einsum("bmik,bij->bkmj", a, v).reshape(v.shape[0], a.shape[3], -1)
    if w.shape[2] <= w.shape[1]:
        return w
    r = np.linalg.qr(np.swapaxes(w, 1, 2).conj(), mode="r")
    return np.swapaxes(r, 1, 2).conj()


def log_weights(model: TNModel, seqs) -> np.ndarray:
    """Vectorized log T(x) over a batch; ``-inf`` where T(x) = 0.

    Quadratic kinds carry a square-root factor of the environment instead of
    the environment itself, so T(x) ends as a sum of squared moduli and keeps
    full relative precision even when amplitudes nearly cancel.
    """
    x = _as_batch(seqs, model)
    log_acc = np.zeros(x.shape[0])
    dead = np.zeros(x.shape[0], dtype=bool)
    if model.kind.is_positive:
        env = _ones_env(model, x.shape[0])
    else:
        env = np.ones((x.shape[0], 1, 1), dtype=complex if model.kind.is_complex else float)
    for k in range(model.n_sites):
        a = model.site_tensor(k)[x[:, k]]
        if model.kind.is_positive:
            env, scale = _rescale(_push_left(model, env, a))
            log_acc += np.log(np.where(scale > 0, scale, 1.0))
        else:
            env, scale = _rescale(_push_factor(env, a))
            log_acc += 2.0 * np.log(np.where(scale > 0, scale, 1.0))
        dead |= scale == 0
    if model.kind.is_positive:
        val = _scalar(model, env)
    else:
        val = (np.abs(env[:, 0, :]) ** 2).sum(axis=1)
    dead |= val <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(dead, -np.inf, log_acc + np.log(np.where(dead, 1.0, val)))
    return out


def unnormalized_weight(model: TNModel, seq) -> float:
    """log T(x) for one sequence; ``-inf`` marks T(x) = 0."""
    return float(log_weights(model, seq)[0])


def log_partition(model: TNModel) -> float:
    """log Z by left-to-right transfer contraction (cached until parameters change)."""
    if model._log_z is not None:
        return model._log_z
    env = _ones_env(model)
    log_acc = 0.0
    for k in range(model.n_sites):
        env = _transfer_left(model, env, model.site_tensor(k))
        scale = np.abs(env).max()
        if scale == 0:
            raise DegenerateModelError("partition function is zero")
        env = env / scale
        log_acc += np.log(scale)
    z = env.reshape(-1)[0].real
    if not z > 0:
        raise DegenerateModelError("partition function is zero")
    model._log_z = float(log_acc + np.log(z))
    return model._log_z


def log_probs(model: TNModel, seqs) -> np.ndarray:
    return log_weights(model, seqs) - log_partition(model)


def log_prob(model: TNModel, seq) -> float:
    return float(log_probs(model, seq)[0])


def zero_weight_indices(model: TNModel, seqs) -> list[int]:
    return [int(i) for i in np.flatnonzero(np.isneginf(log_weights(model, seqs)))]


def nll(model: TNModel, seqs) -> float:
    """Mean negative log-likelihood; ``inf`` if any sequence has zero weight.

    Use :func:`zero_weight_indices` to locate the offending sequences.
    """
    return float(-np.mean(log_probs(model, seqs)))


# --- environments and gradients ----------------------------------------------

def _right_envs(model: TNModel) -> list[np.ndarray]:
    """Rescaled right transfer environments; entry k covers sites k..N-1."""
    if model._right_env is None:
        envs = [None] * (model.n_sites + 1)
        envs[-1] = _ones_env(model)
        for k in range(model.n_sites - 1, -1, -1):
            env = _transfer_right(model, envs[k + 1], model.site_tensor(k))
            scale = np.abs(env).max()
            envs[k] = env / scale if scale > 0 else env
        model._right_env = envs
    return model._right_env


def _left_envs(model: TNModel) -> list[np.ndarray]:
    envs = [_ones_env(model)]
    for k in range(model.n_sites):
        env = _transfer_left(model, envs[-1], model.site_tensor(k))
        scale = np.abs(env).max()
        envs.append(env / scale if scale > 0 else env)
    return envs


def _site_grad(model: TNModel, left: np.ndarray, a: np.ndarray, right: np.ndarray):
    """d T / d(effective site tensor), batched, and the matching T values.

    Shapes: left (B, Dl[, Dl]), a (B, mu, Dl, Dr), right (B, Dr[, Dr]).
    For quadratic kinds the result is the derivative w.r.t. conj(A); real
    gradients follow as 2*Re / 2*Im.
    """
    if model.kind.is_positive:
        g = np.einsum("bi,bj->bij", left, right)[:, None]
        t = np.einsum("bmij,bmij->b", g, a)
        return g, t
    g = np.einsum("bij,bmik,bkl->bmjl", left, a, right, optimize=True)
    t = np.einsum("bmjl,bmjl->b", g, a.conj()).real
    return g, t


def _chain_rule(model: TNModel, k: int, g: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Map d/d(effective) into d/d(raw real) and d/d(raw imag)."""
    if model.kind.is_positive:
        return 2.0 * model.raw[k] * g, None
    if model.kind.is_complex:
        return 2.0 * g.real, 2.0 * g.imag
    return 2.0 * g.real, None


def log_partition_gradient(model: TNModel) -> list[np.ndarray]:
    """Gradient of log Z w.r.t. all raw parameters (same order as ``params``)."""
    left = _left_envs(model)
    right = _right_envs(model)
    d = model.d
    grads_re, grads_im = [], []
    for k in range(model.n_sites):
        a = model.site_tensor(k)
        lk = np.broadcast_to(left[k], (d,) + left[k].shape)
        rk = np.broadcast_to(right[k + 1], (d,) + right[k + 1].shape)
        g, t = _site_grad(model, lk, a, rk)
        z_local = t.sum()
        if not z_local > 0:
            raise DegenerateModelError("partition function is zero")
        gr, gi = _chain_rule(model, k, g / z_local)
        grads_re.append(gr)
        if gi is not None:
            grads_im.append(gi)
    return grads_re + grads_im


def log_weight_gradient(model: TNModel, seqs) -> tuple[list[np.ndarray], np.ndarray]:
    """Batch-summed gradient of log T(x) plus the per-sequence log T values."""
    x = _as_batch(seqs, model)
    b, n = x.shape
    logw = log_weights(model, x)
    dead = np.flatnonzero(np.isneginf(logw))
    if dead.size:
        raise ZeroProbabilityError(int(dead[0]))
    sites = [model.site_tensor(k)[x[:, k]] for k in range(n)]
    lefts = [_ones_env(model, b)]
    for k in range(n - 1):
        lefts.append(_rescale(_push_left(model, lefts[-1], sites[k]))[0])
    right = _ones_env(model, b)
    grads_re = [None] * n
    grads_im = [None] * n
    for k in range(n - 1, -1, -1):
        g, t = _site_grad(model, lefts[k], sites[k], right)
        g = g / t.reshape((-1,) + (1,) * (g.ndim - 1))
        gr, gi = _chain_rule_batch(model, k, x[:, k], g)
        grads_re[k] = gr
        grads_im[k] = gi
        right = _rescale(_push_right(model, right, sites[k]))[0]
    grads = grads_re + (grads_im if model.kind.is_complex else [])
    return grads, logw


def _chain_rule_batch(model: TNModel, k: int, tokens: np.ndarray, g: np.ndarray):
    shape = model.raw[k].shape
    acc = np.zeros(shape, dtype=g.dtype)
    np.add.at(acc, tokens, g)
    gr, gi = _chain_rule(model, k, acc)
    return gr, gi


def nll_gradient(model: TNModel, batch) -> list[np.ndarray]:
    """Exact gradient of the batch-mean NLL w.r.t. raw parameters."""
    x = _as_batch(batch, model)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    data_grads, _ = log_weight_gradient(model, x)
    z_grads = log_partition_gradient(model)
    return [zg - dg / x.shape[0] for dg, zg in zip(data_grads, z_grads)]


# --- conditionals and sampling -------------------------------------------------

def _site_probs(model: TNModel, k: int, left: np.ndarray) -> np.ndarray:
    """Unnormalized P(X_k = x | prefix) for a batch of left environments."""
    a = model.site_tensor(k)
    right = _right_envs(model)[k + 1]
    if model.kind.is_positive:
        kernel = a[:, 0] @ right  # (d, Dl)
        p = left @ kernel.T
    else:
        kernel = np.einsum("xmik,kl,xmjl->xij", a, right, a.conj(), optimize=True)
        p = (left.reshape(left.shape[0], -1) @ kernel.reshape(model.d, -1).T).real
    return np.clip(p, 0.0, None)


def marginal(model: TNModel, prefix) -> np.ndarray:
    """Exact conditional distribution of the next token given ``prefix``."""
    prefix = [int(i) for i in prefix]
    if len(prefix) >= model.n_sites:
        raise ValueError("prefix must be shorter than N")
    env = _ones_env(model, 1)
    for k, tok in enumerate(prefix):
        if not 0 <= tok < model.d:
            raise ValueError("token index outside [0, d)")
        env, scale = _rescale(_push_left(model, env, model.site_tensor(k)[[tok]]))
        if scale[0] == 0:
            raise DegenerateModelError("prefix has zero probability")
    p = _site_probs(model, len(prefix), env)[0]
    total = p.sum()
    if not total > 0:
        raise DegenerateModelError("prefix has zero probability")
    return p / total


def sample_indices(model: TNModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` exact ancestral samples as a (count, N) index array."""
    if count < 1:
        raise ValueError("count must be >= 1")
    log_partition(model)
    x = np.empty((count, model.n_sites), dtype=np.int64)
    env = _ones_env(model, count)
    for k in range(model.n_sites):
        p = _site_probs(model, k, env)
        total = p.sum(axis=1)
        if not np.all(total > 0):
            raise DegenerateModelError("sampling reached a zero-probability prefix")
        cdf = np.cumsum(p / total[:, None], axis=1)
        u = rng.random(count)
        cdf[:, -1] = 1.0
        tok = np.minimum((cdf <= u[:, None]).sum(axis=1), model.d - 1)
        x[:, k] = tok
        env = _rescale(_push_left(model, env, model.site_tensor(k)[tok]))[0]
    return x


def sample(model: TNModel, rng: np.random.Generator) -> TokenSequence:
    return TokenSequence(tuple(int(i) for i in sample_indices(model, rng, 1)[0]))


# --- checkpoints ---------------------------------------------------------------

def save_model(model: TNModel, path, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "kind": model.kind.value, "d": model.d,
            "n_sites": model.n_sites, "bond_dim": model.bond_dim,
            "purif_dim": model.purif_dim, "seed": model.seed}
    meta.update(extra or {})
    arrays = {f"raw_{k:04d}": r for k, r in enumerate(model.raw)}
    if model.raw_imag is not None:
        arrays.update({f"imag_{k:04d}": r for k, r in enumerate(model.raw_imag)})
    write_archive(path, meta, arrays)


def load_model(path) -> tuple[TNModel, dict]:
    meta, arrays = read_archive(path, CHECKPOINT_VERSION)
    try:
        kind = TNKind(meta["kind"])
        n = meta["n_sites"]
        raw = [arrays[f"raw_{k:04d}"] for k in range(n)]
        imag = [arrays[f"imag_{k:04d}"] for k in range(n)] if kind.is_complex else None
        model = model_from_cores(kind, raw, imag, d=meta["d"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: checkpoint missing field {exc}") from None
    model.seed = meta.get("seed")
    return model, meta
