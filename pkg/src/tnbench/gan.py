"""MLP generator/discriminator pair over one-hot sequence space.

The generator maps a standard-normal prior vector to an ``N x d`` matrix
with a softmax per position. The discriminator reads a flattened ``N x d``
matrix (one-hot for real data, soft for generated data) and returns a
probability. Both share the number of hidden layers and units. Backprop is
written out by hand; dropout only touches discriminator hidden activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adam import AdamState, adam_step
from .archive import CheckpointError, read_archive, write_archive
from .sequences import TokenSequence, suffix_pad

CHECKPOINT_VERSION = "tnbench-gan/1"
LEAKY_SLOPE = 0.2


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str  # leaky-relu | sigmoid | softmax-per-position | identity


@dataclass
class GANModel:
    generator: list[DenseLayer]
    discriminator: list[DenseLayer]
    prior_dim: int
    n_positions: int
    d: int
    dropout_rate: float
    pad_index: int
    opt_g: AdamState | None = field(default=None, repr=False)
    opt_d: AdamState | None = field(default=None, repr=False)

    @property
    def hidden_layers(self) -> int:
        return len(self.generator) - 1

    @property
    def hidden_units(self) -> int:
        return self.generator[0].weight.shape[0] if self.hidden_layers else 0

    def g_params(self) -> list[np.ndarray]:
        return _flatten(self.generator)

    def d_params(self) -> list[np.ndarray]:
        return _flatten(self.discriminator)

    def set_g_params(self, params):
        _unflatten(self.generator, params)

    def set_d_params(self, params):
        _unflatten(self.discriminator, params)


def _flatten(layers):
    out = []
    for layer in layers:
        out += [layer.weight, layer.bias]
    return out


def _unflatten(layers, params):
    for i, layer in enumerate(layers):
        layer.weight, layer.bias = params[2 * i], params[2 * i + 1]


def _stack(rng, sizes, last_activation, zero):
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if zero:
            w = np.zeros((fan_out, fan_in))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_out, fan_in))
        act = last_activation if i == len(sizes) - 2 else "leaky-relu"
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return layers


def init_gan(n_positions: int, d: int, prior_dim: int, hidden_layers: int, hidden_units: int,
             dropout_rate: float = 0.0, pad_index: int | None = None, seed=None,
             zero: bool = False) -> GANModel:
    if not 1 <= hidden_layers <= 3:
        raise ValueError("hidden_layers must be 1, 2 or 3")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    hidden = [hidden_units] * hidden_layers
    gen = _stack(rng, [prior_dim] + hidden + [n_positions * d], "softmax-per-position", zero)
    disc = _stack(rng, [n_positions * d] + hidden + [1], "sigmoid", zero)
    return GANModel(gen, disc, prior_dim, n_positions, d, dropout_rate,
                    d - 1 if pad_index is None else pad_index)


def _forward(layers, x, masks=None):
    """Run the stack up to the final pre-activation. Returns (logits, cache)."""
    cache = []
    h = x
    for i, layer in enumerate(layers):
        pre = h @ layer.weight.T + layer.bias
        if i == len(layers) - 1:
            cache.append((h, pre, None))
            return pre, cache
        act = np.where(pre > 0, pre, LEAKY_SLOPE * pre)
        mask = None
        if masks is not None:
            mask = masks[i]
            act = act * mask
        cache.append((h, pre, mask))
        h = act
    raise ValueError("empty layer stack")


def _backward(layers, cache, grad_out):
    """Backprop from d loss / d final pre-activation. Returns (param grads, d loss / d input)."""
    grads = [None] * (2 * len(layers))
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        h, pre, mask = cache[i]
        if i != len(layers) - 1:
            if mask is not None:
                g = g * mask
            g = g * np.where(pre > 0, 1.0, LEAKY_SLOPE)
        grads[2 * i] = g.T @ h
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layers[i].weight
    return grads, g


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_prior(gan, z):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != gan.prior_dim:
        raise ValueError(f"prior vector length {z.shape[1]} != prior_dim {gan.prior_dim}")
    return z


def _generate(gan, z):
    logits, cache = _forward(gan.generator, z)
    y = _softmax(logits.reshape(-1, gan.n_positions, gan.d))
    return y, cache


def generator_forward(gan: GANModel, z) -> np.ndarray:
    """Soft sequence(s): (N, d) for a single prior vector, (B, N, d) for a batch."""
    single = np.ndim(z) == 1
    y, _ = _generate(gan, _check_prior(gan, z))
    return y[0] if single else y


def dropout_masks(gan: GANModel, batch: int, rng: np.random.Generator) -> list[np.ndarray] | None:
    """Inverted-dropout masks for the discriminator hidden layers."""
    p = gan.dropout_rate
    if p == 0:
        return None
    return [(rng.random((batch, layer.weight.shape[0])) >= p) / (1.0 - p)
            for layer in gan.discriminator[:-1]]


def _disc_input(gan, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-2:] != (gan.n_positions, gan.d):
        raise ValueError(f"discriminator input shape {x.shape[-2:]} != {(gan.n_positions, gan.d)}")
    return x.reshape(-1, gan.n_positions * gan.d)


def discriminator_forward(gan: GANModel, x, train_mode: bool = False,
                          rng: np.random.Generator | None = None):
    """D(x) in (0, 1); scalar for one (N, d) input, vector for a batch."""
    single = np.ndim(x) == 2
    flat = _disc_input(gan, x)
    masks = dropout_masks(gan, flat.shape[0], rng) if train_mode else None
    logits, _ = _forward(gan.discriminator, flat, masks)
    p = 1.0 / (1.0 + np.exp(-logits[:, 0]))
    return float(p[0]) if single else p


def discriminator_objective(gan: GANModel, real, z, masks_real=None, masks_fake=None):
    """Minimax value E[log D(x)] + E[log(1 - D(G(z)))] and its gradient w.r.t. D.

    The discriminator ascends this value; returned gradients are of the value
    itself (not its negative).
    """
    real = _disc_input(gan, real)
    fake, _ = _generate(gan, _check_prior(gan, z))
    fake = fake.reshape(fake.shape[0], -1)
    s_r, cache_r = _forward(gan.discriminator, real, masks_real)
    s_f, cache_f = _forward(gan.discriminator, fake, masks_fake)
    value = -np.mean(np.logaddexp(0.0, -s_r)) - np.mean(np.logaddexp(0.0, s_f))
    # d/ds log sigmoid(s) = 1 - sigmoid(s); d/ds log(1 - sigmoid(s)) = -sigmoid(s)
    g_r = (1.0 - _sigmoid(s_r)) / s_r.shape[0]
    g_f = -_sigmoid(s_f) / s_f.shape[0]
    grads_r, _ = _backward(gan.discriminator, cache_r, g_r)
    grads_f, _ = _backward(gan.discriminator, cache_f, g_f)
    return float(value), [a + b for a, b in zip(grads_r, grads_f)]


def generator_loss(gan: GANModel, z):
    """Non-saturating loss -E[log D(G(z))] and its gradient w.r.t. G (D in eval mode)."""
    z = _check_prior(gan, z)
    y, cache_g = _generate(gan, z)
    s_f, cache_d = _forward(gan.discriminator, y.reshape(y.shape[0], -1))
    loss = np.mean(np.logaddexp(0.0, -s_f))
    g_s = -(1.0 - _sigmoid(s_f)) / s_f.shape[0]
    _, g_x = _backward(gan.discriminator, cache_d, g_s)
    g_y = g_x.reshape(y.shape)
    g_logits = y * (g_y - (y * g_y).sum(axis=-1, keepdims=True))
    grads, _ = _backward(gan.generator, cache_g, g_logits.reshape(y.shape[0], -1))
    return float(loss), grads


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def one_hot(indices: np.ndarray, d: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    return np.eye(d)[indices]


def gan_train_step(gan: GANModel, real_batch, rng: np.random.Generator, lr: float):
    """One discriminator ascent step then one generator step, both with Adam.

    ``real_batch`` is one-hot (B, N, d) or an index array (B, N).
    Returns ``(d_loss, g_loss)`` where ``d_loss`` is the minimax value
    E[log D(x)] + E[log(1 - D(G(z)))] (-2 log 2 at chance, 0 for a perfect
    discriminator) and ``g_loss`` is the non-saturating generator loss.
    """
    real = np.asarray(real_batch)
    if real.ndim == 2:
        real = one_hot(real, gan.d)
    b = real.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    if gan.opt_d is None:
        gan.opt_d = AdamState.zeros_like(gan.d_params())
        gan.opt_g = AdamState.zeros_like(gan.g_params())
    z = rng.standard_normal((b, gan.prior_dim))
    m_r = dropout_masks(gan, b, rng)
    m_f = dropout_masks(gan, b, rng)
    d_value, d_grads = discriminator_objective(gan, real, z, m_r, m_f)
    if not np.isfinite(d_value):
        raise FloatingPointError(f"non-finite discriminator loss {d_value}")
    params, gan.opt_d = adam_step(gan.d_params(), [-g for g in d_grads], gan.opt_d, lr)
    gan.set_d_params(params)
    z = rng.standard_normal((b, gan.prior_dim))
    g_value, g_grads = generator_loss(gan, z)
    if not np.isfinite(g_value):
        raise FloatingPointError(f"non-finite generator loss {g_value}")
    params, gan.opt_g = adam_step(gan.g_params(), g_grads, gan.opt_g, lr)
    gan.set_g_params(params)
    return d_value, g_value


def gan_sample_indices(gan: GANModel, rng: np.random.Generator, count: int,
                       chunk: int = 4096) -> np.ndarray:
    """Argmax decoding (ties -> lowest index) with suffix-pad normalization."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = rng.standard_normal((count, gan.prior_dim))
    out = np.empty((count, gan.n_positions), dtype=np.int64)
    for start in range(0, count, chunk):
        y, _ = _generate(gan, z[start:start + chunk])
        out[start:start + chunk] = y.argmax(axis=-1)
    return suffix_pad(out, gan.pad_index)


def gan_sample(gan: GANModel, rng: np.random.Generator, count: int) -> list[TokenSequence]:
    return [TokenSequence(tuple(int(i) for i in row)) for row in gan_sample_indices(gan, rng, count)]


def save_gan(gan: GANModel, path, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "prior_dim": gan.prior_dim,
            "n_positions": gan.n_positions, "d": gan.d, "dropout_rate": gan.dropout_rate,
            "pad_index": gan.pad_index, "hidden_layers": gan.hidden_layers,
            "hidden_units": gan.hidden_units}
    meta.update(extra or {})
    arrays = {}
    for prefix, params in (("g", gan.g_params()), ("d", gan.d_params())):
        for i, p in enumerate(params):
            arrays[f"{prefix}_{i:02d}"] = p
    write_archive(path, meta, arrays)


def load_gan(path) -> tuple[GANModel, dict]:
    meta, arrays = read_archive(path, CHECKPOINT_VERSION)
    try:
        gan = init_gan(meta["n_positions"], meta["d"], meta["prior_dim"], meta["hidden_layers"],
                       meta["hidden_units"], meta["dropout_rate"], meta["pad_index"], zero=True)
        n = 2 * (meta["hidden_layers"] + 1)
        gan.set_g_params([arrays[f"g_{i:02d}"] for i in range(n)])
        gan.set_d_params([arrays[f"d_{i:02d}"] for i in range(n)])
    except KeyError as exc:
        raise CheckpointError(f"{path}: checkpoint missing field {exc}") from None
    return gan, meta
