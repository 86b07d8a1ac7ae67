"""Convolutional conditional VAE over strain fields.

The encoder maps a scaled field ``(1, H, W)`` to a diagonal Gaussian
``(mu, logvar)`` over an ``l``-dimensional latent space.  The decoder takes
``[z; t]`` (latent code stacked with the scaled condition vector) back to a
field in ``(0, 1)``.  Conditions are not seen by the encoder.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import MinMaxScaler
from .nn import Dense, LayerSpec, Sequential, conv_output_size, deconv_output_size, mse, shape_walk

LOGVAR_BOUND = 20.0


@dataclass
class CvaeConfig:
    latent_dim: int
    condition_dim: int
    input_shape: tuple[int, int]
    encoder: list[LayerSpec]
    head_in: int
    decoder: list[LayerSpec]
    kl_weight: float = 1.0
    reduction: str = "mean"

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        first_fc = next(s for s in self.decoder if s.kind == "fully_connected")
        if first_fc.n_in != self.latent_dim + self.condition_dim:
            raise ValueError(
                f"decoder input width {first_fc.n_in} != latent_dim + condition_dim "
                f"({self.latent_dim} + {self.condition_dim})")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        enc = shape_walk(self.encoder, (1, *self.input_shape))
        if enc[-1] != (self.head_in,):
            raise ValueError(f"encoder output {enc[-1]} does not feed heads of width {self.head_in}")
        dec = shape_walk(self.decoder, (self.latent_dim + self.condition_dim,))
        if dec[-1] != (1, *self.input_shape):
            raise ValueError(f"decoder output {dec[-1]} != field shape {(1, *self.input_shape)}")

    @property
    def n_pixels(self) -> int:
        return self.input_shape[0] * self.input_shape[1]

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "condition_dim": self.condition_dim,
            "input_shape": list(self.input_shape),
            "encoder": [s.to_dict() for s in self.encoder],
            "head_in": self.head_in,
            "decoder": [s.to_dict() for s in self.decoder],
            "kl_weight": self.kl_weight,
            "reduction": self.reduction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CvaeConfig":
        d = dict(d)
        d["encoder"] = [LayerSpec.from_dict(s) for s in d["encoder"]]
        d["decoder"] = [LayerSpec.from_dict(s) for s in d["decoder"]]
        return cls(**d)


def conv_cvae_config(input_hw, channels, kernels, strides, paddings, hidden, latent_dim,
                     condition_dim, kl_weight=1.0, slope=0.01) -> CvaeConfig:
    """Mirror-image conv encoder / deconv decoder.

    Decoder output paddings are chosen so every transposed convolution lands
    exactly on the spatial size its encoder counterpart started from.
    """
    n_conv = len(channels)
    kernels = [tuple(k) for k in _per_layer(kernels, n_conv)]
    strides = [tuple(s) for s in _per_layer(strides, n_conv)]
    if paddings is None:
        paddings = [(k[0] // 2, k[1] // 2) for k in kernels]
    paddings = [tuple(p) for p in _per_layer(paddings, n_conv)]

    sizes = [tuple(input_hw)]
    for k, s, p in zip(kernels, strides, paddings):
        h, w = sizes[-1]
        sizes.append((conv_output_size(h, k[0], s[0], p[0]), conv_output_size(w, k[1], s[1], p[1])))
        if min(sizes[-1]) < 1:
            raise ValueError(f"paddings {paddings} shrink the field to nothing: {sizes}")

    chans = (1, *channels)
    encoder = [
        LayerSpec("conv2d", chans[i], chans[i + 1], kernels[i], strides[i], paddings[i],
                  activation="leaky_relu", slope=slope)
        for i in range(n_conv)
    ]
    encoder.append(LayerSpec("flatten"))
    flat = chans[-1] * sizes[-1][0] * sizes[-1][1]
    widths = (flat, *hidden)
    encoder += [LayerSpec("fully_connected", widths[i], widths[i + 1], activation="leaky_relu",
                          slope=slope) for i in range(len(hidden))]

    dec_widths = (latent_dim + condition_dim, *reversed(widths))
    decoder = [LayerSpec("fully_connected", dec_widths[i], dec_widths[i + 1],
                         activation="leaky_relu", slope=slope)
               for i in range(len(dec_widths) - 1)]
    decoder.append(LayerSpec("reshape", shape=(chans[-1], *sizes[-1])))
    for i in reversed(range(n_conv)):
        k, s, p = kernels[i], strides[i], paddings[i]
        op = tuple(
            sizes[i][d] - deconv_output_size(sizes[i + 1][d], k[d], s[d], p[d]) for d in (0, 1))
        decoder.append(LayerSpec(
            "deconv2d", chans[i + 1], chans[i], k, s, p, op,
            activation="sigmoid" if i == 0 else "leaky_relu", slope=slope))
    return CvaeConfig(latent_dim, condition_dim, tuple(input_hw), encoder, widths[-1], decoder,
                      kl_weight)


def _per_layer(v, n):
    v = list(v)
    if len(v) == 2 and all(isinstance(x, int) for x in v):
        return [tuple(v)] * n
    if len(v) != n:
        raise ValueError(f"expected {n} per-layer entries, got {len(v)}")
    return v


# paddings giving 50 -> 50 -> 25 -> 12 -> 5 and a flattened width of 64*5*5 = 1600
TABLE1_PADDINGS = ((2, 2), (2, 2), (1, 1), (1, 1))
# 8x24 -> 8x24 -> 4x12 -> 4x8, flattened 32*4*8 = 1024
TABLE2_PADDINGS = ((1, 2), (1, 2), (1, 0))


def plate_config(latent_dim=32, condition_dim=1, input_hw=(50, 50),
                 channels=(64, 128, 128, 64), hidden=(512, 128), paddings=None,
                 kl_weight=1.0) -> CvaeConfig:
    """Clamped-plate layout: four 5x5 convolutions (strides 1, 2, 2, 2), two hidden layers."""
    if paddings is None and tuple(input_hw) == (50, 50):
        paddings = TABLE1_PADDINGS
    return conv_cvae_config(input_hw, channels, (5, 5), ((1, 1), (2, 2), (2, 2), (2, 2)),
                            paddings, hidden, latent_dim, condition_dim, kl_weight)


def hull_config(latent_dim=2, condition_dim=4, input_hw=(8, 24), channels=(32, 32, 32),
                hidden=(64,), paddings=None, kl_weight=1.0) -> CvaeConfig:
    """Shallower multi-region layout: three 3x5 convolutions (strides 1, 2, 1), one hidden layer."""
    if paddings is None and tuple(input_hw) == (8, 24):
        paddings = TABLE2_PADDINGS
    return conv_cvae_config(input_hw, channels, (3, 5), ((1, 1), (2, 2), (1, 1)),
                            paddings, hidden, latent_dim, condition_dim, kl_weight)


# --- latent algebra ------------------------------------------------------------

def reparameterize(mu, logvar, e):
    """``z = mu + e * sigma`` with ``sigma = exp(logvar / 2)``."""
    e = np.asarray(e)
    if not np.all(np.isfinite(e)):
        raise ValueError("non-finite noise draws")
    return mu + e * np.exp(0.5 * logvar)


def kl_term(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    return -0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=-1)


def condition_concat(z, t, latent_dim=None, condition_dim=None):
    z = np.atleast_2d(z)
    t = np.atleast_2d(t)
    if latent_dim is not None and z.shape[1] != latent_dim:
        raise ValueError(f"latent code has width {z.shape[1]}, expected {latent_dim}")
    if condition_dim is not None and t.shape[1] != condition_dim:
        raise ValueError(f"condition has width {t.shape[1]}, expected {condition_dim}")
    if z.shape[0] != t.shape[0]:
        raise ValueError("latent and condition batches differ in size")
    return np.concatenate([z, t.astype(z.dtype, copy=False)], axis=1)


@dataclass
class LossTerms:
    total: float
    mse: float
    kl: float


class Cvae:
    """Encoder, two linear posterior heads, decoder; plus the fitted scaler."""

    def __init__(self, config: CvaeConfig, seed=0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = Sequential(config.encoder, rng, dtype)
        heads = LayerSpec("fully_connected", config.head_in, config.latent_dim)
        self.mu_head = Dense(heads)
        self.logvar_head = Dense(heads)
        self.mu_head.init_params(rng, dtype)
        self.logvar_head.init_params(rng, dtype)
        self.decoder = Sequential(config.decoder, rng, dtype)
        self.scaler: MinMaxScaler | None = None
        self.component: int = 0
        self._lv_raw = None

    # parameters in declaration order
    def _parts(self):
        return [("encoder", self.encoder.layers), ("mu_head", [self.mu_head]),
                ("logvar_head", [self.logvar_head]), ("decoder", self.decoder.layers)]

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{name}.{i}.{k}", v) for name, layers in self._parts()
                for i, layer in enumerate(layers) for k, v in layer.params.items()]

    def params(self) -> list[np.ndarray]:
        return [p for _, p in self.named_params()]

    def grads(self) -> list[np.ndarray]:
        return [layer.grads.get(k, np.zeros_like(v)) for _, layers in self._parts()
                for layer in layers for k, v in layer.params.items()]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    @property
    def dtype(self):
        return self.mu_head.params["weight"].dtype

    def astype(self, dtype) -> "Cvae":
        for _, layers in self._parts():
            for layer in layers:
                layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
        return self

    # forward pieces
    def encode(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != (1, *self.config.input_shape):
            raise ValueError(f"field shape {x.shape[1:]} != {(1, *self.config.input_shape)}")
        h = self.encoder.forward(x)
        mu = self.mu_head.forward(h)
        raw = self.logvar_head.forward(h)
        self._lv_raw = raw
        return mu, np.clip(raw, -LOGVAR_BOUND, LOGVAR_BOUND)

    def decode(self, zc):
        zc = np.asarray(zc, dtype=self.dtype)
        zc = np.atleast_2d(zc)
        width = self.config.latent_dim + self.config.condition_dim
        if zc.shape[1] != width:
            raise ValueError(f"decoder input width {zc.shape[1]} != {width}")
        return self.decoder.forward(zc)

    def loss(self, x, t, e, *, backward: bool = True) -> LossTerms:
        """Single-draw ELBO surrogate: per-pixel MSE + kl_weight * KL / n_pixels, batch mean.

        With ``backward`` the parameter gradients are left on the layers.
        """
        cfg = self.config
        x = np.asarray(x, dtype=self.dtype)
        t = np.asarray(t, dtype=self.dtype).reshape(len(x), -1)
        e = np.asarray(e, dtype=self.dtype).reshape(len(x), -1)
        n = len(x)
        mu, logvar = self.encode(x)
        z = reparameterize(mu, logvar, e)
        xhat = self.decode(condition_concat(z, t, cfg.latent_dim, cfg.condition_dim))
        rec, g_xhat = mse(xhat, x)
        kl = kl_term(mu, logvar)
        scale = cfg.kl_weight / cfg.n_pixels
        if cfg.reduction == "sum":
            rec, g_xhat, scale = rec * cfg.n_pixels, g_xhat * cfg.n_pixels, cfg.kl_weight
        total = rec + scale * float(np.mean(kl))
        if not np.isfinite(total):
            raise FloatingPointError(
                f"non-finite loss (mse={rec}, kl={np.mean(kl)}, max|mu|={np.abs(mu).max()})")
        if backward:
            g_zc = self.decoder.backward(g_xhat.astype(self.dtype))
            g_z = g_zc[:, :cfg.latent_dim]
            sigma = np.exp(0.5 * logvar)
            g_mu = g_z + (scale / n) * mu
            g_lv = g_z * e * 0.5 * sigma + (scale / n) * 0.5 * (np.exp(logvar) - 1.0)
            g_lv = g_lv * (np.abs(self._lv_raw) <= LOGVAR_BOUND)
            g_h = self.mu_head.backward(g_mu) + self.logvar_head.backward(g_lv)
            self.encoder.backward(g_h)
        return LossTerms(float(total), rec, float(np.mean(kl)))

    # inference in physical units
    def generate(self, t_phys, z):
        """Decode ``z`` at physical conditions ``t_phys``; fields in dataset units."""
        if self.scaler is None:
            raise RuntimeError("model has no fitted scaler; train it first")
        t_scaled = self.scaler.scale_conditions(np.atleast_2d(t_phys))
        out = self.decode(condition_concat(z, t_scaled, self.config.latent_dim,
                                           self.config.condition_dim))
        return self.scaler.invert_fields(out[:, 0].astype(np.float64), self.component)


def sample_conditional(model: Cvae, t, n: int, seed=None, batch: int = 1024) -> np.ndarray:
    """``n`` fields ``(n, H, W)`` at physical condition ``t`` with z drawn from the prior."""
    if model.scaler is None:
        raise RuntimeError("model has no fitted scaler; train it first")
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.size != model.config.condition_dim:
        raise ValueError(f"condition has {t.size} entries, model expects "
                         f"{model.config.condition_dim}")
    lo, hi = model.scaler.cond_min, model.scaler.cond_max
    if np.any(t < lo) or np.any(t > hi):
        warnings.warn(f"condition {t} outside the training range [{lo}, {hi}]; extrapolating",
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, model.config.latent_dim))
    out = [model.generate(np.tile(t, (len(zb), 1)), zb)
           for zb in np.array_split(z, max(1, -(-n // batch)))]
    return np.concatenate(out)
