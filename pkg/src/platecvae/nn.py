"""A small numpy network kernel: conv / transposed conv / dense layers with
hand-written reverse mode, and Adam.

Tensors are plain ``ndarray`` batches: images ``(N, C, H, W)``, vectors
``(N, F)``.  Each layer caches what it needs during ``forward`` and consumes
the cache in ``backward``, which stores parameter gradients on the layer and
returns the gradient with respect to the layer input.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# --- activations -------------------------------------------------------------

ACTIVATIONS = ("identity", "leaky_relu", "sigmoid")


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(kind: str, x, slope: float = 0.01):
    if kind == "identity":
        return x
    if kind == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    if kind == "sigmoid":
        return _sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def activate_backward(kind: str, pre, post, g, slope: float = 0.01):
    if kind == "identity":
        return g
    if kind == "leaky_relu":
        return np.where(pre > 0, g, slope * g)
    if kind == "sigmoid":
        return g * post * (1.0 - post)
    raise ValueError(f"unknown activation {kind!r}")


# --- convolution primitives ----------------------------------------------------

def conv_output_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def deconv_output_size(n: int, k: int, s: int, p: int, op: int = 0) -> int:
    return (n - 1) * s - 2 * p + k + op


def _im2col(x, k, s, p):
    """Patches of ``x (N, C, H, W)`` as ``(N, Ho, Wo, kh * kw * C)``, channels fastest."""
    n, c, h, w = x.shape
    (kh, kw), (sh, sw), (ph, pw) = k, s, p
    ho, wo = conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)
    xp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
    xp[:, ph:ph + h, pw:pw + w, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + sh * ho:sh, j:j + sw * wo:sw, :]
    return cols.reshape(n, ho, wo, kh * kw * c)


def _col2im(cols, out_shape, k, s, p):
    """Adjoint of ``_im2col``: scatter-add ``(N, Ho, Wo, kh * kw * C)`` into ``(N, C, H, W)``."""
    n, c, h, w = out_shape
    (kh, kw), (sh, sw), (ph, pw) = k, s, p
    _, ho, wo, _ = cols.shape
    hp, wp = h + 2 * ph, w + 2 * pw
    if (ho - 1) * sh + kh > hp or (wo - 1) * sw + kw > wp:
        raise ValueError("transposed convolution does not fit the requested output size")
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + sh * ho:sh, j:j + sw * wo:sw, :] += cols[:, :, :, i, j, :]
    return np.ascontiguousarray(out[:, ph:ph + h, pw:pw + w, :].transpose(0, 3, 1, 2))


def _kernel_matrix(w):
    """``(O, C, kh, kw)`` kernel as an ``(O, kh * kw * C)`` matrix matching ``_im2col``."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _kernel_from_matrix(m, shape):
    o, c, kh, kw = shape
    return np.ascontiguousarray(m.reshape(o, kh, kw, c).transpose(0, 3, 1, 2))


def _nhwc_rows(x):
    return x.transpose(0, 2, 3, 1).reshape(-1, x.shape[1])


def _from_nhwc_rows(rows, n, h, w):
    return np.ascontiguousarray(rows.reshape(n, h, w, -1).transpose(0, 3, 1, 2))


def conv2d(x, w, stride=(1, 1), padding=(0, 0)):
    """Cross-correlation of ``x (N, C, H, W)`` with ``w (O, C, kh, kw)``; no bias."""
    cols = _im2col(x, w.shape[2:], stride, padding)
    n, ho, wo, _ = cols.shape
    out = cols.reshape(n * ho * wo, -1) @ _kernel_matrix(w).T
    return _from_nhwc_rows(out, n, ho, wo)


def conv2d_weight_grad(x, gy, kernel, stride=(1, 1), padding=(0, 0)):
    """d<gy, conv2d(x, w)>/dw, shape ``(O, C, kh, kw)``."""
    cols = _im2col(x, kernel, stride, padding)
    n, ho, wo, _ = cols.shape
    gy = gy[:, :, :ho, :wo]
    m = _nhwc_rows(gy).T @ cols.reshape(n * ho * wo, -1)
    return _kernel_from_matrix(m, (gy.shape[1], x.shape[1], *kernel))


def conv2d_transpose(gy, w, out_hw, stride=(1, 1), padding=(0, 0)):
    """Adjoint of ``conv2d`` in its input: maps ``(N, O, Ho, Wo)`` to ``(N, C, H, W)``."""
    n, _, ho, wo = gy.shape
    cols = _nhwc_rows(gy) @ _kernel_matrix(w)
    return _col2im(cols.reshape(n, ho, wo, -1), (n, w.shape[1], *out_hw), w.shape[2:],
                   stride, padding)


# --- layer specs -------------------------------------------------------------

LAYER_KINDS = ("conv2d", "deconv2d", "fully_connected", "flatten", "reshape")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    ``n_in``/``n_out`` are channel counts for (de)convolutions and widths for
    fully connected layers.  ``shape`` is the per-sample target of a reshape.
    """

    kind: str
    n_in: int = 0
    n_out: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    output_padding: tuple[int, int] = (0, 0)
    activation: str = "identity"
    slope: float = 0.01
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError("kernel and stride must be positive")
        if min(self.padding) < 0 or min(self.output_padding) < 0:
            raise ValueError("padding must be non-negative")
        if any(op >= s for op, s in zip(self.output_padding, self.stride)):
            raise ValueError("output padding must be smaller than the stride")

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape; raises on inconsistent input."""
        if self.kind == "flatten":
            return (int(np.prod(in_shape)),)
        if self.kind == "reshape":
            if int(np.prod(in_shape)) != int(np.prod(self.shape)):
                raise ValueError(f"cannot reshape {in_shape} to {self.shape}")
            return tuple(self.shape)
        if self.kind == "fully_connected":
            if in_shape != (self.n_in,):
                raise ValueError(f"dense layer expects ({self.n_in},), got {in_shape}")
            return (self.n_out,)
        if len(in_shape) != 3 or in_shape[0] != self.n_in:
            raise ValueError(f"{self.kind} expects ({self.n_in}, H, W), got {in_shape}")
        _, h, w = in_shape
        if self.kind == "conv2d":
            dims = [conv_output_size(n, k, s, p) for n, k, s, p in
                    zip((h, w), self.kernel, self.stride, self.padding)]
        else:
            dims = [deconv_output_size(n, k, s, p, op) for n, k, s, p, op in
                    zip((h, w), self.kernel, self.stride, self.padding, self.output_padding)]
        if min(dims) < 1:
            raise ValueError(f"{self.kind} produces non-positive output {dims} from {in_shape}")
        return (self.n_out, *dims)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        for k in ("kernel", "stride", "padding", "output_padding", "shape"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# --- layers ------------------------------------------------------------------

class Layer:
    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def init_params(self, rng: np.random.Generator, dtype) -> None:
        pass

    def forward(self, x):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.spec.kind}: backward called without a forward pass")
        cache, self._cache = self._cache, None
        return cache


class Dense(Layer):
    def init_params(self, rng, dtype):
        s = self.spec
        bound = 1.0 / np.sqrt(s.n_in)
        self.params = {"weight": rng.uniform(-bound, bound, (s.n_out, s.n_in)).astype(dtype),
                       "bias": np.zeros(s.n_out, dtype=dtype)}

    def forward(self, x):
        w, b = self.params["weight"], self.params["bias"]
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ValueError(f"dense layer expects (N, {w.shape[1]}), got {x.shape}")
        pre = x @ w.T + b
        post = activate(self.spec.activation, pre, self.spec.slope)
        self._cache = (x, pre, post)
        return post

    def backward(self, g):
        x, pre, post = self._take_cache()
        g = activate_backward(self.spec.activation, pre, post, g, self.spec.slope)
        self.grads = {"weight": g.T @ x, "bias": g.sum(axis=0)}
        return g @ self.params["weight"]


class Conv2D(Layer):
    def init_params(self, rng, dtype):
        s = self.spec
        fan_in = s.n_in * s.kernel[0] * s.kernel[1]
        bound = 1.0 / np.sqrt(fan_in)
        self.params = {"weight": rng.uniform(-bound, bound, (s.n_out, s.n_in, *s.kernel)).astype(dtype),
                       "bias": np.zeros(s.n_out, dtype=dtype)}

    def forward(self, x):
        s = self.spec
        s.output_shape(x.shape[1:])
        w = self.params["weight"]
        cols = _im2col(x, s.kernel, s.stride, s.padding)
        n, ho, wo, kk = cols.shape
        cols = cols.reshape(-1, kk)
        pre = _from_nhwc_rows(cols @ _kernel_matrix(w).T + self.params["bias"], n, ho, wo)
        post = activate(s.activation, pre, s.slope)
        self._cache = (x.shape, cols, pre, post)
        return post

    def backward(self, g):
        s = self.spec
        x_shape, cols, pre, post = self._take_cache()
        g = activate_backward(s.activation, pre, post, g, s.slope)
        n, _, ho, wo = g.shape
        g_rows = _nhwc_rows(g)
        w = self.params["weight"]
        self.grads = {"weight": _kernel_from_matrix(g_rows.T @ cols, w.shape),
                      "bias": g_rows.sum(axis=0)}
        gx_cols = g_rows @ _kernel_matrix(w)
        return _col2im(gx_cols.reshape(n, ho, wo, -1), x_shape, s.kernel, s.stride, s.padding)


class Deconv2D(Layer):
    """Transposed convolution; weight layout ``(C_in, C_out, kh, kw)``."""

    def init_params(self, rng, dtype):
        s = self.spec
        fan_in = s.n_in * s.kernel[0] * s.kernel[1]
        bound = 1.0 / np.sqrt(fan_in)
        self.params = {"weight": rng.uniform(-bound, bound, (s.n_in, s.n_out, *s.kernel)).astype(dtype),
                       "bias": np.zeros(s.n_out, dtype=dtype)}

    def forward(self, x):
        s = self.spec
        out_shape = s.output_shape(x.shape[1:])
        n, _, h, w_ = x.shape
        x_rows = _nhwc_rows(x)
        cols = x_rows @ _kernel_matrix(self.params["weight"])
        pre = _col2im(cols.reshape(n, h, w_, -1), (n, *out_shape), s.kernel, s.stride, s.padding)
        pre += self.params["bias"][None, :, None, None]
        post = activate(s.activation, pre, s.slope)
        self._cache = (x.shape, x_rows, pre, post)
        return post

    def backward(self, g):
        s = self.spec
        x_shape, x_rows, pre, post = self._take_cache()
        g = activate_backward(s.activation, pre, post, g, s.slope)
        n, _, h, w_ = x_shape
        cols = _im2col(g, s.kernel, s.stride, s.padding)[:, :h, :w_]
        cols = cols.reshape(n * h * w_, -1)
        w = self.params["weight"]
        self.grads = {"weight": _kernel_from_matrix(x_rows.T @ cols, w.shape),
                      "bias": g.sum(axis=(0, 2, 3))}
        return _from_nhwc_rows(cols @ _kernel_matrix(w).T, n, h, w_)


class Flatten(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._take_cache())


class Reshape(Layer):
    def forward(self, x):
        self.spec.output_shape(x.shape[1:])
        self._cache = x.shape
        return x.reshape(x.shape[0], *self.spec.shape)

    def backward(self, g):
        return g.reshape(self._take_cache())


_LAYER_TYPES = {"conv2d": Conv2D, "deconv2d": Deconv2D, "fully_connected": Dense,
                "flatten": Flatten, "reshape": Reshape}


def build_layer(spec: LayerSpec) -> Layer:
    return _LAYER_TYPES[spec.kind](spec)


class Sequential:
    """Layers applied in order; parameters enumerated in declaration order."""

    def __init__(self, specs, rng: np.random.Generator | None = None, dtype=np.float32):
        self.layers = [build_layer(s) for s in specs]
        rng = rng if rng is not None else np.random.default_rng(0)
        for layer in self.layers:
            layer.init_params(rng, dtype)

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def shape_walk(self, in_shape) -> list[tuple[int, ...]]:
        shapes = [tuple(in_shape)]
        for spec in self.specs:
            shapes.append(spec.output_shape(shapes[-1]))
        return shapes

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", v) for i, layer in enumerate(self.layers)
                for k, v in layer.params.items()]

    def named_grads(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                out.append((f"{i}.{k}", layer.grads.get(k, np.zeros_like(v))))
        return out

    def astype(self, dtype) -> "Sequential":
        for layer in self.layers:
            layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
        return self


def shape_walk(specs, in_shape) -> list[tuple[int, ...]]:
    shapes = [tuple(in_shape)]
    for spec in specs:
        shapes.append(spec.output_shape(shapes[-1]))
    return shapes


# --- losses ------------------------------------------------------------------

def mse(pred, target):
    """Mean squared error over every element and its gradient w.r.t. ``pred``."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# --- optimiser ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    step_size = state.lr / c1
    inv_c2 = 1.0 / np.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        # p -= lr * (m / c1) / (sqrt(v / c2) + eps)
        denom = np.sqrt(v)
        denom *= inv_c2
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= step_size
        p -= denom.astype(p.dtype, copy=False)
    return state


def clone_state(state: AdamState) -> AdamState:
    return replace(state, m=[a.copy() for a in state.m], v=[a.copy() for a in state.v])
