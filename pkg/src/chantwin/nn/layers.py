"""Layer kinds used by the CIR corrector and its MLP baseline.

Every layer works on float64 numpy arrays. Sequence layers take input of
shape ``(batch, channels, length)``; :class:`Dense` flattens whatever it is
given to ``(batch, features)``. Each layer keeps what it needs from the last
forward pass so that :meth:`backward` can run reverse accumulation.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DimensionError, StateError

KINDS = ("conv1d", "conv1d_transpose", "batchnorm", "relu", "dense")

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class LayerSpec:
    """Hyper-parameters of one layer.

    ``kernel_count``/``kernel_size``/``stride`` apply to the conv kinds,
    ``output_width`` to ``dense``. Unused fields stay at 0.
    """

    kind: str
    kernel_count: int = 0
    kernel_size: int = 0
    stride: int = 1
    output_width: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv1d", "conv1d_transpose"):
            if self.kernel_count < 1:
                raise ValueError("kernel_count must be positive")
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError("kernel_size must be a positive odd integer")
            if self.stride < 1:
                raise ValueError("stride must be positive")
        if self.kind == "dense" and self.output_width < 1:
            raise ValueError("output_width must be positive")


class Layer:
    """Base class. Subclasses fill ``params`` (and optionally ``buffers``)."""

    spec: LayerSpec

    def __init__(self, spec):
        self.spec = spec
        self.params = {}
        self.buffers = {}
        self._cache = None

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.spec.kind}: backward called without a retained forward pass")
        return self._cache

    def output_shape(self, in_shape):
        raise NotImplementedError


def _conv_positions(length, kernel_size, stride):
    out_len = (length - 1) // stride + 1
    idx = stride * np.arange(out_len)[:, None] + np.arange(kernel_size)[None, :]
    return out_len, idx


class Conv1d(Layer):
    """Zero-padded ("same") 1-D convolution; stride ``s`` gives ``ceil(L/s)`` outputs.

    weight: ``(out_channels, in_channels, kernel_size)``; bias: ``(out_channels,)``.
    """

    def __init__(self, spec, in_channels, rng=None):
        super().__init__(spec)
        k = spec.kernel_size
        shape = (spec.kernel_count, in_channels, k)
        fan_in = in_channels * k
        if rng is None:
            w = np.zeros(shape)
        else:
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        self.params = {"weight": w, "bias": np.zeros(spec.kernel_count)}

    def output_shape(self, in_shape):
        c, length = in_shape
        if c != self.params["weight"].shape[1]:
            raise DimensionError(f"conv1d expects {self.params['weight'].shape[1]} channels, got {c}")
        return (self.spec.kernel_count, (length - 1) // self.spec.stride + 1)

    def forward(self, x, train):
        w, b = self.params["weight"], self.params["bias"]
        if x.ndim != 3 or x.shape[1] != w.shape[1]:
            raise DimensionError(f"conv1d expects (batch, {w.shape[1]}, length), got {x.shape}")
        k, s = self.spec.kernel_size, self.spec.stride
        pad = (k - 1) // 2
        n, c, length = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        out_len, idx = _conv_positions(length, k, s)
        cols = xp[:, :, idx]  # (n, c, out_len, k)
        cols2 = cols.transpose(0, 2, 1, 3).reshape(n, out_len, c * k)
        y = cols2 @ w.reshape(w.shape[0], -1).T  # (n, out_len, o)
        self._cache = (cols2, x.shape, idx, pad)
        return y.transpose(0, 2, 1) + b[None, :, None]

    def backward(self, grad):
        cols2, xshape, idx, pad = self._cached()
        w = self.params["weight"]
        n, c, length = xshape
        o, _, k = w.shape
        g = grad.transpose(0, 2, 1)  # (n, out_len, o)
        dw = np.tensordot(g, cols2, axes=([0, 1], [0, 1])).reshape(w.shape)
        db = grad.sum(axis=(0, 2))
        dcols = (g @ w.reshape(o, -1)).reshape(n, -1, c, k)  # (n, out_len, c, k)
        dxp = np.zeros((n, c, length + 2 * pad))
        for j in range(k):
            dxp[:, :, idx[:, j]] += dcols[:, :, :, j].transpose(0, 2, 1)
        dx = dxp[:, :, pad:pad + length]
        return {"weight": dw, "bias": db}, dx


class Conv1dTranspose(Layer):
    """Adjoint of a strided "same" convolution; output length is ``stride * L``.

    weight: ``(in_channels, out_channels, kernel_size)``; bias: ``(out_channels,)``.
    Input sample ``i`` scatters into outputs ``stride*i + j - pad`` for ``j < kernel_size``.
    """

    def __init__(self, spec, in_channels, rng=None):
        super().__init__(spec)
        k = spec.kernel_size
        shape = (in_channels, spec.kernel_count, k)
        # each output receives about k/stride contributions per input channel
        fan_in = max(1, in_channels * k // spec.stride)
        if rng is None:
            w = np.zeros(shape)
        else:
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        self.params = {"weight": w, "bias": np.zeros(spec.kernel_count)}

    def output_shape(self, in_shape):
        c, length = in_shape
        if c != self.params["weight"].shape[0]:
            raise DimensionError(f"conv1d_transpose expects {self.params['weight'].shape[0]} channels, got {c}")
        return (self.spec.kernel_count, self.spec.stride * length)

    def _targets(self, length):
        k, s = self.spec.kernel_size, self.spec.stride
        pad = (k - 1) // 2
        pos = s * np.arange(length)[:, None] + np.arange(k)[None, :] - pad
        valid = (pos >= 0) & (pos < s * length)
        return pos, valid

    def forward(self, x, train):
        w, b = self.params["weight"], self.params["bias"]
        if x.ndim != 3 or x.shape[1] != w.shape[0]:
            raise DimensionError(f"conv1d_transpose expects (batch, {w.shape[0]}, length), got {x.shape}")
        n, c, length = x.shape
        _, o, k = w.shape
        out_len = self.spec.stride * length
        # z[n, i, o, j] = sum_c x[n, c, i] * w[c, o, j]
        z = (x.transpose(0, 2, 1) @ w.reshape(c, o * k)).reshape(n, length, o, k)
        pos, valid = self._targets(length)
        y = np.zeros((n, o, out_len))
        for j in range(k):
            ok = np.nonzero(valid[:, j])[0]
            y[:, :, pos[ok, j]] += z[..., j][:, ok, :].transpose(0, 2, 1)
        self._cache = (x, pos, valid)
        return y + b[None, :, None]

    def backward(self, grad):
        x, pos, valid = self._cached()
        w = self.params["weight"]
        n, c, length = x.shape
        _, o, k = w.shape
        dz = np.zeros((n, length, o, k))
        for j in range(k):
            ok = np.nonzero(valid[:, j])[0]
            dzj = dz[..., j]
            dzj[:, ok, :] = grad[:, :, pos[ok, j]].transpose(0, 2, 1)
        xt = x.transpose(0, 2, 1).reshape(n * length, c)
        dz2 = dz.reshape(n * length, o * k)
        dw = (xt.T @ dz2).reshape(w.shape)
        dx = (dz2 @ w.reshape(c, o * k).T).reshape(n, length, c).transpose(0, 2, 1)
        db = grad.sum(axis=(0, 2))
        return {"weight": dw, "bias": db}, dx


class BatchNorm(Layer):
    """Per-channel batch normalisation over batch (and length) axes."""

    def __init__(self, spec, channels, rng=None):
        super().__init__(spec)
        self.params = {"weight": np.ones(channels), "bias": np.zeros(channels)}
        self.buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}

    def output_shape(self, in_shape):
        if in_shape[0] != self.params["weight"].shape[0]:
            raise DimensionError(f"batchnorm expects {self.params['weight'].shape[0]} channels, got {in_shape[0]}")
        return in_shape

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2)

    def _bcast(self, v, x):
        return v[None, :] if x.ndim == 2 else v[None, :, None]

    def forward(self, x, train):
        gamma, beta = self.params["weight"], self.params["bias"]
        if x.ndim not in (2, 3) or x.shape[1] != gamma.shape[0]:
            raise DimensionError(f"batchnorm expects {gamma.shape[0]} channels, got shape {x.shape}")
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            self.buffers["running_mean"] = (1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean
            self.buffers["running_var"] = (1 - BN_MOMENTUM) * rv + BN_MOMENTUM * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv, x)
        self._cache = (xhat, inv, train, axes)
        return xhat * self._bcast(gamma, x) + self._bcast(beta, x)

    def backward(self, grad):
        xhat, inv, train, axes = self._cached()
        gamma = self.params["weight"]
        dgamma = (grad * xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * self._bcast(gamma, grad)
        if train:
            m = grad.size // grad.shape[1]
            dx = (self._bcast(inv, grad) / m) * (
                m * dxhat
                - self._bcast(dxhat.sum(axis=axes), grad)
                - xhat * self._bcast((dxhat * xhat).sum(axis=axes), grad)
            )
        else:
            dx = dxhat * self._bcast(inv, grad)
        return {"weight": dgamma, "bias": dbeta}, dx


class ReLU(Layer):
    def __init__(self, spec, *_, rng=None):
        super().__init__(spec)

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train):
        mask = x > 0
        self._cache = mask
        self.last_input = x
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        return {}, grad * self._cached()


class Dense(Layer):
    """Fully connected layer ``y = W x + b`` on the flattened input."""

    def __init__(self, spec, in_features, rng=None):
        super().__init__(spec)
        shape = (spec.output_width, in_features)
        if rng is None:
            w = np.zeros(shape)
        else:
            w = rng.standard_normal(shape) * np.sqrt(2.0 / in_features)
        self.params = {"weight": w, "bias": np.zeros(spec.output_width)}

    def output_shape(self, in_shape):
        n_in = int(np.prod(in_shape))
        if n_in != self.params["weight"].shape[1]:
            raise DimensionError(f"dense expects {self.params['weight'].shape[1]} features, got {n_in}")
        return (self.spec.output_width,)

    def forward(self, x, train):
        w, b = self.params["weight"], self.params["bias"]
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != w.shape[1]:
            raise DimensionError(f"dense expects {w.shape[1]} features, got {flat.shape[1]}")
        self._cache = (flat, x.shape)
        return flat @ w.T + b

    def backward(self, grad):
        flat, xshape = self._cached()
        w = self.params["weight"]
        dw = grad.T @ flat
        db = grad.sum(axis=0)
        dx = (grad @ w).reshape(xshape)
        return {"weight": dw, "bias": db}, dx


LAYER_TYPES = {
    "conv1d": Conv1d,
    "conv1d_transpose": Conv1dTranspose,
    "batchnorm": BatchNorm,
    "relu": ReLU,
    "dense": Dense,
}


def make_layer(spec: LayerSpec, in_shape, rng: Optional[np.random.Generator] = None) -> Layer:
    """Instantiate ``spec`` for an input of per-sample shape ``in_shape``.

    With ``rng=None`` all weights start at zero.
    """
    cls = LAYER_TYPES[spec.kind]
    if spec.kind == "dense":
        return cls(spec, int(np.prod(in_shape)), rng=rng)
    if spec.kind == "relu":
        return cls(spec)
    return cls(spec, in_shape[0], rng=rng)
