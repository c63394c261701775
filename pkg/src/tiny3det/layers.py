"""Layer kernels: convolution, batch norm, leaky ReLU, pooling, upsampling, routing."""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MissingBatchNorm, ShapeMismatch, UnsupportedPool
from .tensor import DTYPE, Tensor3

LEAKY_SLOPE = 0.1
BN_EPS = 1e-5


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    rolling_mean: np.ndarray
    rolling_var: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "beta", "rolling_mean", "rolling_var"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=DTYPE).reshape(-1))
        n = self.gamma.size
        if any(a.size != n for a in (self.beta, self.rolling_mean, self.rolling_var)):
            raise ShapeMismatch("batch-norm vectors differ in length")
        if np.any(self.rolling_var < 0):
            raise ValueError("rolling_var must be non-negative")


@dataclass
class ConvParams:
    """Parameters of one convolution.

    ``weights`` has darknet order ``(filters, in_channels, kernel, kernel)``.
    When ``batchnorm`` is set the convolution itself carries no bias (zeros).
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    batchnorm: Optional[BatchNorm] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeMismatch(
                f"weights must be (filters, in, k, k), got {self.weights.shape}")
        self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(-1)
        if self.bias.size != self.filters:
            raise ShapeMismatch(f"bias length {self.bias.size} != filters {self.filters}")
        if self.batchnorm is not None and self.batchnorm.gamma.size != self.filters:
            raise ShapeMismatch("batch-norm length differs from filter count")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def filters(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return self.weights.shape[2]


@dataclass(frozen=True)
class PoolParams:
    size: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.size < 1 or self.stride < 1:
            raise UnsupportedPool(f"size and stride must be >= 1: {self}")


def conv2d(x: Tensor3, p: ConvParams) -> Tensor3:
    """'Same' convolution: zero padding of kernel // 2, output side ceil(H / stride)."""
    h, w, c = x.data.shape
    if c != p.in_channels:
        raise ShapeMismatch(f"input has {c} channels, weights expect {p.in_channels}")
    k, s = p.kernel, p.stride
    out_h, out_w = -(-h // s), -(-w // s)
    wmat = p.weights.reshape(p.filters, -1)
    if k == 1:
        cols = x.data[::s, ::s, :].reshape(-1, c)
    else:
        pad = k // 2
        padded = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
        # windows: (H', W', C, k, k); flattening (C, k, k) matches the weight layout
        win = sliding_window_view(padded, (k, k), axis=(0, 1))[::s, ::s]
        cols = win[:out_h, :out_w].reshape(out_h * out_w, c * k * k)
    out = cols @ wmat.T
    out += p.bias
    return Tensor3(out.reshape(out_h, out_w, p.filters))


def _bn_scale(bn: BatchNorm, eps):
    return bn.gamma.astype(np.float64) / np.sqrt(bn.rolling_var.astype(np.float64) + eps)


def batchnorm_apply(x: Tensor3, p: ConvParams, eps: float = BN_EPS) -> Tensor3:
    bn = p.batchnorm
    if bn is None:
        raise MissingBatchNorm("convolution has no batch-norm record")
    if x.channels != bn.gamma.size:
        raise ShapeMismatch(f"{x.channels} channels vs {bn.gamma.size} batch-norm entries")
    scale = _bn_scale(bn, eps).astype(DTYPE)
    return Tensor3((x.data - bn.rolling_mean) * scale + bn.beta)


def fold_batchnorm(p: ConvParams, eps: float = BN_EPS) -> ConvParams:
    """Absorb the batch-norm affine map into the convolution weights and bias."""
    bn = p.batchnorm
    if bn is None:
        raise MissingBatchNorm("convolution has no batch-norm record")
    scale = _bn_scale(bn, eps)
    weights = p.weights.astype(np.float64) * scale[:, None, None, None]
    bias = bn.beta + scale * (p.bias.astype(np.float64) - bn.rolling_mean)
    return replace(p, weights=weights, bias=bias, batchnorm=None)


def leaky_relu(x: Tensor3, slope: float = LEAKY_SLOPE) -> Tensor3:
    return Tensor3(np.maximum(x.data, x.data * DTYPE(slope)))


def maxpool(x: Tensor3, p: PoolParams) -> Tensor3:
    if p.size != 2 or p.stride not in (1, 2):
        raise UnsupportedPool(f"only 2x2 pooling with stride 1 or 2, got {p}")
    d = x.data
    if p.stride == 2:
        h, w, c = d.shape
        if h % 2 or w % 2:
            raise UnsupportedPool(f"stride-2 pooling needs even sides, got {h}x{w}")
        return Tensor3(d.reshape(h // 2, 2, w // 2, 2, c).max(axis=(1, 3)))
    padded = np.pad(d, ((0, 1), (0, 1), (0, 0)), constant_values=-np.inf)
    out = np.maximum(
        np.maximum(padded[:-1, :-1], padded[1:, :-1]),
        np.maximum(padded[:-1, 1:], padded[1:, 1:]))
    return Tensor3(out)


def upsample_nearest(x: Tensor3, factor: int = 2) -> Tensor3:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return Tensor3(x.data.copy())
    return Tensor3(np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1))


def concat_channels(a: Tensor3, b: Tensor3) -> Tensor3:
    if a.data.shape[:2] != b.data.shape[:2]:
        raise ShapeMismatch(f"cannot concatenate {a.shape} with {b.shape}")
    return Tensor3(np.concatenate([a.data, b.data], axis=2))
