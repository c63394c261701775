"""AdamW parameter update and input preprocessing."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .tensor import Tensor3


@dataclass(frozen=True)
class AdamWConfig:
    eta: float = 1e-3
    beta1: float = 0.89
    beta2: float = 0.99
    epsilon: float = 1e-9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0 or self.weight_decay < 0:
            raise ValueError("epsilon must be positive and weight_decay non-negative")


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adamw_step(params, grads, state: AdamWState, cfg: AdamWConfig, literal=False):
    """One decoupled-weight-decay Adam step; returns ``(new_params, state)``.

    The default uses bias-corrected moments with epsilon outside the root.
    ``literal=True`` follows the printed update instead: the raw first moment
    divided by ``sqrt(v_hat + eps)``.
    """
    theta = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if theta.shape != g.shape or state.m.shape != theta.shape or state.v.shape != theta.shape:
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    b1, b2 = cfg.beta1, cfg.beta2
    state.t += 1
    state.m = b1 * state.m + (1 - b1) * g
    state.v = b2 * state.v + (1 - b2) * g * g
    v_hat = state.v / (1 - b2 ** state.t)
    if literal:
        step = cfg.eta / np.sqrt(v_hat + cfg.epsilon) * state.m
    else:
        m_hat = state.m / (1 - b1 ** state.t)
        step = cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return theta - step - cfg.eta * cfg.weight_decay * theta, state


def resize_bilinear(image: Tensor3, out_h: int, out_w: int) -> Tensor3:
    """Bilinear resize with half-pixel centers; source coordinates clamp to the edge."""
    if out_h < 1 or out_w < 1:
        raise ValueError("target dimensions must be positive")
    src = image.data.astype(np.float64)
    in_h, in_w, _ = src.shape
    if (in_h, in_w) == (out_h, out_w):
        return Tensor3(image.data.copy())

    def axis(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(out_h, in_h)
    x0, x1, fx = axis(out_w, in_w)
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    fy = fy[:, None, None]
    return Tensor3(top * (1 - fy) + bottom * fy)


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 608
    channel_means: tuple = (0.0, 0.0, 0.0)
    scale: float = 255.0

    def __post_init__(self):
        if self.target_size < 32 or self.target_size % 32:
            raise ValueError("target_size must be a positive multiple of 32")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if len(self.channel_means) != 3:
            raise ValueError("need one mean per RGB channel")


def preprocess(image: Tensor3, cfg: PreprocessConfig = PreprocessConfig()) -> Tensor3:
    """Stretch to the square network input, divide by ``scale``, subtract channel means."""
    if image.channels != 3:
        raise ShapeMismatch(f"expected a 3-channel image, got {image.channels}")
    resized = resize_bilinear(image, cfg.target_size, cfg.target_size).data.astype(np.float64)
    return Tensor3(resized / cfg.scale - np.asarray(cfg.channel_means, dtype=np.float64))
