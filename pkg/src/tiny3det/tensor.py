"""Rank-3 activation volumes stored channel-last (row, col, channel)."""

from typing import NamedTuple

import numpy as np

from .errors import IndexOutOfBounds, InvalidShape

DTYPE = np.float32


class Shape3(NamedTuple):
    height: int
    width: int
    channels: int

    @property
    def size(self) -> int:
        return int(self.height) * int(self.width) * int(self.channels)

    def __str__(self):
        return f"{self.height} x {self.width} x {self.channels}"


def _check_shape(shape) -> Shape3:
    shape = Shape3(*(int(d) for d in shape))
    if min(shape) < 1:
        raise InvalidShape(f"every dimension must be >= 1, got {tuple(shape)}")
    return shape


class Tensor3:
    """Dense HWC float32 volume.

    ``data`` is a C-contiguous ``(H, W, C)`` ndarray, so element ``(r, c, ch)``
    sits at flat offset ``((r * W) + c) * C + ch``.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=DTYPE)
        if arr.ndim != 3:
            raise InvalidShape(f"expected a rank-3 array, got ndim={arr.ndim}")
        _check_shape(arr.shape)
        self.data = arr

    @property
    def shape(self) -> Shape3:
        return Shape3(*self.data.shape)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def offset(self, r, c, ch):
        h, w, chans = self.data.shape
        if not (0 <= r < h and 0 <= c < w and 0 <= ch < chans):
            raise IndexOutOfBounds(
                f"index ({r}, {c}, {ch}) outside shape {tuple(self.data.shape)}")
        return ((r * w) + c) * chans + ch

    def __getitem__(self, idx):
        r, c, ch = idx
        return float(self.data.reshape(-1)[self.offset(r, c, ch)])

    def __setitem__(self, idx, value):
        r, c, ch = idx
        self.data.reshape(-1)[self.offset(r, c, ch)] = value

    def flat(self):
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(
            self.data, other.data)

    def __repr__(self):
        return f"Tensor3({self.shape})"


def tensor_create(shape, fill=0.0) -> Tensor3:
    shape = _check_shape(shape)
    return Tensor3(np.full(tuple(shape), fill, dtype=DTYPE))


def tensor_index(t: Tensor3, r: int, c: int, ch: int) -> float:
    return t[r, c, ch]
