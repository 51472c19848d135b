"""Finite periodic multichannel signals.

A :class:`MultiSignal` holds ``N`` channels on a :class:`Grid`. Data are stored
as an array of shape ``(N, n_1, ..., n_d)``; flattened, that is channel-major
with sites in row-major order, which is the layout used by the file formats.
Index arithmetic is always periodic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when shapes, channel counts or offset arities do not match."""


@dataclass(frozen=True)
class Grid:
    sizes: tuple[int, ...]

    def __init__(self, sizes: int | Sequence[int]):
        if np.isscalar(sizes):
            sizes = (int(sizes),)
        sizes = tuple(int(n) for n in sizes)
        if not sizes:
            raise DimensionError("a grid needs at least one dimension")
        if any(n < 1 for n in sizes):
            raise DimensionError(f"grid sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def dims(self) -> int:
        return len(self.sizes)

    @property
    def K(self) -> int:
        return math.prod(self.sizes)

    def frequencies(self) -> np.ndarray:
        """DFT frequencies ``2*pi*k/n`` of every bin, shape ``(K, d)``, row-major."""
        axes = [2.0 * np.pi * np.arange(n) / n for n in self.sizes]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def refined(self, factor: int) -> "Grid":
        return Grid(tuple(n * int(factor) for n in self.sizes))

    def __str__(self) -> str:
        return "x".join(str(n) for n in self.sizes)

    @classmethod
    def parse(cls, text: str) -> "Grid":
        parts = text.replace(",", "x").split("x")
        return cls(tuple(int(p) for p in parts if p.strip()))


@dataclass(frozen=True, eq=False)
class MultiSignal:
    """``N``-channel signal on a periodic grid. The data array is read-only."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype.kind not in "fc":
            data = data.astype(np.float64)
        elif data.dtype.kind == "f" and data.dtype != np.float64:
            data = data.astype(np.float64)
        elif data.dtype.kind == "c" and data.dtype != np.complex128:
            data = data.astype(np.complex128)
        if data.shape[1:] != self.grid.sizes or data.ndim != self.grid.dims + 1:
            raise DimensionError(
                f"data shape {data.shape} does not match (channels,)+{self.grid.sizes}"
            )
        if data.shape[0] < 1:
            raise DimensionError("a signal needs at least one channel")
        if not np.all(np.isfinite(data)):
            raise ValueError("signal contains non-finite values")
        data = np.array(data, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "MultiSignal":
        """Wrap an array of shape ``(N, n_1, ..., n_d)``."""
        array = np.asarray(array)
        return cls(Grid(array.shape[1:]), array)

    @classmethod
    def zeros(cls, grid: Grid, channels: int = 1, dtype=np.float64) -> "MultiSignal":
        return cls(grid, np.zeros((channels,) + grid.sizes, dtype=dtype))

    @classmethod
    def impulse(cls, grid: Grid, site=None, channel: int = 0, channels: int = 1) -> "MultiSignal":
        data = np.zeros((channels,) + grid.sizes)
        idx = (0,) * grid.dims if site is None else tuple(np.atleast_1d(site))
        data[(channel,) + tuple(int(i) % n for i, n in zip(idx, grid.sizes))] = 1.0
        return cls(grid, data)

    @classmethod
    def random(cls, grid: Grid, channels: int = 1, rng=None, complex: bool = False) -> "MultiSignal":
        rng = np.random.default_rng(rng)
        data = rng.standard_normal((channels,) + grid.sizes)
        if complex:
            data = data + 1j * rng.standard_normal((channels,) + grid.sizes)
        return cls(grid, data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def flat(self) -> np.ndarray:
        """Channel-major ``(N, K)`` view."""
        return self.data.reshape(self.channels, self.grid.K)

    @property
    def is_complex(self) -> bool:
        return self.data.dtype.kind == "c"

    def with_data(self, data) -> "MultiSignal":
        return MultiSignal(self.grid, data)

    def _check_compatible(self, other: "MultiSignal"):
        if self.grid != other.grid or self.channels != other.channels:
            raise DimensionError(
                f"signals differ: {self.channels}ch on {self.grid} vs "
                f"{other.channels}ch on {other.grid}"
            )

    def __add__(self, other):
        if isinstance(other, MultiSignal):
            self._check_compatible(other)
            return self.with_data(self.data + other.data)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, MultiSignal):
            self._check_compatible(other)
            return self.with_data(self.data - other.data)
        return NotImplemented

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return self.with_data(self.data * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_data(-self.data)

    def real(self) -> "MultiSignal":
        return self.with_data(self.data.real)

    def __repr__(self) -> str:
        return f"MultiSignal(channels={self.channels}, grid={self.grid}, dtype={self.data.dtype})"


def norm(x: MultiSignal) -> float:
    """Euclidean norm over all channels and sites."""
    return float(np.sqrt(np.sum(np.abs(x.data) ** 2)))


def inner_product(x: MultiSignal, y: MultiSignal) -> complex | float:
    """``sum_n sum_k x_n[k] * conj(y_n[k])``; real when both inputs are real."""
    x._check_compatible(y)
    value = np.vdot(y.data, x.data)
    if not (x.is_complex or y.is_complex):
        return float(value.real)
    return complex(value)


def flip(x: MultiSignal) -> MultiSignal:
    """``out[n][k] = x[n][-k mod sizes]``."""
    axes = tuple(range(1, x.grid.dims + 1))
    return x.with_data(np.roll(np.flip(x.data, axis=axes), 1, axis=axes))


def _shift_table(offsets, channels: int, dims: int) -> np.ndarray:
    arr = np.asarray(offsets, dtype=np.int64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 1 and arr.size == dims:
        return np.tile(arr, (channels, 1))
    if arr.ndim == 2 and arr.shape == (channels, dims):
        return arr
    if dims == 1 and arr.ndim == 1 and arr.size == channels:
        return arr.reshape(channels, 1)
    raise DimensionError(
        f"offsets of shape {arr.shape} fit neither ({dims},) nor ({channels}, {dims})"
    )


def shift(x: MultiSignal, offsets) -> MultiSignal:
    """Translate every channel: channel ``n`` becomes ``x_n[. - k_n]``.

    ``offsets`` is either one ``d``-vector shared by all channels or an
    ``(N, d)`` table with one offset per channel.
    """
    table = _shift_table(offsets, x.channels, x.grid.dims)
    axes = tuple(range(x.grid.dims))
    out = np.empty_like(x.data)
    for n in range(x.channels):
        out[n] = np.roll(x.data[n], shift=tuple(int(o) for o in table[n]), axis=axes)
    return x.with_data(out)
