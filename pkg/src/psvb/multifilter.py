"""Matrix-valued FIR impulse responses and their convolution algebra.

A :class:`MultiFilter` is a sparse list of taps ``(offset, matrix)`` with
matrices of shape ``(M, N)``. It maps ``N``-channel signals to ``M``-channel
signals by

    (H * x)[k] = sum_l H[l] x[k - l]

Filters are grid-free: offsets wrap modulo the grid of the signal they are
applied to.
"""

from __future__ import annotations

from typing import Iterable, Literal

import numpy as np

from . import _config, _kernels
from .signal import DimensionError, Grid, MultiSignal

#: Largest taps*sites product handled by direct summation under ``method="auto"``.
#: ``None`` defers to ``PSVB_DIRECT_MAX``.
DIRECT_THRESHOLD: int | None = None


class MultiFilter:
    """Immutable tap list of an ``N``-to-``M`` channel LSI operator.

    Parameters
    ----------
    offsets : array_like of int, shape (T, d)
    matrices : array_like, shape (T, M, N)
    grid_hint : Grid, optional
        Grid the filter is meant to be applied on (used by file formats and
        the CLI; the algebra ignores it).
    """

    __slots__ = ("offsets", "matrices", "grid_hint")

    def __init__(self, offsets, matrices, grid_hint: Grid | None = None):
        mats = np.asarray(matrices)
        if mats.dtype.kind not in "fc":
            mats = mats.astype(np.float64)
        mats = mats.astype(np.complex128 if mats.dtype.kind == "c" else np.float64)
        if mats.ndim != 3:
            raise DimensionError(f"matrices must have shape (T, M, N), got {mats.shape}")
        offs = np.asarray(offsets, dtype=np.int64)
        if offs.ndim == 1 and mats.shape[0] == offs.shape[0]:
            offs = offs.reshape(-1, 1)
        if offs.ndim != 2 or offs.shape[0] != mats.shape[0]:
            raise DimensionError(
                f"offsets of shape {offs.shape} do not pair with {mats.shape[0]} matrices"
            )
        if offs.shape[1] < 1:
            raise DimensionError("offsets need at least one dimension")
        if not np.all(np.isfinite(mats)):
            raise ValueError("filter contains non-finite entries")
        offs = offs.copy()
        mats = mats.copy()
        offs.setflags(write=False)
        mats.setflags(write=False)
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "grid_hint", grid_hint)

    def __setattr__(self, name, value):
        raise AttributeError("MultiFilter is immutable")

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_taps(cls, taps: Iterable[tuple], in_channels: int | None = None,
                  out_channels: int | None = None, dims: int | None = None) -> "MultiFilter":
        """Build from ``(offset, matrix)`` pairs; scalars and 1-d offsets are promoted."""
        offs, mats = [], []
        for offset, mat in taps:
            offs.append(np.atleast_1d(np.asarray(offset, dtype=np.int64)))
            mats.append(np.atleast_2d(np.asarray(mat)))
        if not mats:
            if None in (in_channels, out_channels, dims):
                raise ValueError("an empty tap list needs explicit channel counts and dims")
            return cls(np.zeros((0, dims), np.int64), np.zeros((0, out_channels, in_channels)))
        return cls(np.stack(offs), np.stack(mats))

    @classmethod
    def identity(cls, channels: int, dims: int = 1) -> "MultiFilter":
        return cls(np.zeros((1, dims), np.int64), np.eye(channels)[None])

    @classmethod
    def zero(cls, out_channels: int, in_channels: int, dims: int = 1) -> "MultiFilter":
        return cls(np.zeros((0, dims), np.int64), np.zeros((0, out_channels, in_channels)))

    @classmethod
    def scalar(cls, coefficients, start=0) -> "MultiFilter":
        """1-d scalar filter with taps ``coefficients`` at offsets ``start, start+1, ...``."""
        c = np.asarray(coefficients)
        offs = (np.arange(c.size) + start).reshape(-1, 1)
        return cls(offs, c.reshape(-1, 1, 1))

    # -- properties ---------------------------------------------------------

    @property
    def out_channels(self) -> int:
        return self.matrices.shape[1]

    @property
    def in_channels(self) -> int:
        return self.matrices.shape[2]

    @property
    def dims(self) -> int:
        return self.offsets.shape[1]

    @property
    def num_taps(self) -> int:
        return self.matrices.shape[0]

    @property
    def is_complex(self) -> bool:
        return self.matrices.dtype.kind == "c"

    @property
    def taps(self) -> list[tuple[tuple[int, ...], np.ndarray]]:
        return [(tuple(int(v) for v in o), m) for o, m in zip(self.offsets, self.matrices)]

    def scaled(self, factor) -> "MultiFilter":
        return MultiFilter(self.offsets, self.matrices * factor, self.grid_hint)

    def with_grid_hint(self, grid: Grid | None) -> "MultiFilter":
        return MultiFilter(self.offsets, self.matrices, grid)

    def max_abs_difference(self, other: "MultiFilter") -> float:
        """Largest entry difference between the canonical forms of two filters."""
        a, b = canonicalize(self), canonicalize(other)
        if (a.in_channels, a.out_channels, a.dims) != (b.in_channels, b.out_channels, b.dims):
            raise DimensionError("filters have different shapes")
        offs = np.unique(np.concatenate([a.offsets, b.offsets]), axis=0)
        worst = 0.0
        for o in offs:
            ma = _tap_at(a, o)
            mb = _tap_at(b, o)
            worst = max(worst, float(np.max(np.abs(ma - mb))) if ma.size else 0.0)
        return worst

    def __repr__(self) -> str:
        return (f"MultiFilter({self.in_channels}->{self.out_channels}, d={self.dims}, "
                f"taps={self.num_taps})")


def _tap_at(H: MultiFilter, offset) -> np.ndarray:
    hit = np.all(H.offsets == offset, axis=1)
    if not hit.any():
        return np.zeros((H.out_channels, H.in_channels))
    return H.matrices[np.argmax(hit)]


def _merge(offsets: np.ndarray, mats: np.ndarray, dims: int, M: int, N: int, grid_hint=None) -> MultiFilter:
    if offsets.shape[0] == 0:
        return MultiFilter(np.zeros((0, dims), np.int64), np.zeros((0, M, N), mats.dtype), grid_hint)
    uniq, inverse = np.unique(offsets, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    merged = np.zeros((uniq.shape[0], M, N), dtype=mats.dtype)
    np.add.at(merged, inverse, mats)
    keep = np.any(merged != 0, axis=(1, 2))
    return MultiFilter(uniq[keep], merged[keep], grid_hint)


def canonicalize(H: MultiFilter) -> MultiFilter:
    """Merge duplicate offsets, drop exactly-zero matrices, sort offsets lexicographically."""
    return _merge(H.offsets, H.matrices, H.dims, H.out_channels, H.in_channels, H.grid_hint)


def adjoint(H: MultiFilter) -> MultiFilter:
    """Flipped and conjugate-transposed impulse response: taps ``(-k, H[k]^H)``."""
    mats = np.conj(np.transpose(H.matrices, (0, 2, 1)))
    return canonicalize(MultiFilter(-H.offsets, mats, H.grid_hint))


def compose(H2: MultiFilter, H1: MultiFilter) -> MultiFilter:
    """Filter of ``x -> H2 * (H1 * x)``: ``(H2 * H1)[k] = sum_m H2[m] H1[k - m]``."""
    if H2.in_channels != H1.out_channels:
        raise DimensionError(
            f"cannot compose {H2.in_channels}-input filter after {H1.out_channels}-output filter"
        )
    if H2.dims != H1.dims:
        raise DimensionError(f"filters live in different dimensions ({H2.dims} vs {H1.dims})")
    offs = (H2.offsets[:, None, :] + H1.offsets[None, :, :]).reshape(-1, H1.dims)
    prods = np.einsum("aij,bjk->abik", H2.matrices, H1.matrices).reshape(
        -1, H2.out_channels, H1.in_channels
    )
    return _merge(offs, prods, H1.dims, H2.out_channels, H1.in_channels,
                  H1.grid_hint or H2.grid_hint)


def compose_all(filters: Iterable[MultiFilter]) -> MultiFilter:
    """Fold :func:`compose` over filters given in application order."""
    it = iter(filters)
    try:
        acc = next(it)
    except StopIteration:
        raise ValueError("nothing to compose") from None
    for H in it:
        acc = compose(H, acc)
    return acc


def _use_direct(H: MultiFilter, grid: Grid, method: str) -> bool:
    if method == "direct":
        return True
    if method == "fft":
        return False
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    limit = DIRECT_THRESHOLD if DIRECT_THRESHOLD is not None else _config.direct_max()
    return H.num_taps * grid.K <= limit


def apply_array(H: MultiFilter, x: np.ndarray,
                method: Literal["auto", "direct", "fft"] = "auto") -> np.ndarray:
    """Array-level :func:`apply`; ``x`` has shape ``(N, *sizes)``."""
    if x.shape[0] != H.in_channels:
        raise DimensionError(f"filter expects {H.in_channels} channels, signal has {x.shape[0]}")
    sizes = x.shape[1:]
    if len(sizes) != H.dims:
        raise DimensionError(f"filter is {H.dims}-d, signal is {len(sizes)}-d")
    grid = Grid(sizes)
    if H.num_taps == 0:
        dtype = np.result_type(x.dtype, H.matrices.dtype)
        return np.zeros((H.out_channels,) + sizes, dtype=dtype)
    if _use_direct(H, grid, method):
        return _kernels.conv_direct(x, sizes, H.offsets, H.matrices)
    from .spectral import response_bins

    axes = tuple(range(1, len(sizes) + 1))
    xhat = np.fft.fftn(x, axes=axes).reshape(H.in_channels, grid.K)
    bins = response_bins(H, grid)
    yhat = np.einsum("kmn,nk->mk", bins, xhat).reshape((H.out_channels,) + sizes)
    y = np.fft.ifftn(yhat, axes=axes)
    if not (H.is_complex or np.iscomplexobj(x)):
        y = y.real
    return y


def apply(H: MultiFilter, x: MultiSignal,
          method: Literal["auto", "direct", "fft"] = "auto") -> MultiSignal:
    """Apply ``H`` to ``x`` with periodic wrap.

    ``method="auto"`` sums directly when ``taps * sites`` is at most
    :data:`DIRECT_THRESHOLD` (default ``PSVB_DIRECT_MAX``) and otherwise
    multiplies frequency responses bin by bin.
    """
    return MultiSignal(x.grid, apply_array(H, x.data, method))
