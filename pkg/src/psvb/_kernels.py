"""Hot loops, each with a numba-compiled and a pure-numpy implementation.

The public names (:func:`conv_direct`, :func:`spline_eval`,
:func:`soft_threshold`) dispatch on :data:`BACKEND`, which is read from
``PSVB_KERNELS`` at import time. Both implementations stay importable under
explicit ``*_numpy`` / ``*_numba`` names so they can be compared directly.

Compiled kernels never reduce across threads: each output site is written by
exactly one worker, so results do not depend on ``PSVB_THREADS``.
"""

import warnings

import numpy as np

from . import _config

try:
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    HAS_NUMBA = False


class PerformanceWarning(UserWarning):
    pass


def _select_backend() -> str:
    choice = _config.kernel_backend()
    if choice == "numba" and not HAS_NUMBA:
        warnings.warn("numba is not available; using the numpy kernels", PerformanceWarning)
        return "numpy"
    return choice


BACKEND = _select_backend()

if HAS_NUMBA:
    import os

    if "NUMBA_THREADING_LAYER" not in os.environ and hasattr(numba.config, "THREADING_LAYER_PRIORITY"):
        # the installed TBB is often too old and numba warns while probing it
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    _cap = _config.thread_cap()
    if _cap is not None:
        numba.set_num_threads(min(_cap, numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# direct periodic multichannel convolution
# ---------------------------------------------------------------------------


def conv_direct_numpy(x, sizes, offsets, mats):
    """out[m, k] = sum_t sum_n mats[t, m, n] * x[n, k - offsets[t]] (periodic).

    ``x`` has shape ``(N, *sizes)``; the result has shape ``(M, *sizes)``.
    """
    T, M, N = mats.shape
    axes = tuple(range(1, len(sizes) + 1))
    out = np.zeros((M,) + tuple(sizes), dtype=np.result_type(x.dtype, mats.dtype))
    for t in range(T):
        rolled = np.roll(x, shift=tuple(int(o) for o in offsets[t]), axis=axes)
        out += np.tensordot(mats[t], rolled, axes=1)
    return out


if HAS_NUMBA:

    @njit(parallel=True, cache=True)
    def _conv_direct_rows(x, lead, table, shifts, mats, out):
        # one parallel task per output row (all axes but the last); along the
        # last axis a periodic shift is two contiguous runs, so no div/mod
        T, M, N = mats.shape
        rows = lead.shape[0]
        d1 = lead.shape[1]
        n = out.shape[1] // rows
        for r in prange(rows):
            dst = r * n
            for t in range(T):
                src_row = 0
                for ax in range(d1):
                    src_row += table[t, ax, lead[r, ax]]
                s = shifts[t]
                for m in range(M):
                    for j in range(N):
                        w = mats[t, m, j]
                        for c in range(s, n):
                            out[m, dst + c] += w * x[j, src_row + c - s]
                        for c in range(s):
                            out[m, dst + c] += w * x[j, src_row + c - s + n]

    def _row_tables(sizes, offsets):
        """Leading-axis coordinates per row and per-tap source-row offsets."""
        sizes = np.asarray(sizes, dtype=np.int64)
        d = sizes.size
        n = int(sizes[-1])
        strides = np.ones(d, dtype=np.int64)
        for ax in range(d - 2, -1, -1):
            strides[ax] = strides[ax + 1] * sizes[ax + 1]
        T = offsets.shape[0]
        width = int(sizes[:-1].max()) if d > 1 else 1
        table = np.zeros((T, max(d - 1, 1), width), dtype=np.int64)
        for ax in range(d - 1):
            c = np.arange(sizes[ax])
            table[:, ax, :sizes[ax]] = ((c[None, :] - offsets[:, ax:ax + 1]) % sizes[ax]) * strides[ax]
        if d > 1:
            lead = np.indices(tuple(int(v) for v in sizes[:-1])).reshape(d - 1, -1).T
        else:
            lead = np.zeros((1, 0), dtype=np.int64)
        shifts = np.mod(offsets[:, -1], n)
        return np.ascontiguousarray(lead, dtype=np.int64), table, np.ascontiguousarray(shifts, dtype=np.int64)

    def conv_direct_numba(x, sizes, offsets, mats):
        T, M, N = mats.shape
        K = int(np.prod(np.asarray(sizes, dtype=np.int64)))
        out = np.zeros((M, K), dtype=np.result_type(x.dtype, mats.dtype))
        flat = np.ascontiguousarray(x.reshape(N, K)).astype(out.dtype, copy=False)
        lead, table, shifts = _row_tables(sizes, np.asarray(offsets, dtype=np.int64).reshape(T, -1))
        _conv_direct_rows(flat, lead, table, shifts, np.ascontiguousarray(mats).astype(out.dtype, copy=False), out)
        return out.reshape((M,) + tuple(sizes))

else:  # pragma: no cover
    conv_direct_numba = None


def conv_direct(x, sizes, offsets, mats):
    if BACKEND == "numba":
        return conv_direct_numba(x, sizes, offsets, mats)
    return conv_direct_numpy(x, sizes, offsets, mats)


# ---------------------------------------------------------------------------
# uniform-knot linear spline evaluation with linear extrapolation
# ---------------------------------------------------------------------------


def spline_eval_numpy(t, lo, step, values):
    t = np.asarray(t, dtype=np.float64)
    nseg = values.shape[0] - 1
    slopes = (values[1:] - values[:-1]) / step
    idx = np.floor((t - lo) / step).astype(np.int64)
    idx = np.clip(idx, 0, nseg - 1)
    return values[idx] + slopes[idx] * (t - (lo + idx * step))


if HAS_NUMBA:

    @njit(parallel=True, cache=True)
    def _spline_eval_flat(t, lo, step, values, out):
        nseg = values.shape[0] - 1
        for i in prange(t.shape[0]):
            ti = t[i]
            j = int(np.floor((ti - lo) / step))
            if j < 0:
                j = 0
            elif j > nseg - 1:
                j = nseg - 1
            slope = (values[j + 1] - values[j]) / step
            out[i] = values[j] + slope * (ti - (lo + j * step))

    def spline_eval_numba(t, lo, step, values):
        t = np.asarray(t, dtype=np.float64)
        flat = np.ascontiguousarray(t).ravel()
        out = np.empty_like(flat)
        _spline_eval_flat(flat, float(lo), float(step), np.ascontiguousarray(values, dtype=np.float64), out)
        return out.reshape(t.shape)

else:  # pragma: no cover
    spline_eval_numba = None


def spline_eval(t, lo, step, values):
    if BACKEND == "numba":
        return spline_eval_numba(t, lo, step, values)
    return spline_eval_numpy(t, lo, step, values)


# ---------------------------------------------------------------------------
# soft thresholding
# ---------------------------------------------------------------------------


def soft_threshold_numpy(v, tau):
    v = np.asarray(v)
    if np.iscomplexobj(v):
        mag = np.abs(v)
        scale = np.where(mag > tau, 1.0 - tau / np.where(mag > 0, mag, 1.0), 0.0)
        return v * scale
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


if HAS_NUMBA:

    @njit(parallel=True, cache=True)
    def _soft_threshold_flat(v, tau, out):
        for i in prange(v.shape[0]):
            a = v[i]
            if a > tau:
                out[i] = a - tau
            elif a < -tau:
                out[i] = a + tau
            else:
                out[i] = 0.0

    def soft_threshold_numba(v, tau):
        v = np.asarray(v)
        if np.iscomplexobj(v):
            return soft_threshold_numpy(v, tau)
        flat = np.ascontiguousarray(v, dtype=np.float64).ravel()
        out = np.empty_like(flat)
        _soft_threshold_flat(flat, float(tau), out)
        return out.reshape(v.shape)

else:  # pragma: no cover
    soft_threshold_numba = None


def soft_threshold(v, tau):
    if BACKEND == "numba":
        return soft_threshold_numba(v, tau)
    return soft_threshold_numpy(v, tau)
