"""Slow reference implementations and random generators shared by the tests.

The oracles use plain Python loops and nothing from ``psvb`` beyond the data
containers, so they are independent of the code under test.
"""

import itertools
import math

import numpy as np

from psvb.builders import (
    FrameShift, GenShift, Householder, Mult, NToPN, OneToN, Patch, Projection, USVh,
    random_frame, random_orthogonal, random_unit_vector,
)
from psvb.multifilter import MultiFilter

MODULE_KINDS = ("patch", "mult", "one_to_n", "n_to_pn", "gen_shift", "frame_shift", "usv",
                "projection", "householder")


def conv_loops(offsets, mats, x):
    """``out[m][k] = sum_t sum_n mats[t][m][n] x[n][k - offsets[t]]`` by brute force."""
    offsets = np.asarray(offsets)
    mats = np.asarray(mats)
    N = x.shape[0]
    sizes = x.shape[1:]
    M = mats.shape[1]
    out = np.zeros((M,) + sizes, dtype=np.result_type(x.dtype, mats.dtype))
    for site in itertools.product(*[range(n) for n in sizes]):
        for t in range(len(offsets)):
            src = tuple((s - int(o)) % n for s, o, n in zip(site, offsets[t], sizes))
            for m in range(M):
                for n in range(N):
                    out[(m,) + site] += mats[t, m, n] * x[(n,) + src]
    return out


def response_sum(H: MultiFilter, omega):
    """``sum_t H[t] exp(-j <omega, k_t>)`` evaluated directly."""
    acc = np.zeros((H.out_channels, H.in_channels), dtype=complex)
    for off, mat in zip(H.offsets, H.matrices):
        acc += mat * np.exp(-1j * float(np.dot(omega, off)))
    return acc


def inner(x, y):
    """``sum x * conj(y)`` with an explicit loop."""
    total = 0j
    for a, b in zip(np.ravel(x), np.ravel(y)):
        total += a * np.conj(b)
    return total


def random_filter(rng, M, N, dims=1, taps=3, spread=3, complex_=False) -> MultiFilter:
    offs = rng.integers(-spread, spread + 1, size=(taps, dims))
    mats = rng.standard_normal((taps, M, N))
    if complex_:
        mats = mats + 1j * rng.standard_normal((taps, M, N))
    return MultiFilter(offs, mats)


def unit_shift(rng, dims):
    while True:
        k = rng.integers(-1, 2, size=dims)
        if k.any():
            return tuple(int(v) for v in k)


def random_module(kind, rng, dims=1, max_channels=16):
    """A random instance of one of the nine module kinds (channels <= ``max_channels``)."""
    def offs(count):
        return rng.integers(-2, 3, size=(count, dims))

    if kind == "patch":
        N = int(rng.integers(1, 4))
        M = int(rng.integers(1, max_channels // N + 1))
        return Patch(offs(M), N)
    if kind == "mult":
        N = int(rng.integers(1, max_channels + 1))
        M = int(rng.integers(N, max_channels + 1))
        return Mult(random_frame(M, N, rng), dims)
    if kind == "one_to_n":
        N = int(rng.integers(1, max_channels + 1))
        n0 = int(rng.integers(1, N + 1))
        return OneToN(random_orthogonal(N, rng)[:, :n0], offs(n0))
    if kind == "n_to_pn":
        N = int(rng.integers(1, 5))
        p = int(rng.integers(1, max_channels // N + 1))
        return NToPN(random_orthogonal(p * N, rng), offs(p), N)
    if kind == "gen_shift":
        N = int(rng.integers(1, max_channels + 1))
        return GenShift(offs(N))
    if kind == "frame_shift":
        N = int(rng.integers(1, max_channels + 1))
        M = int(rng.integers(N, max_channels + 1))
        return FrameShift(random_frame(M, N, rng), offs(N))
    if kind == "usv":
        N = int(rng.integers(1, max_channels + 1))
        return USVh(random_orthogonal(N, rng), offs(N), random_orthogonal(N, rng))
    if kind == "projection":
        N = int(rng.integers(1, max_channels + 1))
        k = int(rng.integers(0, N + 1))
        return Projection(random_orthogonal(N, rng)[:, :k], unit_shift(rng, dims), N)
    if kind == "householder":
        N = int(rng.integers(1, max_channels + 1))
        return Householder(random_unit_vector(N, rng), unit_shift(rng, dims))
    raise ValueError(kind)


def random_chain_modules(rng, length, channels, dims):
    """Random square modules on ``channels`` channels (chainable in any order)."""
    square = ("usv", "gen_shift", "projection", "householder")
    mods = []
    for _ in range(length):
        kind = square[int(rng.integers(len(square)))]
        mods.append(_square_module(kind, rng, dims, channels))
    return mods


def _square_module(kind, rng, dims, N):
    if kind == "usv":
        return USVh(random_orthogonal(N, rng), rng.integers(-2, 3, size=(N, dims)), random_orthogonal(N, rng))
    if kind == "gen_shift":
        return GenShift(rng.integers(-2, 3, size=(N, dims)))
    if kind == "projection":
        k = int(rng.integers(0, N + 1))
        return Projection(random_orthogonal(N, rng)[:, :k], unit_shift(rng, dims), N)
    return Householder(random_unit_vector(N, rng), unit_shift(rng, dims))


def random_grid_sizes(rng, dims, low=3, high=32):
    if dims == 1:
        return (int(rng.integers(low, high + 1)),)
    side = int(rng.integers(low, high + 1))
    return (side, int(rng.integers(low, high + 1)))


def relative(a, b):
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)


def dct_closed_form(n):
    return np.array([[math.sqrt((1 if k == 0 else 2) / n) * math.cos(math.pi * (i + 0.5) * k / n)
                      for k in range(n)] for i in range(n)])
