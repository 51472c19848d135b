"""Elementary parametric Parseval filters and their chaining.

Every ``build_*`` function returns a canonical :class:`MultiFilter` whose
Parseval property holds by construction (orthonormal columns plus shifts).
The module classes (:class:`Patch`, :class:`Householder`, ...) carry the same
parameters as data so that chains can be described, stored and compiled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import ClassVar, Sequence

import numpy as np

from .multifilter import MultiFilter, adjoint, canonicalize, compose
from .signal import DimensionError

FRAME_TOL = 1e-9
UNIT_TOL = 1e-12


# ---------------------------------------------------------------------------
# parameter helpers
# ---------------------------------------------------------------------------


def random_orthogonal(n: int, seed=None) -> np.ndarray:
    """Seeded Haar-distributed orthogonal ``n x n`` matrix.

    QR of a Gaussian matrix, with the columns signed so that ``R`` has a
    positive diagonal; this makes the factorisation (and the output) unique.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if n == 1:
        # the only choices are +-1; always return +1
        return np.ones((1, 1))
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def random_frame(m: int, n: int, seed=None) -> np.ndarray:
    """``m x n`` matrix with orthonormal columns (a 1-tight frame of R^n), ``m >= n``."""
    if m < n:
        raise ValueError("a tight frame needs at least as many rows as columns")
    return random_orthogonal(m, seed)[:, :n]


def random_unit_vector(n: int, seed=None) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(n)
    return v / np.linalg.norm(v)


def frame_defect(A) -> float:
    """``||A^H A - I||_F``."""
    A = np.asarray(A)
    return float(np.linalg.norm(np.conj(A.T) @ A - np.eye(A.shape[1])))


def _check_frame(A, what: str) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] < A.shape[1]:
        raise DimensionError(f"{what} has more columns than rows: {A.shape}")
    defect = frame_defect(A)
    if defect > FRAME_TOL:
        raise ValueError(f"{what} does not have orthonormal columns (defect {defect:.3e})")
    return A


def _check_square(U, what: str) -> np.ndarray:
    U = _check_frame(U, what)
    if U.shape[0] != U.shape[1]:
        raise DimensionError(f"{what} must be square, got {U.shape}")
    return U


def as_offsets(kset, dims: int | None = None) -> np.ndarray:
    """Normalise a list of offsets to an ``(M, d)`` integer array.

    Plain integers are read as 1-d offsets unless ``dims`` says otherwise.
    """
    arr = np.asarray(kset, dtype=np.int64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if dims is not None and dims > 1 and arr.size == dims:
            arr = arr.reshape(1, dims)
        else:
            arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"offsets must be a list of d-vectors, got shape {arr.shape}")
    if dims is not None and arr.shape[1] != dims:
        raise DimensionError(f"expected {dims}-d offsets, got {arr.shape[1]}-d")
    return arr


def centered_offsets(count: int, dims: int = 1) -> np.ndarray:
    """Default contiguous block centered on the origin.

    A perfect ``d``-th power gives a hypercube (9 in 2-d -> the 3x3
    neighbourhood); otherwise a centered line along the last axis.
    ``count=3, dims=1`` gives ``{-1, 0, 1}``.
    """
    if count < 1:
        raise ValueError("count must be positive")
    side = round(count ** (1.0 / dims))
    if side**dims == count:
        axis = np.arange(side) - (side - 1) // 2
        mesh = np.meshgrid(*([axis] * dims), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64)
    line = np.arange(count) - (count - 1) // 2
    out = np.zeros((count, dims), dtype=np.int64)
    out[:, -1] = line
    return out


def _unit_shift(k1, dims: int | None = None) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k1, dtype=np.int64))
    if dims is not None and k.size != dims:
        raise DimensionError(f"unit shift must have {dims} components")
    if not k.any():
        raise ValueError("the elementary shift k1 must be nonzero")
    if np.any(np.abs(k) > 1):
        raise ValueError(f"k1 must lie in [-1, 1]^d, got {k.tolist()}")
    return k


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_patch(kset, channels: int = 1) -> MultiFilter:
    """Normalised patch operator, ``N -> M*N``.

    Output block ``m`` is ``x[. - k_m] / sqrt(M)``; its adjoint is the
    recomposition ``y -> sum_m y_m[. + k_m] / sqrt(M)``.
    """
    offs = as_offsets(kset)
    M = offs.shape[0]
    if M == 0:
        raise ValueError("patch needs at least one offset")
    mats = np.zeros((M, M * channels, channels))
    for m in range(M):
        mats[m, m * channels:(m + 1) * channels, :] = np.eye(channels) / math.sqrt(M)
    return canonicalize(MultiFilter(offs, mats))


def build_mult(U, dims: int = 1) -> MultiFilter:
    """Pointwise multiplication by an orthogonal matrix or a 1-tight frame."""
    U = _check_frame(U, "U")
    return canonicalize(MultiFilter(np.zeros((1, dims), np.int64), U[None]))


def build_one_to_N(U, kset=None, dims: int = 1) -> MultiFilter:
    """1-to-N module ``h = sum_n u_n delta[. - k_n] / sqrt(N0)``.

    ``U`` is ``N x N0`` with orthonormal columns (``N0 = N`` for the full
    module, ``N0 < N`` for the truncated variant); ``kset`` holds ``N0``
    offsets, by default a centered block.
    """
    U = _check_frame(U, "U")
    n0 = U.shape[1]
    offs = centered_offsets(n0, dims) if kset is None else as_offsets(kset)
    if offs.shape[0] != n0:
        raise DimensionError(f"U has {n0} columns but {offs.shape[0]} offsets were given")
    mats = (U.T / math.sqrt(n0))[:, :, None]
    return canonicalize(MultiFilter(offs, mats))


def build_N_to_pN(U, kset, channels: int) -> MultiFilter:
    """N-to-pN module ``H = sum_i U_i delta[. - k_i] / sqrt(p)``.

    ``U`` is a ``pN x pN`` orthogonal matrix partitioned into ``p`` column
    blocks ``U_i`` of width ``N``, block ``i`` paired with offset ``k_i``.
    """
    U = _check_square(U, "U")
    offs = as_offsets(kset)
    p = offs.shape[0]
    if U.shape[0] != p * channels:
        raise DimensionError(f"U is {U.shape[0]}x{U.shape[0]}, expected {p * channels} for p={p}, N={channels}")
    mats = np.stack([U[:, i * channels:(i + 1) * channels] for i in range(p)]) / math.sqrt(p)
    return canonicalize(MultiFilter(offs, mats))


def build_gen_shift(K) -> MultiFilter:
    """Generalised shift ``diag(delta[. - k_1], ..., delta[. - k_N])``."""
    offs = as_offsets(K)
    N = offs.shape[0]
    mats = np.zeros((N, N, N))
    mats[np.arange(N), np.arange(N), np.arange(N)] = 1.0
    return canonicalize(MultiFilter(offs, mats))


def build_frame_shift(A, K) -> MultiFilter:
    """Tight frame after a generalised shift: taps ``a_n e_n^T`` at ``k_n``."""
    A = _check_frame(A, "A")
    offs = as_offsets(K)
    M, N = A.shape
    if offs.shape[0] != N:
        raise DimensionError(f"A has {N} columns but {offs.shape[0]} shifts were given")
    mats = np.zeros((N, M, N))
    for n in range(N):
        mats[n, :, n] = A[:, n]
    return canonicalize(MultiFilter(offs, mats))


def build_usv(U, K, V) -> MultiFilter:
    """``U S^K V^H``: taps ``u_n v_n^H`` at ``k_n`` (offsets may repeat)."""
    U = _check_square(U, "U")
    V = _check_square(V, "V")
    offs = as_offsets(K)
    N = U.shape[0]
    if V.shape[0] != N or offs.shape[0] != N:
        raise DimensionError("U, V and K must all describe N channels")
    mats = np.einsum("in,jn->nij", U, np.conj(V))
    return canonicalize(MultiFilter(offs, mats))


def build_projection(range_basis, k1, channels: int | None = None) -> MultiFilter:
    """PROJ-k element ``(I - P) delta + P delta[. - k1]`` with ``P = B B^T``.

    ``range_basis`` is ``N x k`` with orthonormal columns; pass ``channels``
    when ``k = 0`` and the basis is empty.
    """
    B = np.asarray(range_basis, dtype=np.float64)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if B.size == 0:
        if channels is None and B.shape[0] == 0:
            raise ValueError("an empty basis needs an explicit channel count")
        N = channels if channels is not None else B.shape[0]
        B = np.zeros((N, 0))
    N, k = B.shape
    if channels is not None and channels != N:
        raise DimensionError(f"basis has {N} rows, channels={channels}")
    defect = frame_defect(B) if k else 0.0
    if defect > UNIT_TOL * max(1, k):
        raise ValueError(f"range basis is not orthonormal (defect {defect:.3e})")
    k1 = _unit_shift(k1)
    origin = np.zeros((1, k1.size), np.int64)
    if k == 0:
        return MultiFilter(origin, np.eye(N)[None])
    if k == N:
        return MultiFilter(k1[None], np.eye(N)[None])
    P = B @ B.T
    return canonicalize(MultiFilter(np.concatenate([origin, k1[None]]), np.stack([np.eye(N) - P, P])))


def build_householder(u, k1) -> MultiFilter:
    """PROJ-1 element ``(I - u u^T) delta + u u^T delta[. - k1]``, ``||u|| = 1``."""
    u = np.asarray(u, dtype=np.float64).ravel()
    if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise ValueError(f"u must have unit norm, got {np.linalg.norm(u):.15f}")
    return build_projection(u.reshape(-1, 1), k1)


def projection_as_usv(range_basis, k1) -> MultiFilter:
    """The same element written as ``U S^{K1} U^T`` with ``U`` completing the basis."""
    B = np.asarray(range_basis, dtype=np.float64)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    N, k = B.shape
    k1 = _unit_shift(k1)
    q, _ = np.linalg.qr(np.concatenate([B, np.eye(N)], axis=1))
    # keep the given basis verbatim, complete with the orthogonal complement
    U = np.concatenate([B, q[:, k:N]], axis=1)
    K = np.zeros((N, k1.size), np.int64)
    K[:k] = k1
    return build_usv(U, K, U)


# ---------------------------------------------------------------------------
# factorisation conversion
# ---------------------------------------------------------------------------


def w_to_u(W_list: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Orthogonal factors of the W-form -> conjugated factors of the U-form.

    ``U_i^H = W_i W_{i-1} ... W_1`` for ``i = 1, ..., len(W_list)``.
    """
    out, acc = [], None
    for W in W_list:
        W = _check_square(W, "W")
        acc = W if acc is None else W @ acc
        out.append(np.conj(acc.T))
    return out


def u_to_w(U_list: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Inverse of :func:`w_to_u`: ``W_1 = U_1^H``, ``W_i = U_i^H U_{i-1}``."""
    out, prev = [], None
    for U in U_list:
        U = _check_square(U, "U")
        out.append(np.conj(U.T) if prev is None else np.conj(U.T) @ prev)
        prev = U
    return out


def compile_w_form(W_list: Sequence[np.ndarray], K_list: Sequence) -> MultiFilter:
    """``W_{M+1} S^{K_M} W_M ... W_2 S^{K_1} W_1``."""
    if len(W_list) != len(K_list) + 1:
        raise DimensionError("need one more orthogonal factor than shift stage")
    dims = as_offsets(K_list[0]).shape[1] if K_list else 1
    H = build_mult(W_list[0], dims)
    for W, K in zip(W_list[1:], K_list):
        H = compose(build_mult(W, dims), compose(build_gen_shift(K), H))
    return H


def compile_u_form(U_list: Sequence[np.ndarray], K_list: Sequence) -> MultiFilter:
    """``U_{M+1}^H (U_M S^{K_M} U_M^H) ... (U_1 S^{K_1} U_1^H)``."""
    if len(U_list) != len(K_list) + 1:
        raise DimensionError("need one more orthogonal factor than shift stage")
    dims = as_offsets(K_list[0]).shape[1] if K_list else 1
    N = np.asarray(U_list[0]).shape[0]
    H = MultiFilter.identity(N, dims)
    for U, K in zip(U_list[:-1], K_list):
        H = compose(build_usv(U, K, U), H)
    return compose(build_mult(np.conj(np.asarray(U_list[-1]).T), dims), H)


def convert_factorizations(W_list, K_list):
    """Convert a W-form chain to the equivalent U-form factors.

    Returns the U matrices; compiling them with :func:`compile_u_form` gives the
    same taps as :func:`compile_w_form` on the inputs.
    """
    if len(W_list) != len(K_list) + 1:
        raise DimensionError("need one more orthogonal factor than shift stage")
    return w_to_u(W_list)


# ---------------------------------------------------------------------------
# module descriptions and chains
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParsevalModule:
    """Base class; subclasses hold the parameters of one elementary module."""

    kind: ClassVar[str] = ""

    @property
    def in_channels(self) -> int:
        raise NotImplementedError

    @property
    def out_channels(self) -> int:
        raise NotImplementedError

    def compile(self) -> MultiFilter:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Patch(ParsevalModule):
    offsets: np.ndarray
    channels: int = 1
    kind: ClassVar[str] = "patch"

    in_channels = property(lambda self: self.channels)
    out_channels = property(lambda self: len(self.offsets) * self.channels)

    def compile(self):
        return build_patch(self.offsets, self.channels)


@dataclass(frozen=True, eq=False)
class Mult(ParsevalModule):
    U: np.ndarray
    dims: int = 1
    kind: ClassVar[str] = "mult"

    in_channels = property(lambda self: np.shape(self.U)[1])
    out_channels = property(lambda self: np.shape(self.U)[0])

    def compile(self):
        return build_mult(self.U, self.dims)


@dataclass(frozen=True, eq=False)
class OneToN(ParsevalModule):
    U: np.ndarray
    offsets: np.ndarray
    kind: ClassVar[str] = "one_to_n"

    in_channels = property(lambda self: 1)
    out_channels = property(lambda self: np.shape(self.U)[0])

    def compile(self):
        return build_one_to_N(self.U, self.offsets)


@dataclass(frozen=True, eq=False)
class NToPN(ParsevalModule):
    U: np.ndarray
    offsets: np.ndarray
    channels: int
    kind: ClassVar[str] = "n_to_pn"

    in_channels = property(lambda self: self.channels)
    out_channels = property(lambda self: np.shape(self.U)[0])

    def compile(self):
        return build_N_to_pN(self.U, self.offsets, self.channels)


@dataclass(frozen=True, eq=False)
class GenShift(ParsevalModule):
    shifts: np.ndarray
    kind: ClassVar[str] = "gen_shift"

    in_channels = property(lambda self: len(self.shifts))
    out_channels = property(lambda self: len(self.shifts))

    def compile(self):
        return build_gen_shift(self.shifts)


@dataclass(frozen=True, eq=False)
class FrameShift(ParsevalModule):
    A: np.ndarray
    shifts: np.ndarray
    kind: ClassVar[str] = "frame_shift"

    in_channels = property(lambda self: np.shape(self.A)[1])
    out_channels = property(lambda self: np.shape(self.A)[0])

    def compile(self):
        return build_frame_shift(self.A, self.shifts)


@dataclass(frozen=True, eq=False)
class USVh(ParsevalModule):
    U: np.ndarray
    shifts: np.ndarray
    V: np.ndarray
    kind: ClassVar[str] = "usv"

    in_channels = property(lambda self: np.shape(self.V)[0])
    out_channels = property(lambda self: np.shape(self.U)[0])

    def compile(self):
        return build_usv(self.U, self.shifts, self.V)


@dataclass(frozen=True, eq=False)
class Projection(ParsevalModule):
    basis: np.ndarray
    k1: tuple
    channels: int | None = None
    kind: ClassVar[str] = "projection"

    in_channels = property(lambda self: self.channels if self.channels is not None else np.shape(self.basis)[0])
    out_channels = property(lambda self: self.in_channels)

    def compile(self):
        return build_projection(self.basis, self.k1, self.channels)


@dataclass(frozen=True, eq=False)
class Householder(ParsevalModule):
    u: np.ndarray
    k1: tuple
    kind: ClassVar[str] = "householder"

    in_channels = property(lambda self: np.size(self.u))
    out_channels = property(lambda self: np.size(self.u))

    def compile(self):
        return build_householder(self.u, self.k1)


@dataclass(frozen=True, eq=False)
class Scaled(ParsevalModule):
    """A module multiplied by a constant; only Parseval for ``factor = +-1``.

    Exists so that verification can be exercised on deliberately broken chains.
    """

    inner: ParsevalModule
    factor: float
    kind: ClassVar[str] = "scaled"

    in_channels = property(lambda self: self.inner.in_channels)
    out_channels = property(lambda self: self.inner.out_channels)

    def compile(self):
        return self.inner.compile().scaled(self.factor)


@dataclass(frozen=True)
class ModuleChain:
    modules: tuple = field(default_factory=tuple)

    def __post_init__(self):
        mods = tuple(self.modules)
        object.__setattr__(self, "modules", mods)
        if not mods:
            raise ValueError("a chain needs at least one module")
        for i, (a, b) in enumerate(zip(mods, mods[1:])):
            if a.out_channels != b.in_channels:
                raise DimensionError(
                    f"module {i} outputs {a.out_channels} channels, module {i + 1} expects {b.in_channels}"
                )
            if b.out_channels < b.in_channels:
                raise DimensionError(f"module {i + 1} reduces the channel count")
        if mods[0].out_channels < mods[0].in_channels:
            raise DimensionError("module 0 reduces the channel count")

    @property
    def in_channels(self) -> int:
        return self.modules[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.modules[-1].out_channels

    def __len__(self):
        return len(self.modules)


def chain_compile(chain: ModuleChain | Sequence[ParsevalModule]) -> MultiFilter:
    """Impulse response ``H_I * ... * H_1`` of the chained modules."""
    if not isinstance(chain, ModuleChain):
        chain = ModuleChain(tuple(chain))
    compiled = [m.compile() for m in chain.modules]
    return reduce(lambda acc, H: compose(H, acc), compiled[1:], compiled[0])


def chain_adjoint(chain: ModuleChain | Sequence[ParsevalModule]) -> MultiFilter:
    """Flow-graph transposition: adjoints of the modules folded in reverse order."""
    if not isinstance(chain, ModuleChain):
        chain = ModuleChain(tuple(chain))
    adj = [adjoint(m.compile()) for m in reversed(chain.modules)]
    return reduce(lambda acc, H: compose(H, acc), adj[1:], adj[0])


def bcop_chain(channels: int, length: int, dims: int = 2, seed=None,
               shifts: Sequence | None = None, rank: int = 1) -> ModuleChain:
    """Chain of random PROJ-``rank`` elements cycling through unit shifts.

    By default the shifts alternate over the canonical unit offsets
    ``e_1, ..., e_d``; ``shifts`` overrides the cycle.
    """
    rng = np.random.default_rng(seed)
    if shifts is None:
        shifts = [tuple(int(i == j) for j in range(dims)) for i in range(dims)]
    mods = []
    for i in range(length):
        k1 = tuple(shifts[i % len(shifts)])
        Q = random_orthogonal(channels, rng)
        if rank == 1:
            mods.append(Householder(Q[:, 0], k1))
        else:
            mods.append(Projection(Q[:, :rank], k1))
    return ModuleChain(tuple(mods))
