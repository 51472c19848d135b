"""1-Lipschitz building blocks: activations, normalised filters, CNN and frame denoisers.

Only forward evaluation and certification live here. Weights come from files
or from the builders; nothing is trained.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .builders import random_orthogonal, build_one_to_N, chain_compile, bcop_chain
from .multifilter import MultiFilter, adjoint, apply_array, canonicalize, compose
from .signal import DimensionError, Grid, MultiSignal
from .spectral import is_parseval, operator_norm

LIP_TOL = 1e-9


class CertificationError(ValueError):
    """A network layer exceeds its Lipschitz budget."""


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: MultiSignal) -> MultiSignal:
    if x.is_complex:
        raise TypeError("relu needs a real signal")
    return x.with_data(np.maximum(x.data, 0.0))


def soft_threshold(x: MultiSignal, tau: float) -> MultiSignal:
    return x.with_data(_kernels.soft_threshold(x.data, tau))


@dataclass(frozen=True, eq=False)
class SplineActivation:
    """Continuous piecewise-linear function on uniform knots over ``[lo, hi]``.

    Outside the knot range it continues linearly with the slope of the
    boundary segment.
    """

    values: np.ndarray
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel().copy()
        if v.size < 2:
            raise ValueError("a spline needs at least two knots")
        if not self.hi > self.lo:
            raise ValueError("knot range must satisfy lo < hi")
        if not np.all(np.isfinite(v)):
            raise ValueError("spline values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))

    @classmethod
    def from_function(cls, fn, num_knots: int = 21, lo: float = -1.0, hi: float = 1.0):
        return cls(fn(np.linspace(lo, hi, num_knots)), lo, hi)

    @classmethod
    def identity(cls, num_knots: int = 21, lo: float = -1.0, hi: float = 1.0):
        return cls.from_function(lambda t: t, num_knots, lo, hi)

    @classmethod
    def soft_threshold(cls, tau: float, num_knots: int = 21, lo: float = -1.0, hi: float = 1.0):
        return cls.from_function(lambda t: np.sign(t) * np.maximum(np.abs(t) - tau, 0.0),
                                 num_knots, lo, hi)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.values.size - 1)

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.values.size)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / self.step

    def __call__(self, t):
        return spline_eval(self, t)


def spline_eval(s: SplineActivation, t):
    """Evaluate ``s`` at a scalar or array ``t``."""
    out = _kernels.spline_eval(t, s.lo, s.step, s.values)
    return float(out) if np.ndim(out) == 0 else out


def spline_lipschitz(s: SplineActivation) -> float:
    """Largest absolute slope; the extrapolation slopes are the boundary ones."""
    return float(np.max(np.abs(s.slopes)))


def project_unit_lipschitz(s: SplineActivation) -> SplineActivation:
    """Clip slopes to ``[-1, 1]`` and rebuild values from the leftmost knot value."""
    slopes = s.slopes
    if np.all(np.abs(slopes) <= 1.0 + 1e-12):
        return s
    clipped = np.clip(slopes, -1.0, 1.0)
    values = s.values[0] + np.concatenate([[0.0], np.cumsum(clipped * s.step)])
    return SplineActivation(values, s.lo, s.hi)


@dataclass(frozen=True, eq=False)
class Activation:
    """Pointwise nonlinear layer: ``relu``, ``identity`` or one spline per channel."""

    kind: str = "relu"
    splines: tuple = ()

    def __post_init__(self):
        if self.kind not in ("relu", "spline", "identity"):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        object.__setattr__(self, "splines", tuple(self.splines))
        if self.kind == "spline" and not self.splines:
            raise ValueError("a spline layer needs one spline per channel")

    def apply_array(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "identity":
            return x
        if len(self.splines) != x.shape[0]:
            raise DimensionError(f"{len(self.splines)} splines for {x.shape[0]} channels")
        return np.stack([spline_eval(s, x[n]) for n, s in enumerate(self.splines)])

    def __call__(self, x: MultiSignal) -> MultiSignal:
        return x.with_data(self.apply_array(x.data))

    def lipschitz(self) -> float:
        return nonlinear_layer_lipschitz(self.kind, self.splines)


def apply_splines(x: MultiSignal, splines: Sequence[SplineActivation]) -> MultiSignal:
    """Per-channel spline activation (channel ``n`` uses ``splines[n]``)."""
    return Activation("spline", tuple(splines))(x)


def nonlinear_layer_lipschitz(kind: str, splines: Sequence[SplineActivation] = ()) -> float:
    """Exact Lipschitz constant of a pointwise layer: the largest channel constant."""
    if kind in ("relu", "identity"):
        return 1.0
    if kind == "spline":
        return max(spline_lipschitz(s) for s in splines)
    raise ValueError(f"unknown activation kind {kind!r}")


def worst_case_pair(layer: Activation, grid: Grid, channels: int | None = None, site=None):
    """Two signals differing at one site and one channel that attain the layer constant.

    The channel and segment with the steepest slope are chosen; the values sit
    at that segment's end knots, where the activation is exactly linear.
    """
    if layer.kind == "spline":
        channels = len(layer.splines) if channels is None else channels
        consts = [spline_lipschitz(s) for s in layer.splines]
        n0 = int(np.argmax(consts))
        s = layer.splines[n0]
        j = int(np.argmax(np.abs(s.slopes)))
        a, b = s.knots[j], s.knots[j + 1]
    else:
        channels = 1 if channels is None else channels
        n0, a, b = 0, 0.0, 1.0
    site = (0,) * grid.dims if site is None else tuple(site)
    x = np.zeros((channels,) + grid.sizes)
    y = np.zeros((channels,) + grid.sizes)
    x[(n0,) + site] = a
    y[(n0,) + site] = b
    return MultiSignal(grid, x), MultiSignal(grid, y)


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


def spectral_normalize(H: MultiFilter, grid: Grid) -> MultiFilter:
    """``H / ||T_H||`` with the norm taken exactly on ``grid``."""
    nrm = operator_norm(H, grid)
    if nrm == 0.0:
        raise ValueError("cannot normalise the zero filter")
    return H.scaled(1.0 / nrm)


# ---------------------------------------------------------------------------
# CNN denoiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    filter_norms: tuple
    activation_constants: tuple
    tol: float

    @property
    def bound(self) -> float:
        """Product of all layer constants: an upper bound on Lip(R)."""
        return float(np.prod(self.filter_norms) * np.prod(self.activation_constants or (1.0,)))

    @property
    def ok(self) -> bool:
        return all(v <= 1.0 + self.tol for v in self.filter_norms + self.activation_constants)

    def lines(self) -> list[str]:
        out = [f"filter_{i}_norm={v:.15f}" for i, v in enumerate(self.filter_norms)]
        out += [f"activation_{i}_lipschitz={v:.15f}" for i, v in enumerate(self.activation_constants)]
        out.append(f"lipschitz_bound={self.bound:.15f}")
        return out


@dataclass(frozen=True, eq=False)
class CnnDenoiser:
    """``R = T_{H_L} o sigma_L o ... o sigma_2 o T_{H_1}``, channel plan ``1 -> N -> ... -> N -> 1``.

    ``biases[k]`` (length = output channels of filter ``k``) is added right
    after filter ``k``; biases do not change Lipschitz constants.
    """

    filters: tuple
    activations: tuple
    biases: tuple | None = None

    def __post_init__(self):
        filters = tuple(self.filters)
        acts = tuple(self.activations)
        object.__setattr__(self, "filters", filters)
        object.__setattr__(self, "activations", acts)
        if not filters:
            raise ValueError("a network needs at least one filter")
        if len(acts) != len(filters) - 1:
            raise DimensionError(f"{len(filters)} filters need {len(filters) - 1} activations")
        if filters[0].in_channels != 1 or filters[-1].out_channels != 1:
            raise DimensionError("first filter must take 1 channel and last must output 1")
        width = filters[0].out_channels
        for i, H in enumerate(filters[1:-1], start=1):
            if H.in_channels != width or H.out_channels != width:
                raise DimensionError(f"filter {i} is {H.in_channels}->{H.out_channels}, expected {width}->{width}")
        if len(filters) > 1 and filters[-1].in_channels != width:
            raise DimensionError(f"last filter expects {filters[-1].in_channels} channels, plan has {width}")
        for i, a in enumerate(acts):
            if a.kind == "spline" and len(a.splines) != width:
                raise DimensionError(f"activation {i} has {len(a.splines)} splines for {width} channels")
        if self.biases is not None:
            biases = tuple(None if b is None else np.asarray(b, dtype=np.float64).ravel() for b in self.biases)
            if len(biases) != len(filters):
                raise DimensionError("need one bias entry (or None) per filter")
            for H, b in zip(filters, biases):
                if b is not None and b.size != H.out_channels:
                    raise DimensionError("bias length must equal the filter's output channels")
            object.__setattr__(self, "biases", biases)

    @property
    def width(self) -> int:
        return self.filters[0].out_channels

    @property
    def dims(self) -> int:
        return self.filters[0].dims

    def certify(self, grid: Grid, tol: float = LIP_TOL) -> Certificate:
        norms = tuple(operator_norm(H, grid) for H in self.filters)
        consts = tuple(a.lipschitz() for a in self.activations)
        return Certificate(norms, consts, tol)

    def forward_array(self, x: np.ndarray) -> np.ndarray:
        out = x
        for k, H in enumerate(self.filters):
            if k > 0:
                out = self.activations[k - 1].apply_array(out)
            out = apply_array(H, out)
            if self.biases is not None and self.biases[k] is not None:
                out = out + self.biases[k].reshape((-1,) + (1,) * (out.ndim - 1))
        return out

    def __call__(self, x: MultiSignal) -> MultiSignal:
        return cnn_forward(self, x)


def cnn_forward(net: CnnDenoiser, x: MultiSignal) -> MultiSignal:
    if x.channels != 1:
        raise DimensionError("the denoiser takes single-channel signals")
    return x.with_data(net.forward_array(x.data))


def certify_network(net: CnnDenoiser, grid: Grid, policy: str = "reject",
                    tol: float = LIP_TOL) -> tuple[CnnDenoiser, list[str]]:
    """Check every layer is 1-Lipschitz on ``grid``.

    ``policy="reject"`` raises :class:`CertificationError` on a violation;
    ``policy="renormalize"`` divides offending filters by their norm, clips
    offending spline slopes and returns the repaired network together with
    an audit trail.
    """
    if policy not in ("reject", "renormalize"):
        raise ValueError(f"unknown policy {policy!r}")
    cert = net.certify(grid, tol)
    audit = cert.lines()
    if cert.ok:
        return net, audit
    if policy == "reject":
        bad = [line for line in audit if not line.startswith("lipschitz_bound")
               and float(line.split("=")[1]) > 1.0 + tol]
        raise CertificationError("layers exceed Lipschitz 1: " + ", ".join(bad))
    filters = []
    for i, (H, nrm) in enumerate(zip(net.filters, cert.filter_norms)):
        if nrm > 1.0 + tol:
            audit.append(f"renormalized filter_{i} by 1/{nrm:.15f}")
            H = spectral_normalize(H, grid)
        filters.append(H)
    acts = []
    for i, (a, c) in enumerate(zip(net.activations, cert.activation_constants)):
        if c > 1.0 + tol:
            audit.append(f"clipped activation_{i} slopes (was {c:.15f})")
            a = Activation("spline", tuple(project_unit_lipschitz(s) for s in a.splines))
        acts.append(a)
    fixed = CnnDenoiser(tuple(filters), tuple(acts), net.biases)
    audit += ["after:"] + fixed.certify(grid, tol).lines()
    return fixed, audit


def random_cnn(width: int, layers: int, dims: int = 2, grid: Grid | None = None, seed=None,
               activation: str = "relu", parseval: bool = True, num_knots: int = 21) -> CnnDenoiser:
    """Random 1-Lip network for tests and demos.

    With ``parseval=True`` the hidden filters are BCOP-style Householder
    chains, the first is a 1-to-N module and the last is its adjoint shape;
    otherwise random taps are spectrally normalised on ``grid``.
    """
    rng = np.random.default_rng(seed)
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if layers == 1:
        return CnnDenoiser((MultiFilter.identity(1, dims),), ())
    offs = [tuple(int(v) for v in o) for o in np.ndindex(*([2] * dims))]
    filters = []
    if parseval:
        U = random_orthogonal(width, rng)[:, :min(width, len(offs))]
        filters.append(build_one_to_N(U, offs[:U.shape[1]]))
        for _ in range(layers - 2):
            filters.append(chain_compile(bcop_chain(width, 2, dims, seed=rng)))
        U = random_orthogonal(width, rng)[:, :min(width, len(offs))]
        filters.append(adjoint(build_one_to_N(U, offs[:U.shape[1]])))
    else:
        if grid is None:
            raise ValueError("spectral normalisation needs a grid")
        plan = [1] + [width] * (layers - 1) + [1]
        for a, b in zip(plan[:-1], plan[1:]):
            H = MultiFilter(np.array(offs), rng.standard_normal((len(offs), b, a)))
            filters.append(spectral_normalize(H, grid))
    acts = []
    for _ in range(layers - 1):
        if activation == "spline":
            splines = []
            for _n in range(width):
                slopes = rng.uniform(-1.0, 1.0, num_knots - 1)
                values = np.concatenate([[0.0], np.cumsum(slopes * 2.0 / (num_knots - 1))])
                splines.append(SplineActivation(values - values[num_knots // 2]))
            acts.append(Activation("spline", tuple(splines)))
        else:
            acts.append(Activation(activation))
    return CnnDenoiser(tuple(filters), tuple(acts))


# ---------------------------------------------------------------------------
# frame-threshold and averaged denoisers
# ---------------------------------------------------------------------------


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; column 0 is the constant (lowpass) atom."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    C = np.cos(np.pi * (i + 0.5) * k / n) * np.sqrt(2.0 / n)
    C[0] /= np.sqrt(2.0)
    return C.T


def dct_frame(size: int = 3, dims: int = 2) -> MultiFilter:
    """Undecimated separable DCT tight frame on a ``size^d`` patch (1-to-``size^d``).

    Channel 0 is the local mean; the others are oscillating atoms.
    """
    C = dct_matrix(size)
    U = C
    for _ in range(dims - 1):
        U = np.kron(U, C)
    return build_one_to_N(U, _patch_offsets(size, dims))


def haar_frame(levels: int = 1, dims: int = 2) -> MultiFilter:
    """Undecimated (a trous) Haar tight frame with ``levels`` scales.

    Level ``j`` uses the separable 2-tap averages/differences dilated by
    ``2**j``. Channel 0 is the coarsest lowpass, followed by
    ``2**dims - 1`` detail channels per level, finest first. The output has
    ``1 + levels * (2**dims - 1)`` channels.
    """
    if levels < 1:
        raise ValueError("levels must be at least 1")
    bits = np.array(list(itertools.product((0, 1), repeat=dims)), dtype=np.int64)
    low = MultiFilter.identity(1, dims)
    details = []
    for j in range(levels):
        step = 2**j
        for signs in itertools.product((1, -1), repeat=dims):
            coeffs = np.prod(np.where(bits == 1, np.asarray(signs), 1), axis=1) / 2.0**dims
            atom = MultiFilter(bits * step, coeffs.reshape(-1, 1, 1))
            if not any(s < 0 for s in signs):
                low_next = compose(atom, low)
            else:
                details.append(compose(atom, low))
        low = low_next
    return _stack_channels([low] + details)


def _stack_channels(filters: Sequence[MultiFilter]) -> MultiFilter:
    """Stack 1-input filters into one filter whose output channels are theirs in order."""
    offsets, mats, base = [], [], 0
    total = sum(f.out_channels for f in filters)
    for f in filters:
        block = np.zeros((f.num_taps, total, 1), dtype=f.matrices.dtype)
        block[:, base:base + f.out_channels] = f.matrices
        offsets.append(f.offsets)
        mats.append(block)
        base += f.out_channels
    return canonicalize(MultiFilter(np.concatenate(offsets), np.concatenate(mats)))


def _patch_offsets(size: int, dims: int) -> np.ndarray:
    axis = np.arange(size) - (size - 1) // 2
    mesh = np.meshgrid(*([axis] * dims), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _threshold_coefficients(c: np.ndarray, tau: float, keep: Sequence[int]) -> np.ndarray:
    out = _kernels.soft_threshold(c, tau)
    for n in keep:
        out[n] = c[n]
    return out


def frame_threshold_denoiser(T: MultiFilter, tau: float, z: MultiSignal,
                             keep: Sequence[int] = (), tol: float = 1e-9) -> MultiSignal:
    """``T^* soft(T z, tau)`` for a Parseval analysis filter ``T``.

    Channels listed in ``keep`` bypass the threshold (still 1-Lipschitz).
    """
    return FrameThresholdDenoiser(T, tau, z.grid, keep, tol)(z)


class FrameThresholdDenoiser:
    """Callable form of :func:`frame_threshold_denoiser`; certifies ``T`` once."""

    lipschitz = 1.0

    def __init__(self, T: MultiFilter, tau: float, grid: Grid, keep: Sequence[int] = (),
                 tol: float = 1e-9):
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        if T.in_channels != 1:
            raise DimensionError("the analysis filter must take a single channel")
        report = is_parseval(T, grid, tol)
        if not report.passed:
            raise ValueError(
                "analysis filter is not Parseval "
                f"(defects {report.max_paraunitarity_defect:.3e}, {report.max_time_domain_defect:.3e})"
            )
        self.T = T
        self.T_adj = adjoint(T)
        self.tau = float(tau)
        self.grid = grid
        self.keep = tuple(int(k) for k in keep)

    def apply_array(self, z: np.ndarray) -> np.ndarray:
        if self.tau == 0.0:
            # T is certified Parseval, so T^* T = Id; skip the round-off
            return np.array(z, copy=True)
        c = apply_array(self.T, z)
        return apply_array(self.T_adj, _threshold_coefficients(c, self.tau, self.keep))

    def __call__(self, z: MultiSignal) -> MultiSignal:
        if z.grid != self.grid:
            raise DimensionError(f"denoiser certified on {self.grid}, got {z.grid}")
        return z.with_data(self.apply_array(z.data))


class IdentityResidual:
    """``R = Id``; with averaging this makes ``D`` the identity."""

    lipschitz = 1.0

    def apply_array(self, z: np.ndarray) -> np.ndarray:
        return np.array(z, copy=True)

    def __call__(self, z: MultiSignal) -> MultiSignal:
        return z


def as_array_map(R) -> Callable[[np.ndarray], np.ndarray]:
    """Array-level view of a residual operator (object with ``apply_array``,
    a :class:`CnnDenoiser`, or a callable on :class:`MultiSignal`)."""
    if hasattr(R, "apply_array"):
        return R.apply_array
    if isinstance(R, CnnDenoiser):
        return R.forward_array

    def wrapped(z):
        return R(MultiSignal.from_array(z)).data

    return wrapped


@dataclass(frozen=True, eq=False)
class AveragedDenoiser:
    """``D = contraction * (beta R + (1 - beta) Id)`` with ``Lip(R) <= 1``.

    ``contraction < 1`` gives the ``L0``-Lipschitz denoisers used for the
    solution-stability bound.
    """

    residual: object
    beta: float = 0.4
    contraction: float = 1.0
    _fn: Callable = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie strictly inside (0, 1), got {self.beta}")
        if not 0.0 <= self.contraction <= 1.0:
            raise ValueError("contraction must lie in [0, 1]")
        object.__setattr__(self, "_fn", as_array_map(self.residual))

    @property
    def lipschitz(self) -> float:
        r = getattr(self.residual, "lipschitz", 1.0)
        return self.contraction * (self.beta * r + (1.0 - self.beta))

    def contracted(self, gamma: float) -> "AveragedDenoiser":
        return AveragedDenoiser(self.residual, self.beta, self.contraction * gamma)

    def apply_array(self, z: np.ndarray) -> np.ndarray:
        out = self.beta * self._fn(z) + (1.0 - self.beta) * z
        if self.contraction != 1.0:
            out = self.contraction * out
        return out

    def __call__(self, z: MultiSignal) -> MultiSignal:
        return averaged_apply(self, z)


def averaged_apply(D: AveragedDenoiser, z: MultiSignal) -> MultiSignal:
    return z.with_data(D.apply_array(z.data))
