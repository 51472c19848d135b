"""Forward models, the PnP forward-backward solver and stability audits.

Images are real single-channel signals. Measurements may be complex
(masked Fourier); the data-term gradient is then ``Re A^H (A s - y)``, the
exact gradient of ``0.5 ||y - A s||^2`` over real ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .multifilter import MultiFilter, adjoint, apply_array
from .signal import DimensionError, Grid, MultiSignal
from .spectral import operator_norm

PSNR_CAP = 999.0


class SolverDivergence(RuntimeError):
    """The iterate blew up; the step size or denoiser violates the convergence conditions."""


# ---------------------------------------------------------------------------
# forward models
# ---------------------------------------------------------------------------


class ForwardModel:
    """Linear measurement operator on real single-channel images."""

    kind = ""

    def __init__(self, grid: Grid):
        self.grid = grid

    @property
    def measurement_shape(self) -> tuple:
        raise NotImplementedError

    def forward(self, s: np.ndarray) -> np.ndarray:
        """``s`` has shape ``grid.sizes``."""
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal_norm(self) -> float:
        """Exact ``||A^H A||`` where known in closed form."""
        raise NotImplementedError

    def _check_image(self, s: np.ndarray):
        if s.shape != self.grid.sizes:
            raise DimensionError(f"expected an image of shape {self.grid.sizes}, got {s.shape}")

    def _check_measurement(self, y: np.ndarray):
        if y.shape != self.measurement_shape:
            raise DimensionError(f"expected measurements of shape {self.measurement_shape}, got {y.shape}")


class IdentityModel(ForwardModel):
    kind = "identity"

    @property
    def measurement_shape(self):
        return self.grid.sizes

    def forward(self, s):
        self._check_image(s)
        return np.array(s, copy=True)

    def adjoint(self, y):
        self._check_measurement(y)
        return np.array(y, copy=True)

    def normal_norm(self):
        return 1.0


class PeriodicBlur(ForwardModel):
    """Scalar periodic convolution with a (grid-free) kernel."""

    kind = "blur"

    def __init__(self, grid: Grid, kernel: MultiFilter):
        super().__init__(grid)
        if kernel.in_channels != 1 or kernel.out_channels != 1:
            raise DimensionError("blur kernel must be scalar")
        if kernel.dims != grid.dims:
            raise DimensionError("kernel and grid dimensions differ")
        self.kernel = kernel
        self._adj = adjoint(kernel)

    @property
    def measurement_shape(self):
        return self.grid.sizes

    def forward(self, s):
        self._check_image(s)
        return apply_array(self.kernel, s[None])[0]

    def adjoint(self, y):
        self._check_measurement(y)
        return apply_array(self._adj, y[None])[0]

    def normal_norm(self):
        return operator_norm(self.kernel, self.grid) ** 2


class MaskedFourier(ForwardModel):
    """``y = M F s`` with the unitary DFT ``F`` and a k-space mask ``M``."""

    kind = "mri"

    def __init__(self, grid: Grid, mask):
        super().__init__(grid)
        mask = np.asarray(getattr(mask, "mask", mask), dtype=bool)
        if mask.shape != grid.sizes:
            raise DimensionError(f"mask shape {mask.shape} does not match grid {grid.sizes}")
        if not mask.any():
            raise ValueError("mask selects no frequencies")
        self.mask = mask
        self._index = np.flatnonzero(mask.ravel())

    @property
    def measurement_shape(self):
        return (self._index.size,)

    def forward(self, s):
        self._check_image(s)
        return np.fft.fftn(s, norm="ortho").ravel()[self._index]

    def adjoint(self, y):
        self._check_measurement(y)
        full = np.zeros(self.grid.K, dtype=np.complex128)
        full[self._index] = y
        return np.fft.ifftn(full.reshape(self.grid.sizes), norm="ortho")

    def normal_norm(self):
        return 1.0


def model_apply(A: ForwardModel, s: MultiSignal) -> np.ndarray:
    if s.channels != 1:
        raise DimensionError("forward models act on single-channel images")
    return A.forward(s.data[0])


def model_adjoint(A: ForwardModel, y) -> MultiSignal:
    return MultiSignal(A.grid, A.adjoint(np.asarray(y))[None])


# ---------------------------------------------------------------------------
# sampling masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Boolean k-space mask in unshifted FFT layout (zero frequency at index 0)."""

    mask: np.ndarray
    scheme: str
    params: dict = field(default_factory=dict)

    @property
    def fraction(self) -> float:
        return float(self.mask.mean())

    def centered(self) -> np.ndarray:
        """Mask with the zero frequency moved to the middle, for display."""
        return np.fft.fftshift(self.mask)


def _symmetrize(mask: np.ndarray) -> np.ndarray:
    flipped = np.roll(np.flip(mask), 1, axis=tuple(range(mask.ndim)))
    return mask | flipped


def make_mask(scheme: str, grid: Grid, *, rate: float | None = None, seed: int = 0,
              num_lines: int | None = None, acceleration: int | None = None,
              center_band: int = 4, symmetric: bool = False) -> SamplingMask:
    """Build a 2-d sampling mask.

    ``random``
        i.i.d. Bernoulli(``rate``) bins drawn with ``seed``.
    ``radial``
        ``num_lines`` lines through the center at angles ``pi*i/num_lines``,
        rasterised by rounding points spaced half a pixel apart.
    ``cartesian``
        every ``acceleration``-th row plus ``center_band`` rows around the
        center (rows are the first axis).
    ``full``
        every bin.

    The zero-frequency bin is always included. ``symmetric=True`` adds the
    mirror ``-k`` of every selected bin.
    """
    if grid.dims != 2:
        raise DimensionError("sampling masks are defined on 2-d grids")
    n0, n1 = grid.sizes
    c0, c1 = n0 // 2, n1 // 2
    centered = np.zeros(grid.sizes, dtype=bool)
    params: dict = {}
    if scheme == "full":
        centered[:] = True
    elif scheme == "random":
        if rate is None or not 0.0 < rate <= 1.0:
            raise ValueError("random masks need 0 < rate <= 1")
        params = {"rate": rate, "seed": seed}
        centered = np.random.default_rng(seed).random(grid.sizes) < rate
    elif scheme == "radial":
        if num_lines is None or num_lines < 1:
            raise ValueError("radial masks need num_lines >= 1")
        params = {"num_lines": num_lines}
        radius = math.hypot(n0, n1) / 2.0
        r = np.arange(-radius, radius + 0.5, 0.5)
        for i in range(num_lines):
            theta = math.pi * i / num_lines
            rows = np.rint(c0 + r * math.sin(theta)).astype(int)
            cols = np.rint(c1 + r * math.cos(theta)).astype(int)
            ok = (rows >= 0) & (rows < n0) & (cols >= 0) & (cols < n1)
            centered[rows[ok], cols[ok]] = True
    elif scheme == "cartesian":
        if acceleration is None or acceleration < 1:
            raise ValueError("cartesian masks need acceleration >= 1")
        params = {"acceleration": acceleration, "center_band": center_band}
        rows = np.arange(n0)
        keep = ((rows - c0) % acceleration == 0)
        keep |= (rows >= c0 - center_band // 2) & (rows < c0 + (center_band + 1) // 2)
        centered[keep, :] = True
    else:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    centered[c0, c1] = True
    mask = np.fft.ifftshift(centered)
    if symmetric:
        mask = _symmetrize(mask)
    if not mask.any():
        raise ValueError("mask is empty")
    return SamplingMask(mask, scheme, params | {"symmetric": symmetric})


# ---------------------------------------------------------------------------
# data term
# ---------------------------------------------------------------------------


def data_fidelity(A: ForwardModel, s: np.ndarray, y: np.ndarray) -> float:
    r = A.forward(s) - y
    return 0.5 * float(np.vdot(r, r).real)


def grad_quadratic_array(A: ForwardModel, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.real(A.adjoint(A.forward(s) - y))


def grad_quadratic(A: ForwardModel, s: MultiSignal, y) -> MultiSignal:
    """Gradient of ``0.5 ||y - A s||^2`` with respect to real ``s``."""
    return MultiSignal(A.grid, grad_quadratic_array(A, s.data[0], np.asarray(y))[None])


def lipschitz_of_gradient(A: ForwardModel, tol: float = 1e-10, max_iter: int = 10000,
                          seed: int = 0) -> float:
    """Power iteration for ``||A^T A||`` on real images (``s -> Re A^H A s``)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.grid.sizes)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = np.real(A.adjoint(A.forward(v)))
        new = float(np.vdot(v, w).real)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if lam > 0 and abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    return lam


# ---------------------------------------------------------------------------
# PnP forward-backward splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FbsConfig:
    """Solver settings.

    ``alpha=None`` means ``1 / L`` with ``L = ||A^T A||``. ``beta`` is only
    used when the denoiser passed to :func:`fbs_solve` is a bare residual
    operator rather than an :class:`~psvb.lipschitz.AveragedDenoiser`.
    """

    alpha: float | None = None
    beta: float = 0.4
    max_iters: int = 1000
    tol: float = 1e-6
    record_trace: bool = True
    lipschitz: float | None = None
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie strictly inside (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass(frozen=True, eq=False)
class FbsResult:
    solution: MultiSignal
    iterations: int
    trace: list
    converged: bool
    fidelity: float
    residual: float
    alpha: float

    @property
    def final_gap(self) -> float:
        return self.trace[-1] if self.trace else 0.0


def _averaged(D, beta):
    from .lipschitz import AveragedDenoiser

    if isinstance(D, AveragedDenoiser):
        return D
    return AveragedDenoiser(D, beta)


def fbs_solve(A: ForwardModel, y, D, cfg: FbsConfig = FbsConfig(), x0: MultiSignal | None = None) -> FbsResult:
    """PnP-FBS iterations ``s <- D(s - alpha grad J(y, A s))``.

    Stops when the relative change ``||s+ - s|| / ||s||`` drops to ``cfg.tol``
    or after ``cfg.max_iters`` steps. Starts from ``Re A^H y`` unless ``x0``
    is given. Raises :class:`SolverDivergence` if the iterate norm exceeds
    ``cfg.divergence_factor`` times its initial scale.
    """
    y = np.asarray(y)
    D = _averaged(D, cfg.beta)
    L = cfg.lipschitz if cfg.lipschitz is not None else lipschitz_of_gradient(A)
    alpha = 1.0 / L if cfg.alpha is None else cfg.alpha
    if not 0.0 < alpha < 2.0 / L:
        raise ValueError(f"step size {alpha} outside (0, 2/L) = (0, {2.0 / L})")
    s = np.real(A.adjoint(y)) if x0 is None else np.array(x0.data[0], dtype=np.float64)
    scale = max(np.linalg.norm(s), np.linalg.norm(np.real(A.adjoint(y))), 1e-300)

    def step(u):
        z = u - alpha * grad_quadratic_array(A, u, y)
        return D.apply_array(z[None])[0]

    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        s_next = step(s)
        nrm_next = np.linalg.norm(s_next)
        if not np.isfinite(nrm_next) or nrm_next > cfg.divergence_factor * scale:
            raise SolverDivergence(
                f"iterate norm {nrm_next:.3e} exceeded {cfg.divergence_factor:.0e} x initial "
                f"{scale:.3e} at iteration {it}; check alpha < 2/L and the denoiser's averagedness"
            )
        diff = np.linalg.norm(s_next - s)
        base = np.linalg.norm(s)
        gap = diff / base if base > 0 else diff
        if cfg.record_trace:
            trace.append(float(gap))
        s = s_next
        if gap <= cfg.tol:
            converged = True
            break
    if not cfg.record_trace:
        trace = [float(gap)]
    residual = float(np.linalg.norm(step(s) - s))
    return FbsResult(
        solution=MultiSignal(A.grid, s[None]),
        iterations=it,
        trace=trace,
        converged=converged,
        fidelity=data_fidelity(A, s, y),
        residual=residual,
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# stability audits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityCheck:
    lhs: float
    rhs: float
    slack: float
    converged: bool

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.slack

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.passed))


def check_forward_stability(A: ForwardModel, D, cfg: FbsConfig, y1, y2) -> StabilityCheck:
    """Measurement-domain bound ``||A s1* - A s2*|| <= ||y1 - y2||`` for averaged ``D``, ``beta <= 1/2``.

    Slack is ten times the summed fixed-point residuals of the two runs.
    """
    D = _averaged(D, cfg.beta)
    if D.beta > 0.5:
        raise ValueError(f"the forward bound needs beta <= 1/2, got {D.beta}")
    r1 = fbs_solve(A, y1, D, cfg)
    r2 = fbs_solve(A, y2, D, cfg)
    lhs = float(np.linalg.norm(A.forward(r1.solution.data[0]) - A.forward(r2.solution.data[0])))
    rhs = float(np.linalg.norm(np.asarray(y1) - np.asarray(y2)))
    return StabilityCheck(lhs, rhs, 10.0 * (r1.residual + r2.residual), r1.converged and r2.converged)


def check_solution_stability(A: ForwardModel, D, cfg: FbsConfig, y1, y2, L0: float) -> StabilityCheck:
    """Image-domain bound ``||s1* - s2*|| <= alpha L0 ||A|| / (1 - L0) ||y1 - y2||``.

    ``D`` is contracted by ``L0`` (``D -> L0 * D``) so that its certified
    Lipschitz constant is ``L0``.
    """
    if not 0.0 <= L0 < 1.0:
        raise ValueError(f"L0 must lie in [0, 1), got {L0}")
    D = _averaged(D, cfg.beta).contracted(L0)
    L = cfg.lipschitz if cfg.lipschitz is not None else lipschitz_of_gradient(A)
    cfg = FbsConfig(cfg.alpha, cfg.beta, cfg.max_iters, cfg.tol, cfg.record_trace, L,
                    cfg.divergence_factor)
    r1 = fbs_solve(A, y1, D, cfg)
    r2 = fbs_solve(A, y2, D, cfg)
    lhs = float(np.linalg.norm(r1.solution.data[0] - r2.solution.data[0]))
    a_norm = math.sqrt(L)
    rhs = r1.alpha * L0 * a_norm / (1.0 - L0) * float(np.linalg.norm(np.asarray(y1) - np.asarray(y2)))
    return StabilityCheck(lhs, rhs, 10.0 * (r1.residual + r2.residual), r1.converged and r2.converged)


# ---------------------------------------------------------------------------
# metrics, noise and test images
# ---------------------------------------------------------------------------


def psnr(reference, estimate, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``, reported as 999 for an exact match."""
    ref = np.asarray(getattr(reference, "data", reference), dtype=np.float64)
    est = np.asarray(getattr(estimate, "data", estimate), dtype=np.float64)
    if ref.shape != est.shape:
        raise DimensionError(f"shapes differ: {ref.shape} vs {est.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((ref - est) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def add_noise(y, sigma: float, seed: int = 0) -> np.ndarray:
    """Seeded white Gaussian noise; complex data get independent real and imaginary parts."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    if np.iscomplexobj(y):
        return y + sigma * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y + sigma * rng.standard_normal(y.shape)


# modified Shepp-Logan ellipses: intensity, semi-axes (a, b), center (x0, y0), angle (deg)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def phantom(n: int = 64) -> np.ndarray:
    """Piecewise-constant Shepp-Logan-style head phantom with values in ``[0, 1]``."""
    coords = (np.arange(n) - (n - 1) / 2.0) / (n / 2.0)
    yy, xx = np.meshgrid(-coords, coords, indexing="ij")
    img = np.zeros((n, n))
    for rho, a, b, x0, y0, deg in _SHEPP_LOGAN:
        t = math.radians(deg)
        xr = (xx - x0) * math.cos(t) + (yy - y0) * math.sin(t)
        yr = -(xx - x0) * math.sin(t) + (yy - y0) * math.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += rho
    return np.clip(img, 0.0, 1.0)
