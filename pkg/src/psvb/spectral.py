"""Frequency responses, exact operator norms and Parseval tests on periodic grids.

On a grid with sizes ``(n_1, ..., n_d)`` the bins sit at
``omega = 2*pi*(k_1/n_1, ..., k_d/n_d)`` and the response of a filter is

    H_hat(omega) = sum_taps H[l] exp(-j <omega, l>)

Every LSI operator is diagonalised by the DFT there, so the operator norm is
the largest singular value over the finitely many bins, with no ess-sup
approximation involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .multifilter import MultiFilter, adjoint, apply_array, compose
from .signal import DimensionError, Grid, MultiSignal

DEFAULT_TOL = 1e-9


def response_bins(H: MultiFilter, grid: Grid) -> np.ndarray:
    """Per-bin response matrices, shape ``(K, M, N)``, bins in row-major order."""
    if H.dims != grid.dims:
        raise DimensionError(f"filter is {H.dims}-d, grid is {grid.dims}-d")
    dense = np.zeros(grid.sizes + (H.out_channels, H.in_channels), dtype=H.matrices.dtype)
    wrapped = np.mod(H.offsets, np.asarray(grid.sizes, dtype=np.int64))
    np.add.at(dense, tuple(wrapped.T), H.matrices)
    spec = np.fft.fftn(dense, axes=tuple(range(grid.dims)))
    return spec.reshape(grid.K, H.out_channels, H.in_channels)


@dataclass(frozen=True)
class FrequencyResponse:
    grid: Grid
    bins: np.ndarray

    @property
    def out_channels(self) -> int:
        return self.bins.shape[1]

    @property
    def in_channels(self) -> int:
        return self.bins.shape[2]

    def at(self, index) -> np.ndarray:
        """Response matrix at multi-index ``index`` (taken modulo the grid)."""
        flat = np.ravel_multi_index(tuple(np.atleast_1d(index)), self.grid.sizes, mode="wrap")
        return self.bins[flat]

    def singular_values(self) -> np.ndarray:
        """Singular values per bin, shape ``(K, min(M, N))``, descending."""
        return np.linalg.svd(self.bins, compute_uv=False)


def freq_response(H: MultiFilter, grid: Grid) -> FrequencyResponse:
    return FrequencyResponse(grid, response_bins(H, grid))


def operator_norm(H: MultiFilter, grid: Grid) -> float:
    """Exact l2 -> l2 norm (= Lipschitz constant) of ``H`` acting on ``grid``."""
    if H.num_taps == 0:
        return 0.0
    return float(np.max(freq_response(H, grid).singular_values()))


def oversampled_norm(H: MultiFilter, grid: Grid, factor: int) -> tuple[float, tuple[float, ...]]:
    """Norm on a grid refined ``factor`` times, with the resulting bin spacing.

    This probes the norm of the same taps on the infinite lattice; it is a
    sampled estimate and never larger than the true supremum.
    """
    fine = grid.refined(factor)
    spacing = tuple(2.0 * np.pi / n for n in fine.sizes)
    return operator_norm(H, fine), spacing


def norm_probe(H: MultiFilter, grid: Grid) -> MultiSignal:
    """Unit-norm complex signal on which ``H`` attains its operator norm.

    It is the plane wave at the maximising bin carrying the top right
    singular vector of that bin.
    """
    resp = freq_response(H, grid)
    _, s, vh = np.linalg.svd(resp.bins)
    k = int(np.argmax(s[:, 0]))
    v = np.conj(vh[k, 0])
    omega = grid.frequencies()[k]
    coords = np.stack(np.meshgrid(*[np.arange(n) for n in grid.sizes], indexing="ij"), axis=-1)
    wave = np.exp(1j * (coords @ omega))
    data = v.reshape((-1,) + (1,) * grid.dims) * wave[None]
    return MultiSignal(grid, data / np.sqrt(grid.K))


@dataclass(frozen=True)
class ParsevalReport:
    max_paraunitarity_defect: float
    max_time_domain_defect: float
    operator_norm: float
    tol: float
    passed: bool

    def lines(self) -> list[str]:
        return [
            f"passed={int(self.passed)}",
            f"paraunitarity_defect={self.max_paraunitarity_defect:.6e}",
            f"time_domain_defect={self.max_time_domain_defect:.6e}",
            f"operator_norm={self.operator_norm:.15f}",
            f"tol={self.tol:.3e}",
        ]


def paraunitarity_defect(H: MultiFilter, grid: Grid) -> float:
    """``max_omega || H_hat(omega)^H H_hat(omega) - I_N ||_F``."""
    bins = response_bins(H, grid)
    gram = np.einsum("kmi,kmj->kij", np.conj(bins), bins)
    gram -= np.eye(H.in_channels)
    return float(np.max(np.linalg.norm(gram, axis=(1, 2))))


def time_domain_defect(H: MultiFilter) -> float:
    """Largest tap deviation of ``H^{T v} * H`` from ``I_N delta``.

    Computed in the tap domain, so it tests the property on the infinite
    lattice and does not depend on any grid.
    """
    G = compose(adjoint(H), H)
    target = np.eye(H.in_channels)
    worst = 0.0
    seen_origin = False
    for offset, mat in zip(G.offsets, G.matrices):
        if not offset.any():
            seen_origin = True
            worst = max(worst, float(np.linalg.norm(mat - target)))
        else:
            worst = max(worst, float(np.linalg.norm(mat)))
    if not seen_origin:
        worst = max(worst, float(np.linalg.norm(target)))
    return worst


def is_parseval(H: MultiFilter, grid: Grid, tol: float = DEFAULT_TOL) -> ParsevalReport:
    """Test both the paraunitarity and the flip-transpose inversion conditions."""
    if H.out_channels < H.in_channels:
        raise ValueError(
            f"a {H.in_channels}-to-{H.out_channels} filter cannot be Parseval: "
            "energy cannot be preserved onto fewer output channels"
        )
    pu = paraunitarity_defect(H, grid)
    td = time_domain_defect(H)
    nrm = operator_norm(H, grid)
    return ParsevalReport(pu, td, nrm, tol, bool(pu <= tol and td <= tol))


def _random_real(rng, channels, grid):
    return rng.standard_normal((channels,) + grid.sizes)


def inner_product_preservation_check(H: MultiFilter, grid: Grid, trials: int = 10,
                                     seed: int = 0) -> float:
    """``max |<x, y> - <Hx, Hy>| / (||x|| ||y||)`` over random real pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = _random_real(rng, H.in_channels, grid)
        y = _random_real(rng, H.in_channels, grid)
        hx = apply_array(H, x)
        hy = apply_array(H, y)
        gap = abs(np.vdot(y, x) - np.vdot(hy, hx))
        worst = max(worst, float(gap / (np.linalg.norm(x) * np.linalg.norm(y))))
    return worst


@dataclass(frozen=True)
class GramReport:
    idempotence_defect: float
    symmetry_defect: float
    singular_value_defect: float

    @property
    def max_defect(self) -> float:
        return max(self.idempotence_defect, self.symmetry_defect, self.singular_value_defect)


def gram_projector_check(H: MultiFilter, grid: Grid, trials: int = 5, seed: int = 0) -> GramReport:
    """Check that ``P = H H^*`` is the orthogonal projector onto the range of ``H``.

    Reports the idempotence defect ``||P(Py) - Py|| / ||y||``, the
    self-adjointness defect (tap-level ``||P - P^*||`` combined with
    ``|<Py, z> - <y, Pz>| / (||y|| ||z||)`` on random pairs), and the largest
    deviation of the per-bin singular values of ``H_hat^H`` from ``N`` ones
    followed by ``M - N`` zeros.
    """
    P = compose(H, adjoint(H))
    rng = np.random.default_rng(seed)
    idem = 0.0
    sym = P.max_abs_difference(adjoint(P))
    for _ in range(trials):
        y = _random_real(rng, H.out_channels, grid)
        z = _random_real(rng, H.out_channels, grid)
        py = apply_array(P, y)
        ppy = apply_array(P, py)
        idem = max(idem, float(np.linalg.norm(ppy - py) / np.linalg.norm(y)))
        pz = apply_array(P, z)
        gap = abs(np.vdot(z, py) - np.vdot(pz, y))
        sym = max(sym, float(gap / (np.linalg.norm(y) * np.linalg.norm(z))))
    bins_h = np.conj(np.transpose(response_bins(H, grid), (0, 2, 1)))
    # pad to M singular values so the trailing zeros are checked as well
    M, N = H.out_channels, H.in_channels
    square = np.zeros((grid.K, M, M), dtype=complex)
    square[:, :N, :] = bins_h
    sv = np.linalg.svd(square, compute_uv=False)
    target = np.concatenate([np.ones(N), np.zeros(M - N)])
    svd_defect = float(np.max(np.abs(sv - target)))
    return GramReport(idem, sym, svd_defect)
