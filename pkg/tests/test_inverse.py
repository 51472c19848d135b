import numpy as np
import pytest

from psvb.inverse import (
    FbsConfig, IdentityModel, MaskedFourier, PeriodicBlur, SolverDivergence, add_noise,
    check_forward_stability, check_solution_stability, data_fidelity, fbs_solve, grad_quadratic,
    grad_quadratic_array, lipschitz_of_gradient, make_mask, model_adjoint, model_apply, phantom, psnr,
)
from psvb.lipschitz import AveragedDenoiser, FrameThresholdDenoiser, IdentityResidual, haar_frame
from psvb.multifilter import MultiFilter
from psvb.signal import DimensionError, Grid, MultiSignal

G = Grid((16, 16))
HALF = MultiFilter([[0, 0], [1, 0]], [[[0.5]], [[0.5]]])


def models(grid=G):
    return [
        IdentityModel(grid),
        PeriodicBlur(grid, HALF),
        MaskedFourier(grid, make_mask("random", grid, rate=0.4, seed=1)),
    ]


def test_identity_and_full_mask():
    s = np.random.default_rng(0).standard_normal(G.sizes)
    np.testing.assert_array_equal(IdentityModel(G).forward(s), s)
    full = MaskedFourier(G, make_mask("full", G))
    assert np.linalg.norm(full.forward(s)) == pytest.approx(np.linalg.norm(s), rel=1e-13)


@pytest.mark.parametrize("A", models(), ids=lambda a: a.kind)
def test_adjoint_consistency(A):
    rng = np.random.default_rng(2)
    for _ in range(100):
        s = rng.standard_normal(G.sizes)
        y = rng.standard_normal(A.measurement_shape)
        if A.kind == "mri":
            y = y + 1j * rng.standard_normal(A.measurement_shape)
        lhs = np.vdot(y, A.forward(s))
        rhs = np.vdot(A.adjoint(y), s)
        assert abs(lhs - rhs) <= 1e-11 * np.linalg.norm(s) * np.linalg.norm(y)


def test_model_shape_errors():
    A = MaskedFourier(G, make_mask("radial", G, num_lines=4))
    with pytest.raises(DimensionError):
        A.forward(np.zeros((4, 4)))
    with pytest.raises(DimensionError):
        A.adjoint(np.zeros(3))
    with pytest.raises(DimensionError):
        model_apply(A, MultiSignal.zeros(G, 2))
    with pytest.raises(ValueError):
        MaskedFourier(G, np.zeros(G.sizes, bool))
    y = model_apply(A, MultiSignal.random(G, 1, rng=0))
    assert model_adjoint(A, y).channels == 1


def test_mask_examples():
    g = Grid((64, 64))
    assert make_mask("random", g, rate=1.0).mask.all()
    assert make_mask("cartesian", g, acceleration=1).mask.all()
    m = make_mask("random", g, rate=0.3, seed=7)
    assert abs(m.fraction - 0.3) <= 0.05
    np.testing.assert_array_equal(m.mask, make_mask("random", g, rate=0.3, seed=7).mask)


@pytest.mark.parametrize("scheme,kw", [("random", {"rate": 0.01}), ("radial", {"num_lines": 3}),
                                       ("cartesian", {"acceleration": 8})])
def test_masks_contain_center(scheme, kw):
    m = make_mask(scheme, Grid((32, 24)), **kw)
    assert m.mask[0, 0]
    assert m.centered()[16, 12]


def test_cartesian_rows():
    m = make_mask("cartesian", Grid((32, 32)), acceleration=4).centered()
    rows = np.flatnonzero(m.all(axis=1))
    assert set(range(14, 18)) <= set(rows)
    assert set(range(0, 32, 4)) <= set(rows)
    assert m.any(axis=1).sum() == len(rows)
    assert len(rows) == 8 + 3


def test_radial_lines():
    m = make_mask("radial", Grid((32, 32)), num_lines=2).centered()
    assert m[16, :].all() and m[:, 16].all()
    assert m.sum() == 32 + 32 - 1


def test_symmetric_mask():
    m = make_mask("random", Grid((10, 9)), rate=0.2, seed=3, symmetric=True).mask
    mirrored = np.roll(np.flip(m), 1, axis=(0, 1))
    np.testing.assert_array_equal(m, mirrored)


def test_mask_errors():
    with pytest.raises(ValueError):
        make_mask("spiral", G)
    with pytest.raises(ValueError):
        make_mask("random", G, rate=0.0)
    with pytest.raises(ValueError):
        make_mask("radial", G)
    with pytest.raises(DimensionError):
        make_mask("full", Grid(8))


def test_gradient_examples():
    rng = np.random.default_rng(4)
    s = rng.standard_normal(G.sizes)
    for A in models():
        assert np.abs(grad_quadratic_array(A, s, A.forward(s))).max() <= 1e-13
    y = rng.standard_normal(G.sizes)
    g = grad_quadratic(IdentityModel(G), MultiSignal(G, s[None]), y)
    np.testing.assert_allclose(g.data[0], s - y, atol=1e-15)


@pytest.mark.parametrize("A", models(), ids=lambda a: a.kind)
def test_gradient_finite_differences(A):
    rng = np.random.default_rng(5)
    s = rng.standard_normal(G.sizes)
    y = A.forward(rng.standard_normal(G.sizes))
    grad = grad_quadratic_array(A, s, y)
    h = 1e-5
    for _ in range(20):
        d = rng.standard_normal(G.sizes)
        fd = (data_fidelity(A, s + h * d, y) - data_fidelity(A, s - h * d, y)) / (2 * h)
        exact = float(np.sum(grad * d))
        assert abs(fd - exact) <= 1e-6 * abs(exact)


def test_lipschitz_of_gradient_examples():
    assert lipschitz_of_gradient(IdentityModel(G)) == pytest.approx(1.0, abs=1e-12)
    for scheme, kw in [("random", {"rate": 0.2}), ("radial", {"num_lines": 5}), ("cartesian", {"acceleration": 4})]:
        A = MaskedFourier(G, make_mask(scheme, G, **kw))
        assert lipschitz_of_gradient(A) == pytest.approx(1.0, abs=1e-8)
    blur = PeriodicBlur(G, HALF)
    assert lipschitz_of_gradient(blur) == pytest.approx(1.0, abs=1e-8)
    assert blur.normal_norm() == pytest.approx(1.0)


def test_fbs_identity_one_step():
    y = np.random.default_rng(6).standard_normal(G.sizes)
    D = AveragedDenoiser(IdentityResidual(), beta=1e-9)
    r = fbs_solve(IdentityModel(G), y, D, FbsConfig(alpha=1.0), x0=MultiSignal.zeros(G))
    np.testing.assert_allclose(r.solution.data[0], y, atol=1e-14)
    assert r.converged and r.iterations == 2


def test_fbs_gradient_descent_converges_to_y():
    y = np.random.default_rng(7).standard_normal(G.sizes)
    D = AveragedDenoiser(IdentityResidual(), beta=0.4)
    r = fbs_solve(IdentityModel(G), y, D, FbsConfig(alpha=0.3, tol=1e-12, max_iters=500),
                  x0=MultiSignal.zeros(G))
    np.testing.assert_allclose(r.solution.data[0], y, atol=1e-10)


def test_fbs_fixed_point_with_threshold():
    rng = np.random.default_rng(8)
    y = rng.standard_normal(G.sizes)
    alpha = 0.5
    D = AveragedDenoiser(FrameThresholdDenoiser(haar_frame(1), 0.2, G), 0.4)
    r = fbs_solve(IdentityModel(G), y, D, FbsConfig(alpha=alpha, tol=1e-10, max_iters=2000))
    s = r.solution.data[0]
    again = D.apply_array(((1 - alpha) * s + alpha * y)[None])[0]
    assert np.linalg.norm(again - s) <= 1e-9 * np.linalg.norm(s)
    assert r.residual == pytest.approx(np.linalg.norm(again - s), abs=1e-14)


def test_fbs_phantom_cartesian():
    g = Grid((64, 64))
    s = phantom(64)
    A = MaskedFourier(g, make_mask("cartesian", g, acceleration=4))
    y = add_noise(A.forward(s), 10 / 255, seed=0)
    D = AveragedDenoiser(FrameThresholdDenoiser(haar_frame(2), 0.03, g, keep=(0,)), 0.9)
    r = fbs_solve(A, y, D, FbsConfig(max_iters=500, lipschitz=1.0))
    assert r.converged and r.final_gap <= 1e-6
    assert psnr(s, r.solution.data[0]) > psnr(s, np.real(A.adjoint(y)))
    assert len(r.trace) == r.iterations


def test_fbs_is_deterministic():
    g = Grid((16, 16))
    A = MaskedFourier(g, make_mask("radial", g, num_lines=6))
    y = add_noise(A.forward(phantom(16)), 0.05, seed=1)
    D = AveragedDenoiser(FrameThresholdDenoiser(haar_frame(1), 0.05, g), 0.4)
    a = fbs_solve(A, y, D, FbsConfig(max_iters=50))
    b = fbs_solve(A, y, D, FbsConfig(max_iters=50))
    assert a.solution.data.tobytes() == b.solution.data.tobytes() and a.trace == b.trace


def test_fbs_step_size_and_divergence():
    y = np.ones(G.sizes)
    with pytest.raises(ValueError):
        fbs_solve(IdentityModel(G), y, IdentityResidual(), FbsConfig(alpha=2.0))
    with pytest.raises(ValueError):
        FbsConfig(beta=1.0)
    # a 50-Lipschitz residual breaks averagedness and the iterates explode
    grow = lambda z: 50.0 * z  # noqa: E731
    with pytest.raises(SolverDivergence):
        fbs_solve(IdentityModel(G), y, AveragedDenoiser(grow, 0.5), FbsConfig(alpha=0.5, max_iters=100))


@pytest.mark.parametrize("A", models(), ids=lambda a: a.kind)
def test_forward_stability(A):
    rng = np.random.default_rng(9)
    y1 = A.forward(rng.uniform(0, 1, G.sizes))
    D = FrameThresholdDenoiser(haar_frame(1), 0.05, G)
    cfg = FbsConfig(beta=0.4, tol=1e-9, max_iters=5000)
    same = check_forward_stability(A, D, cfg, y1, y1)
    assert same.lhs == 0.0 and same.rhs == 0.0 and same.passed
    for _ in range(3):
        y2 = y1 + 0.05 * rng.standard_normal(y1.shape)
        chk = check_forward_stability(A, D, cfg, y1, y2)
        assert chk.converged and chk.passed
    with pytest.raises(ValueError):
        check_forward_stability(A, D, FbsConfig(beta=0.6), y1, y1)


def test_solution_stability():
    rng = np.random.default_rng(10)
    A = IdentityModel(G)
    D = FrameThresholdDenoiser(haar_frame(1), 0.05, G)
    cfg = FbsConfig(beta=0.4, tol=1e-10, max_iters=5000)
    y1 = rng.uniform(0, 1, G.sizes)
    lhs, rhs, ok = check_solution_stability(A, D, cfg, y1, y1, 0.9)
    assert lhs == 0.0 and rhs == 0.0 and ok
    for _ in range(3):
        y2 = y1 + 0.05 * rng.standard_normal(G.sizes)
        assert check_solution_stability(A, D, cfg, y1, y2, 0.9).passed
    zero = check_solution_stability(A, D, cfg, y1, y1 + 1.0, 0.0)
    assert zero.lhs == 0.0 and zero.rhs == 0.0
    with pytest.raises(ValueError):
        check_solution_stability(A, D, cfg, y1, y1, 1.0)


def test_psnr_examples():
    ref = np.random.default_rng(11).uniform(0, 1, (8, 8))
    assert psnr(ref, ref) == 999.0
    assert psnr(np.zeros(4), np.ones(4)) == pytest.approx(0.0, abs=1e-12)
    assert psnr(ref, ref + 0.1) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(DimensionError):
        psnr(ref, ref[:4])
    with pytest.raises(ValueError):
        psnr(ref, ref, peak=0.0)


def test_noise_per_component():
    y = np.zeros(200000, complex)
    n = add_noise(y, 0.1, seed=3)
    assert np.std(n.real) == pytest.approx(0.1, rel=0.01)
    assert np.std(n.imag) == pytest.approx(0.1, rel=0.01)
    np.testing.assert_array_equal(n, add_noise(y, 0.1, seed=3))


def test_phantom():
    img = phantom(64)
    assert img.shape == (64, 64) and img.min() >= 0.0 and img.max() <= 1.0
    assert len(np.unique(img)) > 3
