import numpy as np
import pytest

from psvb.builders import build_gen_shift, build_householder, build_patch, random_unit_vector
from psvb.multifilter import MultiFilter, apply, compose
from psvb.signal import Grid, MultiSignal, norm
from psvb.spectral import (
    freq_response, gram_projector_check, inner_product_preservation_check, is_parseval, norm_probe,
    operator_norm, oversampled_norm, paraunitarity_defect, time_domain_defect,
)

from oracles import random_filter, response_sum

HALF_PAIR = MultiFilter.scalar([0.5, 0.5])


def test_identity_response():
    r = freq_response(MultiFilter.identity(3, 2), Grid((3, 4)))
    assert r.bins.shape == (12, 3, 3)
    np.testing.assert_array_equal(r.bins, np.broadcast_to(np.eye(3), (12, 3, 3)))


def test_shift_response_is_all_pass():
    g = Grid((5, 4))
    k0 = np.array([2, -1])
    r = freq_response(MultiFilter([k0], [[[1.0]]]), g)
    expected = np.exp(-1j * g.frequencies() @ k0)
    np.testing.assert_allclose(r.bins[:, 0, 0], expected, atol=1e-14)
    np.testing.assert_allclose(np.abs(r.bins), 1.0, atol=1e-14)


def test_response_matches_direct_sum():
    rng = np.random.default_rng(0)
    g = Grid((4, 4))
    H = random_filter(rng, 2, 3, dims=2, taps=5, spread=6, complex_=True)
    r = freq_response(H, g)
    for k, w in enumerate(g.frequencies()):
        np.testing.assert_allclose(r.bins[k], response_sum(H, w), atol=1e-12)
    np.testing.assert_allclose(r.at((1, 2)), response_sum(H, g.frequencies()[6]), atol=1e-12)


def test_real_filter_conjugate_symmetry():
    rng = np.random.default_rng(1)
    g = Grid((5, 6))
    r = freq_response(random_filter(rng, 2, 2, dims=2), g)
    for idx in [(1, 2), (3, 5), (0, 3)]:
        neg = tuple(-i for i in idx)
        np.testing.assert_allclose(r.at(neg), np.conj(r.at(idx)), atol=1e-13)


def test_apply_equals_pointwise_product():
    rng = np.random.default_rng(2)
    g = Grid((4, 5))
    H = random_filter(rng, 3, 2, dims=2)
    x = MultiSignal.random(g, 2, rng=rng)
    xhat = np.fft.fftn(x.data, axes=(1, 2)).reshape(2, -1)
    yhat = np.einsum("kmn,nk->mk", freq_response(H, g).bins, xhat).reshape(3, 4, 5)
    y = np.fft.ifftn(yhat, axes=(1, 2)).real
    np.testing.assert_allclose(apply(H, x, "direct").data, y, atol=1e-12)


def test_operator_norm_examples():
    g = Grid(16)
    assert operator_norm(MultiFilter.identity(2), g) == pytest.approx(1.0, abs=1e-15)
    # |cos(w/2)| peaks at w = 0
    assert operator_norm(HALF_PAIR, g) == pytest.approx(1.0, abs=1e-15)
    assert operator_norm(MultiFilter.zero(2, 2), g) == 0.0
    assert operator_norm(build_patch([[0], [3], [7]], 2), g) == pytest.approx(1.0, abs=1e-12)


def test_operator_norm_closed_form():
    # h = (1, 2) has |h(w)| = |1 + 2 e^{-jw}|, maximised at w = 0 -> 3, and at w = pi -> 1
    assert operator_norm(MultiFilter.scalar([1.0, 2.0]), Grid(8)) == pytest.approx(3.0, rel=1e-15)
    assert operator_norm(MultiFilter.scalar([1.0, -2.0]), Grid(7)) == pytest.approx(
        abs(1 - 2 * np.exp(-1j * 2 * np.pi * 3 / 7)), rel=1e-14)


def test_oversampled_norm_reports_spacing():
    h = MultiFilter.scalar([1.0, -2.0])
    val, spacing = oversampled_norm(h, Grid(7), 4)
    assert spacing == (2 * np.pi / 28,)
    assert operator_norm(h, Grid(7)) <= val <= 3.0


def test_norm_is_submultiplicative():
    rng = np.random.default_rng(3)
    g = Grid((6, 5))
    for _ in range(20):
        H1 = random_filter(rng, 3, 2, dims=2)
        H2 = random_filter(rng, 2, 3, dims=2)
        lhs = operator_norm(compose(H2, H1), g)
        assert lhs <= operator_norm(H2, g) * operator_norm(H1, g) + 1e-10


def test_norm_probe_attains_norm():
    rng = np.random.default_rng(4)
    g = Grid((6, 6))
    for _ in range(5):
        H = random_filter(rng, 3, 2, dims=2)
        x = norm_probe(H, g)
        assert norm(x) == pytest.approx(1.0, abs=1e-12)
        assert norm(apply(H, x)) >= (1 - 1e-6) * operator_norm(H, g)


def test_is_parseval_examples():
    g = Grid((5, 5))
    rep = is_parseval(build_gen_shift([[1, 2], [0, -1], [3, 3]]), g)
    assert rep.passed
    assert rep.max_paraunitarity_defect <= 1e-14 and rep.max_time_domain_defect <= 1e-14
    bad = is_parseval(HALF_PAIR, Grid(8))
    assert not bad.passed
    # |cos(pi/2)|^2 - 1 = -1 at w = pi
    assert bad.max_paraunitarity_defect == pytest.approx(1.0, abs=1e-14)
    hh = build_householder(random_unit_vector(4, 0), (1, 0))
    assert is_parseval(hh, g).passed
    assert inner_product_preservation_check(hh, g) <= 1e-12
    assert any(line.startswith("operator_norm=") for line in rep.lines())


def test_is_parseval_rejects_fewer_outputs():
    with pytest.raises(ValueError, match="cannot be Parseval"):
        is_parseval(MultiFilter.zero(1, 2), Grid(4))


def test_defects_nonnegative_and_grid_free_time_test():
    rng = np.random.default_rng(5)
    H = random_filter(rng, 3, 2)
    assert paraunitarity_defect(H, Grid(7)) >= 0 and time_domain_defect(H) >= 0
    assert time_domain_defect(MultiFilter.zero(2, 2)) == pytest.approx(np.sqrt(2))


def test_inner_product_check_examples():
    g = Grid((4, 4))
    assert inner_product_preservation_check(MultiFilter.identity(2, 2), g) == 0.0
    chain = compose(build_householder([0.6, 0.8], (0, 1)),
                    compose(build_gen_shift([[1, 0], [0, 2]]), build_householder([1.0, 0.0], (1, 0))))
    assert inner_product_preservation_check(chain, g) <= 1e-11
    assert inner_product_preservation_check(random_filter(np.random.default_rng(6), 2, 2, 2), g) > 1e-3


def test_gram_projector_examples():
    g = Grid((4, 5))
    sq = gram_projector_check(build_gen_shift([[1, 0], [0, 1]]), g)
    assert sq.max_defect <= 1e-14
    patch = build_patch([[0], [1], [-1]], 1)
    rep = gram_projector_check(patch, Grid(9))
    assert rep.idempotence_defect <= 1e-11
    assert rep.symmetry_defect <= 1e-11
    assert rep.singular_value_defect <= 1e-12


def test_plancherel():
    rng = np.random.default_rng(7)
    x = MultiSignal.random(Grid((6, 7)), 2, rng=rng)
    xhat = np.fft.fftn(x.data, axes=(1, 2))
    assert np.sqrt(np.sum(np.abs(xhat) ** 2) / x.grid.K) == pytest.approx(norm(x), rel=1e-12)
