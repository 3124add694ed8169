import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import direct_product, evaluate_series, grid, weighted_norm
from qpm.spectra import (
    SpectralField,
    analyze,
    differentiate,
    field_from_json,
    field_to_json,
    pointwise_product,
    project,
    sobolev_norm,
    synthesize,
)

seeds = st.integers(0, 2**32 - 1)


def conj_symmetric(u: SpectralField, tol=1e-12) -> bool:
    return u.is_real(tol)


class TestNorm:
    def test_zero(self):
        assert sobolev_norm(SpectralField.zeros(2, 5), 0.3) == 0.0

    def test_single_pair(self):
        u = SpectralField.from_modes(1, 2, {(0, 1, 1): 1.0})
        assert sobolev_norm(u, 0.1) == pytest.approx(math.sqrt(2 * math.exp(0.4)), abs=1e-12)
        assert sobolev_norm(u, 0.1) == pytest.approx(1.727324, abs=1e-6)

    def test_matches_loop_oracle(self, rng):
        u = SpectralField.random(3, 6, rng, decay=0.2)
        assert sobolev_norm(u, 0.17) == pytest.approx(weighted_norm(u.coeffs, 0.17), rel=1e-13)

    def test_components_are_summed(self):
        u = SpectralField.from_modes(2, 1, {(0, 1, 0): 1.0, (1, 0, 1): 1.0})
        assert sobolev_norm(u, 0.0) == pytest.approx(2 * math.sqrt(2))

    @given(seeds, st.floats(0, 0.5), st.floats(0, 0.5))
    def test_monotone_in_s(self, seed, s1, s2):
        u = SpectralField.random(2, 5, np.random.default_rng(seed))
        lo, hi = sorted((s1, s2))
        assert sobolev_norm(u, lo) <= sobolev_norm(u, hi) * (1 + 1e-14)

    def test_negative_index_rejected(self):
        with pytest.raises(ValueError):
            sobolev_norm(SpectralField.zeros(1, 1), -0.1)


class TestProject:
    def test_drops_high_modes(self):
        u = SpectralField.from_modes(1, 7, {(0, 0, 1): 1.0, (0, 5, 7): 2.0})
        v = project(u, 4)
        assert v.N == 4
        assert v.mode(0, 1)[0] == 1.0
        assert sobolev_norm(v, 0) == pytest.approx(math.sqrt(2))

    def test_idempotent_and_linear(self, rng):
        u = SpectralField.random(2, 9, rng)
        v = SpectralField.random(2, 9, rng)
        assert np.array_equal(project(project(u, 4), 4).coeffs, project(u, 4).coeffs)
        lhs = project(u * 2.0 + v, 4)
        rhs = project(u, 4) * 2.0 + project(v, 4)
        assert np.allclose(lhs.coeffs, rhs.coeffs, atol=1e-15)

    def test_max_norm_cutoff(self):
        # (3, 3) has |l| + |j| = 6 but max-norm 3
        u = SpectralField.from_modes(1, 4, {(0, 3, 3): 1.0, (0, 4, 0): 1.0})
        v = project(u, 3)
        assert v.mode(3, 3)[0] == 1.0 and v.mode(4, 0)[0] == 0.0

    def test_tail_bound_example(self, rng):
        u = SpectralField.random(1, 32, rng, decay=0.3)
        N, s, d = 8, 0.2, 1.0
        tail = u - project(u, N)
        assert sobolev_norm(tail, s) <= N**-d * sobolev_norm(u, s + d)

    @given(seeds, st.integers(2, 12), st.floats(0.0, 2.0), st.floats(0.0, 0.5))
    def test_tail_bound_property(self, seed, N, d, s):
        u = SpectralField.random(2, 16, np.random.default_rng(seed), decay=0.1)
        tail = u - project(u, N)
        assert sobolev_norm(tail, s) <= N**-d * sobolev_norm(u, s + d) * (1 + 1e-12)

    @given(seeds, st.integers(1, 8), st.floats(0.0, 1.0), st.floats(0.0, 0.5))
    def test_smoothing_bound_with_forced_factor(self, seed, N, d, s):
        # ||Psi_N u||_{s+d} <= exp(2 N d) ||u||_s
        u = SpectralField.random(1, 10, np.random.default_rng(seed))
        assert sobolev_norm(project(u, N), s + d) <= math.exp(2 * N * d) * sobolev_norm(u, s) * (1 + 1e-12)


class TestDifferentiate:
    def test_single_mode(self):
        u = SpectralField.zeros(1, 3)
        c = u.coeffs.copy()
        c[0, 2 + 3, 3 + 3] = 1.0
        du = differentiate(SpectralField(c), "t")
        assert du.mode(2, 3)[0] == 2j

    def test_constant(self):
        u = SpectralField.from_modes(2, 2, {(0, 0, 0): 3.0, (1, 0, 0): -1.0})
        assert not np.any(differentiate(u, "ty").coeffs)

    def test_symbols(self, rng):
        u = SpectralField.random(1, 3, rng)
        for which, sym in [("t", lambda l, j: 1j * l), ("y", lambda l, j: 1j * j), ("tt", lambda l, j: -l * l),
                           ("ty", lambda l, j: -l * j), ("yy", lambda l, j: -j * j)]:
            d = differentiate(u, which)
            for l in range(-3, 4):
                for j in range(-3, 4):
                    assert d.mode(l, j)[0] == pytest.approx(sym(l, j) * u.mode(l, j)[0])

    def test_second_difference_oracle(self, rng):
        u = SpectralField.random(1, 4, rng, decay=0.5)
        P = 256
        h = 2 * np.pi / P
        x = synthesize(u, (P, P))[..., 0]
        fd = (np.roll(x, -1, 0) - 2 * x + np.roll(x, 1, 0)) / h**2
        exact = synthesize(differentiate(u, "tt"), (P, P))[..., 0]
        err = np.abs(fd - exact).max()
        # second-order scheme: error ~ h^2 l^4 / 12 |u|
        assert err < 4**4 * h**2 / 12 * np.abs(u.coeffs).sum()
        # and it really is second order
        P2 = 128
        h2 = 2 * np.pi / P2
        x2 = synthesize(u, (P2, P2))[..., 0]
        fd2 = (np.roll(x2, -1, 0) - 2 * x2 + np.roll(x2, 1, 0)) / h2**2
        err2 = np.abs(fd2 - synthesize(differentiate(u, "tt"), (P2, P2))[..., 0]).max()
        assert math.log2(err2 / err) == pytest.approx(2.0, abs=0.1)

    @given(seeds, st.sampled_from(["t", "y", "tt", "ty", "yy"]))
    def test_reality_and_linearity(self, seed, which):
        r = np.random.default_rng(seed)
        u, v = SpectralField.random(2, 4, r), SpectralField.random(2, 4, r)
        assert conj_symmetric(differentiate(u, which))
        lhs = differentiate(u * 1.5 - v, which).coeffs
        rhs = 1.5 * differentiate(u, which).coeffs - differentiate(v, which).coeffs
        assert np.allclose(lhs, rhs, atol=1e-13)

    def test_unknown_derivative(self):
        with pytest.raises(ValueError):
            differentiate(SpectralField.zeros(1, 1), "xx")


class TestProduct:
    def test_cos_squared(self):
        c = SpectralField.cosine(1, 2, 0, 1, 0)
        p = pointwise_product(c, c, 4)
        assert p.mode(0, 0)[0] == pytest.approx(0.5)
        # 1/2 cos(2t) has coefficient 1/4 at (+-2, 0)
        assert p.mode(2, 0)[0] == pytest.approx(0.25)
        assert p.mode(-2, 0)[0] == pytest.approx(0.25)
        assert np.abs(p.coeffs).sum() == pytest.approx(1.0)

    def test_zero(self, rng):
        u = SpectralField.random(2, 4, rng)
        assert np.abs(pointwise_product(u, SpectralField.zeros(2, 4), 8).coeffs).max() == 0

    def test_direct_convolution(self, rng):
        u, v = SpectralField.random(2, 8, rng), SpectralField.random(2, 8, rng)
        fast = pointwise_product(u, v, 8).coeffs
        slow = direct_product(u.coeffs, v.coeffs, 8)
        assert np.abs(fast - slow).max() <= 1e-12

    def test_full_product_no_alias(self, rng):
        u, v = SpectralField.random(1, 5, rng), SpectralField.random(1, 7, rng)
        fast = pointwise_product(u, v, 12).coeffs
        assert np.abs(fast - direct_product(u.coeffs, v.coeffs, 12)).max() <= 1e-12

    def test_scalar_broadcast(self, rng):
        a = SpectralField.random(1, 3, rng)
        v = SpectralField.random(3, 3, rng)
        p = pointwise_product(a, v, 6)
        for k in range(3):
            single = pointwise_product(a, SpectralField(v.coeffs[k : k + 1]), 6)
            assert np.allclose(p.coeffs[k], single.coeffs[0], atol=1e-14)

    def test_incompatible(self, rng):
        with pytest.raises(ValueError):
            pointwise_product(SpectralField.random(2, 2, rng), SpectralField.random(3, 2, rng), 2)

    @given(seeds, st.sampled_from([0.05, 0.1, 0.3]), st.integers(1, 8), st.floats(0.0, 1.0))
    def test_algebra_inequality_with_support_constant(self, seed, s, N, decay):
        # Young's inequality after moving the weights inside: ||uv||_s <= sqrt(#modes of u) ||u||_s ||v||_s
        r = np.random.default_rng(seed)
        u, v = SpectralField.random(1, N, r, decay=decay), SpectralField.random(1, N, r, decay=decay)
        uv = pointwise_product(u, v, 2 * N)
        K = np.count_nonzero(u.coeffs)
        assert sobolev_norm(uv, s) <= math.sqrt(K) * sobolev_norm(u, s) * sobolev_norm(v, s) * (1 + 1e-12)

    def test_unit_constant_fails_for_coherent_fields(self):
        # all modes in phase along a line: the product norm grows like K^(3/2), the bound like K
        K = 10
        u = SpectralField.from_modes(1, K, {(0, 0, j): 1.0 for j in range(1, K + 1)})
        s = 0.05
        assert sobolev_norm(pointwise_product(u, u, 2 * K), s) > sobolev_norm(u, s) ** 2

    @given(seeds)
    def test_leibniz(self, seed):
        r = np.random.default_rng(seed)
        u, v = SpectralField.random(1, 4, r), SpectralField.random(1, 4, r)
        lhs = differentiate(pointwise_product(u, v, 8), "t")
        rhs = pointwise_product(differentiate(u, "t"), v, 8) + pointwise_product(u, differentiate(v, "t"), 8)
        assert np.allclose(lhs.coeffs, rhs.coeffs, atol=1e-12)
        assert conj_symmetric(lhs)


class TestGrid:
    def test_zero_samples(self):
        assert not np.any(synthesize(SpectralField.zeros(2, 3), (8, 8)))

    def test_cos_at_origin(self):
        u = SpectralField.cosine(1, 2, 0, 1, 2)
        assert synthesize(u, (8, 8))[0, 0, 0] == pytest.approx(1.0)

    def test_round_trip(self, rng):
        u = SpectralField.random(2, 16, rng)
        back = analyze(synthesize(u, (64, 64)), 16)
        assert np.abs(back.coeffs - u.coeffs).max() <= 1e-12

    def test_samples_match_direct_sum(self, rng):
        u = SpectralField.random(2, 3, rng)
        s = synthesize(u, (16, 12))
        ref = evaluate_series(u.coeffs, grid(16), 2 * np.pi * np.arange(12) / 12)
        assert np.abs(np.moveaxis(s, -1, 0) - ref.real).max() < 1e-13

    def test_grid_too_small(self):
        with pytest.raises(ValueError):
            synthesize(SpectralField.zeros(1, 4), (8, 8))


class TestSerialization:
    def test_round_trip(self, rng):
        u = SpectralField.random(2, 5, rng)
        payload = field_to_json(u)
        assert all(r["l"] > 0 or (r["l"] == 0 and r["j"] >= 0) for r in payload["modes"])
        assert np.array_equal(field_from_json(payload).coeffs, u.coeffs)

    def test_rejects_lower_half_plane(self):
        with pytest.raises(ValueError):
            field_from_json({"n": 1, "N": 2, "modes": [{"k": 0, "l": -1, "j": 0, "re": 1.0, "im": 0.0}]})


def test_from_modes_validation():
    with pytest.raises(ValueError):
        SpectralField.from_modes(1, 2, {(0, 3, 0): 1.0})
    with pytest.raises(ValueError):
        SpectralField.from_modes(1, 2, {(0, 1, 0): 1.0, (0, -1, 0): 2.0})
    with pytest.raises(ValueError):
        SpectralField(np.zeros((1, 4, 4)))
