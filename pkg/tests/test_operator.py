import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import coefficients_from_grid, derivatives_on_grid, nonlinearity_on_grid
from qpm.operator import (
    BlockOperator,
    SplitOperator,
    apply,
    assemble_diagonal,
    assemble_T,
    block_norms,
    field_to_vector,
    identity,
    localized_norm,
    sites,
    vector_to_field,
    write_operator_csv,
)
from qpm.params import ModelParams
from qpm.spectra import SpectralField

seeds = st.integers(0, 2**32 - 1)


def field(n, N, rng, scale=0.3):
    return SpectralField.random(n, N, rng, decay=0.5, scale=scale)


def oracle_Df(w: SpectralField, h: SpectralField, eps: float, N_out: int) -> np.ndarray:
    """Df(w) h from point evaluations only, using that f is a cubic polynomial.

    f(w + h) - f(w - h) = 2 Df(w) h + 2 f3(h), where f3 is the eps-part of f(h).
    """
    N = max(w.N, h.N)
    wc, hc = w.resize(N).coeffs, h.resize(N).coeffs
    P = 6 * N + 2

    def f(c, e):
        return nonlinearity_on_grid(derivatives_on_grid(c, P), e)

    g = 0.5 * (f(wc + hc, eps) - f(wc - hc, eps)) - (f(hc, eps) - f(hc, 0.0))
    return coefficients_from_grid(g, N_out)


class TestSites:
    @pytest.mark.parametrize("N", [1, 3, 6])
    def test_count_and_order(self, N):
        s = sites(N)
        assert s.m == (2 * N + 1) ** 2 - 1
        for i, (l, j) in enumerate(s.lj):
            assert s.index(int(l), int(j)) == i
        assert np.array_equal(s.lj[s.conj_permutation()], -s.lj)

    def test_origin_not_a_site(self):
        with pytest.raises(KeyError):
            sites(2).index(0, 0)
        with pytest.raises(KeyError):
            sites(2).index(3, 0)

    def test_vector_round_trip(self, rng):
        u = field(3, 4, rng)
        x = field_to_vector(u, 4)
        assert x.shape == (3 * 80,)
        assert x[sites(4).index(1, -2) * 3 + 2] == u.mode(1, -2)[2]
        assert np.array_equal(vector_to_field(x, 3, 4).coeffs, u.coeffs)

    def test_vector_rejects_high_modes(self, rng):
        with pytest.raises(ValueError):
            field_to_vector(field(1, 5, rng), 3)
        # zero-padded high modes are fine
        assert field_to_vector(field(1, 3, rng).resize(6), 3).shape == (48,)


class TestDiagonal:
    def test_values(self):
        D = assemble_diagonal(ModelParams(n=2, omega=1.3), 3)
        s = D.sites
        assert D.diag[s.index(2, 1)] == pytest.approx(2 * 1.69 * 4 - 1)
        assert D.diag[s.index(0, 3)] == -9
        assert D.tag == "diagonal"
        assert np.allclose(np.diag(D.to_dense()), np.repeat(D.diag, 2))

    def test_rejects_zero_cutoff(self):
        with pytest.raises(ValueError):
            assemble_diagonal(ModelParams(), 0)

    def test_algebra(self):
        D = assemble_diagonal(ModelParams(n=1), 2)
        I = identity(2, 1)
        assert np.array_equal((D @ I).diag, D.diag)
        assert np.array_equal((D + I).diag, D.diag + 1)
        assert np.array_equal(D.scale(2.0).diag, 2 * D.diag)
        with pytest.raises(ValueError):
            D + identity(3, 1)


class TestLinearization:
    @pytest.mark.parametrize("n,omega,eps", [(2, 1.0, 1e-3), (1, math.sqrt(2), 0.5), (3, 0.8, 0.0)])
    def test_apply_matches_pointwise_oracle(self, rng, n, omega, eps):
        p = ModelParams(n=n, omega=omega, epsilon=eps)
        N = 5
        w, h = field(n, 2, rng), field(n, N, rng)
        T = assemble_T(w, p, N)
        got = apply(T, h).coeffs
        ref = oracle_Df(w, h, eps, N)
        ref[:, N, N] = 0
        assert np.abs(got - ref).max() < 1e-12

    def test_symbolic_toeplitz_at_zero_eps(self, rng):
        # at eps = 0 the block (b, a) involves only the mode c = b - a of w:
        # [k, k'] = w_k(c) i l_c (l_a j_c - j_a l_c) + delta_kk' S(c) i l_a (l_c j_a - j_c l_a)
        n, N = 2, 4
        p = ModelParams(n=n, epsilon=0.0)
        w = field(n, 2, rng)
        B = assemble_T(w, p, N).blocks()
        s = sites(N)
        worst = 0.0
        for b, (lb, jb) in enumerate(s.lj):
            for a, (la, ja) in enumerate(s.lj):
                lc, jc = lb - la, jb - ja
                wc = w.mode(lc, jc)
                S = wc.sum()
                ref = np.outer(wc, np.ones(n)) * 1j * lc * (la * jc - ja * lc)
                ref += np.eye(n) * S * 1j * la * (lc * ja - jc * la)
                worst = max(worst, np.abs(B[b, a] - ref).max())
        assert worst < 1e-12

    @given(seeds)
    def test_real_operator(self, seed):
        r = np.random.default_rng(seed)
        p = ModelParams(n=2, epsilon=0.3)
        T = assemble_T(field(2, 2, r), p, 3)
        assert T.is_real()

    def test_finite_band(self, rng):
        # Df is at most quadratic in w, so blocks vanish beyond distance 2 N_w
        p = ModelParams(n=2, epsilon=0.3)
        T = assemble_T(field(2, 1, rng), p, 5)
        nb = block_norms(T)
        d = np.max(np.abs(T.sites.lj[:, None] - T.sites.lj[None]), axis=-1)
        assert nb[d > 2].max() < 1e-13
        assert nb[d == 2].max() > 1e-3

    def test_decay_envelope(self, rng):
        # for analytic w the off-diagonal blocks decay exponentially with distance
        p = ModelParams(n=1, epsilon=1e-3)
        w = SpectralField.random(1, 6, rng, decay=1.0)
        T = assemble_T(w, p, 6)
        nb = block_norms(T)
        d = np.max(np.abs(T.sites.lj[:, None] - T.sites.lj[None]), axis=-1)
        env = [nb[d == k].max() for k in range(1, 7)]
        ratios = np.array(env[1:]) / np.array(env[:-1])
        assert np.all(ratios < 1.0)

    def test_matrix_free_agrees(self, rng):
        p = ModelParams(n=2, epsilon=0.2)
        w = field(2, 2, rng)
        Td = assemble_T(w, p, 4, dense=True)
        Tm = assemble_T(w, p, 4, dense=False)
        assert not Tm.is_dense
        X = rng.standard_normal((3, Td.size)) + 0j
        assert np.abs(Td.dot(X) - Tm.dot(X)).max() < 1e-12
        assert np.abs(Tm.to_dense() - Td.to_dense()).max() < 1e-12

    def test_component_mismatch(self, rng):
        T = assemble_T(field(2, 1, rng), ModelParams(n=2), 2)
        with pytest.raises(ValueError):
            apply(T, field(1, 2, rng))


class TestSplitOperator:
    def test_dense_form(self, rng):
        p = ModelParams(n=2, epsilon=0.1)
        D = assemble_diagonal(p, 3)
        T = assemble_T(field(2, 1, rng), p, 3)
        op = SplitOperator(D, T, p.coupling)
        x = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
        assert np.allclose(op.dot(x), op.to_dense() @ x)
        assert np.allclose(op.to_dense(), D.to_dense() + p.coupling * T.to_dense())
        assert np.allclose(op.as_block().to_dense(), op.to_dense())


class TestLocalizedNorm:
    def test_diagonal(self):
        D = assemble_diagonal(ModelParams(n=2, omega=1.0), 3)
        # largest |2 l^2 - j^2| on the cutoff box is 18 at (3, 0)
        assert localized_norm(D, 0.2) == 18.0

    def test_matches_loop(self, rng):
        p = ModelParams(n=2, epsilon=0.2)
        T = assemble_T(field(2, 1, rng), p, 2)
        B = T.blocks()
        s = T.sites
        s_ = 0.15
        best = 0.0
        for b in range(s.m):
            acc = 0.0
            for a in range(s.m):
                dist = max(abs(s.lj[b, 0] - s.lj[a, 0]), abs(s.lj[b, 1] - s.lj[a, 1]))
                acc += math.exp(2 * s_ * dist) * np.linalg.norm(B[b, a], 2) ** 2
            best = max(best, math.sqrt(acc))
        assert localized_norm(T, s_) == pytest.approx(best, rel=1e-12)

    def test_monotone_in_s(self, rng):
        T = assemble_T(field(2, 1, rng), ModelParams(n=2, epsilon=0.2), 3)
        vals = [localized_norm(T, s) for s in (0.0, 0.1, 0.2)]
        assert vals == sorted(vals)

    @pytest.mark.parametrize("s", [0.05, 0.2])
    def test_algebra_ratio(self, rng, s):
        # ||AB||_s <= sqrt(m) ||A||_s ||B||_s by Cauchy-Schwarz on the block rows
        p = ModelParams(n=1, epsilon=0.2)
        A = assemble_T(field(1, 2, rng), p, 4)
        B = assemble_T(field(1, 2, rng), p, 4)
        ratio = localized_norm(A @ B, s) / (localized_norm(A, s) * localized_norm(B, s))
        assert 0 < ratio <= math.sqrt(A.sites.m)


def test_operator_csv(rng, tmp_path):
    T = assemble_T(field(1, 1, rng), ModelParams(n=1, epsilon=0.1), 2)
    path = tmp_path / "op.csv"
    write_operator_csv(T, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["l_a", "j_a", "l_b", "j_b", "frobenius"]
    fro = np.sqrt(np.sum(np.abs(T.blocks()) ** 2, axis=(2, 3)))
    assert len(rows) - 1 == int(np.sum(fro > 1e-15))


def test_block_operator_validation():
    with pytest.raises(ValueError):
        BlockOperator(2, 1, "banded", diag=np.ones(24))
    with pytest.raises(ValueError):
        BlockOperator(2, 1, "general")
