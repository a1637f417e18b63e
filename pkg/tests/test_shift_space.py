import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import toeplitz

from sis.amalgam import BSpline, GeneratorVector, TruncatedGaussian
from sis.errors import DegenerateGram
from sis.shift_space import (CoeffVector, RieszBounds, coeff_norm, dual_generator, gram_matrix,
                             interior_indices, lp_norm, riesz_bounds, support_margin, synthesize,
                             window_shifts)


def spline_gram_oracle(n, K):
    # <beta^n, beta^n(. - k)> = beta^{2n+1}(n + 1 + k)
    col = BSpline(2 * n + 1)(n + 1 + np.arange(2 * K + 1, dtype=float))
    return toeplitz(col)


class TestCoefficients:
    def test_window_shifts(self):
        assert list(window_shifts(2)) == [-2, -1, 0, 1, 2]
        assert window_shifts(1, dim=2).shape == (9, 2)

    def test_unit_and_flat_roundtrip(self):
        C = CoeffVector.unit(4, -1, i=1, r=2)
        assert C.r == 2
        back = CoeffVector.from_flat(4, C.flat(), r=2)
        np.testing.assert_array_equal(back.data, C.data)
        assert np.flatnonzero(C.flat()).tolist() == [9 + 3]

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            CoeffVector(2, np.ones(4))

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            CoeffVector(1, np.array([1.0, np.inf, 0.0]))

    def test_coeff_norm_sums_components(self):
        C = CoeffVector(1, np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]]))
        assert coeff_norm(C, 2) == pytest.approx(6.0)
        assert coeff_norm(C, 1) == pytest.approx(8.0)
        assert coeff_norm(C, math.inf) == pytest.approx(5.0)

    def test_riesz_bounds_validate(self):
        with pytest.raises(ValueError):
            RieszBounds(2.0, 2.0, 1.0, "x")


class TestSynthesis:
    def test_single_hat(self, phi_hat):
        C = CoeffVector.unit(8, 2)
        x = np.array([2.0, 2.5, 3.0, 3.5])
        np.testing.assert_allclose(synthesize(C, phi_hat, x), [0.0, 0.5, 1.0, 0.5])

    def test_hat_interpolates_samples(self, phi_hat):
        # beta^1(x - k + 1) peaks at integers, so coefficients are the samples
        rng = np.random.default_rng(0)
        c = rng.standard_normal(17)
        f = synthesize(CoeffVector(8, c), phi_hat, np.arange(-8, 9) + 1.0)
        np.testing.assert_allclose(f, c, atol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
    def test_linear(self, a, b, seed):
        phi = GeneratorVector([BSpline(2)])
        rng = np.random.default_rng(seed)
        c1, c2 = rng.standard_normal((2, 9))
        x = np.linspace(-5, 7, 41)
        lhs = synthesize(CoeffVector(4, a * c1 + b * c2), phi, x)
        rhs = a * synthesize(CoeffVector(4, c1), phi, x) + b * synthesize(CoeffVector(4, c2), phi, x)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_expansion_is_order_independent(self, poly2):
        # slowly decaying generator: every shift touches every point
        rng = np.random.default_rng(11)
        K = 64
        c = rng.standard_normal(2 * K + 1)
        x = np.linspace(-10, 10, 57)
        terms = c[:, None] * poly2[0](x[None, :] - np.arange(-K, K + 1)[:, None])
        ref = synthesize(CoeffVector(K, c), poly2, x)
        for _ in range(10):
            total = np.zeros_like(x)
            for row in terms[rng.permutation(len(c))]:
                total += row
            np.testing.assert_allclose(total, ref, atol=1e-10)

    @pytest.mark.parametrize("p, want", [(1, 1.0), (2, math.sqrt(2 / 3)), (math.inf, 1.0)])
    def test_hat_lp_norms(self, phi_hat, p, want):
        assert lp_norm(CoeffVector.unit(8, 0), phi_hat, p) == pytest.approx(want, rel=1e-12)


class TestGram:
    @pytest.mark.parametrize("n", [0, 1, 2, 3])
    def test_matches_spline_autocorrelation(self, n):
        G = gram_matrix(GeneratorVector([BSpline(n)]), 12)
        np.testing.assert_allclose(G, spline_gram_oracle(n, 12), atol=1e-13)

    def test_hermitian_for_vector_generators(self):
        phi = GeneratorVector([BSpline(1), TruncatedGaussian(0.6, 1.5, center=0.3)])
        G = gram_matrix(phi, 6)
        assert G.shape == (26, 26)
        np.testing.assert_allclose(G, G.conj().T, atol=0)
        assert np.linalg.eigvalsh(G)[0] > 0

    def test_polydecay_gram_is_toeplitz(self, poly2):
        G = gram_matrix(poly2, 8)
        np.testing.assert_allclose(np.diag(G, 1), G[0, 1], rtol=1e-12)
        assert G[0, 0] > G[0, 1] > G[0, 2] > 0

    def test_margins(self, phi_hat, poly2):
        assert support_margin(phi_hat) == 2
        assert support_margin(poly2) == -1
        idx = interior_indices(8, 1, 2)
        assert idx[0] == 2 and idx[-1] == 14
        with pytest.raises(ValueError):
            interior_indices(2, 1, 3)


class TestRieszBounds:
    @pytest.mark.parametrize("K", [16, 32, 64])
    def test_hat_bounds_lie_in_symbol_range(self, phi_hat, K):
        # the symbol (2 + cos t)/3 ranges over [1/3, 1]
        rb = riesz_bounds(phi_hat, K)
        assert 1 / math.sqrt(3) - 1e-12 <= rb.m_p
        assert rb.M_p <= 1 + 1e-12

    def test_hat_bounds_tighten_with_the_window(self, phi_hat):
        bs = [riesz_bounds(phi_hat, K) for K in (16, 32, 64)]
        assert bs[0].m_p > bs[1].m_p > bs[2].m_p
        assert bs[0].M_p < bs[1].M_p < bs[2].M_p
        assert bs[2].m_p ** 2 == pytest.approx(1 / 3, abs=2e-3)
        assert bs[2].M_p ** 2 == pytest.approx(1.0, abs=2e-3)

    def test_duplicated_generator_is_degenerate(self):
        with pytest.raises(DegenerateGram):
            riesz_bounds(GeneratorVector([BSpline(1), BSpline(1)]), 8)

    @pytest.mark.parametrize("p", [1, math.inf])
    def test_heuristic_bounds(self, phi_hat, p):
        rb = riesz_bounds(phi_hat, 16, p)
        assert rb.method == "heuristic-search"
        assert rb.M_p == pytest.approx(2.0, rel=1e-6)
        assert 0 < rb.m_p <= rb.M_p

    def test_unsupported_p(self, phi_hat):
        with pytest.raises(ValueError):
            riesz_bounds(phi_hat, 8, 3)


class TestDual:
    def test_hat_dual_center(self, phi_hat):
        assert dual_generator(phi_hat, 64).center().real == pytest.approx(math.sqrt(3), abs=1e-6)

    def test_biorthogonal(self, phi_hat):
        assert dual_generator(phi_hat, 32).biorthogonality_residual() < 1e-12

    def test_dual_neighbours_alternate(self, phi_hat):
        d = dual_generator(phi_hat, 64)
        col = d.A[:, np.nonzero(d.columns == 64)[0][0]]
        z = 2 - math.sqrt(3)
        assert col[65] / col[64] == pytest.approx(-z, rel=1e-9)

    def test_polydecay_dual_exists(self, poly2):
        assert dual_generator(poly2, 16).biorthogonality_residual() < 1e-10
