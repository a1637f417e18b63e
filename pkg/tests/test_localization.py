import math

import numpy as np
import pytest
from scipy.linalg import toeplitz

from sis.amalgam import GeneratorVector, PolyDecay
from sis.errors import SingularNormalEquations
from sis.localization import (check_Ws, cross_gram_decay, dual_cross_gram_decay, dual_decay_rate,
                              exponential_rate, fit_decay, inverse_decay, localization_report,
                              multi_p_stability)
from sis.measure import MeasureComponent, VecMeasure
from sis.sampling_op import SamplingModel
from sis.shift_space import dual_generator, gram_matrix

Z = 2 - math.sqrt(3)


class TestFits:
    def test_exact_power_law_passes(self):
        k = np.arange(0, 200, dtype=float)
        fit = fit_decay(k, 3.0 * (1 + k) ** -2.0, 2.0)
        assert fit.passed
        assert fit.c_hat == pytest.approx(3.0)
        assert fit.exponent == pytest.approx(2.0, rel=1e-12)

    def test_slower_decay_fails(self):
        k = np.arange(0, 200, dtype=float)
        fit = fit_decay(k, (1 + k) ** -1.5, 2.0)
        assert not fit.passed
        assert fit.exponent == pytest.approx(1.5, rel=1e-12)

    def test_compactly_supported_values_pass(self):
        k = np.arange(0, 50, dtype=float)
        fit = fit_decay(k, np.where(k < 3, 1.0, 0.0), 4.0)
        assert fit.passed

    def test_all_zero(self):
        fit = fit_decay(np.arange(5.0), np.zeros(5), 2.0)
        assert fit.passed and fit.c_hat == 0.0 and math.isnan(fit.exponent)

    def test_exponential_rate(self):
        k = np.arange(30, dtype=float)
        assert exponential_rate(k, 5 * 0.3**k) == pytest.approx(0.3, rel=1e-12)
        assert math.isnan(exponential_rate(k, np.where(k == 0, 1.0, 0.0)))


class TestGenerators:
    def test_spline_and_polydecay_pass(self, phi_hat, poly2):
        assert check_Ws(phi_hat, 3.0).verdict == "pass"
        rep = check_Ws(poly2, 2.0)
        assert rep.verdict == "pass"
        assert rep.C0[0] == pytest.approx(1.0, rel=1e-9)

    def test_slow_generator_fails(self):
        assert check_Ws(GeneratorVector([PolyDecay(1.5)]), 2.0).verdict == "fail"

    def test_s_must_exceed_dimension(self, phi_hat):
        with pytest.raises(ValueError):
            check_Ws(phi_hat, 1.0)


class TestInverseDecay:
    def test_hat_gram_inverse(self, phi_hat):
        res = inverse_decay(gram_matrix(phi_hat, 32), 2.0)
        assert res.rate == pytest.approx(Z, abs=1e-6)
        assert res.fit.passed
        # the infinite inverse has entries sqrt(3) (-z)^|k|
        c = res.inverse.shape[0] // 2
        assert res.inverse[c, c] == pytest.approx(math.sqrt(3), rel=1e-9)
        assert res.inverse[c, c + 3] == pytest.approx(math.sqrt(3) * (-Z) ** 3, rel=1e-9)

    def test_polynomial_toeplitz_inverse_keeps_the_exponent(self):
        k = np.arange(64, dtype=float)
        col = (1 + k) ** -3.0
        col[0] = 3.0
        res = inverse_decay(toeplitz(col), 3.0)
        assert res.fit.passed

    def test_rejects_singular(self):
        with pytest.raises(SingularNormalEquations):
            inverse_decay(np.ones((4, 4)), 2.0)
        with pytest.raises(ValueError):
            inverse_decay(np.ones((2, 3)), 2.0)

    def test_dual_rate(self, phi_hat):
        d = dual_generator(phi_hat, 64)
        assert dual_decay_rate(d) == pytest.approx(Z, abs=1e-6)
        assert d.center().real == pytest.approx(math.sqrt(3), abs=1e-9)


class TestCrossGram:
    @pytest.mark.parametrize("atoms", [
        [(0.0, 1.0)],
        [(0.0, 0.8), (1.0, 0.2)],
        [(-2.5, 0.3), (0.4, 1.0), (3.0, -0.5)],
    ])
    def test_polydecay_with_atomic_measures(self, poly2, atoms):
        model = SamplingModel(poly2, VecMeasure([MeasureComponent.atoms(atoms)]))
        U = model.operator(32)
        rep = localization_report(poly2, model.mu, U, 2.0, 32)
        assert rep.cross.passed
        assert rep.dual.passed
        assert math.isfinite(rep.moment)
        assert rep.verdict == "pass"

    def test_slow_generator_cross_gram_fails(self, delta0):
        phi = GeneratorVector([PolyDecay(1.5)])
        U = SamplingModel(phi, delta0).operator(32)
        assert not cross_gram_decay(U, 2.0).passed

    def test_dual_window_must_match(self, baseline):
        with pytest.raises(ValueError):
            dual_cross_gram_decay(baseline.phi, baseline.operator(16), 2.0, K=8)


class TestMultiP:
    def test_baseline(self, baseline):
        rep = multi_p_stability(baseline, K0=8, doublings=2)
        assert set(rep.verdicts.values()) == {"stable"}
        assert rep.localized and not rep.alert
        for r in rep.reports.values():
            assert r.eta_p == pytest.approx(1.0, abs=1e-10)

    def test_half_integer_is_unstable_everywhere(self, phi_hat, delta0):
        rep = multi_p_stability(SamplingModel(phi_hat, delta0, offset=0.5), K0=8, doublings=2)
        assert rep.verdicts[2.0] == "unstable"
        assert not rep.alert
