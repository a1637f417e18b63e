import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from sis.errors import (DegenerateOperator, DimensionMismatch, InadmissibleEpsilon,
                        InadmissibleNu, IterationCapExceeded, SingularNormalEquations)
from sis.measure import MeasureComponent, VecMeasure
from sis.reconstruction import (ErrorBudget, FrameSystem, admissible_sup, end_to_end_error,
                                frame_apply, gram_distance_bound, inverse_distance_bound,
                                measured_distances, normal_matrix, nu, pseudoinverse_bound,
                                reconstruct, reconstruct_cg, reconstruct_normal,
                                reconstruct_richardson, reconstruction_matrix,
                                upper_riesz_on_window)
from sis.sampling_op import SamplingModel, TruncationWindow, apply, assemble
from sis.shift_space import CoeffVector

FIXTURES_OK = [HealthCheck.function_scoped_fixture]


def random_interior(fs, seed, complex_=False):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(fs.M.shape[1])
    if complex_:
        c = c + 1j * rng.standard_normal(fs.M.shape[1])
    return fs.embed(c)


class TestFrameSystem:
    def test_shifted_hat_bounds(self, shifted_model):
        # symbol (3 + e^{-i t})/4 ranges in modulus over [1/2, 1]
        fs = FrameSystem.from_operator(shifted_model.operator(32))
        assert 0.5 <= fs.eta < 0.51
        assert 0.99 < fs.beta <= 1.0
        assert fs.relaxation == pytest.approx(2 / (fs.eta**2 + fs.beta**2))
        assert fs.contraction == pytest.approx(0.6, abs=0.01)

    def test_normal_matrix_is_hermitian_positive(self, shifted_model):
        fs = FrameSystem.from_operator(shifted_model.operator(16))
        S = normal_matrix(fs)
        np.testing.assert_allclose(S, S.conj().T, atol=0)
        lam = np.linalg.eigvalsh(S)
        assert lam[0] == pytest.approx(fs.eta**2, rel=1e-10)
        assert lam[-1] == pytest.approx(fs.beta**2, rel=1e-10)

    def test_frame_apply(self, shifted_model):
        U = shifted_model.operator(16)
        fs = FrameSystem.from_operator(U)
        C = random_interior(fs, 0)
        SC = frame_apply(fs, C)
        direct = fs.M.T @ (fs.M @ fs.restrict(C))
        np.testing.assert_allclose(fs.restrict(SC), direct, atol=1e-14)

    def test_shift_model_normal_matrix_is_identity(self, baseline):
        fs = FrameSystem.from_operator(baseline.operator(16))
        np.testing.assert_array_equal(normal_matrix(fs), np.eye(fs.M.shape[1]))
        np.testing.assert_allclose(reconstruction_matrix(fs), fs.M.T, atol=1e-15)

    @settings(max_examples=20, deadline=None, suppress_health_check=FIXTURES_OK)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_normal_matrix_bounded_below_and_symmetric(self, shifted_model, seed):
        fs = FrameSystem.from_operator(shifted_model.operator(16))
        S = normal_matrix(fs)
        rng = np.random.default_rng(seed)
        c1, c2 = rng.standard_normal((2, S.shape[0]))
        assert c1 @ S @ c1 >= fs.eta**2 * (c1 @ c1) - 1e-12
        assert (S @ c1) @ c2 == pytest.approx(c1 @ (S @ c2), abs=1e-12)

    def test_degenerate(self, phi_hat):
        model = SamplingModel(phi_hat, VecMeasure([MeasureComponent.zero()]))
        with pytest.raises(DegenerateOperator):
            FrameSystem.from_operator(model.operator(8))

    def test_shape_checks(self, shifted_model):
        fs = FrameSystem.from_operator(shifted_model.operator(8))
        with pytest.raises(DimensionMismatch):
            fs.restrict(CoeffVector.zeros(9))
        with pytest.raises(DimensionMismatch):
            fs.samples(np.zeros(3))


class TestSolvers:
    @pytest.mark.parametrize("method", ["richardson", "cg", "normal"])
    def test_exact_recovery(self, shifted_model, method):
        U = shifted_model.operator(32)
        fs = FrameSystem.from_operator(U)
        C = random_interior(fs, 1)
        res = reconstruct(fs, apply(U, C), method)
        np.testing.assert_allclose(res.coefficients.flat(), C.flat(), atol=1e-9)
        assert res.method == method

    def test_complex_coefficients(self, shifted_model):
        U = shifted_model.operator(16)
        fs = FrameSystem.from_operator(U)
        C = random_interior(fs, 2, complex_=True)
        res = reconstruct_richardson(fs, apply(U, C))
        np.testing.assert_allclose(res.coefficients.flat(), C.flat(), atol=1e-9)

    def test_left_inverse(self, shifted_model):
        fs = FrameSystem.from_operator(shifted_model.operator(16))
        R = reconstruction_matrix(fs)
        np.testing.assert_allclose(R @ fs.M, np.eye(fs.M.shape[1]), atol=1e-12)

    def test_residual_contracts_at_the_predicted_rate(self, shifted_model):
        U = shifted_model.operator(32)
        fs = FrameSystem.from_operator(U)
        res = reconstruct_richardson(fs, apply(U, random_interior(fs, 3)))
        h = np.array(res.history)
        assert res.converged
        assert np.all(h[1:] / h[:-1] <= fs.contraction + 1e-9)

    def test_zero_samples(self, shifted_model):
        fs = FrameSystem.from_operator(shifted_model.operator(8))
        res = reconstruct_richardson(fs, np.zeros(fs.M.shape[0]))
        assert res.iterations == 0 and not np.any(res.coefficients.flat())
        assert reconstruct_cg(fs, np.zeros(fs.M.shape[0])).iterations == 0

    def test_cap(self, shifted_model):
        U = shifted_model.operator(16)
        fs = FrameSystem.from_operator(U)
        b = apply(U, random_interior(fs, 4))
        res = reconstruct_richardson(fs, b, cap=3)
        assert not res.converged and res.iterations == 3
        with pytest.raises(IterationCapExceeded):
            reconstruct_richardson(fs, b, cap=3, strict=True)

    def test_unknown_method(self, shifted_model):
        fs = FrameSystem.from_operator(shifted_model.operator(8))
        with pytest.raises(ValueError):
            reconstruct(fs, np.zeros(fs.M.shape[0]), "gauss")

    def test_ill_conditioned_normal_equations(self, shifted_model):
        # singular values 1 and 1e-8 square to a condition number of 1e16
        U = shifted_model.operator(2)
        fs = FrameSystem(U, np.diag([1.0, 1e-8]), 1e-8, 1.0)
        with pytest.raises(SingularNormalEquations):
            reconstruct_normal(fs, np.zeros(2))

    @settings(max_examples=20, deadline=None, suppress_health_check=FIXTURES_OK)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_richardson_matches_normal(self, shifted_model, seed):
        U = shifted_model.operator(16)
        fs = FrameSystem.from_operator(U)
        rng = np.random.default_rng(seed)
        b = rng.standard_normal(fs.M.shape[0])
        # a noisy sample vector: both solve the same least-squares problem
        c1 = reconstruct_richardson(fs, b).coefficients.flat()
        c2 = reconstruct_normal(fs, b).coefficients.flat()
        np.testing.assert_allclose(c1, c2, atol=1e-9)


class TestBounds:
    def test_example_values(self):
        v, ok = nu(0.1, 1.0, 1.0)
        assert ok and v == pytest.approx(0.21, abs=1e-15)
        assert gram_distance_bound(0.1, 1.0) == pytest.approx(0.21, abs=1e-15)
        assert inverse_distance_bound(0.21, 1.0) == pytest.approx(0.21 / 0.79, rel=1e-14)
        assert pseudoinverse_bound(0.1, 1.0, 1.0) == pytest.approx(0.1 + 0.21 * 1.1 / 0.79, rel=1e-14)
        assert pseudoinverse_bound(0.1, 1.0, 1.0) == pytest.approx(0.39241, abs=1e-5)

    @settings(max_examples=60, deadline=None)
    @given(eta=st.floats(0.01, 10), ratio=st.floats(1.0, 100.0))
    def test_admissible_sup_is_where_nu_reaches_one(self, eta, ratio):
        beta = eta * ratio
        e = admissible_sup(eta, beta)
        assert e == pytest.approx(math.sqrt(beta**2 + eta**2) - beta, rel=1e-9, abs=1e-300)
        assert e * (e + 2 * beta) / eta**2 == pytest.approx(1.0, rel=1e-9)

    def test_inadmissible(self):
        e = admissible_sup(1.0, 1.0)
        assert not nu(e * 1.0001, 1.0, 1.0)[1]
        with pytest.raises(InadmissibleEpsilon):
            pseudoinverse_bound(e * 1.0001, 1.0, 1.0)
        with pytest.raises(InadmissibleNu):
            inverse_distance_bound(1.0, 1.0)
        with pytest.raises(ValueError):
            nu(-0.1, 1.0, 1.0)

    def test_error_budget(self):
        eb = ErrorBudget.build(0.1, 1.0, 1.0)
        assert eb.admissible
        assert eb.pseudoinverse_bound == pytest.approx(pseudoinverse_bound(0.1, 1.0, 1.0))
        bad = ErrorBudget.build(1.0, 1.0, 1.0)
        assert not bad.admissible and math.isinf(bad.pseudoinverse_bound)

    @settings(max_examples=15, deadline=None, suppress_health_check=FIXTURES_OK)
    @given(seed=st.integers(0, 2**31 - 1), gamma=st.floats(0.005, 0.08))
    def test_measured_distances_obey_the_bounds(self, shifted_model, seed, gamma):
        U = shifted_model.operator(16)
        fs = FrameSystem.from_operator(U)
        rng = np.random.default_rng(seed)
        X = U.sampling_set.with_jitter(rng.uniform(-gamma, gamma, len(U.sampling_set)))
        V = assemble(shifted_model.phi, shifted_model.mu, X, TruncationWindow(16), like=U)
        md = measured_distances(U, V)
        eb = ErrorBudget.build(md.epsilon, fs.eta, fs.beta)
        if not eb.admissible:
            return
        assert md.gram <= eb.gram_bound * (1 + 1e-12)
        assert md.inverse <= eb.inverse_bound * (1 + 1e-12)
        assert md.pseudoinverse <= eb.pseudoinverse_bound * (1 + 1e-12)

    def test_misaligned(self, shifted_model):
        with pytest.raises(DimensionMismatch):
            measured_distances(shifted_model.operator(8), shifted_model.operator(6))


class TestEndToEnd:
    def test_zero_perturbation_recovers_exactly(self, shifted_model):
        U = shifted_model.operator(16)
        fs = FrameSystem.from_operator(U)
        C = random_interior(fs, 5)
        res = end_to_end_error(U, shifted_model.phi, C, shifted_model.phi, shifted_model.mu,
                               U.sampling_set)
        assert res.error < 1e-12
        assert res.bound_chain < 1e-12

    def test_jittered_error_below_chain(self, shifted_model):
        U = shifted_model.operator(16)
        fs = FrameSystem.from_operator(U)
        C = random_interior(fs, 6)
        rng = np.random.default_rng(6)
        X = U.sampling_set.with_jitter(rng.uniform(-0.05, 0.05, len(U.sampling_set)))
        res = end_to_end_error(U, shifted_model.phi, C, shifted_model.phi, shifted_model.mu, X)
        assert 0 < res.error <= res.bound_chain + 1e-6

    def test_coefficients_must_be_interior(self, shifted_model):
        U = shifted_model.operator(8)
        with pytest.raises(ValueError):
            end_to_end_error(U, shifted_model.phi, CoeffVector.unit(8, -8), shifted_model.phi,
                             shifted_model.mu, U.sampling_set)

    def test_upper_riesz(self, phi_hat):
        assert upper_riesz_on_window(phi_hat, 32) == pytest.approx(1.0, abs=1e-2)
        assert upper_riesz_on_window(phi_hat, 32) <= 1.0
