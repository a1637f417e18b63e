"""Frame operator, reconstruction solvers and pseudoinverse perturbation bounds.

Everything acts on the interior-restricted sampling matrix ``M``: the
columns whose samples are all retained.  Coefficients outside the interior
are zero in every returned CoeffVector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .amalgam import DEFAULT_SPEC, EsssupSpec, GeneratorVector
from .errors import (DegenerateOperator, DimensionMismatch, InadmissibleEpsilon, InadmissibleNu,
                     IterationCapExceeded, SingularNormalEquations)
from .measure import VecMeasure
from .sampling_op import SamplingOperator, SamplingSet, assemble, sample_signal, TruncationWindow
from .shift_space import CoeffVector, gram_matrix, lp_norm

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_CAP = 10000
COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class FrameSystem:
    """Interior sampling matrix with its spectral bounds and relaxation."""

    U: SamplingOperator
    M: np.ndarray
    eta: float
    beta: float

    @classmethod
    def from_operator(cls, U: SamplingOperator) -> "FrameSystem":
        M = U.dense(interior=True)
        s = scipy.linalg.svdvals(M) if M.size else np.zeros(1)
        eta, beta = float(s[-1]), float(s[0])
        if beta == 0.0 or eta < 1e-12 * beta:
            raise DegenerateOperator("frame system needs a positive lower bound")
        return cls(U, M, eta, beta)

    @property
    def relaxation(self) -> float:
        return 2.0 / (self.eta**2 + self.beta**2)

    @property
    def contraction(self) -> float:
        return (self.beta**2 - self.eta**2) / (self.beta**2 + self.eta**2)

    @property
    def columns(self) -> np.ndarray:
        return self.U.interior_columns()

    def restrict(self, C: CoeffVector) -> np.ndarray:
        if C.K != self.U.K or C.r != self.U.r:
            raise DimensionMismatch("coefficient window differs from the operator")
        return C.flat()[self.columns]

    def embed(self, c: np.ndarray) -> CoeffVector:
        full = np.zeros(self.U.r * self.U.ncols, dtype=np.result_type(c, float))
        full[self.columns] = c
        return CoeffVector.from_flat(self.U.K, full, self.U.r, self.U.dim)

    def samples(self, b) -> np.ndarray:
        b = np.asarray(b).reshape(-1)
        if b.size != self.M.shape[0]:
            raise DimensionMismatch("sample vector does not match the operator rows")
        return b


def frame_apply(system: FrameSystem, C: CoeffVector) -> CoeffVector:
    """``S C = U*(U C)`` on the interior."""
    c = system.restrict(C)
    return system.embed(system.M.conj().T @ (system.M @ c))


@dataclass(frozen=True)
class ReconstructionResult:
    coefficients: CoeffVector
    iterations: int
    residual: float
    method: str
    history: tuple = ()
    converged: bool = True


def _clean(c):
    return c.real if not np.any(np.imag(c)) else c


def reconstruct_richardson(system: FrameSystem, b, tol: float = DEFAULT_TOL,
                           cap: int = DEFAULT_CAP, strict: bool = False) -> ReconstructionResult:
    """Frame algorithm ``c <- c + lam U*(b - U c)`` from ``c = 0``.

    ``history`` holds ``||U*(b - U c)||`` after each step.  At the cap the
    best iterate is returned with ``converged=False`` (or raised if ``strict``).
    """
    M = system.M
    MH = M.conj().T
    b = system.samples(b)
    lam = system.relaxation
    g = MH @ b
    ref = float(np.linalg.norm(g))
    c = np.zeros(M.shape[1], dtype=np.result_type(M, b, float))
    hist = [ref]
    if ref == 0.0:
        return ReconstructionResult(system.embed(_clean(c)), 0, float(np.linalg.norm(b)),
                                    "richardson", tuple(hist))
    r = g.copy()
    it = 0
    while hist[-1] > tol * ref:
        if it >= cap:
            msg = f"richardson stopped at the cap ({cap}) with residual {hist[-1]:.3e}"
            if strict:
                raise IterationCapExceeded(msg)
            log.warning(msg)
            return ReconstructionResult(system.embed(_clean(c)), it,
                                        float(np.linalg.norm(b - M @ c)), "richardson",
                                        tuple(hist), False)
        c = c + lam * r
        r = g - MH @ (M @ c)
        hist.append(float(np.linalg.norm(r)))
        it += 1
    return ReconstructionResult(system.embed(_clean(c)), it, float(np.linalg.norm(b - M @ c)),
                                "richardson", tuple(hist))


def reconstruct_cg(system: FrameSystem, b, tol: float = DEFAULT_TOL,
                   cap: int = DEFAULT_CAP) -> ReconstructionResult:
    """Conjugate gradients on the normal equations."""
    M = system.M
    MH = M.conj().T
    b = system.samples(b)
    rhs = MH @ b
    if not np.any(rhs):
        return ReconstructionResult(system.embed(np.zeros(M.shape[1])), 0,
                                    float(np.linalg.norm(b)), "cg")
    count = [0]

    def tick(_):
        count[0] += 1

    S = spla.LinearOperator((M.shape[1],) * 2, matvec=lambda v: MH @ (M @ v),
                            dtype=np.result_type(M, float))
    c, info = spla.cg(S, rhs, rtol=tol, atol=0.0, maxiter=cap, callback=tick)
    return ReconstructionResult(system.embed(_clean(c)), count[0],
                                float(np.linalg.norm(b - M @ c)), "cg", (), info == 0)


def normal_matrix(system: FrameSystem) -> np.ndarray:
    return system.M.conj().T @ system.M


def reconstruction_matrix(system: FrameSystem) -> np.ndarray:
    """``R = (U*U)^-1 U*``; its rows realize the dual frame."""
    S = normal_matrix(system)
    if np.linalg.cond(S) > COND_LIMIT:
        raise SingularNormalEquations("normal equations are numerically singular")
    return scipy.linalg.solve(S, system.M.conj().T, assume_a="pos")


def reconstruct_normal(system: FrameSystem, b) -> ReconstructionResult:
    """Direct solve of ``(U*U) c = U* b``."""
    b = system.samples(b)
    R = reconstruction_matrix(system)
    c = R @ b
    return ReconstructionResult(system.embed(_clean(c)), 0,
                                float(np.linalg.norm(b - system.M @ c)), "normal")


def reconstruct(system: FrameSystem, b, method: str = "richardson", **kw) -> ReconstructionResult:
    solvers = {"richardson": reconstruct_richardson, "cg": reconstruct_cg,
               "normal": reconstruct_normal}
    if method not in solvers:
        raise ValueError(f"unknown method {method!r}")
    return solvers[method](system, b, **kw)


# ---------------------------------------------------------------------------
# perturbation bounds


def admissible_sup(eta: float, beta: float) -> float:
    """Supremum of admissible operator distances, ``sqrt(beta^2 + eta^2) - beta``."""
    # written without cancellation
    return eta * eta / (math.hypot(beta, eta) + beta)


def nu(epsilon: float, eta: float, beta: float) -> tuple[float, bool]:
    """``eps (eps + 2 beta) / eta^2`` and whether ``eps`` is admissible."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    value = epsilon * (epsilon + 2.0 * beta) / eta**2
    return value, epsilon < admissible_sup(eta, beta)


def gram_distance_bound(epsilon: float, beta: float) -> float:
    return epsilon * (2.0 * beta + epsilon)


def inverse_distance_bound(nu_value: float, eta: float) -> float:
    if nu_value >= 1:
        raise InadmissibleNu(f"nu={nu_value:.6g} >= 1")
    return nu_value / (eta**2 * (1.0 - nu_value))


def pseudoinverse_bound(epsilon: float, eta: float, beta: float) -> float:
    v, ok = nu(epsilon, eta, beta)
    if not ok or v >= 1:
        raise InadmissibleEpsilon(
            f"eps={epsilon:.6g} outside (0, {admissible_sup(eta, beta):.6g})")
    return (epsilon + v * (beta + epsilon) / (1.0 - v)) / eta**2


@dataclass(frozen=True)
class ErrorBudget:
    epsilon: float
    eta: float
    beta: float
    nu: float
    gram_bound: float
    inverse_bound: float
    pseudoinverse_bound: float
    admissible: bool

    @classmethod
    def build(cls, epsilon: float, eta: float, beta: float) -> "ErrorBudget":
        v, ok = nu(epsilon, eta, beta)
        ok = ok and v < 1
        inv = inverse_distance_bound(v, eta) if ok else math.inf
        pinv = pseudoinverse_bound(epsilon, eta, beta) if ok else math.inf
        return cls(epsilon, eta, beta, v, gram_distance_bound(epsilon, beta), inv, pinv, ok)


@dataclass(frozen=True)
class MeasuredDistances:
    epsilon: float
    gram: float
    inverse: float
    pseudoinverse: float


def measured_distances(U: SamplingOperator, V: SamplingOperator) -> MeasuredDistances:
    """Spectral-norm distances between the interior matrices of two aligned operators."""
    if not np.array_equal(U.rows, V.rows) or not np.array_equal(U.interior, V.interior):
        raise DimensionMismatch("operators are not index aligned")
    A = U.dense(interior=True)
    B = V.dense(interior=True)
    SA = A.conj().T @ A
    SB = B.conj().T @ B
    two = lambda X: float(scipy.linalg.svdvals(X)[0]) if X.size else 0.0
    iA, iB = np.linalg.inv(SA), np.linalg.inv(SB)
    return MeasuredDistances(two(A - B), two(SA - SB), two(iA - iB),
                             two(iA @ A.conj().T - iB @ B.conj().T))


# ---------------------------------------------------------------------------
# end to end


@dataclass(frozen=True)
class EndToEnd:
    error: float
    bound_chain: float
    coefficient_error: float
    upper_riesz: float


def upper_riesz_on_window(phi: GeneratorVector, K: int) -> float:
    """Square root of the largest Gram eigenvalue over the whole window."""
    G = gram_matrix(phi, K)
    return float(math.sqrt(max(np.linalg.eigvalsh(G)[-1], 0.0)))


def end_to_end_error(U: SamplingOperator, phi: GeneratorVector, C: CoeffVector,
                     theta: GeneratorVector, alpha: VecMeasure, X_perturbed: SamplingSet,
                     spec: EsssupSpec = DEFAULT_SPEC, upper: Optional[float] = None) -> EndToEnd:
    """Reconstruct ``f = sum C_k Phi_k`` from perturbed samples with the unperturbed ``R``.

    ``C`` must vanish off the interior.  Returns the quadrature L^2 error, the
    chain ``M_2 ||R U_pert C - C||`` and the coefficient error.
    """
    system = FrameSystem.from_operator(U)
    c_in = system.restrict(C)
    if np.any(np.delete(C.flat(), system.columns)):
        raise ValueError("C must vanish outside the interior columns")
    R = reconstruction_matrix(system)
    b = sample_signal(C, theta, alpha, X_perturbed, U.rows, spec).reshape(-1)
    c_rec = R @ b
    V = assemble(theta, alpha, X_perturbed, TruncationWindow(U.K), spec, like=U)
    chain_c = R @ (V.dense(interior=True) @ c_in)
    M2 = upper_riesz_on_window(phi, U.K) if upper is None else upper
    diff = system.embed(_clean(c_rec - c_in))
    err = lp_norm(diff, phi, 2)
    return EndToEnd(float(err), float(M2 * np.linalg.norm(chain_c - c_in)),
                    float(np.linalg.norm(c_rec - c_in)), M2)


__all__ = [
    "FrameSystem", "frame_apply", "ReconstructionResult", "reconstruct_richardson",
    "reconstruct_cg", "reconstruct_normal", "reconstruct", "reconstruction_matrix",
    "normal_matrix", "admissible_sup", "nu", "gram_distance_bound", "inverse_distance_bound",
    "pseudoinverse_bound", "ErrorBudget", "MeasuredDistances", "measured_distances",
    "EndToEnd", "upper_riesz_on_window", "end_to_end_error",
]
