"""Perturbation budgets for generator, measure and jitter changes.

All closed forms take the function-side lower bound ``A``, the Riesz lower
bound ``m``, the mesh constant ``N``, the dimension ``d``, the total
variation of the measures and the W^1 norm of the generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .amalgam import (DEFAULT_SPEC, EsssupSpec, GeneratorComponent, GeneratorVector,
                      osc_w1_norm, w_norm)
from .errors import BudgetExceeded, DimensionMismatch
from .measure import Convolved, Density, MeasureComponent, VecMeasure, combine
from .sampling_op import SamplingOperator, matrix_norm, mesh_constant

# relative slack for measured-vs-predicted verdicts on truncated operators
TOLERANCE = 0.02


@dataclass(frozen=True)
class BudgetInputs:
    A: float
    m: float
    N: float
    d: int
    mu_tv: float
    phi_w1: float
    B: Optional[float] = None

    def __post_init__(self):
        for name in ("m", "N", "mu_tv", "phi_w1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.A < 0:
            raise ValueError("A must be nonnegative")

    @property
    def scale(self) -> float:
        """``2^d N ||mu||``."""
        return 2.0**self.d * self.N * self.mu_tv


@dataclass(frozen=True)
class PerturbationBudget:
    """A budget ``epsilon0`` with the closed forms of the perturbed bounds."""

    kind: str
    epsilon0: float
    inputs: BudgetInputs
    extras: dict = field(default_factory=dict)

    def bounds(self, eps: float) -> tuple[float, float]:
        if self.kind == "generator":
            return generator_perturbed_bounds(eps, self.inputs, epsilon0=self.epsilon0)
        if self.kind == "measure":
            return measure_perturbed_bounds(eps, self.inputs)
        if self.kind == "combined":
            return combined_perturbed_bounds(eps, self.inputs, self.extras["epsilon1"])
        raise ValueError(f"no closed-form bounds for kind {self.kind!r}")

    def as_dict(self) -> dict:
        out = {"kind": self.kind, "epsilon0": self.epsilon0}
        out.update({k: v for k, v in vars(self.inputs).items() if v is not None})
        out.update(self.extras)
        return out


# ---------------------------------------------------------------------------
# generator perturbation


def generator_root(inp: BudgetInputs) -> tuple[float, float]:
    """``(C_p, eps)`` with eps the positive root of ``e^2 + C_p e - A m^2 / (2^d N ||mu||) = 0``."""
    c_p = inp.phi_w1 + inp.A * inp.m / inp.scale
    q = inp.A * inp.m**2 / inp.scale
    disc = math.sqrt(c_p * c_p + 4.0 * q)
    # cancellation-free form of (disc - c_p) / 2
    root = 2.0 * q / (disc + c_p) if q > 0 else 0.0
    return c_p, root


def epsilon0_generator(A: float, m: float, N: float, d: int, mu_tv: float,
                       phi_w1: float) -> PerturbationBudget:
    """Budget for ``||Phi - Theta||_W1 < eps``, capped below ``m``."""
    inp = BudgetInputs(A, m, N, d, mu_tv, phi_w1)
    c_p, root = generator_root(inp)
    eps0 = min(root, m)
    return PerturbationBudget("generator", eps0, inp,
                              {"C_p": c_p, "root": root, "capped": root >= m})


def generator_perturbed_bounds(eps: float, inp: BudgetInputs,
                               epsilon0: Optional[float] = None,
                               m_prime: Optional[float] = None) -> tuple[float, float]:
    """``(A', B')`` for a generator perturbation of size ``eps``.

    ``m_prime`` replaces ``m - eps`` by a measured lower Riesz bound of the
    perturbed generator (sharper, off by default).
    """
    if epsilon0 is None:
        epsilon0 = min(generator_root(inp)[1], inp.m)
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps > epsilon0 or eps >= inp.m:
        raise BudgetExceeded(f"eps={eps:.6g} outside the budget {epsilon0:.6g}")
    denom = inp.m - eps if m_prime is None else m_prime
    a = inp.A * inp.m / (inp.phi_w1 + eps) - inp.scale * eps / denom
    b = inp.scale * (inp.phi_w1 + eps) / denom
    return a, b


# ---------------------------------------------------------------------------
# measure perturbation


def epsilon0_measure(A: float, m: float, N: float, d: int, phi_w1: float,
                     B: Optional[float] = None) -> PerturbationBudget:
    """Budget for ``||mu - alpha|| < eps``: ``A m / (2^d N ||Phi||_W1)``."""
    inp = BudgetInputs(A, m, N, d, 1.0, phi_w1, B)
    eps0 = A * m / (2.0**d * N * phi_w1)
    return PerturbationBudget("measure", eps0, inp)


def measure_perturbed_bounds(eps: float, inp: BudgetInputs) -> tuple[float, float]:
    corr = 2.0**inp.d * inp.N * inp.phi_w1 * eps / inp.m
    b = math.nan if inp.B is None else inp.B + corr
    return inp.A - corr, b


# ---------------------------------------------------------------------------
# combined


def epsilon0_combined(A: float, m: float, N: float, d: int, mu_tv: float, phi_w1: float,
                      epsilon1: Optional[float] = None) -> PerturbationBudget:
    """Chain a generator budget ``eps1`` into a measure budget ``eps2``.

    ``eps1`` must lie strictly below the generator root; by default it is half
    of it, which keeps ``A''`` positive.
    """
    inp = BudgetInputs(A, m, N, d, mu_tv, phi_w1)
    _, root = generator_root(inp)
    eps1 = 0.5 * min(root, m) if epsilon1 is None else float(epsilon1)
    if eps1 < 0 or (eps1 > 0 and eps1 >= min(root, m)):
        raise BudgetExceeded("eps1 must lie strictly below the generator budget")
    a2 = A * m / (phi_w1 + eps1) - inp.scale * eps1 / (m - eps1)
    b2 = inp.scale * (phi_w1 + eps1) / (m - eps1)
    eps2 = a2 * (m - eps1) / (2.0**d * N * (phi_w1 + eps1))
    eps0 = eps2 if eps1 == 0 else min(eps1, eps2)
    return PerturbationBudget("combined", eps0, inp,
                              {"epsilon1": eps1, "epsilon2": eps2, "A2": a2, "B2": b2})


def combined_perturbed_bounds(eps: float, inp: BudgetInputs, eps1: float) -> tuple[float, float]:
    """``(A', B')`` with the measure part of size ``eps`` after a generator part ``eps1``."""
    a2 = inp.A * inp.m / (inp.phi_w1 + eps1) - inp.scale * eps1 / (inp.m - eps1)
    b2 = inp.scale * (inp.phi_w1 + eps1) / (inp.m - eps1)
    corr = 2.0**inp.d * inp.N * (inp.phi_w1 + eps1) / (inp.m - eps1) * eps
    return a2 - corr, b2 + corr


# ---------------------------------------------------------------------------
# jitter


def jitter_bound(phi: GeneratorVector, mu: VecMeasure, delta_inf: float, sep_delta: float,
                 p: float = 2, spec: EsssupSpec = DEFAULT_SPEC) -> float:
    """``N * sum_{i,l} ||osc_gamma(phi^i * mu^l)||_W1`` at ``gamma = delta_inf``.

    ``sep_delta`` is the separation of the unperturbed set.
    """
    if not delta_inf > 0:
        raise ValueError("delta_inf must be positive")
    N = mesh_constant(sep_delta, p, phi.dim)
    total = 0.0
    for g in phi:
        for m in mu:
            if m.is_zero:
                continue
            total += osc_w1_norm(Convolved(g, m, spec), delta_inf, spec)
    return N * total


def operator_distance(U: SamplingOperator, V: SamplingOperator, p: float = 2,
                      interior: bool = False) -> float:
    """Norm of ``U - V``; both operators must share rows and window."""
    if U.K != V.K or U.r != V.r or U.t != V.t or not np.array_equal(U.rows, V.rows):
        raise DimensionMismatch("operators are not index aligned")
    D = (U.restricted() - V.restricted()) if interior else (U.stacked() - V.stacked())
    ncol = U.interior.size if interior else U.ncols
    return matrix_norm(D, p, [U.nrows] * U.t, [ncol] * U.r)


@dataclass(frozen=True)
class Transfer:
    eta: float
    beta: float
    accepted: bool


def nutshell_transfer(eta: float, beta: float, dist: float) -> Transfer:
    """Bounds of a perturbed operator ``dist`` away: ``(eta - dist, eta + beta)``."""
    if dist < 0:
        raise ValueError("dist must be nonnegative")
    if dist >= eta:
        return Transfer(math.nan, math.nan, False)
    return Transfer(eta - dist, eta + beta, True)


@dataclass(frozen=True)
class PerturbationReport:
    measured: float
    predicted: float
    budget_used: dict
    transfer: Optional[Transfer]
    verdict: str

    @classmethod
    def compare(cls, measured, predicted, budget_used=None, transfer=None,
                tolerance: float = TOLERANCE):
        ok = measured <= predicted * (1.0 + tolerance)
        return cls(float(measured), float(predicted), dict(budget_used or {}), transfer,
                   "pass" if ok else "fail")


# ---------------------------------------------------------------------------
# perturbed models used by tests and the cli


class SumComponent(GeneratorComponent):
    """``g + c * b`` for two 1-D components."""

    def __init__(self, g: GeneratorComponent, b: GeneratorComponent, c: float):
        if g.dim != b.dim:
            raise ValueError("dimension mismatch")
        self.g, self.b, self.c = g, b, float(c)
        self.dim = g.dim

    def _eval(self, x):
        return self.g(x) + self.c * self.b(x)

    def support(self):
        sg, sb = self.g.support(), self.b.support()
        if sg is None or sb is None:
            return None
        return (min(sg[0], sb[0]), max(sg[1], sb[1]))

    def breakpoints(self):
        return np.unique(np.concatenate([self.g.breakpoints(), self.b.breakpoints()]))

    def decay_bound(self):
        db = self.g.decay_bound()
        if db is None:
            return None
        lo, hi = self.b.support()
        return (db[0] + abs(self.c) * float(np.abs(self.b.values).max()), db[1],
                db[2] + max(abs(lo), abs(hi)))

    def shifted(self, y):
        return SumComponent(self.g.shifted(y), self.b.shifted(y), self.c)

    def scaled(self, a):
        return SumComponent(self.g.scaled(a), self.b.scaled(a), self.c)


def hat_bump(center: float = 1.0, width: float = 0.5, h: float = 1.0 / 64):
    """Unit W^1-norm triangular bump on a grid of step ``h``."""
    from .amalgam import Tabulated

    n = int(round(2 * width / h))
    nodes = np.arange(n + 1) * h - width
    vals = np.maximum(0.0, 1.0 - np.abs(nodes) / width)
    bump = Tabulated(h, vals, center - width)
    return bump.scaled(1.0 / w_norm(bump, 1))


def perturb_generator(g: GeneratorComponent, eps: float, center: float = 1.0,
                      width: float = 0.5) -> SumComponent:
    """``g + eps * bump`` with ``||bump||_W1 = 1``, so the W^1 distance is ``eps``."""
    return SumComponent(g, hat_bump(center, width), eps)


def blur_measure(eps: float, width: float = 0.25, at: float = 0.0,
                 base: Optional[MeasureComponent] = None) -> MeasureComponent:
    """``base + (eps/2) (uniform[at - width, at + width] - delta_at)``.

    The default base is ``delta_at``.  The total-variation distance to the
    base is exactly ``eps``.
    """
    if base is None:
        base = MeasureComponent.dirac(at)
    dens = Density(2 * width, np.array([1.0 / (2 * width)]), at - width)
    move = MeasureComponent.dirac(at, -1.0).with_density(dens)
    return combine(base, move, 1.0, eps / 2)


__all__ = [
    "TOLERANCE", "BudgetInputs", "PerturbationBudget", "generator_root", "epsilon0_generator",
    "generator_perturbed_bounds", "epsilon0_measure", "measure_perturbed_bounds",
    "epsilon0_combined", "combined_perturbed_bounds", "jitter_bound", "operator_distance",
    "Transfer", "nutshell_transfer", "PerturbationReport", "SumComponent", "hat_bump",
    "perturb_generator", "blur_measure",
]
