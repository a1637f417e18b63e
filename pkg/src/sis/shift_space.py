"""The shift-invariant space spanned by integer shifts of a generator vector.

Coefficients live on a symmetric window ``[-K, K]`` (d = 1).  The flat index
of coefficient ``(i, k)`` is ``i * (2K+1) + (k + K)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .amalgam import GeneratorComponent, GeneratorVector, w_norm_vector, DEFAULT_SPEC
from .errors import DegenerateGram, QuadratureFailure

GRAM_ORDER = 8
GRAM_TOL = 1e-9
DEGENERACY = 1e-12
# how far past the window the quadrature looks for slowly decaying generators
_TAIL_REACH = 64.0


def window_shifts(K: int, dim: int = 1) -> np.ndarray:
    """Integer shifts of the window ``[-K, K]^d`` in flat (lexicographic) order."""
    ks = np.arange(-K, K + 1)
    if dim == 1:
        return ks
    grids = np.meshgrid(*([ks] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True, eq=False)
class CoeffVector:
    """``r`` coefficient sequences on the window ``[-K, K]^d``."""

    K: int
    data: np.ndarray
    dim: int = 1

    def __post_init__(self):
        arr = np.array(self.data, dtype=complex)
        if arr.ndim == 1:
            arr = arr[None, :]
        n = (2 * self.K + 1) ** self.dim
        if arr.shape[1] != n:
            raise ValueError(f"expected {n} coefficients per component")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def r(self) -> int:
        return self.data.shape[0]

    @property
    def shifts(self) -> np.ndarray:
        return window_shifts(self.K, self.dim)

    def flat(self) -> np.ndarray:
        return self.data.ravel()

    @classmethod
    def from_flat(cls, K: int, vec, r: int = 1, dim: int = 1) -> "CoeffVector":
        return cls(K, np.asarray(vec).reshape(r, -1), dim)

    @classmethod
    def zeros(cls, K: int, r: int = 1, dim: int = 1) -> "CoeffVector":
        return cls(K, np.zeros((r, (2 * K + 1) ** dim), dtype=complex), dim)

    @classmethod
    def unit(cls, K: int, k: int, i: int = 0, r: int = 1) -> "CoeffVector":
        data = np.zeros((r, 2 * K + 1), dtype=complex)
        data[i, k + K] = 1.0
        return cls(K, data)


@dataclass(frozen=True)
class RieszBounds:
    p: float
    m_p: float
    M_p: float
    method: str

    def __post_init__(self):
        if not 0 <= self.m_p <= self.M_p * (1 + 1e-12) or not math.isfinite(self.M_p):
            raise ValueError("Riesz bounds must satisfy 0 <= m_p <= M_p < inf")


def synthesize(C: CoeffVector, phi: GeneratorVector, x):
    """``f(x) = sum_k sum_i c^i_k phi^i(x - k)``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape if C.dim == 1 else x.shape[:-1], dtype=complex)
    ks = C.shifts
    for i, g in enumerate(phi):
        c = C.data[i]
        nz = np.nonzero(c)[0]
        if nz.size == 0:
            continue
        if C.dim == 1:
            vals = g(x[..., None] - ks[nz])
        else:
            vals = g(x[..., None, :] - ks[nz])
        out = out + vals @ c[nz]
    return out


def coeff_norm(C: CoeffVector, p: float) -> float:
    """Sum over components of the component l^p norms."""
    return float(sum(np.linalg.norm(row, ord=p) for row in C.data))


# ---------------------------------------------------------------------------
# Gram matrices


def _span(g: GeneratorComponent, reach: float) -> tuple[float, float]:
    sup = g.support()
    if sup is None:
        c = g.breakpoints()
        mid = float(c[0]) if c.size else 0.0
        return (mid - reach, mid + reach)
    return sup


def _pieces(gi, gj, shift: int, reach: float) -> np.ndarray:
    """Breakpoints splitting the overlap of ``gi`` and ``gj(. - shift)`` into smooth pieces."""
    a0, a1 = _span(gi, reach)
    b0, b1 = _span(gj, reach)
    lo, hi = max(a0, b0 + shift), min(a1, b1 + shift)
    if hi <= lo:
        return np.empty(0)
    pts = [np.array([lo, hi]), np.arange(math.ceil(lo), math.floor(hi) + 1, dtype=float),
           gi.breakpoints(), gj.breakpoints() + shift]
    pts = np.unique(np.concatenate(pts))
    return pts[(pts >= lo) & (pts <= hi)]


def _inner(gi, gj, shift: int, q: int, reach: float) -> complex:
    """``int gi(x) conj(gj(x - shift)) dx`` by piecewise Gauss-Legendre."""
    edges = _pieces(gi, gj, shift, reach)
    if edges.size < 2:
        return 0.0
    t, w = np.polynomial.legendre.leggauss(q)
    a, b = edges[:-1], edges[1:]
    x = (0.5 * (b - a))[:, None] * (t + 1.0)[None, :] + a[:, None]
    wx = (0.5 * (b - a))[:, None] * w[None, :]
    return complex(np.sum(wx * gi(x) * np.conj(gj(x - shift))))


def _correlations(phi: GeneratorVector, K: int, q: int, reach: float) -> np.ndarray:
    """``a[i, j, n] = <phi^i, phi^j(. - n)>`` for ``n`` in ``[-2K, 2K]``."""
    r = phi.r
    ns = np.arange(-2 * K, 2 * K + 1)
    out = np.zeros((r, r, ns.size), dtype=complex)
    for i in range(r):
        for j in range(r):
            for idx, n in enumerate(ns):
                out[i, j, idx] = _inner(phi[i], phi[j], int(n), q, reach)
    return out


def gram_matrix(phi: GeneratorVector, K: int, q: int = GRAM_ORDER,
                tol: float = GRAM_TOL) -> np.ndarray:
    """Hermitian Gram matrix ``<phi^i(. - k), phi^j(. - l)>`` on the window.

    Entries are recomputed with a rule of order ``2q``; a change larger than
    ``tol`` (relative to the largest entry) raises QuadratureFailure.
    """
    if phi.dim != 1:
        raise NotImplementedError("Gram matrices are implemented for d = 1")
    reach = 2 * K + _TAIL_REACH
    corr = _correlations(phi, K, q, reach)
    check = _correlations(phi, K, 2 * q, reach)
    scale = max(float(np.abs(check).max(initial=0.0)), 1e-300)
    drift = float(np.abs(corr - check).max(initial=0.0))
    if drift > tol * scale:
        raise QuadratureFailure(f"Gram entries moved by {drift:.3e} when the rule was doubled")
    corr = check
    n = 2 * K + 1
    r = phi.r
    G = np.zeros((r * n, r * n), dtype=complex)
    ks = np.arange(-K, K + 1)
    # <phi^i(.-k), phi^j(.-l)> = <phi^i, phi^j(. - (l-k))>
    offs = (ks[None, :] - ks[:, None]) + 2 * K
    for i in range(r):
        for j in range(r):
            G[i * n:(i + 1) * n, j * n:(j + 1) * n] = corr[i, j][offs]
    G = 0.5 * (G + G.conj().T)
    if not np.any(G.imag):
        G = G.real
    return G


def support_margin(phi: GeneratorVector, extra: float = 0.0) -> int:
    """Interior margin: generator support radius plus ``extra``, rounded up."""
    radius = 0.0
    for g in phi:
        sup = g.support()
        if sup is None:
            return -1
        radius = max(radius, abs(sup[0]), abs(sup[1]))
    return int(math.ceil(radius + extra))


def interior_indices(K: int, r: int, margin: int) -> np.ndarray:
    """Flat indices of coefficients at least ``margin`` away from the window edge."""
    if margin < 0:
        margin = max(1, K // 4)
    n = 2 * K + 1
    ks = np.arange(-K, K + 1)
    keep = np.nonzero(np.abs(ks) <= K - margin)[0]
    if keep.size == 0:
        raise ValueError("window too small for the interior margin")
    return np.concatenate([i * n + keep for i in range(r)])


def _interior_gram(phi, K):
    G = gram_matrix(phi, K)
    idx = interior_indices(K, phi.r, support_margin(phi))
    return G[np.ix_(idx, idx)], idx


def _lp_norm_function(f_vals, weights, p):
    if math.isinf(p):
        return float(np.max(np.abs(f_vals)))
    return float(np.sum(weights * np.abs(f_vals) ** p) ** (1.0 / p))


def _quadrature_grid(phi: GeneratorVector, K: int, q: int = GRAM_ORDER, per_cell: int = 4):
    lo, hi = math.inf, -math.inf
    for g in phi:
        s0, s1 = _span(g, 2 * K + _TAIL_REACH)
        lo, hi = min(lo, s0 - K), max(hi, s1 + K)
    edges = np.arange(math.floor(lo), math.ceil(hi) + 1e-9, 1.0 / per_cell)
    t, w = np.polynomial.legendre.leggauss(q)
    a, b = edges[:-1], edges[1:]
    x = ((0.5 * (b - a))[:, None] * (t + 1.0)[None, :] + a[:, None]).ravel()
    wx = ((0.5 * (b - a))[:, None] * w[None, :]).ravel()
    return x, wx


def lp_norm(C: CoeffVector, phi: GeneratorVector, p: float, grid=None) -> float:
    """L^p norm of the synthesized function (quadrature, or grid max for p = inf)."""
    x, wx = grid if grid is not None else _quadrature_grid(phi, C.K)
    if math.isinf(p) and C.dim == 1:
        # Gauss nodes never touch the kinks where piecewise generators peak
        ks = C.shifts.astype(float)
        bps = [(np.asarray(g.breakpoints(), dtype=float)[:, None] + ks[None, :]).ravel()
               for g in phi]
        x = np.concatenate([x, *bps])
    return _lp_norm_function(synthesize(C, phi, x), wx, p)


def riesz_bounds(phi: GeneratorVector, K: int, p: float = 2, n_random: int = 64,
                 seed: int = 0) -> RieszBounds:
    """Riesz bounds of the integer shifts of ``phi`` on the window.

    p = 2: square roots of the extreme eigenvalues of the interior Gram block;
    the lower bound is divided by ``sqrt(r)`` to account for the summed-norm
    convention for coefficient vectors.  p in {1, inf}: the upper bound is
    ``||phi||_W1``; the lower bound is the smallest ratio
    ``||f||_Lp / ||C||`` found over canonical and random sparse vectors, so it
    overestimates the true constant.
    """
    p = float(p)
    if p == 2:
        Gi, _ = _interior_gram(phi, K)
        lam = scipy.linalg.eigvalsh(Gi)
        lam_min, lam_max = float(lam[0]), float(lam[-1])
        if lam_min < DEGENERACY * lam_max:
            raise DegenerateGram(f"lambda_min={lam_min:.3e} vs lambda_max={lam_max:.3e}")
        return RieszBounds(2.0, math.sqrt(lam_min / phi.r), math.sqrt(lam_max), "gram-eigen")
    if p not in (1.0, math.inf):
        raise ValueError("p must be 1, 2 or inf")
    upper = w_norm_vector(phi, 1, DEFAULT_SPEC)
    rng = np.random.default_rng(seed)
    grid = _quadrature_grid(phi, K)
    idx = interior_indices(K, phi.r, support_margin(phi))
    n = phi.r * (2 * K + 1)
    candidates = [np.eye(1, n, j).ravel() for j in idx[: min(idx.size, 8)]]
    for _ in range(n_random):
        v = np.zeros(n)
        pick = rng.choice(idx, size=min(idx.size, rng.integers(2, 8)), replace=False)
        v[pick] = rng.standard_normal(pick.size)
        candidates.append(v)
        alt = np.zeros(n)
        alt[pick] = (-1.0) ** np.arange(pick.size)
        candidates.append(alt)
    best = math.inf
    for v in candidates:
        C = CoeffVector.from_flat(K, v, phi.r)
        norm_c = coeff_norm(C, p)
        if norm_c > 0:
            best = min(best, lp_norm(C, phi, p, grid) / norm_c)
    return RieszBounds(p, min(best, upper), upper, "heuristic-search")


def dual_generator(phi: GeneratorVector, K: int) -> "DualCoefficients":
    """Coefficients of the dual generator on the window.

    Returns ``A`` with ``G A = I``; column ``c`` (an interior flat index)
    holds the expansion ``tilde phi_c = sum_l A[l, c] phi_l``.  Only interior
    columns are returned, paired with their flat indices.
    """
    G = gram_matrix(phi, K)
    lam = scipy.linalg.eigvalsh(G)
    if lam[0] < DEGENERACY * lam[-1]:
        raise DegenerateGram(f"lambda_min={lam[0]:.3e} vs lambda_max={lam[-1]:.3e}")
    A = scipy.linalg.solve(G, np.eye(G.shape[0]), assume_a="pos" if np.isrealobj(G) else "her")
    idx = interior_indices(K, phi.r, support_margin(phi))
    return DualCoefficients(K, phi.r, A[:, idx], idx, G)


@dataclass(frozen=True, eq=False)
class DualCoefficients:
    K: int
    r: int
    A: np.ndarray
    columns: np.ndarray
    gram: np.ndarray

    def center(self, i: int = 0, j: int = 0) -> complex:
        """Coefficient of ``phi^i_0`` in the expansion of ``tilde phi^j_0``."""
        n = 2 * self.K + 1
        col = np.nonzero(self.columns == j * n + self.K)[0][0]
        return self.A[i * n + self.K, col]

    def biorthogonality_residual(self) -> float:
        """``max |<tilde phi_c, phi_l> - delta_cl|`` over interior columns."""
        prod = self.gram @ self.A
        target = np.zeros_like(prod)
        target[self.columns, np.arange(self.columns.size)] = 1.0
        return float(np.abs(prod - target).max())


__all__ = [
    "CoeffVector", "RieszBounds", "synthesize", "coeff_norm", "gram_matrix", "riesz_bounds",
    "dual_generator", "DualCoefficients", "interior_indices", "support_margin", "lp_norm",
]
