"""Sampling sets, the truncated sampling operator and its stability bounds.

The operator is stored as ``t x r`` sparse blocks.  Block ``(l, i)`` maps
the i-th coefficient sequence to the l-th sample sequence with entries
``(phi^i * mu^l)(x_j - k)``.  Rows are the retained samples, columns the
coefficient window ``[-K, K]^d``.

Norm conventions: for ``p = 2`` vectors are measured in the stacked
Euclidean norm, which makes the conjugate-transpose blocks the Hilbert
adjoint.  For ``p = 1`` and ``p = inf`` a block vector is measured by the
sum of its component norms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .amalgam import DEFAULT_SPEC, EsssupSpec, GeneratorVector, w_norm_vector
from .errors import DegenerateOperator, DimensionMismatch, NotSeparated
from .measure import Convolved, VecMeasure, convolve
from .shift_space import CoeffVector, synthesize, window_shifts

log = logging.getLogger(__name__)

DENSE_SVD_LIMIT = 4096
STABLE_RATIO = 0.9
UNSTABLE_RATIO = 0.7
_JITTER_TABLE = 1 << 15


@dataclass(frozen=True, eq=False)
class SamplingSet:
    """Sampling points with optional jitter inside the region ``[-L, L]^d``."""

    points: np.ndarray
    region: float
    jitter: Optional[np.ndarray] = None
    dim: int = 1

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        pts = pts.reshape(-1) if self.dim == 1 else pts.reshape(-1, self.dim)
        order = np.argsort(pts) if self.dim == 1 else np.lexsort(pts.T[::-1])
        pts = pts[order]
        jit = None
        if self.jitter is not None:
            jit = np.array(self.jitter, dtype=float).reshape(pts.shape)[order]
            jit.setflags(write=False)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "jitter", jit)

    @classmethod
    def lattice(cls, L: float, step: float = 1.0, offset: float = 0.0, dim: int = 1):
        """``(offset + step*Z)^d`` intersected with ``[-L, L]^d``."""
        n0 = math.ceil((-L - offset) / step - 1e-12)
        n1 = math.floor((L - offset) / step + 1e-12)
        axis = offset + step * np.arange(n0, n1 + 1)
        if dim == 1:
            return cls(axis, L)
        grids = np.meshgrid(*([axis] * dim), indexing="ij")
        return cls(np.stack([g.ravel() for g in grids], axis=1), L, None, dim)

    def with_jitter(self, jitter) -> "SamplingSet":
        return SamplingSet(self.points, self.region, np.asarray(jitter, dtype=float), self.dim)

    @property
    def positions(self) -> np.ndarray:
        return self.points if self.jitter is None else self.points + self.jitter

    @property
    def delta_inf(self) -> float:
        if self.jitter is None or self.jitter.size == 0:
            return 0.0
        j = self.jitter if self.dim == 1 else np.linalg.norm(self.jitter, axis=1)
        return float(np.abs(j).max())

    def __len__(self):
        return self.points.shape[0]


def separation(X: SamplingSet) -> float:
    """Minimal pairwise distance between (jittered) sampling positions."""
    pos = X.positions
    if len(X) < 2:
        raise ValueError("separation needs at least two points")
    if X.dim == 1:
        gaps = np.diff(np.sort(pos))
        delta = float(gaps.min())
    else:
        dist, _ = cKDTree(pos).query(pos, k=2)
        delta = float(dist[:, 1].min())
    if delta <= 0:
        raise NotSeparated("two sampling points coincide")
    return delta


def mesh_constant(delta: float, p: float, d: int) -> float:
    """``(sqrt(d)/delta + 1)^(d/p)``: bound on points per unit cell, to the 1/p."""
    if not delta > 0:
        raise ValueError("separation must be positive")
    if math.isinf(p):
        return 1.0
    return (math.sqrt(d) / delta + 1.0) ** (d / p)


@dataclass(frozen=True)
class TruncationWindow:
    """Coefficient window ``[-K, K]^d`` and sample region ``[-L, L]^d``."""

    K: int
    L: Optional[float] = None

    @property
    def region(self) -> float:
        return float(self.K if self.L is None else self.L)


@dataclass(frozen=True, eq=False)
class SamplingOperator:
    """Truncated sampling operator.

    ``blocks[l][i]`` is a CSR matrix (rows x columns).  ``rows`` are indices
    into the sampling set; ``interior`` are the flat window columns whose
    every influenced sample is retained.
    """

    blocks: tuple
    rows: np.ndarray
    K: int
    dim: int
    interior: np.ndarray
    sampling_set: SamplingSet
    support: tuple

    @property
    def t(self) -> int:
        return len(self.blocks)

    @property
    def r(self) -> int:
        return len(self.blocks[0])

    @property
    def ncols(self) -> int:
        return (2 * self.K + 1) ** self.dim

    @property
    def nrows(self) -> int:
        return self.rows.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.t * self.nrows, self.r * self.ncols)

    def stacked(self) -> sp.csr_matrix:
        return sp.bmat([list(row) for row in self.blocks], format="csr")

    def interior_columns(self) -> np.ndarray:
        """Interior column indices in the stacked matrix."""
        return np.concatenate([i * self.ncols + self.interior for i in range(self.r)])

    def restricted(self) -> sp.csr_matrix:
        """Stacked matrix restricted to interior columns."""
        return self.stacked()[:, self.interior_columns()]

    def dense(self, interior: bool = False) -> np.ndarray:
        M = self.restricted() if interior else self.stacked()
        out = M.toarray()
        return out.real if not np.any(out.imag) else out

    def nnz(self) -> int:
        return sum(b.nnz for row in self.blocks for b in row)

    def scaled(self, a: float) -> "SamplingOperator":
        blocks = tuple(tuple(a * b for b in row) for row in self.blocks)
        return SamplingOperator(blocks, self.rows, self.K, self.dim, self.interior,
                                self.sampling_set, self.support)

    def adjoint_dense(self, interior: bool = False) -> np.ndarray:
        return self.dense(interior).conj().T


def _stencil(pos: np.ndarray, a: float, b: float, K: int):
    """Integer k with ``a <= x - k <= b`` and ``|k| <= K`` per row (1-D)."""
    lo = np.maximum(np.ceil(pos - b - 1e-12), -K).astype(int)
    hi = np.minimum(np.floor(pos - a + 1e-12), K).astype(int)
    return lo, hi


def _union_support(entries) -> Optional[tuple[float, float]]:
    a, b = math.inf, -math.inf
    for h in entries:
        sup = h.support()
        if sup is None:
            return None
        a, b = min(a, sup[0]), max(b, sup[1])
    return (a, b)


def _retained_rows(pos, sup, K, region, dim):
    if sup is None:
        inside = np.all(np.abs(pos.reshape(len(pos), -1)) <= region + 1e-12, axis=1)
        return np.nonzero(inside)[0]
    a, b = sup
    p2 = pos.reshape(len(pos), -1)
    ok = np.all((np.ceil(p2 - b - 1e-12) >= -K) & (np.floor(p2 - a + 1e-12) <= K), axis=1)
    return np.nonzero(ok)[0]


def _interior_cols(pos_kept, sup, K, region, dim, n_all_pos=None, all_pos=None):
    ks = window_shifts(K, dim).reshape((2 * K + 1) ** dim, -1)
    if sup is None:
        margin = max(1, K // 4)
        return np.nonzero(np.all(np.abs(ks) <= K - margin, axis=1))[0]
    a, b = sup
    inside = np.all((ks + a >= -region - 1e-12) & (ks + b <= region + 1e-12), axis=1)
    # every sample whose stencil reaches k must be retained
    if all_pos is not None:
        dropped = np.setdiff1d(np.arange(len(all_pos)), n_all_pos)
        if dropped.size:
            dp = all_pos[dropped].reshape(dropped.size, -1)
            for q in dp:
                hit = np.all((q - ks >= a - 1e-12) & (q - ks <= b + 1e-12), axis=1)
                inside &= ~hit
    return np.nonzero(inside)[0]


def assemble(phi: GeneratorVector, mu: VecMeasure, X: SamplingSet,
             window: TruncationWindow, spec: EsssupSpec = DEFAULT_SPEC,
             like: Optional[SamplingOperator] = None) -> SamplingOperator:
    """Materialize the truncated sampling operator.

    Samples whose stencil leaves the window are dropped so every retained
    row is exact.  With ``like`` the row set, window and interior columns are
    copied from another operator (used to align a perturbed model with its
    reference); entries whose stencil leaves the window are then cut.
    """
    if phi.dim != mu.dim or phi.dim != X.dim:
        raise DimensionMismatch("generator, measure and sampling set dimensions differ")
    d = phi.dim
    K = window.K if like is None else like.K
    entries = [[Convolved(g, m, spec) for g in phi] for m in mu]
    sup = _union_support([h for row in entries for h in row])
    pos_all = X.positions
    if like is None:
        rows = _retained_rows(pos_all, sup, K, window.region, d)
        interior = _interior_cols(pos_all[rows], sup, K, X.region, d, rows, pos_all)
    else:
        if len(like.sampling_set) != len(X):
            raise DimensionMismatch("perturbed sampling set must match the reference")
        rows, interior = like.rows, like.interior
    pos = pos_all[rows]
    ncols = (2 * K + 1) ** d
    blocks = []
    for l, row_entries in enumerate(entries):
        brow = []
        for i, h in enumerate(row_entries):
            brow.append(_assemble_block(h, pos, K, d, ncols))
        blocks.append(tuple(brow))
    return SamplingOperator(tuple(blocks), rows, K, d, interior, X, sup)


def _assemble_block(h, pos, K, d, ncols):
    n = pos.shape[0]
    sup = h.support()
    ks = window_shifts(K, d)
    if sup is None or d > 1:
        if sup is None:
            r_idx = np.repeat(np.arange(n), ncols)
            c_idx = np.tile(np.arange(ncols), n)
        else:
            a, b = sup
            r_list, c_list = [], []
            ks2 = ks.reshape(ncols, -1)
            for j in range(n):
                q = pos[j].reshape(-1)
                hit = np.nonzero(np.all((q - ks2 >= a - 1e-12) & (q - ks2 <= b + 1e-12), axis=1))[0]
                r_list.append(np.full(hit.size, j))
                c_list.append(hit)
            r_idx = np.concatenate(r_list) if r_list else np.empty(0, int)
            c_idx = np.concatenate(c_list) if c_list else np.empty(0, int)
        if d == 1:
            offs = pos[r_idx] - ks[c_idx]
        else:
            offs = pos[r_idx] - ks.reshape(ncols, -1)[c_idx]
    else:
        a, b = sup
        lo, hi = _stencil(pos, a, b, K)
        counts = np.maximum(hi - lo + 1, 0)
        r_idx = np.repeat(np.arange(n), counts)
        starts = np.repeat(lo, counts)
        within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        kk = starts + within
        c_idx = kk + K
        offs = pos[r_idx] - kk
    vals = h(offs) if len(offs) else np.empty(0)
    vals = np.asarray(vals)
    if not np.iscomplexobj(vals):
        vals = vals.astype(float)
    mat = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(n, ncols))
    mat.eliminate_zeros()
    return mat


# ---------------------------------------------------------------------------
# action


def apply(U: SamplingOperator, C: CoeffVector) -> np.ndarray:
    """Sample vector ``UC`` with shape ``(t, rows)``."""
    if C.r != U.r or C.K != U.K or C.dim != U.dim:
        raise DimensionMismatch("coefficient vector does not match the operator window")
    out = np.zeros((U.t, U.nrows), dtype=complex)
    for l in range(U.t):
        for i in range(U.r):
            out[l] += U.blocks[l][i] @ C.data[i]
    return out


def apply_adjoint(U: SamplingOperator, D) -> CoeffVector:
    """``U* D`` using the conjugate transpose of every block."""
    D = np.asarray(D, dtype=complex).reshape(U.t, -1)
    if D.shape[1] != U.nrows:
        raise DimensionMismatch("sample vector does not match the operator rows")
    data = np.zeros((U.r, U.ncols), dtype=complex)
    for i in range(U.r):
        for l in range(U.t):
            data[i] += U.blocks[l][i].conj().T @ D[l]
    return CoeffVector(U.K, data, U.dim)


class _SynthesizedFunction:
    """``f = sum C_k^T Phi_k`` as a plain callable, for convolving with measures."""

    def __init__(self, C, phi):
        self.C, self.phi = C, phi

    def __call__(self, x):
        return synthesize(self.C, self.phi, np.asarray(x, dtype=float))


def sample_signal(C: CoeffVector, phi: GeneratorVector, mu: VecMeasure,
                  X: SamplingSet, rows=None, spec: EsssupSpec = DEFAULT_SPEC) -> np.ndarray:
    """``(f * mu^l)(x_j)`` computed from the synthesized function directly."""
    pos = X.positions if rows is None else X.positions[rows]
    f = _SynthesizedFunction(C, phi)
    return np.stack([np.atleast_1d(convolve(f, m, pos, spec)) for m in mu])


# ---------------------------------------------------------------------------
# norms


def _component_sizes(U: SamplingOperator, interior: bool):
    ncol = U.interior.size if interior else U.ncols
    return [U.nrows] * U.t, [ncol] * U.r


def matrix_norm(M, p: float, out_sizes: Sequence[int], in_sizes: Sequence[int]) -> float:
    """Operator norm under the summed-component vector norm.

    ``p = 1`` is exact (maximum absolute column sum).  ``p = inf`` returns
    ``max_a sum_b max_row sum |M_ba|`` which is exact when the codomain has a
    single component and an upper bound otherwise.  ``p = 2`` uses the
    stacked Euclidean norm.
    """
    if sp.issparse(M):
        A = abs(M).tocsc()
    else:
        A = np.abs(np.asarray(M))
    if p == 1:
        col = np.asarray(A.sum(axis=0)).ravel()
        return float(col.max(initial=0.0))
    if math.isinf(p):
        best = 0.0
        r_off = np.concatenate([[0], np.cumsum(out_sizes)])
        c_off = np.concatenate([[0], np.cumsum(in_sizes)])
        for a in range(len(in_sizes)):
            total = 0.0
            for b in range(len(out_sizes)):
                blk = A[r_off[b]:r_off[b + 1], c_off[a]:c_off[a + 1]]
                rs = np.asarray(blk.sum(axis=1)).ravel()
                total += float(rs.max(initial=0.0))
            best = max(best, total)
        return best
    if p == 2:
        dense = M.toarray() if sp.issparse(M) else np.asarray(M)
        if dense.size == 0:
            return 0.0
        return float(scipy.linalg.svdvals(dense)[0])
    raise ValueError("p must be 1, 2 or inf")


@dataclass(frozen=True)
class PowerResult:
    value: float
    iterations: int
    converged: bool


def power_norm(M, tol: float = 1e-10, max_iter: int = 20000, seed: int = 0) -> PowerResult:
    """Largest singular value by power iteration on ``M* M``."""
    n = M.shape[1]
    if n == 0 or (sp.issparse(M) and M.nnz == 0) or (not sp.issparse(M) and not np.any(M)):
        return PowerResult(0.0, 0, True)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    MH = M.conj().T
    est = 0.0
    for it in range(1, max_iter + 1):
        w = MH @ (M @ v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return PowerResult(0.0, it, True)
        new = math.sqrt(nw)
        v = w / nw
        if abs(new - est) <= tol * new:
            return PowerResult(new, it, True)
        est = new
    log.warning("power iteration stalled after %d iterations", max_iter)
    return PowerResult(est, max_iter, False)


def op_norm(U: SamplingOperator, p: float = 2, interior: bool = False) -> float:
    """``beta_hat``: operator norm of the stored (or interior-restricted) operator.

    p = 2 uses a dense SVD up to DENSE_SVD_LIMIT columns and power iteration
    beyond.
    """
    M = U.restricted() if interior else U.stacked()
    out_s, in_s = _component_sizes(U, interior)
    if p == 2 and M.shape[1] > DENSE_SVD_LIMIT:
        return power_norm(M).value
    return matrix_norm(M, p, out_s, in_s)


def block_sum_norm(U: SamplingOperator, p: float = 2) -> float:
    """Sum of the block operator norms (the block-sum convention)."""
    total = 0.0
    for row in U.blocks:
        for b in row:
            total += matrix_norm(b, p, [b.shape[0]], [b.shape[1]])
    return total


def lower_bound(U: SamplingOperator, p: float = 2) -> float:
    """``eta_hat``: lower frame bound of ``U`` on the interior columns.

    p = 2: smallest singular value.  p in {1, inf}: ``1/||L||_p`` for the
    pseudoinverse ``L``, a certified lower bound since ``L`` is a left inverse.
    """
    M = U.dense(interior=True)
    if M.shape[0] < M.shape[1]:
        raise DegenerateOperator("fewer retained samples than interior coefficients")
    s = scipy.linalg.svdvals(M)
    beta = float(s[0]) if s.size else 0.0
    eta = float(s[-1]) if s.size else 0.0
    if beta == 0.0 or eta < 1e-12 * beta:
        raise DegenerateOperator(f"sigma_min={eta:.3e}, sigma_max={beta:.3e}")
    if p == 2:
        return eta
    L = np.linalg.pinv(M)
    out_s, in_s = _component_sizes(U, True)
    return 1.0 / matrix_norm(L, p, in_s, out_s)


# ---------------------------------------------------------------------------
# models and stability verdicts


@dataclass(frozen=True)
class SamplingModel:
    """Generator, measures and a (possibly jittered) lattice sampling rule.

    The jitter of lattice point ``n`` is ``jitter * u_n`` with ``u_n`` uniform
    in ``[-1, 1]`` drawn from a table keyed by ``seed``, so the same point
    keeps its jitter when the window grows.
    """

    phi: GeneratorVector
    mu: VecMeasure
    step: float = 1.0
    offset: float = 0.0
    jitter: float = 0.0
    seed: int = 0

    def jitter_for(self, X: SamplingSet) -> np.ndarray:
        idx = np.rint((X.points - self.offset) / self.step).astype(int) + _JITTER_TABLE // 2
        if np.any(idx < 0) or np.any(idx >= _JITTER_TABLE):
            raise ValueError("lattice too large for the jitter table")
        table = np.random.default_rng(self.seed).uniform(-1.0, 1.0, _JITTER_TABLE)
        return self.jitter * table[idx]

    def sampling_set(self, L: float) -> SamplingSet:
        X = SamplingSet.lattice(L, self.step, self.offset, self.phi.dim)
        if self.jitter > 0:
            if self.phi.dim != 1:
                raise NotImplementedError("lattice jitter is implemented for d = 1")
            X = X.with_jitter(self.jitter_for(X))
        return X

    def operator(self, K: int, spec: EsssupSpec = DEFAULT_SPEC) -> SamplingOperator:
        return assemble(self.phi, self.mu, self.sampling_set(K), TruncationWindow(K), spec)


@dataclass(frozen=True)
class StabilityReport:
    p: float
    eta_p: float
    beta_p: float
    trace: tuple
    verdict: str

    def __post_init__(self):
        if self.eta_p > self.beta_p * (1 + 1e-9):
            raise ValueError("eta_p must not exceed beta_p")


def _verdict(etas: Sequence[float]) -> str:
    if any(e <= 0 for e in etas):
        return "unstable"
    ratios = [b / a for a, b in zip(etas, etas[1:])]
    if all(r >= STABLE_RATIO for r in ratios):
        return "stable"
    if all(r <= UNSTABLE_RATIO for r in ratios):
        return "unstable"
    return "inconclusive"


def stability_check(model, p: float = 2, K0: int = 16, doublings: int = 3,
                    spec: EsssupSpec = DEFAULT_SPEC) -> StabilityReport:
    """Trace ``eta_hat`` over ``K0, 2 K0, ...`` and classify the model.

    ``model`` is a SamplingModel or any callable ``K -> SamplingOperator``.
    Stable: every successive ratio of ``eta_hat`` is at least 0.9.  Unstable:
    every ratio is at most 0.7 (or ``eta_hat`` hits zero).
    """
    build = model.operator if hasattr(model, "operator") else model
    trace = []
    for n in range(doublings + 1):
        K = K0 * 2**n
        U = build(K)
        try:
            eta = lower_bound(U, p)
        except DegenerateOperator:
            eta = 0.0
        beta = op_norm(U, p, interior=True)
        trace.append((K, eta, beta))
    etas = [e for _, e, _ in trace]
    verdict = _verdict(etas)
    K, eta, beta = trace[-1]
    return StabilityReport(float(p), eta, beta, tuple(trace), verdict)


def upper_bound_chain(phi: GeneratorVector, mu: VecMeasure, delta: float, p: float,
                      spec: EsssupSpec = DEFAULT_SPEC) -> float:
    """``N * 2^d * ||phi||_W1 * ||mu||``, an a-priori bound on ``beta_p``."""
    d = phi.dim
    return mesh_constant(delta, p, d) * 2.0**d * w_norm_vector(phi, 1, spec) * mu.total_variation()


def export_triplets(U: SamplingOperator, path) -> None:
    """Write nonzero entries as CSV: row, col, block_i, block_l, value_re, value_im."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "block_i", "block_l", "value_re", "value_im"])
        for l, brow in enumerate(U.blocks):
            for i, b in enumerate(brow):
                coo = b.tocoo()
                order = np.lexsort((coo.col, coo.row))
                for k in order:
                    v = complex(coo.data[k])
                    w.writerow([int(coo.row[k]), int(coo.col[k]), i, l,
                                repr(v.real), repr(v.imag)])


__all__ = [
    "SamplingSet", "separation", "mesh_constant", "TruncationWindow", "SamplingOperator",
    "assemble", "apply", "apply_adjoint", "sample_signal", "op_norm", "block_sum_norm",
    "matrix_norm", "power_norm", "lower_bound", "SamplingModel", "StabilityReport",
    "stability_check", "upper_bound_chain", "export_triplets",
]
