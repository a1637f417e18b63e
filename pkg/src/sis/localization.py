"""Polynomial off-diagonal decay checks for generators, cross-Gramians and inverses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import SISError, SingularNormalEquations

# entries this close to the diagonal carry no decay information
MIN_OFFSET = 2.0
GROWTH_SLACK = 1.05


@dataclass(frozen=True)
class DecayFit:
    """Sup-type fit of ``|value| <= C (1+offset)^(-s)``.

    ``c_hat`` is the largest ratio ``|value| (1+offset)^s`` over all samples.
    The fit passes when the ratio does not grow across the tail: the maximum
    over the far half of the offsets stays within 5% of the maximum over the
    near half.  ``exponent`` is the least-squares slope of ``-log|value|``
    against ``log(1+offset)``, ``nan`` when fewer than two nonzero samples.
    """

    offsets: np.ndarray
    values: np.ndarray
    s: float
    c_hat: float
    max_ratio_head: float
    max_ratio_tail: float
    exponent: float
    passed: bool

    @property
    def max_ratio(self) -> float:
        return max(self.max_ratio_head, self.max_ratio_tail)


def fit_decay(offsets, values, s: float, min_offset: float = MIN_OFFSET) -> DecayFit:
    offsets = np.asarray(offsets, dtype=float).ravel()
    values = np.abs(np.asarray(values)).ravel()
    ratio = values * (1.0 + offsets) ** s
    c_hat = float(ratio.max(initial=0.0))

    far = offsets >= min_offset
    off_f, val_f, rat_f = offsets[far], values[far], ratio[far]
    if off_f.size == 0 or not np.any(val_f > 0):
        return DecayFit(offsets, values, s, c_hat, 0.0, 0.0, math.nan, True)

    # split the offset range at its geometric midpoint
    lo, hi = off_f.min(), off_f.max()
    mid = math.sqrt(lo * hi)
    head = off_f < mid
    tail = ~head
    head_max = float(rat_f[head].max(initial=0.0))
    tail_max = float(rat_f[tail].max(initial=0.0))
    if head_max == 0.0:
        passed = tail_max == 0.0
    else:
        passed = tail_max <= GROWTH_SLACK * head_max

    nz = val_f > 0
    if np.count_nonzero(nz) >= 2 and np.ptp(np.log1p(off_f[nz])) > 0:
        slope = np.polyfit(np.log1p(off_f[nz]), np.log(val_f[nz]), 1)[0]
        exponent = float(-slope)
    else:
        exponent = math.nan
    return DecayFit(offsets, values, s, c_hat, head_max, tail_max, exponent, bool(passed))


def exponential_rate(offsets, values, min_offset: float = 1.0, floor: float = 1e-12) -> float:
    """``exp`` of the least-squares slope of ``log|value|`` against ``offset``.

    Values below ``floor`` times the largest one are rounding noise and skipped.
    """
    offsets = np.asarray(offsets, dtype=float).ravel()
    values = np.abs(np.asarray(values)).ravel()
    keep = (offsets >= min_offset) & (values > floor * values.max(initial=0.0))
    if np.count_nonzero(keep) < 2:
        return math.nan
    slope = np.polyfit(offsets[keep], np.log(values[keep]), 1)[0]
    return float(math.exp(slope))


@dataclass(frozen=True)
class LocalizationReport:
    """Component fits; ``None`` marks a part that was not checked."""

    s: float
    generator_fits: tuple
    riesz: object
    cross: Optional[DecayFit] = None
    dual: Optional[DecayFit] = None
    moment: Optional[float] = None
    notes: tuple = ()

    @property
    def verdict(self) -> str:
        fits = list(self.generator_fits) + [f for f in (self.cross, self.dual) if f is not None]
        ok = all(f.passed for f in fits)
        if self.moment is not None:
            ok = ok and math.isfinite(self.moment)
        return "pass" if ok else "fail"

    @property
    def C0(self) -> tuple:
        return tuple(f.c_hat for f in self.generator_fits)


def check_Ws(phi, s: float, K: int = 32) -> LocalizationReport:
    """Riesz nondegeneracy (p = 2) plus pointwise decay of every generator."""
    from .amalgam import verify_decay
    from .shift_space import riesz_bounds

    if not s > phi.dim:
        raise ValueError("s must exceed the dimension")
    rb = riesz_bounds(phi, K, 2)
    fits = tuple(verify_decay(g, s) for g in phi)
    return LocalizationReport(s, fits, rb)


def _offsets(U) -> np.ndarray:
    if U.dim != 1:
        raise NotImplementedError("decay fits are implemented for d = 1")
    pos = U.sampling_set.positions[U.rows]
    ks = np.arange(-U.K, U.K + 1)
    return np.abs(pos[:, None] - ks[None, :])


def _summed_magnitudes(U) -> np.ndarray:
    """``sum_{i,l} |U^{i,l}_{j,k}|`` as a dense rows x window array."""
    total = np.zeros((U.nrows, U.ncols))
    for row in U.blocks:
        for b in row:
            total += np.abs(b.toarray())
    return total


def cross_gram_decay(U, s: float) -> DecayFit:
    """Fit ``|(Phi * mu)(x_j - k)|`` summed over blocks against ``|x_j - k|``."""
    return fit_decay(_offsets(U), _summed_magnitudes(U), s)


def dual_cross_gram_decay(phi, U, s: float, K: Optional[int] = None) -> DecayFit:
    """Same fit with the dual generator: entries ``U A`` on interior dual columns."""
    from .shift_space import dual_generator

    K = U.K if K is None else K
    if K != U.K:
        raise ValueError("dual window must match the operator window")
    dual = dual_generator(phi, K)
    n = 2 * K + 1
    total = np.zeros((U.nrows, n))
    for row in U.blocks:
        Ul = np.hstack([b.toarray() for b in row])
        prod = np.abs(Ul @ dual.A)
        for c, col in enumerate(dual.columns):
            total[:, col % n] += prod[:, c]
    keep = np.unique(dual.columns % n)
    offs = _offsets(U)[:, keep]
    return fit_decay(offs, total[:, keep], s)


@dataclass(frozen=True)
class InverseDecay:
    fit: DecayFit
    rate: float
    inverse: np.ndarray = field(repr=False)


def inverse_decay(matrix, s: float, cond_limit: float = 1e12) -> InverseDecay:
    """Off-diagonal decay of ``matrix^-1`` against ``|j - k|``.

    ``rate`` is the exponential rate fitted along the central row.
    """
    M = np.asarray(matrix)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if np.linalg.cond(M) > cond_limit:
        raise SingularNormalEquations("matrix is numerically singular")
    inv = scipy.linalg.inv(M)
    n = M.shape[0]
    idx = np.arange(n)
    offs = np.abs(idx[:, None] - idx[None, :])
    fit = fit_decay(offs, inv, s)
    c = n // 2
    rate = exponential_rate(np.abs(idx - c), inv[c])
    return InverseDecay(fit, rate, inv)


def dual_decay_rate(dual) -> float:
    """Exponential rate of the central dual column of a scalar generator."""
    n = 2 * dual.K + 1
    col = np.nonzero(dual.columns == dual.K)[0][0]
    offs = np.abs(np.arange(dual.A.shape[0]) % n - dual.K)
    return exponential_rate(offs, dual.A[:, col])


def localization_report(phi, mu, U, s: float, K: int = 32) -> LocalizationReport:
    """Generator, cross-Gramian, dual cross-Gramian and moment checks together."""
    from .measure import moment

    base = check_Ws(phi, s, K)
    cross = cross_gram_decay(U, s)
    dual = dual_cross_gram_decay(phi, U, s)
    mom = float(sum(moment(m, s) for m in mu))
    return LocalizationReport(s, base.generator_fits, base.riesz, cross, dual, mom)


@dataclass(frozen=True)
class MultiPReport:
    reports: dict
    localized: bool
    alert: bool

    @property
    def verdicts(self) -> dict:
        return {p: r.verdict for p, r in self.reports.items()}


def multi_p_stability(model, ps: Sequence[float] = (1.0, 2.0, math.inf), K0: int = 16,
                      doublings: int = 3, s: float = 2.0) -> MultiPReport:
    """Stability verdicts at several p.

    A stable p = 2 verdict on a localized model should carry over to every
    p; ``alert`` is raised when it does not.
    """
    from .sampling_op import stability_check

    reports = {float(p): stability_check(model, p, K0, doublings) for p in ps}
    try:
        localized = check_Ws(model.phi, s).verdict == "pass"
        localized = localized and cross_gram_decay(model.operator(K0), s).passed
    except (SISError, ValueError):  # degenerate generators are not localized
        localized = False
    stable2 = reports.get(2.0) is not None and reports[2.0].verdict == "stable"
    alert = bool(localized and stable2
                 and any(r.verdict == "unstable" for r in reports.values()))
    return MultiPReport(reports, localized, alert)
