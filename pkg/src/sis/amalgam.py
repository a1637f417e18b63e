"""Generator functions and Wiener-amalgam norms.

A generator component is a callable on R^d with a little metadata attached:
its support (or a polynomial decay envelope when the support is unbounded)
and its breakpoints, which the quadrature routines use to split integrals
into smooth pieces.

The amalgam norm of ``g`` is the l^p norm of its per-cell suprema over the
unit cells ``[0,1]^d + k``.  Suprema are estimated on successively finer grids
that are refined until the total stops moving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.interpolate import BSpline as _ScipyBSpline
from scipy.special import zeta

from .errors import NonConvergence

# Cell endpoints are pulled inward by this much so a jump sitting exactly on
# a cell boundary does not leak into the neighbouring cell's supremum.
_EDGE_NUDGE = 1e-12

# Number of central cells summed explicitly for generators without compact
# support; the remainder is covered by the analytic decay tail.
_CENTRAL_CELLS = 64


@dataclass(frozen=True)
class EsssupSpec:
    """Controls grid refinement for suprema, oscillations and quadrature."""

    base_subdivisions: int = 16
    refinement: int = 2
    rtol: float = 1e-6
    max_rounds: int = 12

    def __post_init__(self):
        if self.base_subdivisions < 1:
            raise ValueError("base_subdivisions must be positive")
        if self.refinement < 2:
            raise ValueError("refinement factor must be >= 2")
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def subdivisions(self) -> Iterator[int]:
        # successive grids share only the cell edges, so a maximum sitting on
        # a coarse node cannot fake convergence
        m = self.base_subdivisions
        for _ in range(self.max_rounds):
            yield m
            m = m * self.refinement + 1


DEFAULT_SPEC = EsssupSpec()


class GeneratorComponent:
    """Common surface of every generator kind.

    Subclasses implement ``_eval`` on arrays of shape ``(..., d)`` (or
    ``(...)`` when ``d == 1``).
    """

    dim: int = 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._eval(x)

    def _eval(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def support(self) -> Optional[tuple[float, float]]:
        """Per-axis closed support interval, or None when unbounded."""
        return None

    def breakpoints(self) -> np.ndarray:
        """Points where the 1-D function may fail to be smooth."""
        return np.empty(0)

    def decay_bound(self) -> Optional[tuple[float, float, float]]:
        """``(C, s, rho)`` with ``|g(x)| <= C (1+|x|-rho)^(-s)`` for ``|x| >= rho``.

        The same envelope times ``s/(1+|x|-rho)`` bounds ``|g'(x)|``.
        None for compactly supported components.
        """
        return None

    def shifted(self, y) -> "GeneratorComponent":
        """Return ``x -> g(x - y)``."""
        raise NotImplementedError

    def scaled(self, a: float) -> "GeneratorComponent":
        raise NotImplementedError

    @property
    def is_compact(self) -> bool:
        return self.support() is not None


@dataclass(frozen=True)
class BSpline(GeneratorComponent):
    """Cardinal B-spline of order ``n`` (degree n) supported on ``[0, n+1]``.

    For ``dim > 1`` the function is the tensor product of 1-D splines, each
    axis shifted by the matching entry of ``offset``.
    """

    order: int
    dim: int = 1
    offset: tuple = ()
    scale: float = 1.0

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("B-spline order must be nonnegative")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        off = tuple(float(o) for o in self.offset) or (0.0,) * self.dim
        if len(off) != self.dim:
            raise ValueError("offset length must equal dim")
        object.__setattr__(self, "offset", off)
        basis = _ScipyBSpline.basis_element(np.arange(self.order + 2, dtype=float),
                                            extrapolate=False)
        object.__setattr__(self, "_basis", basis)

    def _eval1(self, t):
        n1 = self.order + 1
        out = np.zeros_like(t, dtype=float)
        inside = (t >= 0) & (t < n1) if self.order == 0 else (t > 0) & (t < n1)
        if np.any(inside):
            out[inside] = self._basis(t[inside])
        return out

    def _eval(self, x):
        if self.dim == 1:
            return self.scale * self._eval1(x - self.offset[0])
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points with trailing dimension {self.dim}")
        val = np.full(x.shape[:-1], self.scale, dtype=float)
        for a in range(self.dim):
            val = val * self._eval1(x[..., a] - self.offset[a])
        return val

    def axis_factor(self, axis: int) -> "BSpline":
        """1-D factor along ``axis`` (unit scale)."""
        return BSpline(self.order, 1, (self.offset[axis],))

    def support(self):
        # tensor splines share one interval only when offsets agree; callers
        # needing per-axis boxes use axis_factor
        lo = min(self.offset)
        hi = max(self.offset) + self.order + 1
        return (lo, hi)

    def breakpoints(self):
        return self.offset[0] + np.arange(self.order + 2, dtype=float)

    def shifted(self, y):
        y = np.broadcast_to(np.asarray(y, dtype=float), (self.dim,))
        return BSpline(self.order, self.dim, tuple(np.add(self.offset, y)), self.scale)

    def scaled(self, a):
        return BSpline(self.order, self.dim, self.offset, self.scale * a)


@dataclass(frozen=True)
class TruncatedGaussian(GeneratorComponent):
    """Gaussian bump lowered by its edge value so it vanishes continuously at ``radius``."""

    sigma: float
    radius: float
    center: float = 0.0
    scale: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not (self.sigma > 0 and self.radius > 0):
            raise ValueError("sigma and radius must be positive")
        if self.dim != 1:
            raise ValueError("TruncatedGaussian is one-dimensional")

    def _eval(self, x):
        t = x - self.center
        edge = math.exp(-self.radius**2 / (2 * self.sigma**2))
        val = np.exp(-t**2 / (2 * self.sigma**2)) - edge
        return np.where(np.abs(t) <= self.radius, self.scale * np.maximum(val, 0.0), 0.0)

    def support(self):
        return (self.center - self.radius, self.center + self.radius)

    def breakpoints(self):
        return np.array([self.center - self.radius, self.center, self.center + self.radius])

    def shifted(self, y):
        return TruncatedGaussian(self.sigma, self.radius, self.center + float(y), self.scale)

    def scaled(self, a):
        return TruncatedGaussian(self.sigma, self.radius, self.center, self.scale * a)


@dataclass(frozen=True)
class PolyDecay(GeneratorComponent):
    """``scale * (1 + |x - center|)^(-s)``."""

    s: float
    scale: float = 1.0
    center: float = 0.0
    dim: int = 1

    def __post_init__(self):
        if not self.s > self.dim:
            raise ValueError("PolyDecay needs s > d for a finite W^1 norm")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def _eval(self, x):
        if self.dim == 1:
            r = np.abs(x - self.center)
        else:
            r = np.linalg.norm(x - self.center, axis=-1)
        return self.scale * (1.0 + r) ** (-self.s)

    def breakpoints(self):
        return np.array([self.center])

    def decay_bound(self):
        return (self.scale, self.s, abs(self.center))

    def shifted(self, y):
        return PolyDecay(self.s, self.scale, self.center + float(y), self.dim)

    def scaled(self, a):
        if a > 0:
            return PolyDecay(self.s, self.scale * a, self.center, self.dim)
        raise ValueError("PolyDecay scale must stay positive")


@dataclass(frozen=True, eq=False)
class Tabulated(GeneratorComponent):
    """Piecewise-linear interpolant of ``values`` on ``origin + h*i``; zero outside the table."""

    h: float
    values: np.ndarray
    origin: float = 0.0
    dim: int = 1

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a nonempty 1-D array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("tabulated values must be finite")
        if not self.h > 0:
            raise ValueError("grid step must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def nodes(self) -> np.ndarray:
        return self.origin + self.h * np.arange(self.values.size)

    def _eval(self, x):
        return np.interp(x, self.nodes, self.values, left=0.0, right=0.0)

    def support(self):
        return (self.origin, self.origin + self.h * (self.values.size - 1))

    def breakpoints(self):
        return self.nodes

    def shifted(self, y):
        return Tabulated(self.h, self.values, self.origin + float(y))

    def scaled(self, a):
        return Tabulated(self.h, self.values * a, self.origin)


def tabulate(g: GeneratorComponent, h: float, lo: float, hi: float) -> Tabulated:
    """Sample a 1-D component on ``lo + h*i`` covering ``[lo, hi]``."""
    n = int(math.ceil((hi - lo) / h - 1e-9)) + 1
    nodes = lo + h * np.arange(n)
    return Tabulated(h, np.real(g(nodes)), lo)


@dataclass(frozen=True)
class GeneratorVector:
    """The r generators spanning the shift-invariant space."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a generator vector needs at least one component")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError("all components must share one dimension")
        object.__setattr__(self, "components", comps)

    @property
    def r(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return len(self.components)

    def __getitem__(self, i):
        return self.components[i]


def evaluate(g: GeneratorComponent, x):
    """Value of ``g`` at ``x`` (scalar in, scalar out)."""
    val = g(x)
    return val.item() if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# amalgam norms


def _refine(compute, spec: EsssupSpec, what: str):
    """Run ``compute(m)`` on finer grids until the relative change is below rtol.

    Returns ``(value, last_change)``.
    """
    prev = None
    for m in spec.subdivisions():
        val = compute(m)
        if prev is not None:
            delta = abs(val - prev)
            if delta <= spec.rtol * max(abs(val), abs(prev)) or delta <= 1e-300:
                return val, delta
        prev = val
    raise NonConvergence(f"{what} did not settle within {spec.max_rounds} refinement rounds")


def _cell_grid(k0: int, ncell: int, m: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, m + 1)
    t[0] += _EDGE_NUDGE
    t[-1] -= _EDGE_NUDGE
    return (k0 + np.arange(ncell))[:, None] + t[None, :]


def _cell_range(g: GeneratorComponent, pad: float = 0.0) -> tuple[int, int]:
    """First cell index and number of cells that carry the (padded) support."""
    sup = g.support()
    if sup is None:
        rho = g.decay_bound()[2]
        kc = _CENTRAL_CELLS + int(math.ceil(rho + pad))
        return -kc, 2 * kc
    lo, hi = sup[0] - pad, sup[1] + pad
    k0 = int(math.floor(lo))
    k1 = max(int(math.ceil(hi)), k0 + 1)
    return k0, k1 - k0


def _lp_of_cells(sups: np.ndarray, p: float) -> float:
    if math.isinf(p):
        return float(sups.max(initial=0.0))
    return float(np.sum(sups**p) ** (1.0 / p))


def cell_sups(g: GeneratorComponent, m: int) -> tuple[int, np.ndarray]:
    """Grid estimate of per-cell suprema of ``|g|`` (1-D)."""
    k0, n = _cell_range(g)
    x = _cell_grid(k0, n, m)
    sups = np.abs(g(x)).max(axis=1)
    # kinks can hide a maximum between grid points; a breakpoint on a cell
    # edge belongs to both neighbours
    bp = np.asarray(g.breakpoints(), dtype=float)
    bp = bp[(bp >= k0) & (bp <= k0 + n)]
    if bp.size:
        vals = np.abs(g(bp))
        right = np.floor(bp).astype(int) - k0
        left = np.ceil(bp).astype(int) - k0 - 1
        for idx in (right, left):
            ok = (idx >= 0) & (idx < n)
            np.maximum.at(sups, idx[ok], vals[ok])
    return k0, sups


def _tail_power_sum(g: GeneratorComponent, p: float, kc: int) -> float:
    """Upper bound for sum over cells |k| >= kc of (cell sup)^p."""
    c, s, rho = g.decay_bound()
    return 2.0 * c**p * float(zeta(s * p, 1.0 + kc - rho))


def _w_norm_1d(g, p, spec):
    def compute(m):
        k0, sups = cell_sups(g, m)
        if g.is_compact:
            return _lp_of_cells(sups, p)
        if math.isinf(p):
            return float(sups.max())
        return float((np.sum(sups**p) + _tail_power_sum(g, p, -k0)) ** (1.0 / p))

    return _refine(compute, spec, "amalgam norm")


def _w_norm_tensor(g: BSpline, p, spec):
    # |g| factorizes over axes, so each cell supremum is the product of the
    # per-axis cell suprema and the l^p sum factorizes as well
    total, err = 1.0, 0.0
    for a in range(g.dim):
        val, delta = _w_norm_1d(g.axis_factor(a), p, spec)
        total *= val
        err += delta
    return abs(g.scale) * total, abs(g.scale) * err * total


def w_norm(g: GeneratorComponent, p: float, spec: EsssupSpec = DEFAULT_SPEC,
           with_error: bool = False):
    """Wiener-amalgam norm of ``g`` for ``p`` in {1, 2, inf}.

    With ``with_error=True`` returns ``(value, last refinement change)``.
    """
    p = float(p)
    if g.dim == 1:
        val, err = _w_norm_1d(g, p, spec)
    elif isinstance(g, BSpline):
        val, err = _w_norm_tensor(g, p, spec)
    else:
        raise NotImplementedError("d > 1 amalgam norms are available for tensor B-splines only")
    return (val, err) if with_error else val


def w_norm_vector(phi: GeneratorVector, p: float, spec: EsssupSpec = DEFAULT_SPEC) -> float:
    """Sum of the component amalgam norms."""
    return float(sum(w_norm(g, p, spec) for g in phi))


def osc(g: GeneratorComponent, gamma: float, x, spec: EsssupSpec = DEFAULT_SPEC) -> float:
    """Oscillation ``sup_{|dx| < gamma} |g(x+dx) - g(x)|`` at one point."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    g0 = g(x)

    if g.dim == 1:
        def compute(m):
            dx = np.linspace(-gamma, gamma, 2 * m + 1)
            return float(np.max(np.abs(g(x + dx) - g0)))
    else:
        def compute(m):
            t = np.linspace(-gamma, gamma, 2 * m + 1)
            mesh = np.stack(np.meshgrid(*([t] * g.dim), indexing="ij"), axis=-1).reshape(-1, g.dim)
            mesh = mesh[np.linalg.norm(mesh, axis=1) <= gamma]
            if g.dim == 2:
                ang = np.linspace(0, 2 * np.pi, 8 * m, endpoint=False)
                ring = gamma * np.stack([np.cos(ang), np.sin(ang)], axis=1)
                mesh = np.vstack([mesh, ring])
            return float(np.max(np.abs(g(x + mesh) - g0)))

    val, _ = _refine(compute, spec, "oscillation")
    return val


def _osc_cells(g, gamma, m):
    """Per-cell suprema of osc_gamma g on a grid with spacing 1/m."""
    k0, n = _cell_range(g, pad=gamma)
    x = _cell_grid(k0, n, m).ravel()
    nshift = max(1, int(math.ceil(gamma * m)))
    shifts = np.linspace(-gamma, gamma, 2 * nshift + 1)
    g0 = g(x)
    best = np.zeros_like(x)
    # chunk the shifts so memory stays bounded on fine grids
    step = max(1, 4_000_000 // max(x.size, 1))
    for i in range(0, shifts.size, step):
        block = g(x[None, :] + shifts[i:i + step, None])
        best = np.maximum(best, np.abs(block - g0[None, :]).max(axis=0))
    return k0, best.reshape(n, m + 1).max(axis=1)


def osc_w1_norm(g: GeneratorComponent, gamma: float, spec: EsssupSpec = DEFAULT_SPEC,
                with_error: bool = False):
    """W^1 norm of the oscillation function ``osc_gamma g`` (1-D)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if g.dim != 1:
        raise NotImplementedError("oscillation norms are implemented for d = 1")

    def compute(m):
        k0, sups = _osc_cells(g, gamma, m)
        total = float(sups.sum())
        if not g.is_compact:
            # osc <= gamma * sup|g'| over the gamma-neighbourhood of each cell
            c, s, rho = g.decay_bound()
            kc = -k0
            total += 2.0 * gamma * c * s * float(zeta(s + 1.0, 1.0 + kc - rho - gamma))
        return total

    val, err = _refine(compute, spec, "oscillation norm")
    return (val, err) if with_error else val


def verify_decay(g: GeneratorComponent, s: float, reach: float = 200.0, n: int = 96):
    """Check ``|g(x)| <= C0 (1+|x|)^(-s)`` on a sample set; returns a DecayFit."""
    from .localization import fit_decay

    if not s > 0:
        raise ValueError("s must be positive")
    near = np.linspace(0.0, 2.0, 33)[:-1]
    far = np.geomspace(2.0, reach, n)
    radii = np.concatenate([near, far])
    if g.dim == 1:
        pts = np.concatenate([radii, -radii])
        offsets = np.abs(pts)
        vals = np.abs(g(pts))
    else:
        e = np.ones(g.dim) / math.sqrt(g.dim)
        pts = np.concatenate([radii[:, None] * e, -radii[:, None] * e])
        offsets = np.linalg.norm(pts, axis=1)
        vals = np.abs(g(pts))
    return fit_decay(offsets, vals, s)


def shift_w1_ratio(g: GeneratorComponent, y, spec: EsssupSpec = DEFAULT_SPEC) -> float:
    """``||g(.-y)||_W1 / ||g||_W1``; at most ``2^d`` for every shift ``y``."""
    base = w_norm(g, 1, spec)
    return w_norm(g.shifted(y), 1, spec) / base if base > 0 else 0.0


__all__ = [
    "EsssupSpec", "DEFAULT_SPEC", "GeneratorComponent", "BSpline", "TruncatedGaussian",
    "PolyDecay", "Tabulated", "GeneratorVector", "tabulate", "evaluate", "w_norm",
    "w_norm_vector", "osc", "osc_w1_norm", "verify_decay", "cell_sups", "shift_w1_ratio",
]
