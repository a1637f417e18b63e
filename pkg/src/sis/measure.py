"""Finite complex Borel measures with atomic and piecewise-constant parts.

Convolution of a generator with a measure is exposed both as a function
(``convolve``) and as a generator component (``Convolved``) so the amalgam
routines can take norms and oscillations of it directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .amalgam import DEFAULT_SPEC, EsssupSpec, GeneratorComponent, GeneratorVector, w_norm
from .errors import NonConvergence

_GL_POINTS = 4


@dataclass(frozen=True, eq=False)
class Density:
    """Density ``values[i]`` on ``[origin + i h, origin + (i+1) h)`` (1-D)."""

    h: float
    values: np.ndarray
    origin: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.ndim != 1:
            raise ValueError("density values must be 1-D")
        if not self.h > 0:
            raise ValueError("density grid step must be positive")
        if not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.h * np.arange(self.values.size + 1)


@dataclass(frozen=True, eq=False)
class MeasureComponent:
    """Point masses plus an optional density; both absent is the zero measure."""

    locations: np.ndarray = field(default_factory=lambda: np.empty(0))
    weights: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=complex))
    density: Optional[Density] = None
    dim: int = 1

    def __post_init__(self):
        w = np.atleast_1d(np.array(self.weights, dtype=complex))
        loc = np.array(self.locations, dtype=float)
        if self.dim == 1:
            loc = loc.reshape(-1)
        else:
            loc = loc.reshape(-1, self.dim)
        if loc.shape[0] != w.size:
            raise ValueError("each atom needs one weight")
        if self.density is not None and self.dim != 1:
            raise NotImplementedError("densities are supported for d = 1 only")
        loc.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @classmethod
    def atoms(cls, pairs, dim: int = 1) -> "MeasureComponent":
        """Build from ``[(location, weight), ...]``."""
        pairs = list(pairs)
        if not pairs:
            return cls(dim=dim)
        locs = [p[0] for p in pairs]
        ws = [p[1] for p in pairs]
        return cls(np.array(locs, dtype=float), np.array(ws, dtype=complex), None, dim)

    @classmethod
    def dirac(cls, at=0.0, weight=1.0, dim: int = 1) -> "MeasureComponent":
        return cls.atoms([(at, weight)], dim)

    @classmethod
    def zero(cls, dim: int = 1) -> "MeasureComponent":
        return cls(dim=dim)

    def with_density(self, density: Optional[Density]) -> "MeasureComponent":
        return MeasureComponent(self.locations, self.weights, density, self.dim)

    @property
    def is_zero(self) -> bool:
        dens_zero = self.density is None or not np.any(self.density.values)
        return dens_zero and not np.any(self.weights)

    def _atom_radii(self) -> np.ndarray:
        if self.dim == 1:
            return np.abs(self.locations)
        return np.linalg.norm(self.locations, axis=1)

    def support(self) -> Optional[tuple[float, float]]:
        """Hull of the atoms and density grid (1-D), None for the zero measure."""
        pts = []
        if self.weights.size:
            loc = self.locations if self.dim == 1 else self.locations.ravel()
            pts.extend([loc.min(), loc.max()])
        if self.density is not None and self.density.values.size:
            e = self.density.edges
            pts.extend([e[0], e[-1]])
        if not pts:
            return None
        return (float(min(pts)), float(max(pts)))

    def radius(self) -> float:
        """Largest ``|y|`` over the support."""
        r = 0.0
        if self.weights.size:
            r = float(self._atom_radii().max())
        if self.density is not None and self.density.values.size:
            e = self.density.edges
            r = max(r, abs(e[0]), abs(e[-1]))
        return r

    def scaled(self, a: complex) -> "MeasureComponent":
        dens = None
        if self.density is not None:
            dens = Density(self.density.h, self.density.values * a, self.density.origin)
        return MeasureComponent(self.locations, self.weights * a, dens, self.dim)

    def __add__(self, other: "MeasureComponent") -> "MeasureComponent":
        return combine(self, other, 1.0, 1.0)

    def __sub__(self, other: "MeasureComponent") -> "MeasureComponent":
        return combine(self, other, 1.0, -1.0)


def _merge_densities(d1: Optional[Density], d2: Optional[Density], a, b) -> Optional[Density]:
    if d1 is None and d2 is None:
        return None
    if d1 is None:
        return Density(d2.h, b * d2.values, d2.origin)
    if d2 is None:
        return Density(d1.h, a * d1.values, d1.origin)
    if not math.isclose(d1.h, d2.h, rel_tol=1e-12):
        raise ValueError("densities on different grid steps cannot be combined")
    h = d1.h
    shift = (d2.origin - d1.origin) / h
    if abs(shift - round(shift)) > 1e-9:
        raise ValueError("density grids are not aligned")
    shift = int(round(shift))
    lo = min(0, shift)
    hi = max(d1.values.size, shift + d2.values.size)
    vals = np.zeros(hi - lo, dtype=complex)
    vals[-lo:-lo + d1.values.size] += a * d1.values
    vals[shift - lo:shift - lo + d2.values.size] += b * d2.values
    return Density(h, vals, d1.origin + lo * h)


def combine(m1: MeasureComponent, m2: MeasureComponent, a=1.0, b=1.0) -> MeasureComponent:
    """``a*m1 + b*m2`` with coincident atoms merged."""
    if m1.dim != m2.dim:
        raise ValueError("measures live in different dimensions")
    merged: dict = {}
    for m, coef in ((m1, a), (m2, b)):
        for loc, w in zip(m.locations, m.weights):
            key = tuple(np.atleast_1d(loc).round(14))
            merged[key] = merged.get(key, 0.0) + coef * w
    keys = sorted(merged)
    locs = np.array(keys, dtype=float)
    if m1.dim == 1:
        locs = locs.reshape(-1)
    ws = np.array([merged[k] for k in keys], dtype=complex)
    dens = _merge_densities(m1.density, m2.density, a, b)
    if not keys:
        locs = np.empty(0) if m1.dim == 1 else np.empty((0, m1.dim))
    return MeasureComponent(locs, ws, dens, m1.dim)


@dataclass(frozen=True)
class VecMeasure:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a measure vector needs at least one component")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("all measures must share one dimension")
        object.__setattr__(self, "components", comps)

    @property
    def t(self) -> int:
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

    def total_variation(self) -> float:
        """Sum of component total variations."""
        return float(sum(total_variation(m) for m in self))

    def radius(self) -> float:
        return max(m.radius() for m in self)


def total_variation(m: MeasureComponent) -> float:
    tv = float(np.abs(m.weights).sum())
    if m.density is not None:
        tv += m.density.h * float(np.abs(m.density.values).sum())
    return tv


def _moment_antiderivative(y, s):
    # d/dy of this is (1+|y|)^s on the whole line
    return np.sign(y) * ((1.0 + np.abs(y)) ** (s + 1.0) - 1.0) / (s + 1.0)


def moment(m: MeasureComponent, s: float) -> float:
    """``int (1+|y|)^s d|m|(y)``, exact for both parts."""
    if s < 0:
        raise ValueError("moment order must be nonnegative")
    val = float(np.sum(np.abs(m.weights) * (1.0 + m._atom_radii()) ** s))
    if m.density is not None and m.density.values.size:
        e = m.density.edges
        F = _moment_antiderivative(e, s)
        val += float(np.sum(np.abs(m.density.values) * np.diff(F)))
    return val


def _gl_nodes(edges: np.ndarray, nsub: int):
    """Composite Gauss-Legendre nodes/weights on each cell split ``nsub`` times."""
    t, w = np.polynomial.legendre.leggauss(_GL_POINTS)
    a = edges[:-1]
    width = (edges[1:] - edges[:-1]) / nsub
    starts = a[:, None] + width[:, None] * np.arange(nsub)[None, :]
    nodes = starts[..., None] + (t + 1.0)[None, None, :] * 0.5 * width[:, None, None]
    weights = np.broadcast_to(0.5 * width[:, None, None] * w[None, None, :], nodes.shape)
    return nodes, weights


def _density_convolution(g, dens: Density, x: np.ndarray, nsub: int) -> np.ndarray:
    nodes, weights = _gl_nodes(dens.edges, nsub)
    wy = (weights * dens.values[:, None, None]).ravel()
    y = nodes.ravel()
    out = np.zeros(x.shape, dtype=complex)
    flat = x.ravel()
    step = max(1, 2_000_000 // max(y.size, 1))
    res = out.ravel()
    for i in range(0, flat.size, step):
        res[i:i + step] = g(flat[i:i + step, None] - y[None, :]) @ wy
    return res.reshape(x.shape)


def convolve(g: GeneratorComponent, m: MeasureComponent, x, spec: EsssupSpec = DEFAULT_SPEC):
    """``(g * m)(x) = int g(x - y) dm(y)``.

    Atoms are summed exactly; the density part uses composite Gauss-Legendre
    quadrature refined until the values stop changing.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == (0 if m.dim == 1 else 1)
    if m.dim == 1:
        xs = np.atleast_1d(x)
        diff = xs[..., None] - m.locations
    else:
        xs = x.reshape(-1, m.dim) if scalar else x
        diff = xs[..., None, :] - m.locations
    out = g(diff) @ m.weights if m.weights.size else np.zeros(diff.shape[:-1 if m.dim == 1 else -2],
                                                                dtype=complex)
    if m.density is not None and m.density.values.size:
        prev = None
        for nsub in spec.subdivisions():
            cur = _density_convolution(g, m.density, xs, max(1, nsub // 16))
            if prev is not None:
                delta = float(np.max(np.abs(cur - prev), initial=0.0))
                scale = float(np.max(np.abs(cur), initial=0.0))
                if delta <= spec.rtol * max(scale, 1e-300) or delta == 0.0:
                    break
            prev = cur
        else:
            raise NonConvergence("density convolution did not settle")
        out = out + cur
    if scalar:
        return complex(np.ravel(out)[0])
    return out


class Convolved(GeneratorComponent):
    """The function ``g * m`` viewed as a (real-valued when possible) generator component."""

    def __init__(self, g: GeneratorComponent, m: MeasureComponent,
                 spec: EsssupSpec = DEFAULT_SPEC):
        if g.dim != m.dim:
            raise ValueError("generator and measure dimensions differ")
        self.g = g
        self.m = m
        self.spec = spec
        self.dim = g.dim
        self._real = not (np.any(m.weights.imag)
                          or (m.density is not None and np.any(m.density.values.imag)))

    def _eval(self, x):
        val = convolve(self.g, self.m, x, self.spec)
        return np.real(val) if self._real else val

    def support(self):
        gs = self.g.support()
        ms = self.m.support()
        if ms is None:
            return (0.0, 0.0)
        if gs is None:
            return None
        return (gs[0] + ms[0], gs[1] + ms[1])

    def breakpoints(self):
        gb = self.g.breakpoints()
        ys = []
        if self.m.weights.size and self.dim == 1:
            ys.append(self.m.locations)
        if self.m.density is not None:
            ys.append(self.m.density.edges)
        if not ys:
            return np.empty(0)
        y = np.unique(np.concatenate(ys))
        return np.unique((gb[:, None] + y[None, :]).ravel())

    def decay_bound(self):
        db = self.g.decay_bound()
        if db is None:
            return None
        c, s, rho = db
        return (c * total_variation(self.m), s, rho + self.m.radius())

    def shifted(self, y):
        return Convolved(self.g.shifted(y), self.m, self.spec)

    def scaled(self, a):
        return Convolved(self.g, self.m.scaled(a), self.spec)

    def tabulated(self, h: float):
        """Materialize on a grid of step ``h`` covering the support."""
        from .amalgam import tabulate

        sup = self.support()
        if sup is None:
            raise ValueError("cannot tabulate a function without compact support")
        return tabulate(self, h, sup[0], sup[1])


def convolve_matrix(phi: GeneratorVector, mu: VecMeasure,
                    spec: EsssupSpec = DEFAULT_SPEC) -> list:
    """``r x t`` nested list whose entry ``[i][l]`` is ``phi^i * mu^l``."""
    return [[Convolved(g, m, spec) for m in mu] for g in phi]


@dataclass(frozen=True)
class YoungCheck:
    lhs: float
    rhs: float
    passed: bool


def check_young_bound(g: GeneratorComponent, m: MeasureComponent,
                      spec: EsssupSpec = DEFAULT_SPEC) -> YoungCheck:
    """Compare ``||g*m||_W1`` with ``2^d ||g||_W1 ||m||``."""
    tv = total_variation(m)
    rhs = 2.0**g.dim * w_norm(g, 1, spec) * tv
    lhs = 0.0 if m.is_zero else w_norm(Convolved(g, m, spec), 1, spec)
    return YoungCheck(lhs, rhs, lhs <= rhs * (1.0 + spec.rtol))


__all__ = [
    "Density", "MeasureComponent", "VecMeasure", "combine", "total_variation", "moment",
    "convolve", "Convolved", "convolve_matrix", "check_young_bound", "YoungCheck",
]
