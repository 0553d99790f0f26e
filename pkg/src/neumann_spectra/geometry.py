"""Domains, boundary distance, rasters, collars and Minkowski-dimension fits.

Every domain is an open set of finite measure in R^N (N = 1, 2, 3) that
can answer three questions for an array of points of shape ``(k, N)``:
membership, distance to the boundary, and (derived from those) signed
distance.  Closed-form domains compute the distance exactly; rasters use a
Euclidean distance transform.

Cell-centre rasters are the common discretisation: a cell belongs to the
raster iff its centre lies in the domain.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .expr import compile_profile

__all__ = [
    "DomainError",
    "MembershipError",
    "ResolutionError",
    "FitQualityError",
    "Domain",
    "BoxDomain",
    "BallDomain",
    "GraphDomain",
    "CuspDomain",
    "RasterDomain",
    "CollarMeasureTable",
    "MinkowskiFit",
    "unit_square",
    "unit_interval",
    "unit_disc",
    "sawtooth_domain",
    "holder_quotient",
    "distance_to_boundary",
    "rasterize",
    "cell_distances",
    "collar_measure",
    "lattice_measure",
    "minkowski_dimension",
    "grid_shape",
    "export_pgm",
    "Chart",
    "LipBoundaryAtlas",
    "square_atlas",
    "single_chart_atlas",
]


class DomainError(ValueError):
    """Invalid domain description or raster."""


class MembershipError(DomainError):
    """A point that must lie in the domain does not."""


class ResolutionError(DomainError):
    """The raster is too coarse for the requested collar width."""


class FitQualityError(RuntimeError):
    """A log-log fit was asked of data that cannot support it."""


def _as_points(points, dim: int) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1, 1)
    elif p.ndim == 1:
        p = p.reshape(1, -1) if p.shape[0] == dim else p.reshape(-1, 1)
    if p.shape[1] != dim:
        raise DomainError(f"expected points in R^{dim}, got shape {p.shape}")
    return p


# --------------------------------------------------------------------------
# planar boundary distance


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(p))
    foot = a + t[:, None] * ab
    return np.linalg.norm(p - foot, axis=1)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class _PlanarBoundary:
    """Boundary of a planar region: straight segments plus parametric arcs.

    Arc distances find the few sample vertices nearest to each query point,
    then minimise |p - c(t)|^2 by golden section on the parameter intervals
    adjacent to those vertices.  Intervals are short enough for the squared
    distance to be unimodal on each of them.
    """

    def __init__(self, segments, arcs, pieces: int = 512, candidates: int = 2):
        self.segments = [(np.asarray(a, float), np.asarray(b, float)) for a, b in segments]
        self.arcs = []
        for curve, t0, t1, breaks in arcs:
            ts = np.linspace(t0, t1, pieces + 1)
            if breaks is not None and len(breaks):
                ts = np.unique(np.concatenate([ts, np.asarray(breaks, float)]))
            verts = curve(ts)
            self.arcs.append((curve, ts, verts, cKDTree(verts)))
        self.candidates = candidates

    def distance(self, p: np.ndarray, chunk: int = 20_000) -> np.ndarray:
        if len(p) > chunk:
            return np.concatenate(
                [self.distance(p[i : i + chunk]) for i in range(0, len(p), chunk)]
            )
        best = np.full(len(p), np.inf)
        for a, b in self.segments:
            best = np.minimum(best, _segment_distance(p, a, b))
        for curve, ts, verts, tree in self.arcs:
            k = min(self.candidates, len(ts))
            _, near = tree.query(p, k=k)
            near = near.reshape(len(p), -1)
            # the two pieces adjacent to each nearby vertex
            idx = np.concatenate([np.maximum(near - 1, 0), np.minimum(near, len(ts) - 2)], axis=1)
            a = ts[idx]
            b = ts[idx + 1]
            px = p[:, 0:1]
            py = p[:, 1:2]

            def f(t):
                c = curve(t.ravel()).reshape(t.shape + (2,))
                return (c[..., 0] - px) ** 2 + (c[..., 1] - py) ** 2

            ends = np.minimum(f(a), f(b))
            x1 = b - _GOLDEN * (b - a)
            x2 = a + _GOLDEN * (b - a)
            f1, f2 = f(x1), f(x2)
            for _ in range(36):
                left = f1 < f2
                b = np.where(left, x2, b)
                a = np.where(left, a, x1)
                xn = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
                fn = f(xn)
                x1, x2, f1, f2 = (
                    np.where(left, xn, x2),
                    np.where(left, x1, xn),
                    np.where(left, fn, f2),
                    np.where(left, f1, fn),
                )
            d2 = np.minimum(np.minimum(f1, f2), ends).min(axis=1)
            best = np.minimum(best, np.sqrt(d2))
        return best


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True, eq=False)
class Domain:
    """Base class.  Subclasses implement ``contains`` and ``_distance``."""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def anchor(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def key(self) -> str:
        raise NotImplementedError

    def contains(self, points) -> np.ndarray:
        raise NotImplementedError

    def _distance(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_distance(self, points) -> np.ndarray:
        """Distance to the boundary; defined for points inside or outside."""
        return self._distance(_as_points(points, self.dim))

    def signed_distance(self, points) -> np.ndarray:
        p = _as_points(points, self.dim)
        d = self._distance(p)
        return np.where(self.contains(p), d, -d)

    def measure(self) -> float | None:
        """Exact measure when available in closed form."""
        return None

    def boundary_points(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.key})"


@dataclass(frozen=True, eq=False, repr=False)
class BoxDomain(Domain):
    """Open axis-aligned box; covers the interval, square and rectangles."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not 1 <= len(self.lo) <= 3:
            raise DomainError("box corners must have matching dimension 1..3")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise DomainError("box must have positive extent")

    @property
    def dim(self):
        return len(self.lo)

    @property
    def bounding_box(self):
        return np.array(self.lo, float), np.array(self.hi, float)

    @property
    def anchor(self):
        lo, hi = self.bounding_box
        return (lo + hi) / 2

    @property
    def key(self):
        return f"box:{self.lo}:{self.hi}"

    def contains(self, points):
        p = _as_points(points, self.dim)
        lo, hi = self.bounding_box
        return np.all((p > lo) & (p < hi), axis=1)

    def _distance(self, p):
        lo, hi = self.bounding_box
        inside = np.all((p > lo) & (p < hi), axis=1)
        din = np.minimum(p - lo, hi - p).min(axis=1)
        gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        dout = np.linalg.norm(gap, axis=1)
        # outside points lying in a face-slab still have dout > 0
        return np.where(inside, din, np.where(dout > 0, dout, np.abs(din)))

    def measure(self):
        lo, hi = self.bounding_box
        return float(np.prod(hi - lo))

    def boundary_points(self, n):
        lo, hi = self.bounding_box
        if self.dim == 1:
            return np.array([[lo[0]], [hi[0]]])
        rng = np.random.default_rng(0)
        pts = rng.uniform(lo, hi, size=(n, self.dim))
        axis = rng.integers(0, self.dim, n)
        side = rng.integers(0, 2, n)
        pts[np.arange(n), axis] = np.where(side == 0, lo[axis], hi[axis])
        return pts

    def describe(self):
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True, eq=False, repr=False)
class BallDomain(Domain):
    center: tuple[float, ...]
    radius: float = 1.0

    def __post_init__(self):
        if self.radius <= 0 or not 1 <= len(self.center) <= 3:
            raise DomainError("ball needs positive radius and dimension 1..3")

    @property
    def dim(self):
        return len(self.center)

    @property
    def bounding_box(self):
        c = np.array(self.center, float)
        return c - self.radius, c + self.radius

    @property
    def anchor(self):
        return np.array(self.center, float)

    @property
    def key(self):
        return f"ball:{self.center}:{self.radius}"

    def contains(self, points):
        p = _as_points(points, self.dim)
        return np.linalg.norm(p - self.anchor, axis=1) < self.radius

    def _distance(self, p):
        return np.abs(self.radius - np.linalg.norm(p - self.anchor, axis=1))

    def measure(self):
        n = self.dim
        return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * self.radius**n

    def boundary_points(self, n):
        if self.dim == 1:
            c = self.center[0]
            return np.array([[c - self.radius], [c + self.radius]])
        rng = np.random.default_rng(0)
        v = rng.standard_normal((n, self.dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.anchor + self.radius * v

    def describe(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


def holder_quotient(profile: Callable, lo, hi, gamma: float, samples: int = 257) -> float:
    """Largest |phi(x)-phi(y)| / |x-y|^gamma over pairs of a sample grid."""
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    if len(lo) == 1:
        xs = np.linspace(lo[0], hi[0], samples)[:, None]
        vals = profile(xs[:, 0])
    else:
        s = max(9, int(round(math.sqrt(samples * 4))))
        g = np.meshgrid(*[np.linspace(a, b, s) for a, b in zip(lo, hi)], indexing="ij")
        xs = np.stack([c.ravel() for c in g], axis=1)
        vals = profile(*xs.T)
    diff = np.abs(vals[:, None] - vals[None, :])
    dist = np.linalg.norm(xs[:, None, :] - xs[None, :, :], axis=2)
    mask = dist > 0
    return float((diff[mask] / dist[mask] ** gamma).max())


@dataclass(frozen=True, eq=False, repr=False)
class GraphDomain(Domain):
    """Subgraph {x_bar in G, 0 < x_N < phi(x_bar)} over an open box G.

    ``profile`` is a string in the small expression grammar of
    :mod:`neumann_spectra.expr` (variable ``x`` in 2D, ``x1, x2`` in 3D).
    """

    base_lo: tuple[float, ...]
    base_hi: tuple[float, ...]
    profile: str
    gamma: float = 1.0
    holder_const: float = 1.0
    k_lo: float = 0.0
    k_hi: float = 0.0
    breaks: tuple[float, ...] = ()
    check: bool = True
    _fn: Callable = field(init=False, repr=False, compare=False)
    _boundary: object = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if len(self.base_lo) not in (1, 2) or len(self.base_lo) != len(self.base_hi):
            raise DomainError("graph base must be an interval or a rectangle")
        if not 0 < self.gamma <= 1:
            raise DomainError("Hölder exponent must lie in (0, 1]")
        fn = compile_profile(self.profile, nvars=len(self.base_lo))
        object.__setattr__(self, "_fn", fn)
        if self.k_lo <= 0:
            raise DomainError("profile lower bound k_lo must be positive")
        if self.check:
            q = holder_quotient(fn, self.base_lo, self.base_hi, self.gamma)
            if q > self.holder_const * (1 + 1e-9):
                raise DomainError(
                    f"profile Hölder quotient {q:.6g} exceeds M_h={self.holder_const}"
                )
            vals = self._profile_samples()
            if vals.min() < self.k_lo - 1e-12 or vals.max() > self.k_hi + 1e-12:
                raise DomainError("profile leaves the declared bounds [k_lo, k_hi]")

    def _profile_samples(self, n: int = 513) -> np.ndarray:
        if len(self.base_lo) == 1:
            return self._fn(np.linspace(self.base_lo[0], self.base_hi[0], n))
        s = int(math.sqrt(n)) + 1
        g = np.meshgrid(
            *[np.linspace(a, b, s) for a, b in zip(self.base_lo, self.base_hi)],
            indexing="ij",
        )
        return self._fn(g[0].ravel(), g[1].ravel())

    def phi(self, *xbar) -> np.ndarray:
        return self._fn(*xbar)

    @property
    def dim(self):
        return len(self.base_lo) + 1

    @property
    def bounding_box(self):
        return (
            np.array(list(self.base_lo) + [0.0]),
            np.array(list(self.base_hi) + [self.k_hi]),
        )

    @property
    def anchor(self):
        xb = (np.array(self.base_lo) + np.array(self.base_hi)) / 2
        return np.append(xb, 0.5 * float(self.phi(*[[v] for v in xb])[0]))

    @property
    def key(self):
        return (
            f"graph:{self.base_lo}:{self.base_hi}:{self.profile}:"
            f"{self.gamma}:{self.holder_const}:{self.k_lo}:{self.k_hi}"
        )

    def contains(self, points):
        p = _as_points(points, self.dim)
        xb = p[:, :-1]
        inbase = np.all((xb > np.array(self.base_lo)) & (xb < np.array(self.base_hi)), axis=1)
        out = np.zeros(len(p), bool)
        if inbase.any():
            top = self.phi(*xb[inbase].T)
            z = p[inbase, -1]
            out[inbase] = (z > 0) & (z < top)
        return out

    def _planar(self) -> _PlanarBoundary:
        if self._boundary is None:
            a, b = self.base_lo[0], self.base_hi[0]
            fa = float(self.phi(np.array([a]))[0])
            fb = float(self.phi(np.array([b]))[0])
            fn = self._fn

            def curve(t):
                return np.stack([t, fn(t)], axis=-1)

            bd = _PlanarBoundary(
                segments=[((a, 0.0), (b, 0.0)), ((a, 0.0), (a, fa)), ((b, 0.0), (b, fb))],
                arcs=[(curve, a, b, self.breaks)],
            )
            object.__setattr__(self, "_boundary", bd)
        return self._boundary

    def _cloud(self) -> cKDTree:
        if self._boundary is None:
            pts = self.boundary_points(0)
            object.__setattr__(self, "_boundary", cKDTree(pts))
        return self._boundary

    def _distance(self, p):
        if self.dim == 2:
            return self._planar().distance(p)
        d, _ = self._cloud().query(p)
        return d

    def measure(self):
        if self.dim == 2:
            from scipy.integrate import quad

            pts = list(self.breaks) if self.breaks else None
            val, _ = quad(
                lambda s: float(self.phi(np.array([s]))[0]),
                self.base_lo[0],
                self.base_hi[0],
                points=pts,
                limit=400,
            )
            return val
        s = 801
        g = np.meshgrid(
            *[np.linspace(a, b, s) for a, b in zip(self.base_lo, self.base_hi)], indexing="ij"
        )
        vals = self.phi(g[0], g[1])
        from scipy.integrate import trapezoid

        return float(
            trapezoid(trapezoid(vals, g[1][0], axis=1), g[0][:, 0])
        )

    def boundary_points(self, n):
        if self.dim == 2:
            a, b = self.base_lo[0], self.base_hi[0]
            m = max(n, 64)
            s = np.linspace(a, b, m)
            top = np.stack([s, self.phi(s)], axis=1)
            bottom = np.stack([s, np.zeros(m)], axis=1)
            fa = float(self.phi(np.array([a]))[0])
            fb = float(self.phi(np.array([b]))[0])
            left = np.stack([np.full(m, a), np.linspace(0, fa, m)], axis=1)
            right = np.stack([np.full(m, b), np.linspace(0, fb, m)], axis=1)
            return np.concatenate([top, bottom, left, right])
        # 3D: dense surface sample, spacing ~ 2e-3
        (a1, a2), (b1, b2) = self.base_lo, self.base_hi
        s = 500
        u = np.linspace(a1, b1, s)
        v = np.linspace(a2, b2, s)
        U, V = np.meshgrid(u, v, indexing="ij")
        top = np.stack([U.ravel(), V.ravel(), self.phi(U.ravel(), V.ravel())], axis=1)
        bottom = np.stack([U.ravel(), V.ravel(), np.zeros(U.size)], axis=1)
        sides = []
        for fixed_axis, fixed, other in ((0, a1, v), (0, b1, v), (1, a2, u), (1, b2, u)):
            for o in other:
                x1, x2 = (fixed, o) if fixed_axis == 0 else (o, fixed)
                hgt = float(self.phi(np.array([x1]), np.array([x2]))[0])
                z = np.linspace(0, hgt, s // 4)
                sides.append(np.stack([np.full_like(z, x1), np.full_like(z, x2), z], axis=1))
        return np.concatenate([top, bottom] + sides)

    def describe(self):
        return {
            "kind": "graph",
            "base_lo": list(self.base_lo),
            "base_hi": list(self.base_hi),
            "profile": self.profile,
            "gamma": self.gamma,
            "holder_const": self.holder_const,
            "k_lo": self.k_lo,
            "k_hi": self.k_hi,
        }


@dataclass(frozen=True, eq=False, repr=False)
class CuspDomain(Domain):
    """{(x, y): y in R^(N-1), |y| < 1, |y|^gamma < x < 1}, an outward cusp at 0."""

    N: int = 2
    gamma: float = 0.5
    _boundary: object = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.N not in (2, 3):
            raise DomainError("cusp domains need N in {2, 3}")
        if not 0 < self.gamma <= 1:
            raise DomainError("cusp exponent must lie in (0, 1]")
        p = 1.0 / self.gamma

        def curve(t):
            return np.stack([t, t**p], axis=-1)

        # distances are computed in the meridian half-plane (x, |y|)
        bd = _PlanarBoundary(segments=[((1.0, 0.0), (1.0, 1.0))], arcs=[(curve, 0.0, 1.0, None)])
        object.__setattr__(self, "_boundary", bd)

    @property
    def dim(self):
        return self.N

    @property
    def bounding_box(self):
        return np.array([0.0] + [-1.0] * (self.N - 1)), np.ones(self.N)

    @property
    def anchor(self):
        return np.array([0.75] + [0.0] * (self.N - 1))

    @property
    def key(self):
        return f"cusp:{self.N}:{self.gamma}"

    def _meridian(self, p):
        return np.stack([p[:, 0], np.linalg.norm(p[:, 1:], axis=1)], axis=1)

    def contains(self, points):
        p = _as_points(points, self.dim)
        x = p[:, 0]
        r = np.linalg.norm(p[:, 1:], axis=1)
        xs = np.clip(x, 0.0, None)
        return (x > 0) & (x < 1) & (r < 1) & (r**self.gamma < xs)

    def _distance(self, p):
        return self._boundary.distance(self._meridian(p))

    def measure(self):
        n1 = self.N - 1
        omega = math.pi ** (n1 / 2) / math.gamma(n1 / 2 + 1)
        return omega * self.gamma / (n1 + self.gamma)

    def boundary_graph(self) -> Callable:
        """Boundary written as a graph x = |y|^gamma over the y variables."""
        g = self.gamma
        if self.N == 2:
            return lambda y: np.abs(y) ** g
        return lambda y1, y2: np.hypot(y1, y2) ** g

    def boundary_points(self, n):
        t = np.linspace(0, 1, max(n, 64))
        curve = np.stack([t, t ** (1 / self.gamma)], axis=1)
        if self.N == 2:
            lower = curve * [1, -1]
            end = np.stack([np.ones_like(t), 2 * t - 1], axis=1)
            return np.concatenate([curve, lower, end])
        ang = np.linspace(0, 2 * np.pi, 32, endpoint=False)
        pts = [
            np.stack([curve[:, 0], curve[:, 1] * math.cos(a), curve[:, 1] * math.sin(a)], axis=1)
            for a in ang
        ]
        return np.concatenate(pts)

    def describe(self):
        return {"kind": "cusp", "N": self.N, "gamma": self.gamma}


def grid_shape(lo, hi, h: float) -> tuple[int, ...]:
    """Number of cells per axis for a lattice of spacing h anchored at ``lo``."""
    ext = (np.asarray(hi, float) - np.asarray(lo, float)) / h
    near = np.round(ext)
    n = np.where(np.abs(ext - near) < 1e-9 * np.maximum(1, near), near, np.ceil(ext))
    return tuple(int(max(1, v)) for v in n)


@dataclass(frozen=True, eq=False, repr=False)
class RasterDomain(Domain):
    """Union of lattice cells, stored as a boolean mask over a box.

    Mask axis i is coordinate i; the cell with multi-index ``idx`` has centre
    ``origin + (idx + 0.5) * h``.  ``source`` is the domain the raster was
    cut from, when there is one.
    """

    mask: np.ndarray
    origin: tuple[float, ...]
    h: float
    source: Domain | None = None
    tag: str = ""

    def __post_init__(self):
        m = np.asarray(self.mask, bool)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        if m.ndim != len(self.origin):
            raise DomainError("mask rank must equal the dimension")
        if not m.any():
            raise DomainError("empty raster")

    @property
    def dim(self):
        return self.mask.ndim

    @property
    def shape(self):
        return self.mask.shape

    @property
    def ncells(self) -> int:
        return int(self.mask.sum())

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def bounding_box(self):
        lo = np.array(self.origin, float)
        return lo, lo + np.array(self.mask.shape) * self.h

    @property
    def anchor(self):
        if self.source is not None and self.contains(self.source.anchor).all():
            return np.asarray(self.source.anchor, float)
        return self.cell_centers()[0]

    @property
    def key(self):
        digest = hashlib.blake2b(np.packbits(self.mask).tobytes(), digest_size=8).hexdigest()
        base = self.source.key if self.source is not None else "raster"
        return f"{base}|h={self.h!r}|{self.tag}|{self.mask.shape}|{digest}"

    def cell_indices(self) -> np.ndarray:
        """Multi-indices of inside cells in C (row-major) order."""
        return np.argwhere(self.mask)

    def cell_centers(self) -> np.ndarray:
        return np.array(self.origin) + (self.cell_indices() + 0.5) * self.h

    def _lookup(self, p):
        idx = np.floor((p - np.array(self.origin)) / self.h).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(self.mask.shape)), axis=1)
        return idx, ok

    def contains(self, points):
        p = _as_points(points, self.dim)
        idx, ok = self._lookup(p)
        out = np.zeros(len(p), bool)
        out[ok] = self.mask[tuple(idx[ok].T)]
        return out

    def distance_map(self) -> np.ndarray:
        """Per-cell distance from each inside cell centre to the raster boundary.

        Exact Euclidean distance transform to the nearest outside cell centre,
        minus half a cell (the outside cell's face).  Error is below one cell
        diagonal.
        """
        padded = np.pad(self.mask, 1, constant_values=False)
        edt = ndimage.distance_transform_edt(padded) * self.h
        inner = edt[tuple(slice(1, -1) for _ in range(self.dim))]
        return np.where(self.mask, inner - 0.5 * self.h, 0.0)

    def _distance(self, p):
        idx, ok = self._lookup(p)
        inside = np.zeros(len(p), bool)
        inside[ok] = self.mask[tuple(idx[ok].T)]
        dmap = self.distance_map()
        out = np.zeros(len(p))
        out[inside] = dmap[tuple(idx[inside].T)]
        if (~inside).any():
            padded = np.pad(~self.mask, 1, constant_values=True)
            edt = ndimage.distance_transform_edt(padded) * self.h
            outer = edt[tuple(slice(1, -1) for _ in range(self.dim))] - 0.5 * self.h
            o = ~inside & ok
            out[o] = outer[tuple(idx[o].T)]
            far = ~ok
            if far.any():
                lo, hi = self.bounding_box
                gap = np.maximum(np.maximum(lo - p[far], p[far] - hi), 0)
                out[far] = np.linalg.norm(gap, axis=1)
        return out

    def measure(self):
        return self.ncells * self.cell_volume

    def boundary_points(self, n):
        raise DomainError("raster domains have no sampled boundary")

    def describe(self):
        return {
            "kind": "raster",
            "shape": list(self.mask.shape),
            "origin": list(self.origin),
            "h": self.h,
            "ncells": self.ncells,
            "source": self.source.describe() if self.source is not None else None,
        }

    def restrict(self, keep: np.ndarray, tag: str) -> "RasterDomain":
        """Sub-raster keeping the inside cells flagged in ``keep`` (cell order)."""
        mask = np.zeros_like(self.mask)
        idx = self.cell_indices()[np.asarray(keep, bool)]
        mask[tuple(idx.T)] = True
        return RasterDomain(mask, self.origin, self.h, source=None, tag=tag)


# --------------------------------------------------------------------------
# named domains


def unit_interval() -> BoxDomain:
    return BoxDomain((0.0,), (1.0,))


def unit_square() -> BoxDomain:
    return BoxDomain((0.0, 0.0), (1.0, 1.0))


def unit_disc() -> BallDomain:
    return BallDomain((0.0, 0.0), 1.0)


def sawtooth_domain(teeth: int = 4, base: float = 0.75, amp: float = 0.15) -> GraphDomain:
    """Lipschitz (gamma = 1) subgraph of a symmetric sawtooth over (0, 1)."""
    prof = f"{base} + {amp}*abs(2*({teeth}*x - floor({teeth}*x)) - 1)"
    breaks = tuple(np.arange(0, 2 * teeth + 1) / (2 * teeth))
    return GraphDomain(
        (0.0,),
        (1.0,),
        prof,
        gamma=1.0,
        holder_const=2 * amp * teeth * (1 + 1e-12),
        k_lo=base,
        k_hi=base + amp,
        breaks=breaks,
    )


# --------------------------------------------------------------------------
# operations

_cache: dict = {}
_cache_lock = threading.Lock()


def _cached(key, build):
    with _cache_lock:
        if key in _cache:
            return _cache[key]
    value = build()
    with _cache_lock:
        return _cache.setdefault(key, value)


def distance_to_boundary(domain: Domain, point) -> np.ndarray | float:
    """Distance from points of the domain to its boundary.

    Raises :class:`MembershipError` for points outside the domain.
    """
    p = _as_points(point, domain.dim)
    inside = domain.contains(p)
    if not inside.all():
        bad = p[~inside][0]
        raise MembershipError(f"point {bad.tolist()} is not in {domain!r}")
    d = domain.boundary_distance(p)
    if np.ndim(point) <= 1 and len(d) == 1:
        return float(d[0])
    return d


def rasterize(domain: Domain, h: float) -> RasterDomain:
    """Cell-centre raster of ``domain`` with spacing h.

    Keeps only the face-connected component containing the domain's anchor.
    """
    if isinstance(domain, RasterDomain):
        if not math.isclose(h, domain.h):
            raise DomainError("re-rasterising a raster at a different h is not supported")
        return domain
    if h <= 0:
        raise DomainError("cell size must be positive")

    def build():
        lo, hi = domain.bounding_box
        shape = grid_shape(lo, hi, h)
        axes = [lo[i] + (np.arange(shape[i]) + 0.5) * h for i in range(domain.dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        centers = np.stack([g.ravel() for g in grids], axis=1)
        inside = domain.contains(centers).reshape(shape)
        if not inside.any():
            raise DomainError(f"raster of {domain!r} at h={h} is empty")
        labels, _ = ndimage.label(inside)
        aidx = tuple(np.floor((domain.anchor - lo) / h).astype(int))
        anchor_label = labels[aidx] if all(0 <= a < s for a, s in zip(aidx, shape)) else 0
        if anchor_label == 0:
            raise DomainError(f"anchor of {domain!r} does not fall in an inside cell at h={h}")
        mask = labels == anchor_label
        return RasterDomain(mask, tuple(float(v) for v in lo), float(h), source=domain)

    return _cached(("raster", domain.key, float(h)), build)


def cell_distances(raster: RasterDomain) -> np.ndarray:
    """Boundary distance at each inside cell centre (cell order).

    Exact when the raster has a closed-form source, distance transform
    otherwise.
    """

    def build():
        if raster.source is not None:
            return raster.source.boundary_distance(raster.cell_centers())
        return raster.distance_map()[raster.mask]

    return _cached(("celldist", raster.key), build)


def _adaptive_count(domain: Domain, h: float, eps: float) -> int:
    """Count lattice cells whose centre x has 0 < d(x) <= eps and x in domain.

    Blocks of cells are accepted or rejected wholesale using the 1-Lipschitz
    signed distance at the block centre, so the count equals brute-force
    enumeration of every cell while touching only cells near the level sets.
    """
    lo, hi = domain.bounding_box
    shape = np.array(grid_shape(lo, hi, h))
    N = domain.dim
    size = 1 << max(0, int(math.floor(math.log2(max(1, shape.min() // 2)))))
    starts = np.stack(
        np.meshgrid(*[np.arange(0, s, size) for s in shape], indexing="ij"), axis=-1
    ).reshape(-1, N)
    total = 0
    slack = 1e-9 * max(1.0, float(np.max(hi - lo)))
    while len(starts):
        ends = np.minimum(starts + size, shape)
        first = lo + (starts + 0.5) * h
        last = lo + (ends - 0.5) * h
        center = (first + last) / 2
        radius = np.linalg.norm(last - first, axis=1) / 2
        sd = domain.signed_distance(center)
        ncell = np.prod(ends - starts, axis=1)
        if size == 1:
            total += int(np.count_nonzero((sd > 0) & (sd <= eps)))
            break
        full = (sd - radius > slack) & (sd + radius <= eps - slack)
        total += int(ncell[full].sum())
        drop = (sd - radius > eps + slack) | (sd + radius < -slack)
        keep = ~(full | drop)
        starts = starts[keep]
        size //= 2
        offsets = np.stack(
            np.meshgrid(*[np.array([0, size])] * N, indexing="ij"), axis=-1
        ).reshape(-1, N)
        starts = (starts[:, None, :] + offsets[None, :, :]).reshape(-1, N)
        starts = starts[np.all(starts < shape, axis=1)]
    return total


def collar_measure(domain: Domain, eps: float, h: float | None = None) -> float:
    """Measure of the collar {x in domain : d(x) <= eps} by cell counting.

    The lattice spacing must satisfy h <= eps / 8; by default h = eps / 8.
    """
    if eps <= 0:
        raise DomainError("collar width must be positive")
    if isinstance(domain, RasterDomain):
        if domain.h > eps / 8 * (1 + 1e-12):
            raise ResolutionError(
                f"raster h={domain.h:g} too coarse for eps={eps:g}; need h <= eps/8 = {eps / 8:g}"
            )
        d = cell_distances(domain)
        return float(np.count_nonzero(d <= eps) * domain.cell_volume)
    h = eps / 8 if h is None else h
    if h > eps / 8 * (1 + 1e-12):
        raise ResolutionError(f"h={h:g} too coarse for eps={eps:g}; need h <= eps/8 = {eps / 8:g}")
    return _adaptive_count(domain, h, eps) * h**domain.dim


def lattice_measure(domain: Domain, h: float) -> float:
    """Measure of the cells whose centres lie in the domain."""
    if isinstance(domain, RasterDomain):
        return domain.measure()
    return _adaptive_count(domain, h, math.inf) * h**domain.dim


@dataclass
class CollarMeasureTable:
    eps: np.ndarray
    measures: np.ndarray
    exponent: float
    constant: float
    h: float

    def to_dict(self) -> dict:
        return {
            "eps": self.eps.tolist(),
            "measures": self.measures.tolist(),
            "exponent": self.exponent,
            "constant": self.constant,
            "h": self.h,
        }


@dataclass
class MinkowskiFit:
    estimate: float
    table: CollarMeasureTable
    residuals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "residuals": self.residuals.tolist(),
            "collar": self.table.to_dict(),
        }


def minkowski_dimension(
    domain: Domain, eps: Sequence[float] | None = None, h: float | None = None
) -> MinkowskiFit:
    """Estimate the Minkowski dimension of the boundary from collar measures.

    Fits log|collar(eps)| = log a + g log eps by least squares on a shared
    lattice of spacing ``min(eps)/8`` and returns N - g.
    """
    eps = np.sort(np.geomspace(1e-3, 1e-1, 7) if eps is None else np.asarray(eps, float))
    if len(eps) < 6 or eps[-1] / eps[0] < 100 * (1 - 1e-9):
        raise FitQualityError("need at least 6 collar widths spanning two decades")
    if isinstance(domain, RasterDomain):
        h = domain.h
    elif h is None:
        h = eps[0] / 8
    meas = np.array([collar_measure(domain, e, h=h) for e in eps])
    if np.any(meas <= 0):
        raise FitQualityError("empty collar: lattice cannot resolve the smallest eps")
    if np.any(np.diff(meas) < 0):
        raise FitQualityError("collar measures are not monotone in eps")
    X = np.vstack([np.ones_like(eps), np.log(eps)]).T
    coef, *_ = np.linalg.lstsq(X, np.log(meas), rcond=None)
    resid = np.log(meas) - X @ coef
    g = float(coef[1])
    table = CollarMeasureTable(eps, meas, g, float(np.exp(coef[0])), float(h))
    return MinkowskiFit(domain.dim - g, table, resid)


def export_pgm(raster: RasterDomain, path, values: np.ndarray | None = None):
    """Write a 2D raster (or per-cell values) as a binary portable greymap.

    Row 0 of the image is the top of the domain (largest second coordinate).
    """
    from pathlib import Path

    if raster.dim != 2:
        raise DomainError("greymap export needs a 2D raster")
    img = np.zeros(raster.shape)
    if values is None:
        img[raster.mask] = 1.0
    else:
        v = np.asarray(values, float)
        span = float(v.max() - v.min()) or 1.0
        img[raster.mask] = 0.1 + 0.9 * (v - v.min()) / span
    pix = np.round(255 * img.T[::-1]).astype(np.uint8)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode())
        fh.write(pix.tobytes())
    return path


# --------------------------------------------------------------------------
# Lip-gamma atlases


@dataclass(frozen=True, eq=False)
class Chart:
    """One cuboid chart of a boundary atlas.

    Local coordinates are ``z = rotation @ x``; the cuboid is
    ``lo < z < hi`` and the domain inside it is ``lo[-1] < z_N < profile(z_bar)``.
    ``profile`` takes the ``N - 1`` window coordinates as separate arrays;
    ``profile is None`` marks an interior chart (profile equal to ``hi[-1]``).
    """

    rotation: np.ndarray
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    profile: Callable | None = None

    def local(self, points) -> np.ndarray:
        return _as_points(points, len(self.lo)) @ np.asarray(self.rotation).T

    @property
    def direction(self) -> np.ndarray:
        """Unit vector mapped to ``e_N`` by the rotation."""
        return np.asarray(self.rotation)[-1].copy()

    def top(self, zbar: np.ndarray) -> np.ndarray:
        if self.profile is None:
            return np.full(len(zbar), self.hi[-1])
        return self.profile(*np.asarray(zbar).T)

    def face_distance(self, z: np.ndarray) -> np.ndarray:
        """Per-axis distance from local points to the nearest pair of faces."""
        return np.minimum(z - np.array(self.lo), np.array(self.hi) - z)

    def in_box(self, z: np.ndarray, margin: float = 0.0) -> np.ndarray:
        return np.all(self.face_distance(z) > margin, axis=1)


@dataclass(frozen=True, eq=False)
class LipBoundaryAtlas:
    """Chart data ``(gamma, M, delta, s, {V_j}, {lambda_j})`` of a Lip-gamma boundary."""

    gamma: float
    holder_const: float
    delta: float
    charts: tuple[Chart, ...]

    def __post_init__(self):
        if not 0 < self.gamma <= 1 or self.delta <= 0 or not self.charts:
            raise DomainError("atlas needs 0 < gamma <= 1, delta > 0 and at least one chart")
        for c in self.charts:
            R = np.asarray(c.rotation, float)
            if not np.allclose(R @ R.T, np.eye(len(c.lo)), atol=1e-12):
                raise DomainError("chart rotation is not orthogonal")

    @property
    def s(self) -> int:
        return len(self.charts)

    def verify(self, domain: Domain, h: float, samples: int = 257) -> dict:
        """Check conditions (i)-(iii) and the Hölder bound by point sampling.

        Condition (i) and (ii) are tested on the cell centres of a lattice of
        spacing ``h`` over the domain's bounding box; (iii) and the Hölder
        quotient on ``samples`` points per window axis.
        """
        lo, hi = domain.bounding_box
        shape = grid_shape(lo, hi, h)
        axes = [lo[i] + (np.arange(shape[i]) + 0.5) * h for i in range(domain.dim)]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        inside = domain.contains(pts)
        omega = pts[inside]
        covered = np.zeros(len(omega), bool)
        nonempty, subgraph, margins = [], [], []
        holder = 0.0
        for c in self.charts:
            zo = c.local(omega)
            core = c.in_box(zo, self.delta)
            covered |= core
            nonempty.append(bool(core.any()))
            z = c.local(pts)
            box = c.in_box(z)
            pred = z[box, -1] < c.top(z[box, :-1])
            subgraph.append(int(np.count_nonzero(pred != inside[box])))
            if c.profile is None:
                margins.append(True)
                continue
            wlo, whi = np.array(c.lo[:-1]), np.array(c.hi[:-1])
            if len(wlo) == 1:
                zb = np.linspace(wlo[0], whi[0], samples)[:, None]
            else:
                s = int(math.sqrt(samples)) + 1
                g = np.meshgrid(*[np.linspace(a, b, s) for a, b in zip(wlo, whi)], indexing="ij")
                zb = np.stack([v.ravel() for v in g], axis=1)
            top = c.top(zb)
            margins.append(
                bool(np.all(top >= c.lo[-1] + self.delta - 1e-12)
                     and np.all(top <= c.hi[-1] - self.delta + 1e-12))
            )
            holder = max(holder, holder_quotient(c.profile, wlo, whi, self.gamma, samples))
        report = {
            "uncovered_points": int(np.count_nonzero(~covered)),
            "charts_meet_domain": nonempty,
            "subgraph_mismatches": subgraph,
            "margins_ok": margins,
            "holder_quotient": holder,
            "holder_ok": holder <= self.holder_const * (1 + 1e-9),
        }
        report["all_pass"] = bool(
            report["uncovered_points"] == 0
            and all(nonempty)
            and not any(subgraph)
            and all(margins)
            and report["holder_ok"]
        )
        return report


def square_atlas(
    delta: float = 0.16, width: float = 0.525, depth: float = 0.535, top: float | None = None
) -> LipBoundaryAtlas:
    """Four corner charts of the unit square, each rotated by 45 degrees.

    In chart coordinates ``z_N`` points out of the corner along the
    diagonal and the square is the subgraph of ``p_c - |z_1 - s_c|``.
    ``width`` is the half-width of the window, ``depth`` the distance from
    the opposite corner to the bottom face; covering needs
    ``width - delta > sqrt(2)/4`` and ``depth + delta < sqrt(2)/2``, the
    side walls stay outside when ``width <= depth``.
    """
    r2 = math.sqrt(2.0)
    top = 2 * delta if top is None else top
    charts = []
    for c in ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)):
        c = np.array(c)
        u = (c - 0.5) / np.linalg.norm(c - 0.5)
        w = np.array([-u[1], u[0]])
        R = np.vstack([w, u])
        p_c, s_c = float(u @ c), float(w @ c)

        def prof(z1, p_c=p_c, s_c=s_c):
            return p_c - np.abs(np.asarray(z1) - s_c)

        charts.append(
            Chart(R, (s_c - width, p_c - r2 + depth), (s_c + width, p_c + top), prof)
        )
    return LipBoundaryAtlas(1.0, 1.0, delta, tuple(charts))


def single_chart_atlas(domain: GraphDomain, delta: float) -> LipBoundaryAtlas:
    """One upright chart over a 2D graph domain, window widened by ``delta``.

    Only the top boundary is a graph in this chart, so the atlas is a
    translation device for strip-like domains rather than a full Lip atlas
    of the bounded set (condition (ii) fails next to the side walls).
    """
    if domain.dim != 2:
        raise DomainError("single-chart atlas is implemented for planar graph domains")
    a, b = domain.base_lo[0], domain.base_hi[0]

    def prof(z1):
        return domain.phi(np.clip(np.asarray(z1, float), a, b))

    chart = Chart(
        np.eye(2), (a - delta, -delta), (b + delta, domain.k_hi + 2 * delta), prof
    )
    return LipBoundaryAtlas(domain.gamma, domain.holder_const, delta, (chart,))
