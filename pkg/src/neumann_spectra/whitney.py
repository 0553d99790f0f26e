"""Whitney coverings by dyadic cubes.

A cube of level k has edge ``2^-k`` and lower corner ``i * 2^-k`` for an
integer vector ``i``.  Cubes are selected top-down: a cube is kept when its
centre lies at distance at least ``1.5 diam`` from the boundary, which makes
``diam <= dist(Q, boundary)`` hold for the whole cube because the distance
is 1-Lipschitz.  A cube whose parent was rejected has centre distance below
``3.5 diam``, so the upper bound ``dist <= 4 diam`` holds as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Domain, RasterDomain

__all__ = [
    "WhitneyError",
    "WhitneyCovering",
    "build_whitney",
    "cube_count_dimension",
    "check_point_cube_distance",
    "CubeCountFit",
]

ACCEPT_FACTOR = 1.5


class WhitneyError(ValueError):
    pass


@dataclass(eq=False)
class WhitneyCovering:
    """Dyadic cubes ``(level, index)`` with per-level counts.

    Attributes
    ----------
    levels : ndarray of int, shape (ncubes,)
    indices : ndarray of int, shape (ncubes, N)
    counts : dict mapping level to cube count
    domain_key : str
    k_max : int
        Truncation level; cubes closer to the boundary than level ``k_max``
        allows are omitted.
    """

    levels: np.ndarray
    indices: np.ndarray
    domain_key: str
    k_max: int
    k0: int
    center_distance: np.ndarray
    checks: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.indices.shape[1]

    @property
    def ncubes(self) -> int:
        return len(self.levels)

    @property
    def counts(self) -> dict[int, int]:
        ks, cs = np.unique(self.levels, return_counts=True)
        return {int(k): int(c) for k, c in zip(ks, cs)}

    def edges(self) -> np.ndarray:
        return np.ldexp(1.0, -self.levels)

    def diameters(self) -> np.ndarray:
        return self.edges() * math.sqrt(self.dim)

    def lower_corners(self) -> np.ndarray:
        return self.indices * self.edges()[:, None]

    def centers(self) -> np.ndarray:
        return (self.indices + 0.5) * self.edges()[:, None]

    def union_measure(self) -> float:
        return float(np.sum(self.edges() ** self.dim))

    def to_dict(self) -> dict:
        return {
            "domain": self.domain_key,
            "k_max": self.k_max,
            "ncubes": self.ncubes,
            "counts": {str(k): v for k, v in self.counts.items()},
            "union_measure": self.union_measure(),
            "truncated_at_level": self.k_max,
            "checks": self.checks,
        }

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        head = "level," + ",".join(f"i{a}" for a in range(self.dim))
        rows = [head] + [
            f"{k}," + ",".join(str(int(v)) for v in idx)
            for k, idx in zip(self.levels, self.indices)
        ]
        path.write_text("\n".join(rows) + "\n")
        return path

    def to_gnuplot(self, path: str | Path) -> Path:
        """Rectangle script for 2D coverings (first two axes otherwise)."""
        path = Path(path)
        lo = self.lower_corners()
        e = self.edges()
        lines = ["unset key", "set size ratio -1"]
        for n, (c, s) in enumerate(zip(lo, e), start=1):
            x0, y0 = c[0], (c[1] if self.dim > 1 else 0.0)
            y1 = y0 + (s if self.dim > 1 else 0.05)
            lines.append(
                f"set object {n} rect from {x0!r},{y0!r} to {x0 + s!r},{y1!r} fs empty"
            )
        mn = lo.min(axis=0)
        mx = (lo + e[:, None]).max(axis=0)
        yr = f"[{mn[1]!r}:{mx[1]!r}]" if self.dim > 1 else "[0:0.05]"
        lines.append(f"plot [{mn[0]!r}:{mx[0]!r}] {yr} NaN")
        path.write_text("\n".join(lines) + "\n")
        return path


def build_whitney(domain: Domain, k_max: int, check: bool = True) -> WhitneyCovering:
    """Whitney covering of ``domain`` truncated at level ``k_max``.

    Parameters
    ----------
    domain : Domain
        Any domain with a signed distance (rasters included).
    k_max : int
        Finest admissible level, at least 3.
    check : bool
        Run the exact invariant checks and store them in ``checks``.
    """
    if k_max < 3:
        raise WhitneyError("k_max must be at least 3")
    lo, hi = domain.bounding_box
    N = domain.dim
    extent = float(np.max(hi - lo))
    k0 = -math.ceil(math.log2(extent))
    if k0 > k_max:
        raise WhitneyError("k_max is coarser than the domain's bounding box")
    e0 = math.ldexp(1.0, -k0)
    first = np.floor(lo / e0).astype(np.int64)
    last = np.ceil(hi / e0).astype(np.int64)
    grids = np.meshgrid(*[np.arange(a, b) for a, b in zip(first, last)], indexing="ij")
    active = np.stack([g.ravel() for g in grids], axis=1)
    kept_levels, kept_idx, kept_d = [], [], []
    offsets = np.stack(np.meshgrid(*[[0, 1]] * N, indexing="ij"), axis=-1).reshape(-1, N)
    for k in range(k0, k_max + 1):
        if not len(active):
            break
        edge = math.ldexp(1.0, -k)
        diam = edge * math.sqrt(N)
        centers = (active + 0.5) * edge
        sd = domain.signed_distance(centers)
        accept = sd >= ACCEPT_FACTOR * diam
        if k > k0:
            kept_levels.append(np.full(int(accept.sum()), k))
            kept_idx.append(active[accept])
            kept_d.append(sd[accept])
        # cubes entirely outside are dropped; the rest are refined
        refine = ~accept & (sd > -diam / 2)
        if k == k0:
            refine = sd > -diam / 2
        active = (2 * active[refine][:, None, :] + offsets[None]).reshape(-1, N)
    if not kept_levels or sum(len(v) for v in kept_levels) == 0:
        raise WhitneyError(f"no Whitney cube fits in {domain!r} up to level {k_max}")
    cov = WhitneyCovering(
        np.concatenate(kept_levels),
        np.concatenate(kept_idx),
        domain.key,
        k_max,
        k0,
        np.concatenate(kept_d),
    )
    if check:
        cov.checks = verify_covering(cov, domain)
    return cov


def _ancestors_disjoint(cov: WhitneyCovering) -> int:
    """Number of cubes sharing interior with another (exact integer test)."""
    keys = {(int(k), tuple(int(v) for v in i)) for k, i in zip(cov.levels, cov.indices)}
    dup = cov.ncubes - len(keys)
    bad = dup
    for k, idx in zip(cov.levels, cov.indices):
        a = idx.copy()
        for lev in range(int(k) - 1, cov.k0 - 1, -1):
            a = a >> 1
            if (lev, tuple(int(v) for v in a)) in keys:
                bad += 1
                break
    return bad


def _touching_pairs(cov: WhitneyCovering, max_cells: int = 40_000_000):
    """Pairs of cubes whose closures meet, from a painted finest-level map."""
    kf = int(cov.levels.max())
    scale = np.left_shift(1, kf - cov.levels)
    lo_f = cov.indices * scale[:, None]
    hi_f = lo_f + scale[:, None]
    origin = lo_f.min(axis=0) - 1
    shape = tuple(int(v) for v in hi_f.max(axis=0) - origin + 1)
    if np.prod(shape, dtype=float) > max_cells:
        return None
    paint = np.full(shape, -1, dtype=np.int64)
    for n in range(cov.ncubes):
        sl = tuple(slice(int(a - o), int(b - o)) for a, b, o in zip(lo_f[n], hi_f[n], origin))
        paint[sl] = n
    pairs = set()
    N = cov.dim
    for shift in np.ndindex(*([3] * N)):
        d = np.array(shift) - 1
        if not d.any():
            continue
        src = tuple(slice(max(0, -s), shape[a] - max(0, s)) for a, s in enumerate(d))
        dst = tuple(slice(max(0, s), shape[a] - max(0, -s)) for a, s in enumerate(d))
        a = paint[src]
        b = paint[dst]
        m = (a >= 0) & (b >= 0) & (a != b)
        if m.any():
            u = np.minimum(a[m], b[m])
            v = np.maximum(a[m], b[m])
            pairs.update(zip(u.tolist(), v.tolist()))
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def verify_covering(cov: WhitneyCovering, domain: Domain) -> dict:
    """Exact checks of disjointness, condition (iii), neighbour sizes and counts."""
    N = cov.dim
    diam = cov.diameters()
    half = diam / 2
    lower = cov.center_distance - half
    upper = cov.center_distance + half
    cond3 = int(np.count_nonzero((lower < diam * (1 - 1e-12)) | (cov.center_distance > 4 * diam)))
    lo, hi = domain.bounding_box
    c1 = float(np.prod(hi - lo)) + 1
    counts = cov.counts
    count_ok = all(v <= c1 * 2.0 ** (N * k) for k, v in counts.items())
    pairs = _touching_pairs(cov)
    out = {
        "disjointness_violations": _ancestors_disjoint(cov),
        "condition_iii_violations": cond3,
        "distance_upper_over_diam_max": float((upper / diam).max()),
        "count_bound_c1": c1,
        "count_bound_holds": bool(count_ok),
    }
    if pairs is None:
        out.update(touch_check="skipped: painted map too large")
    else:
        lv = cov.levels
        dl = np.abs(lv[pairs[:, 0]] - lv[pairs[:, 1]]) if len(pairs) else np.zeros(0, int)
        touches = np.bincount(pairs.ravel(), minlength=cov.ncubes) if len(pairs) else np.zeros(1)
        out.update(
            touch_check="done",
            neighbour_level_gap_max=int(dl.max()) if len(dl) else 0,
            neighbour_violations=int(np.count_nonzero(dl > 2)),
            max_touching=int(touches.max()),
            touch_bound=12**N,
            touch_violations=int(np.count_nonzero(touches > 12**N)),
        )
    out["all_pass"] = bool(
        out["disjointness_violations"] == 0
        and cond3 == 0
        and count_ok
        and out.get("neighbour_violations", 0) == 0
        and out.get("touch_violations", 0) == 0
    )
    return out


@dataclass
class CubeCountFit:
    estimate: float
    levels: np.ndarray
    counts: np.ndarray
    fit_levels: np.ndarray
    residuals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "levels": self.levels.tolist(),
            "counts": self.counts.tolist(),
            "fit_levels": self.fit_levels.tolist(),
            "residuals": self.residuals.tolist(),
        }


def cube_count_dimension(cov: WhitneyCovering) -> CubeCountFit:
    """Slope of ``log2 n(k)`` against k over the finer half of the levels."""
    counts = cov.counts
    ks = np.array(sorted(counts))
    ns = np.array([counts[k] for k in ks], dtype=float)
    if len(ks) < 5:
        raise WhitneyError(f"need at least 5 populated levels, have {len(ks)}")
    half = len(ks) - len(ks) // 2
    sel = ks[-half:]
    y = np.log2(ns[-half:])
    X = np.vstack([np.ones_like(sel, dtype=float), sel.astype(float)]).T
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return CubeCountFit(float(coef[1]), ks, ns, sel, y - X @ coef)


def check_point_cube_distance(
    cov: WhitneyCovering, domain: Domain, samples: int = 4, seed: int = 0, rtol: float = 1e-9
) -> dict:
    """Check ``diam(Q) <= d(x) <= 5 diam(Q)`` at corners, centre and random points."""
    N = cov.dim
    rng = np.random.default_rng(seed)
    edge = cov.edges()
    lo = cov.lower_corners()
    offs = np.stack(np.meshgrid(*[[0.0, 1.0]] * N, indexing="ij"), axis=-1).reshape(-1, N)
    offs = np.concatenate([offs, np.full((1, N), 0.5), rng.uniform(0, 1, (samples, N))])
    pts = (lo[:, None, :] + offs[None, :, :] * edge[:, None, None]).reshape(-1, N)
    d = domain.boundary_distance(pts).reshape(cov.ncubes, -1)
    diam = cov.diameters()[:, None]
    bad_lo = d < diam * (1 - rtol)
    bad_hi = d > 5 * diam * (1 + rtol)
    bad = np.nonzero((bad_lo | bad_hi).any(axis=1))[0]
    ratio = d / diam
    return {
        "points_checked": int(d.size),
        "violations": [
            {"level": int(cov.levels[i]), "index": cov.indices[i].tolist()} for i in bad[:50]
        ],
        "violation_count": int(len(bad)),
        "min_ratio": float(ratio.min()),
        "max_ratio": float(ratio.max()),
    }
