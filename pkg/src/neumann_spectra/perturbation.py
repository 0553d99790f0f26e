"""Perturbed domains, paired spectra and eigenvalue-stability checks.

Three perturbation families are realised on the lattice of the unperturbed
raster, so that the perturbed cell set is a literal subset of the original:

``graph_shrink``
    the subgraph of ``(1 - eps) phi`` for a graph domain (or a box);
``collar_removal``
    the cells at distance more than ``eps`` from the boundary;
``deformation``
    the image ``T_eps(Omega)`` of the inward displacement
    ``T_eps(x) = x - eps sum_j psi_j(x) xi_j`` built from a boundary atlas.

Eigenvalues of the two domains are paired by index.  The deviation
``|lambda_{n,2} / lambda_{n,1} - 1|`` is compared with ``eps^gamma``, and
deviations below twice the Richardson estimate of the discretisation error
on the unperturbed raster are treated as zero.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .discrete_operator import DiscreteOperator, assemble
from .eigensolver import SpectrumResult, lowest_eigenpairs, rayleigh_ritz
from .geometry import (
    BoxDomain,
    Domain,
    DomainError,
    GraphDomain,
    LipBoundaryAtlas,
    RasterDomain,
    _as_points,
    cell_distances,
    grid_shape,
    rasterize,
)
from .heat import fit_ultracontractivity

__all__ = [
    "PerturbationError",
    "DeformationError",
    "graph_shrink",
    "rasterize_on",
    "restriction_map",
    "collar_removal",
    "DeformationMap",
    "build_deformation",
    "jacobian_check",
    "verify_deformation_inclusions",
    "Theorem13Report",
    "verify_theorem13",
    "StabilityReport",
    "stability_sweep",
    "verify_corollary16",
    "box_neumann_eigenvalues",
    "FAMILIES",
    "DEFAULT_EPS",
    "STABILITY_RTOL",
]

FAMILIES = ("graph_shrink", "collar_removal", "deformation")
DEFAULT_EPS = (0.01, 0.02, 0.04, 0.08)
# b_n(eps) may exceed its value at the largest eps by at most this factor
STABILITY_RTOL = 0.3


class PerturbationError(DomainError):
    pass


class DeformationError(PerturbationError):
    pass


def domain_gamma(domain: Domain) -> float:
    """Hölder exponent of the boundary (1 for boxes, balls and rasters)."""
    return float(getattr(domain, "gamma", 1.0))


# --------------------------------------------------------------------------
# families


def graph_shrink(domain: GraphDomain | BoxDomain, eps: float) -> GraphDomain | BoxDomain:
    """Subgraph of ``(1 - eps) phi``; a box keeps its base and loses height."""
    if not 0 < eps < 0.5:
        raise PerturbationError("graph_shrink needs 0 < eps < 1/2")
    if isinstance(domain, BoxDomain):
        hi = list(domain.hi)
        hi[-1] = domain.lo[-1] + (1 - eps) * (hi[-1] - domain.lo[-1])
        return BoxDomain(tuple(domain.lo), tuple(float(v) for v in hi))
    if not isinstance(domain, GraphDomain):
        raise PerturbationError("graph_shrink applies to graph domains and boxes")
    return GraphDomain(
        domain.base_lo,
        domain.base_hi,
        f"(1 - {eps!r})*({domain.profile})",
        gamma=domain.gamma,
        holder_const=(1 - eps) * domain.holder_const,
        k_lo=(1 - eps) * domain.k_lo,
        k_hi=(1 - eps) * domain.k_hi,
        breaks=domain.breaks,
        check=False,
    )


def rasterize_on(domain: Domain, reference: RasterDomain, tag: str = "") -> RasterDomain:
    """Cell-centre raster of ``domain`` on the lattice of ``reference``.

    Only cells of ``reference`` are tested, so the result is a subset of it.
    """
    centers = reference.cell_centers()
    keep = domain.contains(centers)
    if not keep.any():
        raise PerturbationError(f"{domain!r} contains no cell of the reference raster")
    out = reference.restrict(keep, tag or f"on:{domain.key}")
    return out


def restriction_map(op1: DiscreteOperator, raster2: RasterDomain) -> np.ndarray:
    """Cell numbers in ``op1`` of the cells of ``raster2`` (shared lattice)."""
    r1 = op1.raster
    if raster2.shape != r1.shape or not np.allclose(raster2.origin, r1.origin) or not math.isclose(
        raster2.h, r1.h
    ):
        raise PerturbationError("rasters do not share a lattice")
    idx = op1.index_map[tuple(raster2.cell_indices().T)]
    if np.any(idx < 0):
        raise PerturbationError(f"{int(np.count_nonzero(idx < 0))} cells lie outside Omega_1")
    return idx


def _check_connected(raster: RasterDomain, what: str) -> RasterDomain:
    _, ncomp = ndimage.label(raster.mask)
    if ncomp != 1:
        raise PerturbationError(f"{what} leaves {ncomp} components")
    return raster


def collar_removal(raster: RasterDomain, eps: float) -> RasterDomain:
    """Cells of ``raster`` at boundary distance greater than ``eps``."""
    if eps <= 0:
        raise PerturbationError("collar width must be positive")
    keep = cell_distances(raster) > eps
    if not keep.any():
        raise PerturbationError(f"removing the collar of width eps={eps:g} empties the domain")
    inner = raster.restrict(keep, f"collar-removed:{eps!r}")
    return _check_connected(inner, f"removing the collar of width eps={eps:g}")


# --------------------------------------------------------------------------
# deformation


def _ramp(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """C^2 smoothstep ``6u^5 - 15u^4 + 10u^3`` on [0, 1] and its derivative."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10 - 15 * u + 6 * u**2), 30 * u**2 * (1 - u) ** 2


@dataclass(frozen=True, eq=False)
class DeformationMap:
    """``T_eps(x) = x - eps sum_j psi_j(x) xi_j`` with ``xi_j`` the chart directions.

    ``beta_j`` is the product over axes of the smoothstep of
    ``(face distance - 3 delta / 4) / ramp_width`` in chart coordinates, so
    it vanishes outside ``(V_j)_{3 delta/4}``; ``psi_j = beta_j / sum_k beta_k``.
    """

    atlas: LipBoundaryAtlas
    eps: float
    ramp_width: float
    checks: dict = field(default_factory=dict)

    @property
    def directions(self) -> np.ndarray:
        return np.array([c.direction for c in self.atlas.charts])

    def _bumps(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        inner = 0.75 * self.atlas.delta
        L = self.ramp_width
        k, N = x.shape
        beta = np.ones((k, self.atlas.s))
        grad = np.zeros((k, self.atlas.s, N))
        for j, c in enumerate(self.atlas.charts):
            z = c.local(x)
            lo, hi = np.array(c.lo), np.array(c.hi)
            near_lo = z - lo <= hi - z
            d = np.where(near_lo, z - lo, hi - z)
            r, dr = _ramp((d - inner) / L)
            dr = dr * np.where(near_lo, 1.0, -1.0) / L
            beta[:, j] = np.prod(r, axis=1)
            gz = np.empty_like(z)
            for i in range(N):
                others = np.prod(np.delete(r, i, axis=1), axis=1)
                gz[:, i] = dr[:, i] * others
            grad[:, j] = gz @ np.asarray(c.rotation)
        return beta, grad

    def weights(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``psi`` (k, s), its gradient (k, s, N) and the bump sum (k,)."""
        x = _as_points(points, len(self.atlas.charts[0].lo))
        beta, grad = self._bumps(x)
        S = beta.sum(axis=1)
        safe = np.where(S > 0, S, 1.0)
        psi = np.where(S[:, None] > 0, beta / safe[:, None], 0.0)
        gS = grad.sum(axis=1)
        dpsi = (grad - psi[:, :, None] * gS[:, None, :]) / safe[:, None, None]
        dpsi[S <= 0] = 0.0
        return psi, dpsi, S

    def displacement(self, points) -> np.ndarray:
        psi, _, _ = self.weights(points)
        return psi @ self.directions

    def __call__(self, points) -> np.ndarray:
        x = _as_points(points, len(self.atlas.charts[0].lo))
        return x - self.eps * self.displacement(x)

    def jacobian(self, points) -> np.ndarray:
        """Analytic Jacobian ``I - eps sum_j xi_j (grad psi_j)^T``, shape (k, N, N)."""
        _, dpsi, _ = self.weights(points)
        N = dpsi.shape[2]
        return np.eye(N)[None] - self.eps * np.einsum("ji,kjl->kil", self.directions, dpsi)

    def inverse(self, points, tol: float = 1e-13, maxiter: int = 200) -> tuple[np.ndarray, np.ndarray]:
        """Fixed-point preimages ``x = y + eps v(x)`` and a convergence flag."""
        y = _as_points(points, len(self.atlas.charts[0].lo))
        x = y.copy()
        done = np.zeros(len(y), bool)
        active = np.arange(len(y))
        for _ in range(maxiter):
            nxt = y[active] + self.eps * self.displacement(x[active])
            step = np.linalg.norm(nxt - x[active], axis=1)
            x[active] = nxt
            conv = step <= tol * max(1.0, self.eps)
            done[active[conv]] = True
            active = active[~conv]
            if not len(active):
                break
        return x, done


def _lattice_points(domain: Domain, h: float) -> np.ndarray:
    lo, hi = domain.bounding_box
    shape = grid_shape(lo, hi, h)
    axes = [lo[i] + (np.arange(shape[i]) + 0.5) * h for i in range(domain.dim)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return pts[domain.contains(pts)]


def build_deformation(
    atlas: LipBoundaryAtlas,
    eps: float,
    domain: Domain,
    ramp_width: float | None = None,
    h: float | None = None,
    check: bool = True,
) -> DeformationMap:
    """Build ``T_eps`` for ``0 <= eps <= delta / 4`` and check it on ``domain``.

    Parameters
    ----------
    ramp_width : float, optional
        Width of the smoothstep, ``delta / 2`` by default (the map stays
        injective up to ``eps = delta / 4`` on the square atlas).
    h : float, optional
        Spacing of the sample lattice, ``min(eps, delta) / 2`` by default
        and never below ``delta / 64``.
    check : bool
        Verify the atlas conditions first.

    Raises
    ------
    DeformationError
        If the partition-of-unity residual on the samples exceeds 1e-9 or the
        atlas fails its checks.
    """
    delta = atlas.delta
    if not 0 <= eps <= delta / 4 * (1 + 1e-12):
        raise DeformationError(f"eps={eps:g} must lie in [0, delta/4 = {delta / 4:g}]")
    L = delta / 2 if ramp_width is None else float(ramp_width)
    if L <= 0:
        raise DeformationError("ramp width must be positive")
    if h is None:
        h = max(min(eps, delta) / 2, delta / 64)
    checks: dict = {}
    if check:
        rep = atlas.verify(domain, h=max(h, delta / 8))
        checks["atlas"] = rep
        if not rep["all_pass"]:
            raise DeformationError(f"atlas fails its class checks: {rep}")
    dmap = DeformationMap(atlas, float(eps), L, checks)
    pts = _lattice_points(domain, h)
    psi, dpsi, S = dmap.weights(pts)
    resid = float(np.max(np.abs(psi.sum(axis=1) - 1))) if len(pts) else 0.0
    checks["pou_residual"] = resid
    if resid > 1e-9:
        raise DeformationError(f"partition-of-unity residual {resid:.3e} exceeds 1e-9")
    checks["psi_range"] = [float(psi.min()), float(psi.max())]
    checks["grad_psi_times_delta"] = float(np.linalg.norm(dpsi, axis=2).max() * delta)
    # Lipschitz bound of the displacement: |T x - T y| >= (1 - eps Lip v)|x - y|
    Dv = np.einsum("ji,kjl->kil", dmap.directions, dpsi)
    lip = float(np.linalg.norm(Dv, ord=2, axis=(1, 2)).max())
    checks["contraction"] = eps * lip
    J = np.eye(domain.dim)[None] - eps * Dv
    detJ = np.linalg.det(J)
    checks["min_det"] = float(detJ.min())
    # sampled collision test: distinct samples (spacing h < eps) must not
    # map closer than a quarter of the spacing
    collisions = 0
    if eps > 0 and len(pts) > 1:
        img = dmap(pts)
        pairs = cKDTree(img).query_pairs(h / 4, output_type="ndarray")
        collisions = int(len(pairs))
    checks["collisions"] = collisions
    checks["injective"] = bool(collisions == 0 and detJ.min() > 0)
    return dmap


def jacobian_check(dmap: DeformationMap, points, step: float = 1e-6) -> dict:
    """Central-difference Jacobian against the identity and the analytic Jacobian."""
    x = np.asarray(points, float)
    N = x.shape[1]
    J = np.empty((len(x), N, N))
    for j in range(N):
        e = np.zeros(N)
        e[j] = step
        J[:, :, j] = (dmap(x + e) - dmap(x - e)) / (2 * step)
    dev = np.abs(J - np.eye(N)[None]).max()
    det = np.linalg.det(J)
    eps = dmap.eps
    return {
        "eps": eps,
        "max_entry_deviation": float(dev),
        "A1": float(dev / eps) if eps > 0 else 0.0,
        "A2": float(np.abs(det - 1).max() / eps) if eps > 0 else 0.0,
        "det_range": [float(det.min()), float(det.max())],
        "analytic_mismatch": float(np.abs(J - dmap.jacobian(x)).max()),
    }


def verify_deformation_inclusions(
    dmap: DeformationMap, domain: Domain, h: float | None = None, raster: RasterDomain | None = None
) -> dict:
    """Check ``Omega minus collar_eps  in  T_eps(Omega)  in  Omega minus collar_{A eps^(1/gamma)}``.

    Cells of the raster (spacing ``h <= eps / 8``) are classified by their
    fixed-point preimage.  Reports the inclusion violations, the largest
    depth constant ``A`` and ``A5 = |Omega minus T_eps(Omega)| / eps``.
    The returned ``image`` entry flags the image cells in raster order.
    """
    eps = dmap.eps
    if eps <= 0:
        raise DeformationError("inclusions need eps > 0")
    if raster is None:
        h = eps / 8 if h is None else h
        raster = rasterize(domain, h)
    if raster.h > eps / 8 * (1 + 1e-12):
        raise DeformationError(f"raster h={raster.h:g} too coarse for eps={eps:g}")
    gamma = dmap.atlas.gamma
    y = raster.cell_centers()
    d = cell_distances(raster)
    x, ok = dmap.inverse(y)
    image = ok & domain.contains(x)
    deep = d > eps
    missed = int(np.count_nonzero(deep & ~image))
    # image depth from both sides: image cells and forward images of samples
    scale = eps ** (1 / gamma)
    depth_cells = float(d[image].min() / scale)
    probes = [y]
    try:
        probes.append(domain.boundary_points(max(4000, int(8 / eps))))
    except DomainError:
        pass
    fwd = dmap(np.concatenate(probes))
    fin = domain.contains(fwd)
    depth_fwd = float(domain.boundary_distance(fwd[fin]).min() / scale) if fin.all() else 0.0
    lost = float(np.count_nonzero(~image) * raster.cell_volume)
    return {
        "eps": eps,
        "h": raster.h,
        "unconverged": int(np.count_nonzero(~ok)),
        "deep_cells_missed": missed,
        "image_escapes": int(np.count_nonzero(~fin)),
        "A": min(depth_cells, depth_fwd),
        "A_cells": depth_cells,
        "A_forward": depth_fwd,
        "lost_measure": lost,
        "A5": lost / eps,
        "inclusion_holds": bool(missed == 0 and fin.all() and min(depth_cells, depth_fwd) > 0),
        "image": image,
    }


# --------------------------------------------------------------------------
# Theorem-13 chain


@dataclass
class Theorem13Report:
    """Rows per n of ``lambda_{n,2} <= mu_{n,2} <= (1 + b |Omega_1 minus Omega_2|) lambda_{n,1}``.

    ``mu`` is the largest Ritz value of the restricted span of the first
    ``n + 1`` eigenfunctions of ``Omega_1``, an upper bound for the
    variational quantity ``mu_{n,2}``.
    """

    rows: list
    c5: float
    M: float
    removed: float
    reference: str = "eigenvalue upper bound under inner perturbation"

    @property
    def chain_holds(self) -> bool:
        return all(r["chain_holds"] for r in self.rows)

    @property
    def hypothesis_met(self) -> bool:
        return all(r["hypothesis_met"] for r in self.rows)

    @property
    def verdict(self) -> str:
        if not self.chain_holds:
            return "fail" if self.hypothesis_met else "inconclusive"
        return "pass" if self.hypothesis_met else "inconclusive"

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "c5": self.c5,
            "M": self.M,
            "removed_measure": self.removed,
            "chain_holds": self.chain_holds,
            "hypothesis_met": self.hypothesis_met,
            "verdict": self.verdict,
            "rows": [{**r, "reference": self.reference} for r in self.rows],
        }


def verify_theorem13(
    spec1: SpectrumResult,
    op2: DiscreteOperator,
    restriction: np.ndarray,
    n_max: int | None = None,
    M: float | None = None,
    c5: float | None = None,
    spec2: SpectrumResult | None = None,
    rtol: float = 1e-9,
) -> Theorem13Report:
    """Check the restriction chain for ``n = 1 .. n_max``.

    ``b_{n,1} = 2 c5^2 exp(2 lambda_{n,1})`` uses ``c5`` fitted from
    ``spec1`` (exponent ``M``) unless given.  When
    ``|Omega_1 minus Omega_2| > 1 / b_{n,1}`` the row is marked as outside the
    theorem's smallness hypothesis and the threshold is reported.
    """
    n_max = spec1.m - 1 if n_max is None else n_max
    if n_max > spec1.m - 1:
        raise ValueError(f"n_max={n_max} needs {n_max + 1} eigenpairs, have {spec1.m}")
    restriction = np.asarray(restriction)
    if c5 is None:
        fit = fit_ultracontractivity(spec1, M)
        c5, M = fit.c5, fit.M_used
    removed = float(spec1.mass.sum() - op2.measure)
    if spec2 is None:
        spec2 = lowest_eigenpairs(op2, n_max + 1)
    rows = []
    for n in range(1, n_max + 1):
        basis = spec1.eigenvectors[restriction, : n + 1]
        rr = rayleigh_ritz(op2, basis, f"restricted span of phi_0..phi_{n}")
        mu = float(rr.mu[-1])
        lam1 = float(spec1.eigenvalues[n])
        lam2 = float(spec2.eigenvalues[n])
        b = 2 * c5**2 * math.exp(min(2 * lam1, 700.0))
        bound = (1 + b * removed) * lam1
        slack = rtol * max(1.0, lam1)
        rows.append(
            {
                "n": n,
                "lambda1": lam1,
                "lambda2": lam2,
                "mu2": mu,
                "b": b,
                "bound": bound,
                "threshold": 1 / b,
                "lower_holds": bool(lam2 <= mu + slack),
                "upper_holds": bool(mu <= bound + slack),
                "chain_holds": bool(lam2 <= mu + slack and mu <= bound + slack),
                "hypothesis_met": bool(removed <= 1 / b),
            }
        )
    return Theorem13Report(rows, float(c5), float(M), removed)


# --------------------------------------------------------------------------
# sweeps


def box_neumann_eigenvalues(lo, hi, count: int) -> np.ndarray:
    """Lowest ``count`` Neumann eigenvalues of a box, ``pi^2 sum (k_i / L_i)^2``."""
    L = np.asarray(hi, float) - np.asarray(lo, float)
    kmax = max(count, 1)  # an index >= count along any axis is never needed
    grids = np.meshgrid(*[np.arange(kmax)] * len(L), indexing="ij")
    vals = math.pi**2 * sum((g.ravel() / l) ** 2 for g, l in zip(grids, L))
    vals.sort()
    return vals[:count]


@dataclass
class StabilityReport:
    """Paired spectra across an eps sweep with fitted stability constants.

    Arrays indexed ``[eps, n]`` cover ``n = 0 .. n_max``; ``b[i, n]`` is
    ``dev / eps^gamma`` (zero below the noise floor), ``b_fit[n]`` its
    maximum over eps and ``exponent[n]`` the log-log slope of the deviation.
    """

    family: str
    domain: str
    eps: np.ndarray
    gamma: float
    h: float
    lambda1: np.ndarray
    lambda2: np.ndarray
    floor: np.ndarray
    removed: np.ndarray
    monotone: np.ndarray | None = None
    analytic: np.ndarray | None = None
    extra: dict = field(default_factory=dict)
    reference: str = "two-sided eigenvalue stability for Hölder boundaries"

    @property
    def n_max(self) -> int:
        return len(self.lambda1) - 1

    @property
    def deviation(self) -> np.ndarray:
        dev = np.zeros_like(self.lambda2)
        dev[:, 1:] = np.abs(self.lambda2[:, 1:] / self.lambda1[None, 1:] - 1)
        return dev

    @property
    def resolved(self) -> np.ndarray:
        """Deviations above the discretisation-noise floor."""
        res = self.deviation > self.floor[None, :]
        res[:, 0] = False
        return res

    @property
    def b(self) -> np.ndarray:
        return np.where(self.resolved, self.deviation / self.eps[:, None] ** self.gamma, 0.0)

    @property
    def b_fit(self) -> np.ndarray:
        return self.b.max(axis=0)

    @property
    def b_spread(self) -> np.ndarray:
        """max / min of the resolved ``b_n(eps)`` (1 when fewer than two are resolved)."""
        out = np.ones(self.n_max + 1)
        for n in range(1, self.n_max + 1):
            v = self.b[self.resolved[:, n], n]
            if len(v) >= 2:
                out[n] = v.max() / v.min()
        return out

    @property
    def exponent(self) -> np.ndarray:
        out = np.full(self.n_max + 1, np.nan)
        for n in range(1, self.n_max + 1):
            sel = self.resolved[:, n]
            if sel.sum() >= 2:
                out[n] = np.polyfit(np.log(self.eps[sel]), np.log(self.deviation[sel, n]), 1)[0]
        return out

    @property
    def passes(self) -> np.ndarray:
        """Per (eps, n): ``b_n(eps) <= (1 + rtol) b_n(eps_max)`` or below the floor."""
        b = self.b
        ref = b[np.argmax(self.eps)]
        ok = (~self.resolved) | (b <= (1 + STABILITY_RTOL) * ref[None, :] + 1e-12)
        ok &= np.isfinite(self.lambda2) & ((self.lambda2[:, 1:] > 0).all(axis=1))[:, None]
        return ok

    @property
    def all_pass(self) -> bool:
        ok = bool(self.passes[:, 1:].all())
        if self.monotone is not None:
            ok &= bool(self.monotone[:, 1:].all())
        return ok

    def analytic_rel_err(self) -> np.ndarray | None:
        if self.analytic is None:
            return None
        err = np.zeros_like(self.lambda2)
        err[:, 1:] = np.abs(self.lambda2[:, 1:] / self.analytic[:, 1:] - 1)
        return err

    def rows(self) -> list[dict]:
        dev, b, passes = self.deviation, self.b, self.passes
        out = []
        for i, e in enumerate(self.eps):
            for n in range(1, self.n_max + 1):
                row = {
                    "eps": float(e),
                    "n": n,
                    "lambda1": float(self.lambda1[n]),
                    "lambda2": float(self.lambda2[i, n]),
                    "deviation": float(dev[i, n]),
                    "b": float(b[i, n]),
                    "resolved": bool(self.resolved[i, n]),
                    "pass": bool(passes[i, n]),
                    "reference": self.reference,
                }
                if self.monotone is not None:
                    row["monotone"] = bool(self.monotone[i, n])
                if self.analytic is not None:
                    row["analytic"] = float(self.analytic[i, n])
                out.append(row)
        return out

    def to_dict(self) -> dict:
        ex = self.exponent
        return {
            "family": self.family,
            "domain": self.domain,
            "reference": self.reference,
            "gamma": self.gamma,
            "h": self.h,
            "eps": self.eps.tolist(),
            "lambda1": self.lambda1.tolist(),
            "floor": self.floor.tolist(),
            "removed_measure": self.removed.tolist(),
            "b_fit": self.b_fit.tolist(),
            "b_spread": self.b_spread.tolist(),
            "exponent": [None if not np.isfinite(v) else float(v) for v in ex],
            "all_pass": self.all_pass,
            "extra": self.extra,
            "rows": self.rows(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "n", "lambda1", "lambda2", "deviation", "b", "pass"])
        for r in self.rows():
            w.writerow(
                [repr(r["eps"]), r["n"], repr(r["lambda1"]), repr(r["lambda2"]),
                 repr(r["deviation"]), repr(r["b"]), int(r["pass"])]
            )
        return buf.getvalue()

    def to_gnuplot(self, csv_name: str = "stability.csv") -> str:
        lines = [
            "set datafile separator ','",
            "set logscale xy",
            "set xlabel 'eps'",
            "set ylabel '|lambda2/lambda1 - 1|'",
            "set key left top",
        ]
        plots = [
            f"'{csv_name}' every ::1 using ($2=={n} ? $1 : 1/0):5 with linespoints title 'n={n}'"
            for n in range(1, self.n_max + 1)
        ]
        lines.append("plot " + ", \\\n     ".join(plots))
        return "\n".join(lines) + "\n"


def _richardson_floor(domain: Domain, h: float, lam_h: np.ndarray, tol: float) -> np.ndarray:
    """Relative floor ``2 |lambda_h - lambda_2h| / 3 / lambda_h`` per mode."""
    coarse = rasterize(domain, 2 * h)
    m = min(len(lam_h), coarse.ncells)
    spec = lowest_eigenpairs(assemble(coarse), m, tol=tol)
    floor = np.zeros(len(lam_h))
    floor[1:m] = 2 * np.abs(lam_h[1:m] - spec.eigenvalues[1:m]) / 3 / lam_h[1:m]
    return floor


def _perturbed_raster(
    family: str,
    domain: Domain,
    r1: RasterDomain,
    eps: float,
    atlas: LipBoundaryAtlas | None,
    ramp_width: float | None,
) -> tuple[RasterDomain, dict]:
    if family == "graph_shrink":
        r2 = rasterize_on(graph_shrink(domain, eps), r1, f"shrink:{eps!r}")
        return _check_connected(r2, f"graph_shrink at eps={eps:g}"), {}
    if family == "collar_removal":
        return collar_removal(r1, eps), {}
    if family == "deformation":
        if atlas is None:
            raise PerturbationError("the deformation family needs an atlas")
        dmap = build_deformation(atlas, eps, domain, ramp_width=ramp_width)
        if not dmap.checks["injective"]:
            raise PerturbationError(f"deformation at eps={eps:g} is not injective")
        inc = verify_deformation_inclusions(dmap, domain, raster=r1)
        r2 = r1.restrict(inc.pop("image"), f"deformed:{eps!r}")
        return _check_connected(r2, f"deformation at eps={eps:g}"), inc
    raise PerturbationError(f"unknown perturbation family {family!r}; choose from {FAMILIES}")


def stability_sweep(
    domain: Domain,
    family: str,
    eps_grid: Sequence[float] = DEFAULT_EPS,
    n_max: int = 8,
    h: float | None = None,
    gamma: float | None = None,
    atlas: LipBoundaryAtlas | None = None,
    ramp_width: float | None = None,
    tol: float = 1e-8,
    jobs: int = 1,
    floor: bool = True,
) -> StabilityReport:
    """Paired spectra of ``Omega_1`` and ``Omega_2(eps)`` on a shared lattice.

    Parameters
    ----------
    family : {"graph_shrink", "collar_removal", "deformation"}
    h : float, optional
        Lattice spacing, ``min(eps) / 8`` by default.
    gamma : float, optional
        Exponent in ``b_n = dev / eps^gamma``; the boundary's Hölder
        exponent by default.
    jobs : int
        Worker threads for the per-eps solves.
    floor : bool
        Estimate the Richardson noise floor (one extra solve at ``2h``).

    Raises
    ------
    PerturbationError
        If a perturbed raster is not a subset of ``Omega_1``, misses a cell
        of ``Omega_1`` deeper than ``eps``, or is disconnected.
    """
    if family not in FAMILIES:
        raise PerturbationError(f"unknown perturbation family {family!r}; choose from {FAMILIES}")
    eps = np.array(sorted(float(e) for e in eps_grid))
    if len(eps) == 0 or eps[0] <= 0:
        raise PerturbationError("eps grid must hold positive values")
    h = float(eps[0] / 8 if h is None else h)
    gamma = domain_gamma(domain) if gamma is None else float(gamma)
    r1 = rasterize(domain, h)
    op1 = assemble(r1)
    m = n_max + 1
    spec1 = lowest_eigenpairs(op1, m, tol=tol)
    lam1 = spec1.eigenvalues.copy()
    d1 = cell_distances(r1)

    def solve(e):
        r2, extra = _perturbed_raster(family, domain, r1, e, atlas, ramp_width)
        idx = restriction_map(op1, r2)
        kept = np.zeros(op1.n, bool)
        kept[idx] = True
        missing = int(np.count_nonzero((d1 > e) & ~kept))
        if missing:
            raise PerturbationError(
                f"eps={e:g}: {missing} cells deeper than eps are missing from Omega_2"
            )
        spec2 = lowest_eigenpairs(assemble(r2), m, tol=tol)
        return spec2.eigenvalues, float(op1.measure - r2.measure()), extra

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(solve, eps))
    else:
        results = [solve(e) for e in eps]
    lam2 = np.array([r[0] for r in results])
    removed = np.array([r[1] for r in results])
    noise = _richardson_floor(domain, h, lam1, tol) if floor else np.zeros(m)
    monotone = None
    if family == "graph_shrink":
        # Omega_3 = graph_shrink(Omega_1, eps) coincides with Omega_2 here
        slack = noise[None, :] * lam1[None, :] + 1e-9 * np.maximum(1, lam1)[None, :]
        monotone = lam1[None, :] <= lam2 + slack
    analytic = None
    if isinstance(domain, BoxDomain) and family == "graph_shrink":
        analytic = np.array(
            [box_neumann_eigenvalues(graph_shrink(domain, e).lo, graph_shrink(domain, e).hi, m)
             for e in eps]
        )
    extra = {}
    if family == "deformation":
        extra["inclusions"] = [
            {k: v for k, v in r[2].items()} for r in results
        ]
    return StabilityReport(
        family, domain.key, eps, gamma, h, lam1, lam2, noise, removed, monotone, analytic, extra
    )


def verify_corollary16(
    domain: Domain,
    eps_grid: Sequence[float] = (0.02, 0.04, 0.08),
    sigma: float = 1.0,
    n_max: int = 8,
    h: float | None = None,
    M: float | None = None,
    tol: float = 1e-8,
    jobs: int = 1,
) -> dict:
    """Two-sided chain with ``Omega_2 = {d > eps/2}`` and ``Omega_3 = {d > eps}``.

    Per (n, eps) the report holds the upper step
    ``lambda_{n,2} <= mu_{n,2} <= (1 + b_{n,1}|Omega_1 minus Omega_2|) lambda_{n,1}``,
    the step ``lambda_{n,3} <= mu_{n,3} <= (1 + b_{n,5}|Omega_2 minus Omega_3|) lambda_{n,2}``,
    the fitted constants ``a_2`` and ``b_{n,3}`` of the inner family and
    the resulting two-sided bound on ``lambda_{n,2}``.
    """
    eps = np.array(sorted(float(e) for e in eps_grid))
    h = float(eps[0] / 16 if h is None else h)
    r1 = rasterize(domain, h)
    op1 = assemble(r1)
    m = n_max + 1
    spec1 = lowest_eigenpairs(op1, m, tol=tol)
    fit1 = fit_ultracontractivity(spec1, M)
    M = fit1.M_used
    d1 = cell_distances(r1)

    def solve(e):
        r2 = collar_removal(r1, e / 2)
        r3 = collar_removal(r1, e)
        if np.any(d1[restriction_map(op1, r3)] <= e):
            raise PerturbationError(f"eps={e:g}: inner region meets the eps-collar")
        op2, op3 = assemble(r2), assemble(r3)
        spec2 = lowest_eigenpairs(op2, m, tol=tol)
        spec3 = lowest_eigenpairs(op3, m, tol=tol)
        c5 = max(fit1.c5, fit_ultracontractivity(spec2, M).c5)
        t12 = verify_theorem13(spec1, op2, restriction_map(op1, r2), n_max, M, fit1.c5, spec2)
        idx23 = op2.index_map[tuple(r3.cell_indices().T)]
        t23 = verify_theorem13(spec2, op3, idx23, n_max, M, c5, spec3)
        return spec2.eigenvalues, spec3.eigenvalues, t12, t23, op1.measure - op3.measure

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(solve, eps))
    else:
        results = [solve(e) for e in eps]
    lam1 = spec1.eigenvalues
    lam3 = np.array([r[1] for r in results])
    removed13 = np.array([r[4] for r in results])
    a2 = float(np.max(removed13 / eps**sigma))
    b3 = np.max(np.maximum(0.0, 1 - lam3[:, 1:] / lam1[None, 1:]) / eps[:, None] ** sigma, axis=0)
    rows = []
    for i, (e, (lam2, _, t12, t23, _)) in enumerate(zip(eps, results)):
        for n in range(1, n_max + 1):
            up, inner = t12.rows[n - 1], t23.rows[n - 1]
            lower = lam1[n] * (1 - b3[n - 1] * e**sigma) / (1 + inner["b"] * t23.removed)
            upper = up["bound"]
            chain = up["chain_holds"] and inner["chain_holds"]
            two_sided = bool(lower <= lam2[n] * (1 + 1e-9) and lam2[n] <= upper * (1 + 1e-9))
            hyp = up["hypothesis_met"] and inner["hypothesis_met"]
            verdict = "pass" if chain and two_sided and hyp else (
                "fail" if hyp else "inconclusive"
            )
            rows.append(
                {
                    "eps": float(e),
                    "n": n,
                    "lambda1": float(lam1[n]),
                    "lambda2": float(lam2[n]),
                    "lambda3": float(lam3[i, n]),
                    "mu2": up["mu2"],
                    "mu3": inner["mu2"],
                    "lower": float(lower),
                    "upper": float(upper),
                    "b4": float(abs(lam2[n] / lam1[n] - 1) / e**sigma),
                    "chain_holds": bool(chain),
                    "two_sided_holds": two_sided,
                    "hypothesis_met": bool(hyp),
                    "verdict": verdict,
                    "reference": "two-sided bound from an inner comparison family",
                }
            )
    b4 = {}
    for r in rows:
        b4[r["n"]] = max(b4.get(r["n"], 0.0), r["b4"])
    holds = all(r["chain_holds"] and r["two_sided_holds"] for r in rows)
    verdicts = {r["verdict"] for r in rows}
    overall = "fail" if "fail" in verdicts else ("pass" if verdicts == {"pass"} else "inconclusive")
    return {
        "reference": "two-sided bound from an inner comparison family",
        "domain": domain.key,
        "sigma": sigma,
        "h": h,
        "eps": eps.tolist(),
        "M": M,
        "c5": fit1.c5,
        "a2": a2,
        "b3": b3.tolist(),
        "b4": [b4[n] for n in sorted(b4)],
        "chain_holds": holds,
        "verdict": overall,
        "rows": rows,
    }
