"""Lowest eigenpairs of ``K u = lambda B u`` and Rayleigh-Ritz bounds.

The constant vector spans the kernel of ``K`` on a connected raster, so it
is deflated analytically (``lambda_0 = 0``) and the remaining pairs are
found by shift-invert Lanczos on the symmetrically scaled matrix
``A = B^{-1/2} K B^{-1/2}``.  Small problems go to a dense solver.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import special
from scipy.optimize import brentq

from .discrete_operator import DiscreteOperator
from .geometry import Domain, RasterDomain, cell_distances, rasterize

__all__ = [
    "EigensolverError",
    "SpectrumResult",
    "RayleighRitzEstimate",
    "lowest_eigenpairs",
    "rayleigh_ritz",
    "inradius",
    "inradius_upper_bound",
    "dirichlet_ball_eigenvalues",
    "clusters",
    "save_eigenvectors",
    "load_eigenvectors",
]

CLUSTER_RTOL = 1e-6
DENSE_LIMIT = 400


class EigensolverError(RuntimeError):
    """Raised when the iteration stalls; ``residuals`` holds the best values."""

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(eq=False)
class SpectrumResult:
    """Eigenvalues in increasing order with mass-orthonormal eigenvectors.

    ``sup_norms[n]`` is ``max |u_n|`` for the L^2-normalised eigenfunction
    and ``residuals[n]`` is ``||K u_n - lambda_n B u_n|| / (lambda_n + 1)``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mass: np.ndarray
    residuals: np.ndarray
    h: float
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    @property
    def sup_norms(self) -> np.ndarray:
        return np.abs(self.eigenvectors).max(axis=0)

    @property
    def measure(self) -> float:
        return float(self.mass.sum())

    def truncate(self, m: int) -> "SpectrumResult":
        return SpectrumResult(
            self.eigenvalues[:m],
            self.eigenvectors[:, :m],
            self.mass,
            self.residuals[:m],
            self.h,
            dict(self.meta, m=m),
        )

    def clusters(self) -> list[list[int]]:
        return clusters(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(v) for v in self.residuals],
            "sup_norms": [float(v) for v in self.sup_norms],
            "clusters": self.clusters(),
            "h": self.h,
            "ncells": int(len(self.mass)),
            "meta": self.meta,
        }

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def clusters(values, rtol: float = CLUSTER_RTOL) -> list[list[int]]:
    """Group indices of sorted values whose relative gap is below ``rtol``."""
    groups: list[list[int]] = []
    for i, v in enumerate(values):
        if groups:
            prev = values[groups[-1][-1]]
            if abs(v - prev) <= rtol * max(abs(v), abs(prev), 1e-300):
                groups[-1].append(i)
                continue
        groups.append([i])
    return groups


def _bbox_diameter(op: DiscreteOperator) -> float:
    lo, hi = op.raster.bounding_box
    return float(np.linalg.norm(hi - lo))


def lowest_eigenpairs(
    op: DiscreteOperator,
    m: int,
    tol: float = 1e-8,
    seed: int = 0,
    maxiter: int | None = None,
    dense: bool | None = None,
) -> SpectrumResult:
    """Compute the ``m`` lowest eigenpairs of the Neumann pencil ``(K, B)``.

    Parameters
    ----------
    op : DiscreteOperator
        Assembled operator on a connected raster.
    m : int
        Number of eigenpairs, ``1 <= m <= ncells``.
    tol : float
        Bound on ``||K u - lambda B u|| / (lambda + 1)`` and on the same
        quantity for the scaled matrix.
    seed : int
        Seed of the Lanczos starting vector.
    maxiter : int, optional
        Cap on Lanczos restarts, ``50 m`` by default.
    dense : bool, optional
        Force (or forbid) the dense path.

    Raises
    ------
    EigensolverError
        If the residual bound is not met.
    """
    n = op.n
    if not 1 <= m <= n:
        raise ValueError(f"m={m} must lie in [1, {n}]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = 1.0 / np.sqrt(op.mass)
    A = sp.diags(s) @ op.K @ sp.diags(s)
    A = ((A + A.T) * 0.5).tocsc()
    use_dense = dense if dense is not None else (n <= DENSE_LIMIT or m >= n - 1)
    meta: dict = {"tol": tol, "seed": seed, "m": m, "ncells": n}
    if use_dense:
        w, V = la.eigh(A.toarray(), subset_by_index=[0, m - 1])
        # the kernel is known exactly; replace the computed pair
        v0 = np.sqrt(op.mass) / math.sqrt(op.measure)
        w[0] = 0.0
        V[:, 0] = v0
        rest = V[:, 1:] - np.outer(v0, v0 @ V[:, 1:])
        if m > 1:
            q, _ = np.linalg.qr(rest)
            sub = q.T @ (A @ q)
            w_sub, y = la.eigh((sub + sub.T) / 2)
            V[:, 1:] = q @ y
            w[1:] = w_sub
        meta.update(method="dense")
    else:
        v0 = np.sqrt(op.mass) / math.sqrt(op.measure)
        sigma = -((math.pi / _bbox_diameter(op)) ** 2)
        lu = spla.splu(A - sigma * sp.identity(n, format="csc"))
        counter = {"solves": 0}

        def opinv(x):
            counter["solves"] += 1
            x = x - v0 * np.dot(v0, x)
            y = lu.solve(x)
            return y - v0 * np.dot(v0, y)

        OPinv = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
        rng = np.random.default_rng(seed)
        start = rng.standard_normal(n)
        start -= v0 * np.dot(v0, start)
        w = np.zeros(m)
        V = np.zeros((n, m))
        V[:, 0] = v0
        if m > 1:
            try:
                vals, vecs = spla.eigsh(
                    A,
                    k=m - 1,
                    sigma=sigma,
                    OPinv=OPinv,
                    which="LM",
                    v0=start,
                    tol=min(tol, 1e-10) * 1e-2,
                    maxiter=maxiter or 50 * m,
                )
            except spla.ArpackNoConvergence as exc:
                raise EigensolverError(
                    f"Lanczos did not converge: {exc}", residuals=None
                ) from None
            order = np.argsort(vals)
            w[1:] = vals[order]
            V[:, 1:] = vecs[:, order]
            # one Rayleigh-Ritz pass restores orthogonality against v0
            rest = V[:, 1:] - np.outer(v0, v0 @ V[:, 1:])
            q, _ = np.linalg.qr(rest)
            sub = q.T @ (A @ q)
            w_sub, y = la.eigh((sub + sub.T) / 2)
            w[1:] = w_sub
            V[:, 1:] = q @ y
        meta.update(method="shift-invert-lanczos", sigma=sigma, solves=counter["solves"])
    # fix signs for reproducibility: largest-magnitude entry positive
    pivot = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivot, np.arange(V.shape[1])])
    scaled_res = np.linalg.norm(A @ V - V * w, axis=0) / (np.abs(w) + 1)
    U = V * s[:, None]
    res = np.linalg.norm(op.K @ U - (op.mass[:, None] * U) * w, axis=0) / (np.abs(w) + 1)
    meta["max_scaled_residual"] = float(scaled_res.max())
    if scaled_res.max() > tol or res.max() > tol:
        raise EigensolverError(
            f"residual {max(scaled_res.max(), res.max()):.3e} exceeds tol {tol:.1e}",
            residuals=res,
        )
    return SpectrumResult(w, U, op.mass.copy(), res, op.h, meta)


@dataclass(eq=False)
class RayleighRitzEstimate:
    """Ritz values ``mu_n`` of the form on a trial subspace."""

    mu: np.ndarray
    dimension: int
    description: str
    vectors: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "mu": [float(v) for v in self.mu],
            "dimension": self.dimension,
            "description": self.description,
        }


def rayleigh_ritz(
    op: DiscreteOperator, basis, description: str = "", rank_rtol: float = 1e-10
) -> RayleighRitzEstimate:
    """Ritz values of ``(K, B)`` on ``span(basis)``.

    The basis columns are B-orthonormalised through the eigendecomposition
    of their Gram matrix; directions with Gram eigenvalue below
    ``rank_rtol * max`` are dropped with a warning.
    """
    V = np.asarray(basis, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    op._check(V)
    G = V.T @ (op.mass[:, None] * V)
    g, Q = la.eigh((G + G.T) / 2)
    keep = g > rank_rtol * max(g.max(), 1e-300)
    if not keep.all():
        warnings.warn(
            f"trial basis is rank deficient; using dimension {int(keep.sum())} of {V.shape[1]}",
            RuntimeWarning,
            stacklevel=2,
        )
    W = V @ (Q[:, keep] / np.sqrt(g[keep]))
    P = W.T @ (op.K @ W)
    mu, Y = la.eigh((P + P.T) / 2)
    return RayleighRitzEstimate(np.maximum(mu, 0.0), int(keep.sum()), description, W @ Y)


# --------------------------------------------------------------------------
# inradius bound


def _spherical_zeros(order: int, count: int) -> list[float]:
    xs = np.linspace(0.1, 60.0, 6000)
    ys = special.spherical_jn(order, xs)
    roots = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], ys[:-1], ys[1:]):
        if fa * fb < 0:
            roots.append(brentq(lambda x: special.spherical_jn(order, x), a, b, xtol=1e-15))
            if len(roots) == count:
                break
    return roots


@lru_cache(maxsize=None)
def dirichlet_ball_eigenvalues(N: int, count: int = 21) -> tuple[float, ...]:
    """First ``count`` Dirichlet eigenvalues of the unit ball in R^N, with multiplicity."""
    if N == 1:
        return tuple(((k + 1) * math.pi / 2) ** 2 for k in range(count))
    vals: list[float] = []
    if N == 2:
        for order in range(count + 2):
            for z in special.jn_zeros(order, count):
                vals.extend([z * z] * (1 if order == 0 else 2))
    elif N == 3:
        for order in range(count + 2):
            for z in _spherical_zeros(order, count):
                vals.extend([z * z] * (2 * order + 1))
    else:
        raise ValueError("dimension must be 1, 2 or 3")
    return tuple(sorted(vals)[:count])


def inradius(domain: Domain | RasterDomain, h: float | None = None) -> float:
    """Largest boundary distance over raster cell centres."""
    raster = domain if isinstance(domain, RasterDomain) else None
    if raster is None:
        lo, hi = domain.bounding_box
        raster = rasterize(domain, h or float(np.min(hi - lo)) / 256)
    return float(cell_distances(raster).max())


def inradius_upper_bound(domain: Domain | RasterDomain, n: int, h: float | None = None) -> float:
    """Upper bound ``gamma_n r^-2`` for the n-th Neumann eigenvalue (0-based).

    ``gamma_n`` is the n-th Dirichlet eigenvalue of the unit ball and ``r`` the
    raster inradius.  The table covers ``n <= 20``.
    """
    table = dirichlet_ball_eigenvalues(domain.dim)
    if not 0 <= n < len(table):
        raise ValueError(f"index {n} outside the Dirichlet ball table (n <= {len(table) - 1})")
    r = inradius(domain, h)
    return table[n] / r**2


# --------------------------------------------------------------------------
# binary eigenvector dumps

_MAGIC = b"NSEV0001"


def save_eigenvectors(spec: SpectrumResult, path: str | Path) -> Path:
    """Header ``magic, ncells (u8), m (u8), h (f8)`` then float64 column-major data."""
    path = Path(path)
    n, m = spec.eigenvectors.shape
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQd", n, m, spec.h))
        fh.write(np.asfortranarray(spec.eigenvectors, dtype="<f8").tobytes(order="F"))
    return path


def load_eigenvectors(path: str | Path) -> tuple[np.ndarray, float]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not an eigenvector dump")
    n, m, h = struct.unpack("<QQd", data[8:32])
    arr = np.frombuffer(data[32:], dtype="<f8").reshape((n, m), order="F")
    return arr.copy(), h
