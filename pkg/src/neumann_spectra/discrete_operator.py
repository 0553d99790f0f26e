"""Finite-volume realisation of the Neumann form on a cell raster.

Each face shared by two inside cells contributes ``h^(N-2) (f_i - f_j)^2``
to the form; faces towards outside cells contribute nothing, which is the
natural (no-flux) boundary condition.  The mass matrix is lumped, ``h^N``
per cell.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .geometry import RasterDomain

__all__ = ["DiscreteOperator", "assemble", "quadratic_form", "sobolev_norm", "export_coo"]


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Stiffness ``K`` and lumped mass ``B`` on the cells of a raster.

    Attributes
    ----------
    K : scipy.sparse.csr_matrix
        Symmetric positive semidefinite stiffness matrix with ``K @ 1 == 0``.
    mass : ndarray
        Diagonal of ``B``.
    raster : RasterDomain
        Raster the operator was assembled on.
    index_map : ndarray
        Array of the raster's grid shape holding the cell number of each
        inside cell and -1 elsewhere.
    faces : ndarray
        ``(nfaces, 2)`` cell pairs sharing a face.
    """

    K: sp.csr_matrix
    mass: np.ndarray
    raster: RasterDomain
    index_map: np.ndarray
    faces: np.ndarray
    face_weight: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.mass)

    @property
    def h(self) -> float:
        return self.raster.h

    @property
    def dim(self) -> int:
        return self.raster.dim

    @property
    def B(self) -> sp.dia_matrix:
        return sp.diags(self.mass)

    @property
    def measure(self) -> float:
        return float(self.mass.sum())

    @property
    def key(self) -> str:
        return self.raster.key

    def cell_centers(self) -> np.ndarray:
        return self.raster.cell_centers()

    def _check(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.n:
            raise ValueError(f"vector of length {f.shape[0]} does not match {self.n} cells")
        return f


def assemble(raster: RasterDomain) -> DiscreteOperator:
    """Assemble the Neumann stiffness and lumped mass matrices."""
    mask = raster.mask
    N = raster.dim
    n = raster.ncells
    if n < 2:
        warnings.warn("raster has a single cell; the spectrum is {0}", RuntimeWarning, stacklevel=2)
    index_map = np.full(mask.shape, -1, dtype=np.int64)
    index_map[mask] = np.arange(n)
    pairs = []
    for axis in range(N):
        lo = [slice(None)] * N
        hi = [slice(None)] * N
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        both = mask[tuple(lo)] & mask[tuple(hi)]
        pairs.append(
            np.stack([index_map[tuple(lo)][both], index_map[tuple(hi)][both]], axis=1)
        )
    faces = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    w = raster.h ** (N - 2)
    i, j = faces[:, 0], faces[:, 1]
    degree = np.bincount(faces.ravel(), minlength=n).astype(float)
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    vals = np.concatenate([np.full(len(i), -w), np.full(len(i), -w), degree * w])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    K.sum_duplicates()
    K.sort_indices()
    mass = np.full(n, raster.h**N)
    return DiscreteOperator(K, mass, raster, index_map, faces, w)


def quadratic_form(op: DiscreteOperator, f) -> float:
    """Discrete Dirichlet energy, summed face by face (never negative)."""
    f = op._check(f)
    diff = f[op.faces[:, 0]] - f[op.faces[:, 1]]
    return float(op.face_weight * np.dot(diff, diff))


def sobolev_norm(op: DiscreteOperator, f) -> float:
    """Discrete W^{1,2} norm ``sqrt(Q(f) + ||f||_2^2)``."""
    f = op._check(f)
    return float(np.sqrt(quadratic_form(op, f) + np.dot(op.mass * f, f)))


def export_coo(op: DiscreteOperator, path: str | Path, which: str = "K") -> Path:
    """Write ``K`` or ``B`` as ``row col value`` lines (0-based)."""
    M = op.K.tocoo() if which == "K" else sp.coo_matrix(op.B)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"% {M.shape[0]} {M.shape[1]} {M.nnz}\n")
        for r, c, v in zip(M.row, M.col, M.data):
            fh.write(f"{r} {c} {v:.17g}\n")
    return path
