"""Heat semigroup and heat kernel from a truncated eigen-expansion.

With mass-orthonormal eigenvectors ``u_n`` the truncated kernel is

    K_m(t, x, y) = sum_{n < m} exp(-lambda_n t) u_n(x) u_n(y),

and ``||e^{-Ht}||_{2 -> inf} = sup_x K_m(2t, x, x)^{1/2}``, attained by the
kernel column at the maximising cell.  All checks here work with these
spectral formulas; the dense matrix exponential is kept as an independent
route for small rasters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as la
from scipy.integrate import quad

from .discrete_operator import DiscreteOperator
from .eigensolver import SpectrumResult

__all__ = [
    "HeatKernelSlice",
    "TraceEstimate",
    "UltracontractivityFit",
    "KernelBoundFit",
    "semigroup_apply",
    "semigroup_tail_bound",
    "heat_kernel",
    "kernel_diagonal",
    "kernel_diag_trace",
    "trace_slope",
    "fit_ultracontractivity",
    "fit_kernel_bound",
    "verify_lemma10",
    "verify_lemma11",
    "verify_lemma12_reconstruction",
    "lemma12_constants",
    "dense_semigroup",
    "dense_heat_kernel",
    "default_times",
]


def _check_t(t: float) -> None:
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")


def semigroup_apply(spec: SpectrumResult, f, t: float) -> np.ndarray:
    """``sum_n exp(-lambda_n t) (f, u_n) u_n`` with the mass inner product."""
    _check_t(t)
    f = np.asarray(f, dtype=float)
    U = spec.eigenvectors
    coef = U.T @ (spec.mass * f)
    return U @ (np.exp(-spec.eigenvalues * t) * coef)


def semigroup_tail_bound(spec: SpectrumResult, f, t: float) -> float:
    """L^2 bound on the truncation error: ``exp(-lambda_{m-1} t) ||f - P_m f||``."""
    _check_t(t)
    f = np.asarray(f, dtype=float)
    coef = spec.eigenvectors.T @ (spec.mass * f)
    rest2 = max(float(np.dot(spec.mass * f, f) - np.dot(coef, coef)), 0.0)
    return math.exp(-spec.eigenvalues[-1] * t) * math.sqrt(rest2)


@dataclass
class HeatKernelSlice:
    t: float
    m: int
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    tail_bound: float


def heat_kernel(spec: SpectrumResult, t: float, x_idx, y_idx) -> HeatKernelSlice:
    """Kernel values ``K_m(t, x, y)`` on the pairs ``zip(x_idx, y_idx)``."""
    _check_t(t)
    x_idx = np.atleast_1d(np.asarray(x_idx, dtype=np.int64))
    y_idx = np.atleast_1d(np.asarray(y_idx, dtype=np.int64))
    U = spec.eigenvectors
    w = np.exp(-spec.eigenvalues * t)
    vals = np.einsum("ij,ij->i", U[x_idx] * w, U[y_idx])
    # tail of |K - K_m| <= (ncells - m) e^{-lambda_{m-1} t} / h^N on the raster
    n = len(spec.mass)
    tail = (n - spec.m) * math.exp(-spec.eigenvalues[-1] * t) / float(spec.mass.min())
    return HeatKernelSlice(t, spec.m, x_idx, y_idx, vals, tail)


def kernel_diagonal(spec: SpectrumResult, t: float) -> np.ndarray:
    """``K_m(t, x, x)`` for every cell."""
    _check_t(t)
    return (spec.eigenvectors**2) @ np.exp(-spec.eigenvalues * t)


class TraceEstimate(NamedTuple):
    value: float
    tail_bound: float


def kernel_diag_trace(spec: SpectrumResult, t: float) -> TraceEstimate:
    """``Z(t) = sum_{n<m} exp(-lambda_n t)`` and a bound on the omitted terms."""
    _check_t(t)
    n = len(spec.mass)
    z = float(np.sum(np.exp(-spec.eigenvalues * t)))
    return TraceEstimate(z, (n - spec.m) * math.exp(-spec.eigenvalues[-1] * t))


def trace_slope(spec: SpectrumResult, t_lo: float, t_hi: float, npts: int = 16) -> dict:
    """Least-squares slope of ``log Z`` against ``log t`` on ``[t_lo, t_hi]``."""
    ts = np.geomspace(t_lo, t_hi, npts)
    z = np.array([kernel_diag_trace(spec, t).value for t in ts])
    tails = np.array([kernel_diag_trace(spec, t).tail_bound for t in ts])
    slope, icpt = np.polyfit(np.log(ts), np.log(z), 1)
    return {
        "slope": float(slope),
        "intercept": float(icpt),
        "t": ts.tolist(),
        "Z": z.tolist(),
        "max_relative_tail": float((tails / z).max()),
    }


def default_times(spec: SpectrumResult, npts: int = 25) -> np.ndarray:
    """Geometric grid on ``[4 / lambda_{m-1}, 1]``, where truncation is negligible."""
    lam = float(spec.eigenvalues[-1])
    t_min = min(4.0 / lam, 1.0) if lam > 0 else 1.0
    return np.geomspace(t_min, 1.0, npts) if t_min < 1.0 else np.array([1.0])


@dataclass
class UltracontractivityFit:
    """``R(t) = ||e^{-Ht}||_{2->inf}`` on sampled times with fitted constants.

    ``M_fit`` comes from the log-log slope ``-M/4``; ``c5`` is the smallest
    constant with ``R(t) <= c5 t^{-M/4}`` on the sample for ``M = M_used``.
    """

    times: np.ndarray
    ratios: np.ndarray
    M_fit: float
    M_used: float
    c5: float
    argmax_cells: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "ratios": self.ratios.tolist(),
            "M_fit": self.M_fit,
            "M_used": self.M_used,
            "c5": self.c5,
        }


def fit_ultracontractivity(
    spec: SpectrumResult, M: float | None = None, times: Sequence[float] | None = None
) -> UltracontractivityFit:
    """Fit ``||e^{-Ht} f||_inf <= c5 t^{-M/4} ||f||_2`` over kernel-column probes."""
    ts = default_times(spec) if times is None else np.asarray(times, dtype=float)
    diag = np.array([kernel_diagonal(spec, 2 * t) for t in ts])
    ratios = np.sqrt(diag.max(axis=1))
    if len(ts) > 1:
        slope = np.polyfit(np.log(ts), np.log(ratios), 1)[0]
        M_fit = float(-4 * slope)
    else:
        M_fit = float("nan")
    M_used = M_fit if M is None else float(M)
    c5 = float(np.max(ratios * ts ** (M_used / 4)))
    return UltracontractivityFit(ts, ratios, M_fit, M_used, c5, diag.argmax(axis=1))


@dataclass
class KernelBoundFit:
    times: np.ndarray
    diag_max: np.ndarray
    M: float
    c6: float

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "diag_max": self.diag_max.tolist(),
            "M": self.M,
            "c6": self.c6,
        }


def fit_kernel_bound(
    spec: SpectrumResult, M: float, times: Sequence[float] | None = None
) -> KernelBoundFit:
    """Smallest ``c6`` with ``sup_{x,y} K_m(t,x,y) <= c6 t^{-M/2}`` on the sample."""
    ts = default_times(spec) if times is None else np.asarray(times, dtype=float)
    dmax = np.array([kernel_diagonal(spec, t).max() for t in ts])
    return KernelBoundFit(ts, dmax, float(M), float(np.max(dmax * ts ** (M / 2))))


def verify_lemma10(spec: SpectrumResult, c5: float, M: float) -> dict:
    """Eigenfunction sup-norm bound ``||f_n||_inf <= e c5 max(1, lambda_n)^{M/4}``."""
    c9 = math.e * c5
    lam = spec.eigenvalues
    sup = spec.sup_norms
    bound = np.where(lam <= 1, c9, c9 * np.maximum(lam, 1) ** (M / 4))
    margin = bound - sup
    viol = np.nonzero(margin < 0)[0]
    return {
        "check": "eigenfunction sup-norm bound",
        "c9": c9,
        "M": M,
        "rows": [
            {"n": n, "lambda": float(lam[n]), "sup_norm": float(sup[n]), "bound": float(bound[n])}
            for n in range(len(lam))
        ],
        "min_margin": float(margin.min()),
        "violations": viol.tolist(),
        "verdict": "pass" if len(viol) == 0 else "fail",
    }


def verify_lemma11(spec: SpectrumResult, c6: float, c10: float, M: float) -> dict:
    """Eigenvalue growth ``lambda_n >= (n / n0)^{2/M}`` for ``n >= n0``."""
    if c10 < spec.measure * (1 - 1e-12):
        raise ValueError("c10 must be at least the measure of the domain")
    n0 = int(math.floor(math.e * c6 * c10)) + 1
    lam = spec.eigenvalues
    rows = []
    viol = []
    for n in range(n0, len(lam)):
        req = (n / n0) ** (2 / M)
        rows.append({"n": n, "lambda": float(lam[n]), "required": req})
        if lam[n] < req:
            viol.append(n)
    if not rows:
        verdict = "inconclusive"
    else:
        verdict = "pass" if not viol else "fail"
    return {
        "check": "eigenvalue growth",
        "n0": n0,
        "M": M,
        "rows": rows,
        "violations": viol,
        "verdict": verdict,
        "note": "" if rows else f"only {len(lam)} eigenvalues computed, n0 = {n0}",
    }


def lemma12_constants(c9: float, M: float, n0: int) -> dict:
    """``c11 = (M/2e)^{M/2}``, ``c12 = c11 n0 int_0^inf exp(-s^{2/M}/2) ds``, ``c6' = c9^2 (n0 + c12)``."""
    c11 = (M / (2 * math.e)) ** (M / 2)
    integral, _ = quad(lambda s: math.exp(-(s ** (2 / M)) / 2), 0, math.inf, limit=200)
    c12 = c11 * n0 * integral
    return {"c11": c11, "integral": integral, "c12": c12, "c6_prime": c9**2 * (n0 + c12)}


def verify_lemma12_reconstruction(
    spec: SpectrumResult,
    c9: float,
    M: float,
    n0: int,
    times: Sequence[float] | None = None,
) -> dict:
    """Check the kernel and semigroup bounds rebuilt from the sup-norm and growth bounds.

    ``S(t) = sum_n exp(-lambda_n t) ||f_n||_inf^2 <= c6' t^{-M}`` and
    ``||e^{-Ht}||_{2->inf} <= (2^{-M} c6')^{1/2} t^{-M/2}``.
    """
    consts = lemma12_constants(c9, M, n0)
    c6p = consts["c6_prime"]
    ts = np.asarray(
        sorted(set([0.01, 0.1, 1.0]) | set(default_times(spec, 8).tolist()))
        if times is None
        else times,
        dtype=float,
    )
    sup2 = spec.sup_norms**2
    rows = []
    ok = True
    for t in ts:
        S = float(np.sum(np.exp(-spec.eigenvalues * t) * sup2))
        R = float(np.sqrt(kernel_diagonal(spec, 2 * t).max()))
        bS = c6p * t ** (-M)
        bR = math.sqrt(2.0 ** (-M) * c6p) * t ** (-M / 2)
        rows.append({"t": float(t), "S": S, "S_bound": bS, "R": R, "R_bound": bR})
        ok &= S <= bS and R <= bR
    return {
        "check": "reconstructed kernel bounds with exponent 2M",
        "M": M,
        "n0": n0,
        **consts,
        "rows": rows,
        "verdict": "pass" if ok else "fail",
    }


# --------------------------------------------------------------------------
# dense route


def _scaled(op: DiscreteOperator) -> tuple[np.ndarray, np.ndarray]:
    s = 1.0 / np.sqrt(op.mass)
    A = (op.K.toarray() * s[:, None]) * s[None, :]
    return (A + A.T) / 2, s


def dense_semigroup(op: DiscreteOperator, f, t: float) -> np.ndarray:
    """``exp(-t B^{-1} K) f`` by a dense matrix exponential."""
    _check_t(t)
    A, s = _scaled(op)
    E = la.expm(-t * A)
    return s * (E @ (np.asarray(f, float) / s))


def dense_heat_kernel(op: DiscreteOperator, t: float) -> np.ndarray:
    """Full kernel matrix ``K(t, x, y)`` with respect to the cell measure."""
    _check_t(t)
    A, s = _scaled(op)
    E = la.expm(-t * A)
    return (E * s[:, None]) * s[None, :]
