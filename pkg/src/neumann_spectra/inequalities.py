"""Discrete Sobolev and Hardy constants, exponent maps and refinement studies.

Both constants are suprema of quotients over the discrete W^{1,2} sphere.
The ascent used for them is the conditional-gradient step in the W^{1,2}
inner product ``G = K + B``:

    f  <-  G^{-1} grad Phi(f),  then normalise to ||f||_W = 1,

with ``Phi(f) = ||f||_q^q`` (Sobolev) or ``Phi(f) = ||d^{-alpha} f||_2^2``
(Hardy).  For convex ``Phi`` every step increases the quotient, so the best
value over restarts is a certified lower bound on the discrete constant.
For the quadratic Hardy functional the step is power iteration on
``G^{-1} D``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discrete_operator import DiscreteOperator, assemble, sobolev_norm
from .geometry import CuspDomain, Domain, cell_distances, minkowski_dimension, rasterize

__all__ = [
    "SobolevEstimate",
    "HardyEstimate",
    "OpenInterval",
    "RefinementStudy",
    "estimate_sobolev_constant",
    "estimate_hardy_constant",
    "hardy_probe",
    "hardy_to_sobolev_exponent",
    "sobolev_to_hardy_exponent",
    "interpolation_exponents",
    "example6_membership",
    "example6_norm_growth",
    "sharp_cusp_exponent",
    "refinement_study",
    "classify_growth",
    "verify_corollary2",
    "Q_MAX",
]

Q_MAX = 10.0


def _lq_norm(f: np.ndarray, mass: np.ndarray, q: float) -> float:
    a = np.abs(f)
    s = a.max()
    if s == 0:
        return 0.0
    return float(s * np.sum(mass * (a / s) ** q) ** (1 / q))


@dataclass
class SobolevEstimate:
    """Best quotient ``||f||_q / ||f||_W`` found, with the maximiser."""

    q: float
    value: float
    vector: np.ndarray = field(repr=False)
    restarts: list[dict] = field(default_factory=list)

    @property
    def constant_lower_bound(self) -> float:
        return self.restarts[0]["initial"] if self.restarts else float("nan")

    def to_dict(self) -> dict:
        return {"q": self.q, "value": self.value, "restarts": self.restarts}


@dataclass
class HardyEstimate:
    """Best quotient ``||d^{-alpha} f||_2 / ||f||_W`` and the ``f = 1`` probe."""

    alpha: float
    value: float
    probe: float
    weighted_integral: float
    vector: np.ndarray = field(repr=False)
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "value": self.value,
            "probe": self.probe,
            "weighted_integral": self.weighted_integral,
            "iterations": self.iterations,
        }


def _factor(op: DiscreteOperator):
    key = "G_lu"
    if key not in op._cache:
        G = (op.K + sp.diags(op.mass)).tocsc()
        op._cache[key] = spla.splu(G)
    return op._cache[key]


def _ascent(
    op: DiscreteOperator,
    grad: Callable[[np.ndarray], np.ndarray],
    value: Callable[[np.ndarray], float],
    f0: np.ndarray,
    maxiter: int,
    rtol: float,
) -> tuple[np.ndarray, float, int, float]:
    lu = _factor(op)
    f = f0 / sobolev_norm(op, f0)
    v0 = val = value(f)
    it = 0
    for it in range(1, maxiter + 1):
        g = lu.solve(grad(f))
        nrm = sobolev_norm(op, g)
        if nrm == 0:
            break
        f_new = g / nrm
        v_new = value(f_new)
        if v_new < val:
            # rounding noise at a fixed point; keep the better iterate
            break
        done = v_new - val <= rtol * abs(val)
        f, val = f_new, v_new
        if done:
            break
    return f, val, it, v0


def _starts(op: DiscreteOperator, restarts: int, seed: int, domain: Domain | None) -> list:
    n = op.n
    rng = np.random.default_rng(seed)
    centers = op.cell_centers()
    starts = [("constant", np.ones(n))]
    if isinstance(domain, CuspDomain):
        x = np.maximum(centers[:, 0], op.h / 2)
        # near-critical power profiles concentrating at the tip
        crit = -1 + 0.5 * (1 + (domain.N - 1) / domain.gamma)
        for frac in (0.5, 0.9, 0.99):
            starts.append((f"x^-{frac * crit:.4g}", x ** (-frac * crit)))
    for r in range(restarts):
        starts.append((f"random{r}", 1.0 + rng.standard_normal(n)))
        # localized bump around a random cell
        c = centers[rng.integers(n)]
        width = 4 * op.h
        bump = np.exp(-np.sum((centers - c) ** 2, axis=1) / (2 * width**2))
        starts.append((f"bump{r}", bump + 1e-3))
    return starts


def estimate_sobolev_constant(
    op: DiscreteOperator,
    q: float,
    restarts: int = 3,
    seed: int = 0,
    maxiter: int = 500,
    rtol: float = 1e-10,
    domain: Domain | None = None,
) -> SobolevEstimate:
    """Lower bound on ``sup ||f||_q / ||f||_{W^{1,2}}`` over grid functions.

    Parameters
    ----------
    op : DiscreteOperator
    q : float
        Exponent in ``(2, 10]``.
    restarts : int
        Number of random and of localised starts (each), in addition to the
        constant function and, on cusp domains, power profiles ``x^-delta``.
    domain : Domain, optional
        Defaults to the raster's source domain.
    """
    if not q > 2:
        raise ValueError("Sobolev exponent q must exceed 2")
    if q > Q_MAX:
        raise ValueError(f"q is capped at {Q_MAX}")
    domain = domain if domain is not None else op.raster.source
    mass = op.mass

    def value(f):
        return _lq_norm(f, mass, q)

    def grad(f):
        a = np.abs(f)
        s = a.max()
        return mass * np.sign(f) * (a / s) ** (q - 1)

    best = None
    log = []
    for name, f0 in _starts(op, restarts, seed, domain):
        f, val, it, v0 = _ascent(op, grad, value, f0, maxiter, rtol)
        log.append({"start": name, "initial": v0, "value": val, "iterations": it})
        if best is None or val > best[1]:
            best = (f, val)
    return SobolevEstimate(float(q), float(best[1]), best[0], log)


def hardy_probe(op: DiscreteOperator, dist: np.ndarray, alpha: float) -> tuple[float, float]:
    """``(||d^{-alpha}||_2 / ||1||_W, int d^{-2 alpha})`` for ``f = 1``."""
    integral = float(np.sum(op.mass * dist ** (-2 * alpha)))
    return math.sqrt(integral / op.measure), integral


def estimate_hardy_constant(
    op: DiscreteOperator,
    dist: np.ndarray | None = None,
    alpha: float = 0.25,
    maxiter: int = 2000,
    rtol: float = 1e-12,
    seed: int = 0,
) -> HardyEstimate:
    """Lower bound on ``sup ||d^{-alpha} f||_2 / ||f||_{W^{1,2}}``.

    ``dist`` is the per-cell boundary distance (cell order), computed from
    the raster when omitted.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    dist = cell_distances(op.raster) if dist is None else np.asarray(dist, float)
    if dist.shape != (op.n,) or np.any(dist <= 0):
        raise ValueError("dist must be a positive per-cell array")
    w = op.mass * dist ** (-2 * alpha)
    probe, integral = hardy_probe(op, dist, alpha)

    def value(f):
        return math.sqrt(float(np.dot(w * f, f)))

    def grad(f):
        return w * f

    best = None
    for f0 in (np.ones(op.n), 1.0 + np.random.default_rng(seed).standard_normal(op.n)):
        f, val, it, _ = _ascent(op, grad, value, f0, maxiter, rtol)
        if best is None or val > best[1]:
            best = (f, val, it)
    return HardyEstimate(float(alpha), float(best[1]), probe, integral, best[0], best[2])


# --------------------------------------------------------------------------
# exponent arithmetic


@dataclass(frozen=True)
class OpenInterval:
    lo: float
    hi: float

    def __contains__(self, x: float) -> bool:
        return self.lo < x < self.hi


def hardy_to_sobolev_exponent(alpha: float, N: int, p: float) -> float | OpenInterval:
    """Sobolev exponent obtained from a Hardy inequality with weight ``d^-alpha``.

    ``q = M p / (M - p)`` with ``M = N (1 + alpha)`` when ``N > p``; the open
    range ``(p, p (1 + alpha p / N))`` when ``N <= p``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if N > p:
        M = N * (1 + alpha)
        return M * p / (M - p)
    return OpenInterval(float(p), p * (1 + alpha * p / N))


def sobolev_to_hardy_exponent(sigma: float, p: float, q: float) -> float:
    """Hardy exponent ``alpha = sigma (1/p - 1/q)``."""
    if not q > p:
        raise ValueError("need q > p")
    if not sigma > 0 or p < 1:
        raise ValueError("need sigma > 0 and p >= 1")
    return sigma * (1 / p - 1 / q)


def interpolation_exponents(alpha: float, N: int, p: float, r: float | None = None) -> dict:
    """Hölder interpolation parameters between the weighted L^p and L^r bounds.

    Returns ``lam = (alpha/N) / (alpha/N + 1/p - 1/r)`` and the exponent ``q``
    with ``1/q = (1 - lam)/p + lam/r``.
    """
    if r is None:
        if N <= p:
            raise ValueError("r must be given when N <= p")
        r = N * p / (N - p)
    if not r > p:
        raise ValueError("need r > p")
    a = alpha / N
    lam = a / (a + 1 / p - 1 / r)
    q = (a + 1 / p - 1 / r) / ((a + 1 / p - 1 / r) / p - a * (1 / p - 1 / r))
    return {"lambda": lam, "q": q, "r": r, "identity_residual": abs(1 / q - (1 - lam) / p - lam / r)}


def _check_cusp_params(gamma: float, N: int) -> None:
    if not 0 < gamma <= 1 or N < 2 or (N == 2 and gamma >= 1):
        raise ValueError("need 0 < gamma <= 1 and N >= 2, with gamma < 1 when N = 2")


def example6_membership(gamma: float, N: int, delta: float, q: float) -> tuple[bool, bool]:
    """Whether ``x^-delta`` lies in ``W^{1,2}`` and in ``L^q`` of the cusp domain."""
    _check_cusp_params(gamma, N)
    s = 1 + (N - 1) / gamma
    return bool(delta < -1 + s / 2), bool(delta < s / q)


def sharp_cusp_exponent(gamma: float, N: int) -> float:
    """Largest Sobolev exponent on the cusp, ``2 (gamma + N - 1) / (N - 1 - gamma)``."""
    _check_cusp_params(gamma, N)
    return 2 * (gamma + N - 1) / (N - 1 - gamma)


def example6_norm_growth(
    gamma: float, N: int, delta: float, q: float, hs: Sequence[float]
) -> dict:
    """Discrete ``W^{1,2}`` and ``L^q`` norms of ``x^-delta`` on refined cusp rasters."""
    dom = CuspDomain(N, gamma)
    rows = []
    for h in hs:
        op = assemble(rasterize(dom, h))
        f = op.cell_centers()[:, 0] ** (-delta)
        rows.append({"h": h, "W12": sobolev_norm(op, f), "Lq": _lq_norm(f, op.mass, q)})
    return {"gamma": gamma, "N": N, "delta": delta, "q": q, "rows": rows}


# --------------------------------------------------------------------------
# refinement studies

GROWTH_RULE = 1.5


@dataclass
class RefinementStudy:
    hs: list[float]
    values: list[float]
    factors: list[float]
    verdict: str
    rule: str

    def to_dict(self) -> dict:
        return {
            "h": self.hs,
            "values": self.values,
            "growth_factors": self.factors,
            "verdict": self.verdict,
            "rule": self.rule,
        }


def classify_growth(values: Sequence[float], stable_tol: float = 0.05, diverge: float = GROWTH_RULE) -> tuple[str, list[float]]:
    """Classify a refinement sequence (coarse to fine).

    ``stable`` when every growth factor lies within ``1 +- stable_tol``,
    ``divergent`` when every factor is at least ``diverge``, otherwise
    ``inconclusive``.
    """
    v = np.asarray(values, float)
    factors = (v[1:] / v[:-1]).tolist()
    if len(factors) < 2:
        return "inconclusive", factors
    if all(abs(f - 1) <= stable_tol for f in factors):
        return "stable", factors
    if all(f >= diverge for f in factors):
        return "divergent", factors
    return "inconclusive", factors


def refinement_study(
    domain: Domain,
    hs: Sequence[float],
    quantity: Callable[[DiscreteOperator], float],
    stable_tol: float = 0.05,
    diverge: float = GROWTH_RULE,
) -> RefinementStudy:
    """Evaluate ``quantity`` on rasters of decreasing h and classify the trend."""
    hs = sorted(hs, reverse=True)
    vals = [float(quantity(assemble(rasterize(domain, h)))) for h in hs]
    verdict, factors = classify_growth(vals, stable_tol, diverge)
    rule = f"stable: factors within 1+-{stable_tol}; divergent: factors >= {diverge}"
    return RefinementStudy(list(hs), vals, factors, verdict, rule)


def verify_corollary2(
    domain: Domain,
    q: float,
    alpha: float | None = None,
    sigma: float = 0.5,
    hs: Sequence[float] = (1 / 32, 1 / 64, 1 / 128),
    stable_tol: float = 0.05,
    diverge: float = GROWTH_RULE,
) -> dict:
    """Cross-check the three equivalent conditions (p = 2) by refinement.

    (a) Hardy constant for ``alpha`` stable; (b) ``int d^{-sigma}`` stable
    and Sobolev constant for ``q`` stable; (c) Minkowski estimate below N
    and Sobolev constant stable.  ``alpha`` defaults to
    ``sigma (1/2 - 1/q)``.
    """
    alpha = sobolev_to_hardy_exponent(sigma, 2, q) if alpha is None else alpha
    hardy = refinement_study(
        domain, hs, lambda op: estimate_hardy_constant(op, alpha=alpha).value, stable_tol, diverge
    )
    integ = refinement_study(
        domain,
        hs,
        lambda op: hardy_probe(op, cell_distances(op.raster), sigma / 2)[1],
        stable_tol,
        diverge,
    )
    sob = refinement_study(
        domain,
        hs,
        lambda op: estimate_sobolev_constant(op, q, domain=domain).value,
        stable_tol,
        diverge,
    )
    mink = minkowski_dimension(domain)
    N = domain.dim

    def leg(*studies, extra=True):
        verdicts = [s.verdict for s in studies]
        if all(v == "stable" for v in verdicts) and extra:
            return "pass"
        if any(v == "divergent" for v in verdicts) or not extra:
            return "fail"
        return "inconclusive"

    legs = {
        "a": leg(hardy),
        "b": leg(integ, sob),
        "c": leg(sob, extra=mink.estimate < N),
    }
    distinct = set(legs.values())
    overall = legs["a"] if len(distinct) == 1 else "inconclusive"
    return {
        "check": "Hardy / integrability / dimension equivalence",
        "q": q,
        "alpha": alpha,
        "sigma": sigma,
        "legs": legs,
        "verdict": overall,
        "hardy": hardy.to_dict(),
        "distance_integral": integ.to_dict(),
        "sobolev": sob.to_dict(),
        "minkowski": mink.estimate,
    }
