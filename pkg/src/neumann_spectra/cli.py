"""Command-line front end.

Every command writes JSON reports (sorted keys), CSV tables, gnuplot
scripts and a ``manifest.json`` into the output directory, and exits with

    0  all checks pass
    1  a violation was found
    2  inconclusive (for instance a hypothesis outside reach)
    3  usage, configuration or I/O error

Reports other than the manifest (which records timings) are byte-for-byte
reproducible for a fixed config and seed.  Spectra are cached on disk when
``NEUMANN_SPECTRA_CACHE`` names a directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, DomainSpec, ExperimentConfig, load_config, load_domain
from .discrete_operator import assemble
from .eigensolver import EigensolverError, SpectrumResult, lowest_eigenpairs, save_eigenvectors
from .geometry import (
    BallDomain,
    BoxDomain,
    CuspDomain,
    DomainError,
    GraphDomain,
    collar_measure,
    export_pgm,
    minkowski_dimension,
    rasterize,
    single_chart_atlas,
    square_atlas,
)
from .heat import (
    fit_kernel_bound,
    fit_ultracontractivity,
    lemma12_constants,
    trace_slope,
    verify_lemma10,
    verify_lemma11,
    verify_lemma12_reconstruction,
)
from .inequalities import (
    estimate_sobolev_constant,
    example6_membership,
    refinement_study,
    sharp_cusp_exponent,
)
from .perturbation import (
    PerturbationError,
    collar_removal,
    restriction_map,
    stability_sweep,
    verify_corollary16,
    verify_theorem13,
)
from .whitney import WhitneyError, build_whitney, check_point_cube_distance, cube_count_dimension

__all__ = ["main", "build_parser", "EXIT_PASS", "EXIT_VIOLATION", "EXIT_INCONCLUSIVE", "EXIT_USAGE"]

EXIT_PASS, EXIT_VIOLATION, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3
CACHE_ENV = "NEUMANN_SPECTRA_CACHE"

# reference strings attached to report rows
REF = {
    "spectrum": "Neumann eigenvalues of the discrete quadratic form",
    "whitney": "Whitney covering: disjointness, size-distance comparability, level counts",
    "dimension": "Minkowski dimension from collar measures",
    "ultra": "ultracontractivity bound ||exp(-Ht)||_(2->inf) <= c5 t^(-M/4)",
    "kernel": "uniform heat-kernel bound K(t,x,x) <= c6 t^(-M/2)",
    "lemma10": "eigenfunction sup-norm bound from ultracontractivity",
    "lemma11": "eigenvalue growth lower bound from the kernel bound",
    "lemma12": "kernel bounds rebuilt from sup-norm and growth bounds",
    "trace": "heat trace small-time slope",
    "sobolev": "sharp Sobolev exponent of the cusp",
    "theorem13": "eigenvalue upper bound under inner perturbation",
    "corollary16": "two-sided bound from an inner comparison family",
    "theorem21": "two-sided eigenvalue stability for Hölder boundaries",
}


def _verdict_code(verdicts) -> int:
    v = set(verdicts)
    if "fail" in v:
        return EXIT_VIOLATION
    if "inconclusive" in v:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


def _clean(obj):
    """Recursively convert numpy containers and scalars to plain Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


class Run:
    """Output directory bookkeeping: files, step timings and the manifest."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig):
        self.out = Path(out)
        self.command = command
        self.cfg = cfg
        self.files: list[str] = []
        self.steps: list[dict] = []
        self.out.mkdir(parents=True, exist_ok=True)

    def step(self, name: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.steps.append({"step": name, "seconds": round(time.perf_counter() - self.t, 6)})

        return _Timer()

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.out / name

    def json(self, name: str, data) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")
        return p

    def text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
        return self.text(name, buf.getvalue())

    def manifest(self, exit_code: int) -> Path:
        inventory = []
        for name in sorted(self.files):
            data = (self.out / name).read_bytes()
            inventory.append(
                {"file": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}
            )
        p = self.out / "manifest.json"
        p.write_text(
            json.dumps(
                {
                    "command": self.command,
                    "config_hash": self.cfg.digest(),
                    "tool_version": __version__,
                    "exit_code": exit_code,
                    "steps": self.steps,
                    "files": inventory,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        return p


# --------------------------------------------------------------------------
# spectrum cache


def _cache_dir() -> Path | None:
    d = os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def cached_spectrum(op, m: int, tol: float, seed: int) -> SpectrumResult:
    """Lowest eigenpairs, read from or written to the on-disk cache if enabled."""
    cache = _cache_dir()
    if cache is None:
        return lowest_eigenpairs(op, m, tol=tol, seed=seed)
    key = hashlib.sha256(f"{op.key}|{op.h!r}|{m}|{tol!r}|{seed}".encode()).hexdigest()[:32]
    path = cache / f"spectrum-{key}.npz"
    if path.exists():
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            meta["cache"] = "hit"
            return SpectrumResult(
                z["eigenvalues"], z["eigenvectors"], z["mass"], z["residuals"], float(z["h"]), meta
            )
    spec = lowest_eigenpairs(op, m, tol=tol, seed=seed)
    cache.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(
        tmp,
        eigenvalues=spec.eigenvalues,
        eigenvectors=spec.eigenvectors,
        mass=spec.mass,
        residuals=spec.residuals,
        h=np.array(spec.h),
        meta=np.array(json.dumps(spec.meta, sort_keys=True)),
    )
    os.replace(tmp, path)
    return spec


def default_M(domain) -> float:
    """Kernel-bound exponent: 1 in 1D, N + 0.2 for Lipschitz sets, (gamma+N-1)/gamma for cusps."""
    if isinstance(domain, CuspDomain):
        return (domain.gamma + domain.N - 1) / domain.gamma
    if domain.dim == 1:
        return 1.0
    return domain.dim + 0.2


# --------------------------------------------------------------------------
# commands


def cmd_spectrum(cfg: ExperimentConfig, run: Run) -> int:
    dom = cfg.domain.build()
    h = cfg.domain.resolution
    with run.step("rasterize"):
        raster = rasterize(dom, h)
        op = assemble(raster)
    with run.step("eigensolve"):
        spec = cached_spectrum(op, cfg.spectrum.m, cfg.spectrum.tol, cfg.seed)
    rows = []
    analytic = None
    if isinstance(dom, BoxDomain):
        from .perturbation import box_neumann_eigenvalues

        analytic = box_neumann_eigenvalues(dom.lo, dom.hi, spec.m)
    for n, lam in enumerate(spec.eigenvalues):
        row = {
            "n": n,
            "lambda": float(lam),
            "residual": float(spec.residuals[n]),
            "sup_norm": float(spec.sup_norms[n]),
            "reference": REF["spectrum"],
        }
        if analytic is not None:
            row["analytic"] = float(analytic[n])
            row["relative_error"] = float(abs(lam / analytic[n] - 1)) if n else float(abs(lam))
        rows.append(row)
    meta = {k: v for k, v in spec.meta.items() if k != "cache"}
    run.json(
        "spectrum.json",
        {"domain": dom.describe(), "h": h, "ncells": op.n, "meta": meta, "rows": rows},
    )
    run.csv("eigenvalues.csv", ["n", "lambda", "residual"], [(r["n"], r["lambda"], r["residual"]) for r in rows])
    save_eigenvectors(spec, run.path("eigenvectors.bin"))
    if dom.dim == 2:
        export_pgm(raster, run.path("raster.pgm"))
        if spec.m > 1:
            export_pgm(raster, run.path("mode1.pgm"), spec.eigenvectors[:, 1])
    return EXIT_PASS


def cmd_whitney(cfg: ExperimentConfig, run: Run) -> int:
    dom = cfg.domain.build()
    with run.step("build"):
        cov = build_whitney(dom, cfg.whitney.k_max)
    with run.step("point-check"):
        pts = check_point_cube_distance(cov, dom, samples=cfg.whitney.samples, seed=cfg.seed)
    fit = None
    try:
        fit = cube_count_dimension(cov).to_dict()
    except WhitneyError as exc:
        fit = {"error": str(exc)}
    checks = dict(cov.checks)
    ok = checks["all_pass"] and pts["violation_count"] == 0
    run.json(
        "whitney.json",
        {
            "domain": dom.describe(),
            "covering": cov.to_dict(),
            "point_check": pts,
            "cube_count_fit": fit,
            "verdict": "pass" if ok else "fail",
            "reference": REF["whitney"],
        },
    )
    cov.to_csv(run.path("cubes.csv"))
    run.csv("counts.csv", ["level", "count"], sorted(cov.counts.items()))
    cov.to_gnuplot(run.path("whitney.gp"))
    return EXIT_PASS if ok else EXIT_VIOLATION


def cmd_dimension(cfg: ExperimentConfig, run: Run) -> int:
    dom = cfg.domain.build()
    d = cfg.dimension
    eps = np.geomspace(d.eps_min, d.eps_max, d.count)
    with run.step("collars"):
        fit = minkowski_dimension(dom, eps)
    N = dom.dim
    rows = []
    for e, mval in zip(fit.table.eps, fit.table.measures):
        row = {"eps": float(e), "collar_measure": float(mval), "reference": REF["dimension"]}
        if isinstance(dom, BallDomain) and N == 2:
            r = dom.radius
            row["analytic"] = math.pi * (r**2 - max(r - e, 0) ** 2)
        rows.append(row)
    ok = N - 1 - 0.15 <= fit.estimate <= N + 0.15
    run.json(
        "dimension.json",
        {
            "domain": dom.describe(),
            "estimate": fit.estimate,
            "fit": fit.to_dict(),
            "rows": rows,
            "admissible_range": [N - 1 - 0.15, N + 0.15],
            "verdict": "pass" if ok else "fail",
        },
    )
    run.csv("collar.csv", ["eps", "measure"], [(r["eps"], r["collar_measure"]) for r in rows])
    run.text(
        "collar.gp",
        "set datafile separator ','\nset logscale xy\nset xlabel 'eps'\nset ylabel '|collar|'\n"
        "plot 'collar.csv' every ::1 using 1:2 with linespoints title 'collar measure'\n",
    )
    return EXIT_PASS if ok else EXIT_VIOLATION


def _heat_battery(spec: SpectrumResult, M: float, measure: float) -> dict:
    ultra = fit_ultracontractivity(spec, M)
    kern = fit_kernel_bound(spec, M)
    l10 = verify_lemma10(spec, ultra.c5, M)
    l11 = verify_lemma11(spec, kern.c6, measure, M)
    l12 = verify_lemma12_reconstruction(spec, math.e * ultra.c5, M, l11["n0"])
    return {"ultra": ultra, "kernel": kern, "lemma10": l10, "lemma11": l11, "lemma12": l12}


def cmd_heatkernel(cfg: ExperimentConfig, run: Run) -> int:
    dom = cfg.domain.build()
    hc = cfg.heatkernel
    M = default_M(dom) if hc.M is None else hc.M
    with run.step("eigensolve"):
        op = assemble(rasterize(dom, cfg.domain.resolution))
        spec = cached_spectrum(op, min(hc.m, op.n), 1e-8, cfg.seed)
    with run.step("fits"):
        bat = _heat_battery(spec, M, op.measure)
        slope = trace_slope(spec, hc.t_lo, hc.t_hi)
    verdicts = [bat[k]["verdict"] for k in ("lemma10", "lemma11", "lemma12")]
    run.json(
        "heatkernel.json",
        {
            "domain": dom.describe(),
            "M": M,
            "ultracontractivity": dict(bat["ultra"].to_dict(), reference=REF["ultra"]),
            "kernel_bound": dict(bat["kernel"].to_dict(), reference=REF["kernel"]),
            "lemma10": dict(bat["lemma10"], reference=REF["lemma10"]),
            "lemma11": dict(bat["lemma11"], reference=REF["lemma11"]),
            "lemma12": dict(bat["lemma12"], reference=REF["lemma12"]),
            "trace_slope": dict(slope, reference=REF["trace"]),
            "verdicts": verdicts,
        },
    )
    u = bat["ultra"]
    run.csv("ultracontractivity.csv", ["t", "R"], zip(u.times.tolist(), u.ratios.tolist()))
    run.csv("trace.csv", ["t", "Z"], zip(slope["t"], slope["Z"]))
    run.text(
        "heatkernel.gp",
        "set datafile separator ','\nset logscale xy\nset xlabel 't'\n"
        "plot 'ultracontractivity.csv' every ::1 using 1:2 with linespoints title 'R(t)', \\\n"
        "     'trace.csv' every ::1 using 1:2 with linespoints title 'Z(t)'\n",
    )
    return _verdict_code(verdicts)


def cmd_sobolev(cfg: ExperimentConfig, run: Run) -> int:
    dom = cfg.domain.build()
    sc = cfg.sobolev
    cusp = isinstance(dom, CuspDomain)
    q_sharp = sharp_cusp_exponent(dom.gamma, dom.N) if cusp else None
    rows, verdicts = [], []
    for q in sc.q:
        with run.step(f"q={q:g}"):
            study = refinement_study(
                dom,
                sc.hs,
                lambda op, q=q: estimate_sobolev_constant(
                    op, q, restarts=sc.restarts, seed=cfg.seed, domain=dom
                ).value,
            )
        bounded = (q <= q_sharp) if cusp else (dom.dim <= 2 or q <= 2 * dom.dim / (dom.dim - 2))
        if study.verdict == "divergent":
            verdict = "fail"
        elif study.verdict == "stable" and bounded:
            verdict = "pass"
        else:
            verdict = "inconclusive"
        verdicts.append(verdict)
        row = {
            "q": q,
            "expected": "bounded" if bounded else "unbounded",
            "refinement": study.to_dict(),
            "verdict": verdict,
            "reference": REF["sobolev"],
        }
        if cusp:
            delta = 0.5 * (1 + (dom.N - 1) / dom.gamma) / q
            w12, lq = example6_membership(dom.gamma, dom.N, delta, q)
            row["probe"] = {
                "delta": delta,
                "in_W12": w12,
                "in_Lq": lq,
                "W12_threshold": -1 + (1 + (dom.N - 1) / dom.gamma) / 2,
                "Lq_threshold": (1 + (dom.N - 1) / dom.gamma) / q,
            }
        rows.append(row)
    run.json(
        "sobolev.json",
        {"domain": dom.describe(), "sharp_exponent": q_sharp, "rows": rows, "verdicts": verdicts},
    )
    flat = []
    for r in rows:
        for h, v in zip(r["refinement"]["h"], r["refinement"]["values"]):
            flat.append((r["q"], h, v))
    run.csv("sobolev.csv", ["q", "h", "estimate"], flat)
    run.text(
        "sobolev.gp",
        "set datafile separator ','\nset logscale x\nset xlabel 'h'\nset ylabel 'Sobolev quotient'\n"
        "plot 'sobolev.csv' every ::1 using 2:3 with linespoints title 'estimate'\n",
    )
    return _verdict_code(verdicts)


def _atlas_for(pc, dom):
    if pc.atlas == "square":
        if not (isinstance(dom, BoxDomain) and dom.lo == (0.0, 0.0) and dom.hi == (1.0, 1.0)):
            raise ConfigError("the square atlas needs the unit square domain")
        return square_atlas()
    if pc.atlas == "single":
        if not isinstance(dom, GraphDomain):
            raise ConfigError("the single-chart atlas needs a graph domain")
        return single_chart_atlas(dom, 0.16)
    return None


def cmd_perturb(cfg: ExperimentConfig, run: Run) -> int:
    dom = cfg.domain.build()
    pc = cfg.perturb
    atlas = _atlas_for(pc, dom)
    if pc.family == "deformation" and atlas is None:
        raise ConfigError("the deformation family needs perturb.atlas = 'square' or 'single'")
    with run.step("sweep"):
        rep = stability_sweep(
            dom,
            pc.family,
            pc.eps,
            n_max=pc.n_max,
            h=pc.h,
            gamma=pc.gamma,
            atlas=atlas,
            ramp_width=pc.ramp_width,
            jobs=cfg.jobs,
        )
    data = rep.to_dict()
    for inc in data["extra"].get("inclusions", []):
        inc.pop("image", None)
    run.json("stability.json", data)
    run.text("stability.csv", rep.to_csv())
    run.text("stability.gp", rep.to_gnuplot("stability.csv"))
    run.csv(
        "verdicts.csv",
        ["eps", "n", "b", "verdict", "reference"],
        [
            (r["eps"], r["n"], r["b"], "pass" if r["pass"] else "fail", r["reference"])
            for r in data["rows"]
        ],
    )
    return EXIT_PASS if rep.all_pass else EXIT_VIOLATION


def cmd_verify_all(cfg: ExperimentConfig, run: Run) -> int:
    dom = cfg.domain.build()
    vc = cfg.verify
    M = default_M(dom) if vc.M is None else vc.M
    h = cfg.domain.resolution
    summary = []

    def add(check, reference, verdict, detail):
        summary.append({"check": check, "reference": reference, "verdict": verdict, "detail": detail})

    with run.step("spectrum"):
        r1 = rasterize(dom, h)
        op1 = assemble(r1)
        spec = cached_spectrum(op1, min(vc.m, op1.n), 1e-8, cfg.seed)
    with run.step("heat"):
        bat = _heat_battery(spec, M, op1.measure)
    u, k = bat["ultra"], bat["kernel"]
    add(
        "ultracontractivity fit",
        REF["ultra"],
        "pass" if np.isfinite(u.c5) and u.M_fit <= M + 0.25 else "fail",
        {"M_used": M, "M_fit": u.M_fit, "c5": u.c5},
    )
    add("kernel bound fit", REF["kernel"], "pass" if np.isfinite(k.c6) else "fail", {"M": M, "c6": k.c6})
    for key in ("lemma10", "lemma11", "lemma12"):
        b = bat[key]
        detail = {kk: b[kk] for kk in ("c9", "n0", "c6_prime", "min_margin", "note") if kk in b}
        add(b["check"], REF[key], b["verdict"], detail)
    with run.step("theorem13"):
        eps13 = min(vc.eps)
        r2 = collar_removal(r1, eps13)
        op2 = assemble(r2)
        n13 = min(vc.n_max, spec.m - 1)
        t13 = verify_theorem13(
            spec.truncate(n13 + 1), op2, restriction_map(op1, r2), n13, M, u.c5
        )
    add(
        f"restriction chain, collar eps={eps13:g}",
        REF["theorem13"],
        t13.verdict,
        {"chain_holds": t13.chain_holds, "hypothesis_met": t13.hypothesis_met,
         "removed_measure": t13.removed,
         "smallest_threshold": min(r["threshold"] for r in t13.rows)},
    )
    sigma = 1.0 if not isinstance(dom, CuspDomain) else dom.gamma
    with run.step("corollary16"):
        c16 = verify_corollary16(dom, vc.eps, sigma=sigma, n_max=n13, h=h, M=M, jobs=cfg.jobs)
    add(
        "two-sided chain with collar families",
        REF["corollary16"],
        c16["verdict"],
        {"chain_holds": c16["chain_holds"], "sigma": sigma, "b4": c16["b4"]},
    )
    with run.step("theorem21"):
        sweep = stability_sweep(
            dom, "collar_removal", vc.eps, n_max=n13, h=h, jobs=cfg.jobs
        )
    ex = sweep.exponent[1:]
    add(
        "stability sweep under collar removal",
        REF["theorem21"],
        "pass" if sweep.all_pass else "fail",
        {"gamma": sweep.gamma, "b_fit": sweep.b_fit[1:],
         "exponent": [None if not np.isfinite(v) else float(v) for v in ex]},
    )
    with run.step("whitney"):
        cov = build_whitney(dom, vc.k_max)
        pts = check_point_cube_distance(cov, dom, seed=cfg.seed)
    add(
        "Whitney invariants",
        REF["whitney"],
        "pass" if cov.checks["all_pass"] and pts["violation_count"] == 0 else "fail",
        {"counts": cov.counts, "point_violations": pts["violation_count"]},
    )
    verdicts = [s["verdict"] for s in summary]
    run.json(
        "summary.json",
        {
            "domain": dom.describe(),
            "h": h,
            "M": M,
            "checks": summary,
            "theorem13": t13.to_dict(),
            "corollary16": c16,
            "theorem21": sweep.to_dict(),
        },
    )
    run.csv(
        "summary.csv",
        ["check", "reference", "verdict"],
        [(s["check"], s["reference"], s["verdict"]) for s in summary],
    )
    return _verdict_code(verdicts)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "whitney": cmd_whitney,
    "dimension": cmd_dimension,
    "heatkernel": cmd_heatkernel,
    "sobolev": cmd_sobolev,
    "perturb": cmd_perturb,
    "verify-all": cmd_verify_all,
}


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="neumann-spectra",
        description="Neumann spectra, heat kernels and perturbation checks on irregular domains.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (TOML)")
    common.add_argument("--domain", help="domain kind (square, interval, disc, cusp, sawtooth) or TOML file")
    common.add_argument("--h", type=float, help="lattice spacing")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--jobs", type=int, help="worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", parents=[common], help="lowest Neumann eigenpairs")
    s.add_argument("--m", type=int)
    s.add_argument("--tol", type=float)

    s = sub.add_parser("whitney", parents=[common], help="Whitney covering and its invariants")
    s.add_argument("--k-max", type=int)

    s = sub.add_parser("dimension", parents=[common], help="Minkowski dimension of the boundary")
    s.add_argument("--eps-min", type=float)
    s.add_argument("--eps-max", type=float)
    s.add_argument("--count", type=int)

    s = sub.add_parser("heatkernel", parents=[common], help="heat-kernel fits and bounds")
    s.add_argument("--m", type=int)
    s.add_argument("--M", type=float)
    s.add_argument("--t-lo", type=float)
    s.add_argument("--t-hi", type=float)

    s = sub.add_parser("sobolev", parents=[common], help="Sobolev quotient refinement study")
    s.add_argument("--q", type=float, action="append")
    s.add_argument("--hs", type=float, nargs="+")
    s.add_argument("--restarts", type=int)

    s = sub.add_parser("perturb", parents=[common], help="eigenvalue stability sweep")
    s.add_argument("--family", choices=["graph_shrink", "collar_removal", "deformation"])
    s.add_argument("--eps", type=float, nargs="+")
    s.add_argument("--n-max", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--atlas", choices=["none", "square", "single"])
    s.add_argument("--sweep-h", type=float, dest="sweep_h", help="lattice spacing of the sweep")

    s = sub.add_parser("verify-all", parents=[common], help="full verification battery")
    s.add_argument("--n-max", type=int)
    s.add_argument("--M", type=float)
    return p


_OVERRIDES = {
    "spectrum": {"m": "m", "tol": "tol"},
    "whitney": {"k_max": "k_max"},
    "dimension": {"eps_min": "eps_min", "eps_max": "eps_max", "count": "count"},
    "heatkernel": {"m": "m", "M": "M", "t_lo": "t_lo", "t_hi": "t_hi"},
    "sobolev": {"q": "q", "hs": "hs", "restarts": "restarts"},
    "perturb": {
        "family": "family", "eps": "eps", "n_max": "n_max", "gamma": "gamma",
        "atlas": "atlas", "sweep_h": "h",
    },
    "verify-all": {"n_max": "n_max", "M": "M"},
}
_SECTION = {"verify-all": "verify"}


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.domain:
        cfg = dataclasses.replace(cfg, domain=load_domain(args.domain))
    if args.h is not None:
        d = cfg.domain
        cfg = dataclasses.replace(cfg, domain=DomainSpec(d.kind, args.h, d.params))
    for k in ("out", "seed", "jobs"):
        v = getattr(args, k)
        if v is not None:
            cfg = dataclasses.replace(cfg, **{k: v})
    section = _SECTION.get(args.command, args.command)
    changes = {}
    for arg, key in _OVERRIDES[args.command].items():
        v = getattr(args, arg, None)
        if v is not None:
            changes[key] = tuple(v) if isinstance(v, list) else v
    if changes:
        try:
            new = dataclasses.replace(getattr(cfg, section), **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg = dataclasses.replace(cfg, **{section: new})
    # re-validate the whole config after the overrides
    return ExperimentConfig.from_dict(cfg.to_dict())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        cfg = resolve_config(args)
        run = Run(Path(cfg.out), args.command, cfg)
        run.json("config.json", cfg.to_dict())
        code = COMMANDS[args.command](cfg, run)
    except (ConfigError, OSError) as exc:
        print(f"neumann-spectra: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, WhitneyError, EigensolverError, PerturbationError, ValueError) as exc:
        print(f"neumann-spectra: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run.manifest(code)
    print(f"{args.command}: exit {code} ({['pass', 'violation', 'inconclusive'][code]}); output in {run.out}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
