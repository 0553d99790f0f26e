"""Experiment configuration: strict TOML parsing into dataclasses.

Schema (version 1)::

    version = 1
    seed = 0
    jobs = 1
    out = "results"

    [domain]
    kind = "square"        # interval | square | disc | cusp | sawtooth | box | ball | graph
    h = 0.015625           # lattice spacing (optional; a per-kind default otherwise)

    [spectrum]   m, tol
    [whitney]    k_max, samples
    [dimension]  eps_min, eps_max, count
    [heatkernel] m, M, t_lo, t_hi
    [sobolev]    q, hs, restarts, sigma
    [perturb]    family, eps, n_max, gamma, atlas, ramp_width, h, sigma
    [verify]     n_max, eps, k_max, M, m

Unknown keys anywhere are an error.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import (
    BallDomain,
    BoxDomain,
    CuspDomain,
    Domain,
    GraphDomain,
    sawtooth_domain,
    unit_disc,
    unit_interval,
    unit_square,
)

__all__ = [
    "ConfigError",
    "DomainSpec",
    "SpectrumConfig",
    "WhitneyConfig",
    "DimensionConfig",
    "HeatConfig",
    "SobolevConfig",
    "PerturbConfig",
    "VerifyConfig",
    "ExperimentConfig",
    "load_config",
    "load_domain",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


# keys accepted per domain kind, besides "kind" and "h"
_DOMAIN_KEYS = {
    "interval": set(),
    "square": set(),
    "disc": set(),
    "cusp": {"N", "gamma"},
    "sawtooth": {"teeth", "base", "amp"},
    "box": {"lo", "hi"},
    "ball": {"center", "radius"},
    "graph": {"base_lo", "base_hi", "profile", "gamma", "holder_const", "k_lo", "k_hi", "breaks"},
}

# default lattice spacing per kind (fine enough for the verification battery)
_DEFAULT_H = {
    "interval": 1 / 400,
    "square": 1 / 64,
    "disc": 1 / 64,
    "cusp": 1 / 128,
    "sawtooth": 1 / 128,
    "box": 1 / 64,
    "ball": 1 / 64,
    "graph": 1 / 128,
}


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "square"
    h: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _DOMAIN_KEYS:
            raise ConfigError(f"unknown domain kind {self.kind!r}; choose from {sorted(_DOMAIN_KEYS)}")
        extra = set(self.params) - _DOMAIN_KEYS[self.kind]
        if extra:
            raise ConfigError(f"unknown key(s) {sorted(extra)} for domain kind {self.kind!r}")
        if self.h is not None and not 0 < self.h <= 0.5:
            raise ConfigError(f"domain.h={self.h} must lie in (0, 0.5]")

    @classmethod
    def from_table(cls, table: dict) -> "DomainSpec":
        t = dict(table)
        kind = t.pop("kind", "square")
        h = t.pop("h", None)
        return cls(str(kind), None if h is None else float(h), t)

    @property
    def resolution(self) -> float:
        return self.h if self.h is not None else _DEFAULT_H[self.kind]

    def build(self) -> Domain:
        p = self.params
        try:
            if self.kind == "interval":
                return unit_interval()
            if self.kind == "square":
                return unit_square()
            if self.kind == "disc":
                return unit_disc()
            if self.kind == "cusp":
                return CuspDomain(int(p.get("N", 2)), float(p.get("gamma", 0.5)))
            if self.kind == "sawtooth":
                return sawtooth_domain(
                    int(p.get("teeth", 4)), float(p.get("base", 0.75)), float(p.get("amp", 0.15))
                )
            if self.kind == "box":
                return BoxDomain(tuple(map(float, p["lo"])), tuple(map(float, p["hi"])))
            if self.kind == "ball":
                return BallDomain(tuple(map(float, p["center"])), float(p["radius"]))
            return GraphDomain(
                tuple(map(float, p["base_lo"])),
                tuple(map(float, p["base_hi"])),
                str(p["profile"]),
                gamma=float(p.get("gamma", 1.0)),
                holder_const=float(p.get("holder_const", 1.0)),
                k_lo=float(p["k_lo"]),
                k_hi=float(p["k_hi"]),
                breaks=tuple(map(float, p.get("breaks", ()))),
            )
        except KeyError as exc:
            raise ConfigError(f"domain kind {self.kind!r} needs key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid domain description: {exc}") from None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "h": self.h, **self.params}


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class SpectrumConfig:
    m: int = 10
    tol: float = 1e-8

    def __post_init__(self):
        _check(1 <= self.m <= 500, "spectrum.m must lie in [1, 500]")
        _check(0 < self.tol < 1, "spectrum.tol must lie in (0, 1)")


@dataclass(frozen=True)
class WhitneyConfig:
    k_max: int = 10
    samples: int = 4

    def __post_init__(self):
        _check(3 <= self.k_max <= 14, "whitney.k_max must lie in [3, 14]")
        _check(0 <= self.samples <= 64, "whitney.samples must lie in [0, 64]")


@dataclass(frozen=True)
class DimensionConfig:
    eps_min: float = 1e-3
    eps_max: float = 1e-1
    count: int = 7

    def __post_init__(self):
        _check(0 < self.eps_min < self.eps_max <= 0.5, "dimension needs 0 < eps_min < eps_max <= 0.5")
        _check(self.count >= 6, "dimension.count must be at least 6")


@dataclass(frozen=True)
class HeatConfig:
    m: int = 60
    M: float | None = None
    t_lo: float = 0.01
    t_hi: float = 0.1

    def __post_init__(self):
        _check(2 <= self.m <= 500, "heatkernel.m must lie in [2, 500]")
        _check(self.M is None or self.M > 0, "heatkernel.M must be positive")
        _check(0 < self.t_lo < self.t_hi, "heatkernel needs 0 < t_lo < t_hi")


@dataclass(frozen=True)
class SobolevConfig:
    q: tuple[float, ...] = (4.0,)
    hs: tuple[float, ...] = (1 / 32, 1 / 64, 1 / 128)
    restarts: int = 3
    sigma: float = 0.5

    def __post_init__(self):
        _check(all(2 < q <= 10 for q in self.q), "sobolev.q values must lie in (2, 10]")
        _check(len(self.hs) >= 3 and all(h > 0 for h in self.hs), "sobolev.hs needs 3 positive values")
        _check(0 <= self.restarts <= 50, "sobolev.restarts must lie in [0, 50]")
        _check(0 < self.sigma <= 1, "sobolev.sigma must lie in (0, 1]")


@dataclass(frozen=True)
class PerturbConfig:
    family: str = "graph_shrink"
    eps: tuple[float, ...] = (0.01, 0.02, 0.04, 0.08)
    n_max: int = 8
    gamma: float | None = None
    atlas: str = "none"
    ramp_width: float | None = None
    h: float | None = None
    sigma: float = 1.0

    def __post_init__(self):
        _check(
            self.family in ("graph_shrink", "collar_removal", "deformation"),
            "perturb.family must be graph_shrink, collar_removal or deformation",
        )
        _check(len(self.eps) >= 1 and all(0 < e < 0.5 for e in self.eps), "perturb.eps values must lie in (0, 0.5)")
        _check(1 <= self.n_max <= 40, "perturb.n_max must lie in [1, 40]")
        _check(self.gamma is None or 0 < self.gamma <= 1, "perturb.gamma must lie in (0, 1]")
        _check(self.atlas in ("none", "square", "single"), "perturb.atlas must be none, square or single")
        _check(self.h is None or self.h > 0, "perturb.h must be positive")
        _check(self.sigma > 0, "perturb.sigma must be positive")


@dataclass(frozen=True)
class VerifyConfig:
    n_max: int = 8
    eps: tuple[float, ...] = (0.02, 0.04, 0.08)
    k_max: int = 10
    M: float | None = None
    m: int = 60

    def __post_init__(self):
        _check(1 <= self.n_max < self.m, "verify.n_max must lie in [1, m)")
        _check(all(0 < e < 0.5 for e in self.eps) and len(self.eps) >= 2, "verify.eps needs 2+ values in (0, 0.5)")
        _check(3 <= self.k_max <= 14, "verify.k_max must lie in [3, 14]")
        _check(self.M is None or self.M > 0, "verify.M must be positive")


_SECTIONS = {
    "spectrum": SpectrumConfig,
    "whitney": WhitneyConfig,
    "dimension": DimensionConfig,
    "heatkernel": HeatConfig,
    "sobolev": SobolevConfig,
    "perturb": PerturbConfig,
    "verify": VerifyConfig,
}


def _section(cls, table: dict, name: str):
    known = {f.name: f for f in fields(cls)}
    extra = set(table) - set(known)
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in [{name}]")
    kw = {}
    for k, v in table.items():
        if isinstance(v, list):
            v = tuple(float(x) for x in v)
        elif k in ("m", "k_max", "count", "n_max", "samples", "restarts"):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"[{name}].{k} must be an integer")
        elif isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if k == "q" and not isinstance(v, tuple):
            v = (float(v),)
        kw[k] = v
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    domain: DomainSpec = field(default_factory=DomainSpec)
    seed: int = 0
    jobs: int = 1
    out: str = "results"
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    whitney: WhitneyConfig = field(default_factory=WhitneyConfig)
    dimension: DimensionConfig = field(default_factory=DimensionConfig)
    heatkernel: HeatConfig = field(default_factory=HeatConfig)
    sobolev: SobolevConfig = field(default_factory=SobolevConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    def __post_init__(self):
        _check(self.seed >= 0, "seed must be non-negative")
        _check(1 <= self.jobs <= 64, "jobs must lie in [1, 64]")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        version = data.pop("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config version {version} is not supported (expected {SCHEMA_VERSION})")
        allowed = {"domain", "seed", "jobs", "out", *_SECTIONS}
        extra = set(data) - allowed
        if extra:
            raise ConfigError(f"unknown top-level key(s) {sorted(extra)}")
        kw: dict = {}
        if "domain" in data:
            if not isinstance(data["domain"], dict):
                raise ConfigError("[domain] must be a table")
            kw["domain"] = DomainSpec.from_table(data["domain"])
        for k in ("seed", "jobs"):
            if k in data:
                if not isinstance(data[k], int) or isinstance(data[k], bool):
                    raise ConfigError(f"{k} must be an integer")
                kw[k] = data[k]
        if "out" in data:
            kw["out"] = str(data["out"])
        for name, sec in _SECTIONS.items():
            if name in data:
                if not isinstance(data[name], dict):
                    raise ConfigError(f"[{name}] must be a table")
                kw[name] = _section(sec, data[name], name)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = self.domain.to_dict()
        d["version"] = SCHEMA_VERSION
        return d

    def digest(self) -> str:
        # the output directory does not change any result
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    raise TypeError(f"not serialisable: {v!r}")


def _read_toml(path: Path) -> dict:
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an experiment config file."""
    return ExperimentConfig.from_dict(_read_toml(Path(path)))


def load_domain(name_or_path: str) -> DomainSpec:
    """A preset kind name or a TOML file holding a ``[domain]`` table."""
    if name_or_path in _DOMAIN_KEYS:
        return DomainSpec(name_or_path)
    path = Path(name_or_path)
    if not path.suffix:
        raise ConfigError(
            f"{name_or_path!r} is neither a domain kind {sorted(_DOMAIN_KEYS)} nor a file"
        )
    data = _read_toml(path)
    table = data.get("domain", data)
    if not isinstance(table, dict):
        raise ConfigError(f"{path}: [domain] must be a table")
    if "domain" in data:
        ExperimentConfig.from_dict(data)  # validate the rest strictly as well
    return DomainSpec.from_table(table)
