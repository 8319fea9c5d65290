"""Run configuration: YAML files with a strict, versioned schema.

Every block maps onto a dataclass; keys not declared there are rejected so
that a typo never silently falls back to a default.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..manifold import Sphere, Torus, conformal_modes, MetricSpec, sphere
from ..field import TorusGrid
from ..potential import Potential, double_well, polynomial

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ManifoldBlock:
    kind: str = "torus"
    d: int = 2
    N: int = 64
    G: list | None = None
    phi: list | None = None
    R: float = 1.0
    L: int = 16

    def build(self):
        if self.kind == "sphere":
            return sphere(R=float(self.R), L=int(self.L))
        if self.kind != "torus":
            raise ConfigError(f"manifold.kind must be torus or sphere, got {self.kind!r}")
        d, N = int(self.d), int(self.N)
        if d not in (2, 3):
            raise ConfigError("manifold.d must be 2 or 3")
        if N < 16 or N & (N - 1):
            raise ConfigError("manifold.N must be a power of two >= 16")
        G = np.eye(d) if self.G is None else np.asarray(self.G, dtype=float).reshape(d, d)
        grid = TorusGrid(d, N)
        phi = None
        if self.phi:
            phi = conformal_modes(grid, [(tuple(k), float(a)) for k, a in self.phi])
        try:
            return Torus(grid, MetricSpec(G=G, phi=phi))
        except ValueError as exc:
            raise ConfigError(f"manifold: {exc}") from None


@dataclass
class PotentialBlock:
    kind: str = "double_well"
    coefficients: list | None = None
    p: float | None = None
    K1: float | None = None
    K2: float | None = None
    validation_range: list = field(default_factory=lambda: [-10.0, 10.0])
    validation_samples: int = 2001

    def build(self) -> Potential:
        if self.kind == "double_well":
            kw = {k: float(v) for k, v in (("p", self.p), ("K1", self.K1), ("K2", self.K2))
                  if v is not None}
            return double_well(**kw)
        if self.kind == "polynomial":
            if not self.coefficients:
                raise ConfigError("potential.coefficients required for kind=polynomial")
            return polynomial(self.coefficients, p=self.p, K1=self.K1, K2=self.K2,
                              fit_range=tuple(self.validation_range))
        raise ConfigError(f"potential.kind must be double_well or polynomial, got {self.kind!r}")


@dataclass
class SolverBlock:
    tol: float = 1e-10
    max_iter: int = 50
    damping: bool = True
    max_halvings: int = 20
    flow_dt: float = 1.0
    flow_steps: int = 40
    bracket_width: float = 1e-6

    def newton_options(self) -> dict:
        return {"tol": self.tol, "max_iter": self.max_iter, "damping": self.damping,
                "max_halvings": self.max_halvings}


@dataclass
class InitBlock:
    kind: str = "constant"
    amplitude: float = 0.5
    k: list = field(default_factory=lambda: [1, 0])
    lam: float = 0.0


@dataclass
class SolveParams:
    eps: float = 1.0
    nu: float = 0.0
    init: InitBlock = field(default_factory=InitBlock)
    flow: bool = False


@dataclass
class SweepParams:
    nu: float = 0.1
    eps: list | None = None
    eps_min: float = 0.10
    eps_max: float = 0.20
    eps_step: float = 1e-3
    branch: str = "constant"
    init: InitBlock = field(default_factory=InitBlock)
    j_max: int = 4
    dip_rtol: float = 1e-4

    def grid(self) -> list[float]:
        if self.eps is not None:
            return [float(e) for e in self.eps]
        count = int(round((self.eps_max - self.eps_min) / self.eps_step)) + 1
        return [float(e) for e in np.linspace(self.eps_min, self.eps_max, count)]


@dataclass
class DegenerateEpsParams:
    nu: float = 0.1
    j_max: int = 4


@dataclass
class CalculusParams:
    samples: int = 50
    N: int = 16
    steps: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    rtol: float = 1e-6


@dataclass
class ProbeParams:
    samples: int = 200
    delta: float = 0.2
    eps_range: list = field(default_factory=lambda: [0.1, 0.3])
    nu: float = 0.1
    openness_offset: float = 1e-3
    openness_samples: int | None = None
    symmetry_amplitude: float = 0.05
    symmetry_eps_factor: float = 0.9


@dataclass
class CensusParams:
    eps: float = 0.1
    nu: float = 0.0
    starts: int = 8
    kmax: int = 3
    match_tol: float = 1e-6


@dataclass
class Oracle1dParams:
    eps: float = 0.1
    nu: float = 0.0
    period: float = 1.0
    mesh: int = 256


EXPERIMENTS = {
    "solve": SolveParams,
    "sweep": SweepParams,
    "degenerate-eps": DegenerateEpsParams,
    "check-calculus": CalculusParams,
    "probe-generic": ProbeParams,
    "census": CensusParams,
    "oracle1d": Oracle1dParams,
}
STOCHASTIC = {"check-calculus", "probe-generic", "census"}


@dataclass
class RunConfig:
    schema_version: int
    experiment: str
    params: Any
    manifold: ManifoldBlock = field(default_factory=ManifoldBlock)
    potential: PotentialBlock = field(default_factory=PotentialBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    seed: int | None = None
    output: str | None = None

    def to_dict(self) -> dict:
        out = {
            "schema_version": self.schema_version,
            "manifold": dataclasses.asdict(self.manifold),
            "potential": dataclasses.asdict(self.potential),
            "solver": dataclasses.asdict(self.solver),
            "experiment": {"kind": self.experiment, **dataclasses.asdict(self.params)},
            "seed": self.seed,
        }
        if self.output is not None:
            out["output"] = self.output
        return out

    def input_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()

    def rng(self) -> np.random.Generator:
        if self.seed is None:
            raise ConfigError(f"experiment {self.experiment!r} needs a seed")
        return np.random.default_rng(int(self.seed))


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory if known[name].default_factory is not dataclasses.MISSING else None
        sub = default() if default is not None else None
        if dataclasses.is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, f"{path}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(data: dict, seed: int | None = None, experiment: str | None = None) -> RunConfig:
    """Validate a parsed config mapping.

    ``seed`` and ``experiment`` override the file when given; the
    experiment kind must agree with the file's kind if both are present.
    """
    data = dict(data or {})
    allowed = {"schema_version", "manifold", "potential", "solver", "experiment", "seed", "output"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    exp = dict(data.get("experiment") or {})
    kind = exp.pop("kind", None)
    if experiment is not None:
        if kind is not None and kind != experiment:
            raise ConfigError(f"config describes experiment {kind!r}, not {experiment!r}")
        kind = experiment
    if kind not in EXPERIMENTS:
        raise ConfigError(f"experiment.kind must be one of {sorted(EXPERIMENTS)}, got {kind!r}")
    cfg = RunConfig(
        schema_version=version, experiment=kind,
        params=_build(EXPERIMENTS[kind], exp, "experiment"),
        manifold=_build(ManifoldBlock, data.get("manifold"), "manifold"),
        potential=_build(PotentialBlock, data.get("potential"), "potential"),
        solver=_build(SolverBlock, data.get("solver"), "solver"),
        seed=data.get("seed") if seed is None else seed,
        output=data.get("output"),
    )
    if cfg.seed is not None:
        cfg.seed = int(cfg.seed)
        if not 0 <= cfg.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
    if kind in STOCHASTIC and cfg.seed is None:
        raise ConfigError(f"experiment {kind!r} is stochastic and needs a seed")
    cfg.manifold.build()
    cfg.potential.build()
    return cfg


def load_config(path, seed: int | None = None, experiment: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(data, seed=seed, experiment=experiment)
