"""Experiment configuration: one YAML file with nested blocks.

Every block rejects unknown keys and validates ranges on load, so a bad file
fails before any solve starts. ``to_dict`` followed by ``from_dict`` is the
identity.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import asdict, dataclass, field, fields

import yaml

from .energy import EnergyDensity, NonConvexDensityWarning
from .grid import Domain
from .problems import CATALOG, build_problem
from .solver import SolverConfig


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _take(cls, data, block):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{block}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    extra = sorted(set(data) - names)
    if extra:
        raise ConfigError(f"{block}: unknown keys {extra}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{block}: {exc}") from exc


def _profile(spec, what):
    if not isinstance(spec, dict) or set(spec) - {"name", "params"} or "name" not in spec:
        raise ValueError(f"{what} must be {{name: ..., params: {{...}}}}")
    name, params = spec["name"], dict(spec.get("params") or {})
    if name not in CATALOG:
        raise ValueError(f"unknown {what} profile {name!r}; choose from {sorted(CATALOG)}")
    extra = set(params) - set(CATALOG[name][1])
    if extra:
        raise ValueError(f"{what} profile {name!r} does not take {sorted(extra)}")
    for k, v in params.items():
        if k == "q" and isinstance(v, list):
            params[k] = [float(c) for c in v]
        else:
            params[k] = float(v)
    return {"name": name, "params": params}


@dataclass
class ProblemBlock:
    domain: dict = field(default_factory=lambda: {"shape": "interval", "bounds": [[-1.0, 1.0]]})
    h: float = 1 / 128
    p: float = 2.0
    gamma: float = 0.5
    beta: float = 1.0
    delta: float = 1.0
    obstacle: dict = field(default_factory=lambda: {"name": "zero", "params": {}})
    boundary: dict = field(default_factory=lambda: {"name": "benchmark", "params": {}})

    def __post_init__(self):
        self.h, self.p, self.gamma = float(self.h), float(self.p), float(self.gamma)
        self.beta, self.delta = float(self.beta), float(self.delta)
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0 <= self.delta <= 1:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        self.domain = Domain.from_dict(self.domain).to_dict() if isinstance(self.domain, dict) else None
        if self.domain is None:
            raise ValueError("domain must be a mapping")
        self.obstacle = _profile(self.obstacle, "obstacle")
        self.boundary = _profile(self.boundary, "boundary")


@dataclass
class AnalysisBlock:
    x0: list | None = None
    radii: list | None = None
    rho_max: float | None = None
    levels: int = 7
    min_cells: float = 4.0
    q: float | None = None
    k_max: int = 3
    tolerance: float = 0.1
    tol_detach: float | None = None

    def __post_init__(self):
        if self.x0 is not None:
            self.x0 = [float(c) for c in (self.x0 if isinstance(self.x0, list) else [self.x0])]
        if self.radii is not None:
            self.radii = [float(r) for r in self.radii]
            if any(r <= 0 for r in self.radii):
                raise ValueError("radii must be positive")
        if self.levels < 1 or self.k_max < 1:
            raise ValueError("levels and k_max must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.q is not None and not self.q >= 1:
            raise ValueError("q must be >= 1")


@dataclass
class EnergyCheckBlock:
    radii: list = field(default_factory=lambda: [1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 10.0])
    samples_per_radius: int = 64
    pairs: int = 10000
    pair_radius: float = 2.0
    fd_points: int = 1000
    fd_step: float = 1e-5
    fd_tolerance: float = 1e-6

    def __post_init__(self):
        self.radii = [float(r) for r in self.radii]
        if not self.radii or any(r <= 0 for r in self.radii):
            raise ValueError("radii must be a nonempty list of positive values")
        if min(self.samples_per_radius, self.pairs, self.fd_points) < 1:
            raise ValueError("sample counts must be positive")


@dataclass
class SweepBlock:
    p: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    h: list = field(default_factory=list)
    workers: int = 4

    def __post_init__(self):
        for name in ("p", "gamma", "beta", "h"):
            val = getattr(self, name)
            setattr(self, name, [float(v) for v in (val if isinstance(val, list) else [val])])
        if self.workers < 1:
            raise ValueError("workers must be positive")

    def cells(self, problem: ProblemBlock):
        """Cartesian product in (p, gamma, beta, h) order; empty lists fall
        back to the problem block's value."""
        axes = [getattr(self, k) or [getattr(problem, k)] for k in ("p", "gamma", "beta", "h")]
        if not any(getattr(self, k) for k in ("p", "gamma", "beta", "h")):
            return []
        return [dict(zip(("p", "gamma", "beta", "h"), c)) for c in itertools.product(*axes)]


@dataclass
class OutputBlock:
    dir: str = "out"


_BLOCKS = {
    "problem": ProblemBlock,
    "analysis": AnalysisBlock,
    "energy_check": EnergyCheckBlock,
    "sweep": SweepBlock,
    "output": OutputBlock,
}


@dataclass
class ExperimentConfig:
    problem: ProblemBlock | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)
    density: dict | None = None
    energy_check: EnergyCheckBlock = field(default_factory=EnergyCheckBlock)
    sweep: SweepBlock | None = None
    output: OutputBlock = field(default_factory=OutputBlock)
    deterministic: bool = True

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping of blocks")
        extra = sorted(set(data) - {f.name for f in fields(cls)})
        if extra:
            raise ConfigError(f"unknown top-level keys {extra}")
        if data.get("deterministic", True) is not True:
            raise ConfigError("deterministic: runs are always deterministic; the flag cannot be turned off")
        kw = {}
        for name, block in _BLOCKS.items():
            if name in data and data[name] is not None:
                kw[name] = _take(block, data[name], name)
        if "solver" in data and data["solver"] is not None:
            kw["solver"] = _take(SolverConfig, data["solver"], "solver")
        if data.get("density") is not None:
            try:
                with warnings.catch_warnings():
                    # re-raised where the density is used (check-energy reports it)
                    warnings.simplefilter("ignore", NonConvexDensityWarning)
                    dens = EnergyDensity.from_dict(data["density"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"density: {exc}") from exc
            kw["density"] = dens.to_dict()
        cfg = cls(**kw)
        cfg._cross_check()
        return cfg

    def _cross_check(self):
        if self.problem is None or self.density is None:
            return
        dens = self.density_object(quiet=True)
        if abs(dens.p - self.problem.p) > 1e-12:
            raise ConfigError(f"density p={dens.p} differs from problem p={self.problem.p}")
        dim = Domain.from_dict(self.problem.domain).dim
        if dens.dim is not None and dens.dim != dim:
            raise ConfigError(f"density lives in {dens.dim} dimensions, domain in {dim}")

    def to_dict(self):
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            if f.name == "solver":
                val = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(val).items()}
            elif hasattr(val, "__dataclass_fields__"):
                val = asdict(val)
            out[f.name] = val
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}") from exc
        return cls.from_dict(data or {})

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_yaml())

    def density_object(self, quiet=False):
        if self.density is None:
            return None
        with warnings.catch_warnings():
            if quiet:
                warnings.simplefilter("ignore", NonConvexDensityWarning)
            return EnergyDensity.from_dict(self.density)

    def build_spec(self, **overrides):
        """ProblemSpec for the problem block, optionally overriding p, gamma, beta, h."""
        if self.problem is None:
            raise ConfigError("this command needs a problem block")
        pb = self.problem
        vals = {k: overrides.get(k, getattr(pb, k)) for k in ("p", "gamma", "beta", "h")}
        dens = self.density_object()
        if dens is not None and abs(dens.p - vals["p"]) > 1e-12:
            dens = None if dens.kind == "p-power" else dens
            if dens is not None:
                raise ConfigError("a sweep over p needs the default p-power density")
        try:
            return build_problem(
                Domain.from_dict(pb.domain),
                vals["h"],
                vals["p"],
                vals["gamma"],
                pb.delta,
                (pb.obstacle["name"], pb.obstacle["params"]),
                (pb.boundary["name"], pb.boundary["params"]),
                beta=vals["beta"],
                density=dens,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
