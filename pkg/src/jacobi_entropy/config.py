"""Run configuration: a nested YAML document mapped onto dataclasses.

Example::

    system:
      n: 3
      E: 2.0
      Vc: "0.5*(x1^2 + x2^2 + x3^2)"
      Vtilde: "1 + x1^2"
      lam: 0.001
    critical:
      seeds: [[0.1, 0.0, 0.0]]
    ball:
      r: 0.05
      samples: 10000
      seed: 7
    output:
      dir: out

Every section and key is optional except ``system.n``, ``system.E`` and
``system.Vc``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .geometry import NORMALIZATIONS


@dataclass
class SystemConfig:
    n: int = 0
    E: float = math.nan
    Vc: str = ""
    Vtilde: str | None = None
    lam: float = 0.0
    turning_margin: float | None = None
    k_B: float = 1.0


@dataclass
class CriticalConfig:
    seeds: list | None = None           # default: 3^n lattice around the origin
    half_width: float = 1.0
    grad_tol: float = 1e-10
    max_iter: int = 100
    point: list | None = None           # skip the search and use this point


@dataclass
class CurvatureConfig:
    points: list | None = None           # default: the selected critical point
    normalization: str = "oracle"


@dataclass
class BallConfig:
    r: float = 0.05
    cap: float | None = None
    samples: int = 10000
    seed: int = 0
    rtol: float = 1e-9
    workers: int = 1


@dataclass
class SolverConfig:
    h: float | None = None
    tol: float = 1e-8
    radius: float | None = None          # geodesic radius; defaults to ball.r
    boundary: str = "0"
    degree: int = 6


@dataclass
class VerifyConfig:
    lambdas: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    samples: int = 2000
    rtol: float = 1e-12
    source: str = "solution"             # or "perturbation" (uses system.Vtilde)


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    critical: CriticalConfig = field(default_factory=CriticalConfig)
    curvature: CurvatureConfig = field(default_factory=CurvatureConfig)
    ball: BallConfig = field(default_factory=BallConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def validate(self) -> "RunConfig":
        s = self.system
        if not isinstance(s.n, int) or isinstance(s.n, bool) or s.n < 2:
            raise ConfigError(f"system.n must be an integer >= 2, got {s.n!r}")
        if not math.isfinite(s.E):
            raise ConfigError("system.E is required")
        if not s.Vc:
            raise ConfigError("system.Vc is required")
        if s.turning_margin is not None:
            _positive("system.turning_margin", s.turning_margin)
        _positive("system.k_B", s.k_B)
        _positive("critical.half_width", self.critical.half_width)
        _positive("critical.grad_tol", self.critical.grad_tol)
        _positive_int("critical.max_iter", self.critical.max_iter)
        for name, pts in (("critical.seeds", self.critical.seeds), ("curvature.points", self.curvature.points)):
            if pts is not None:
                _points(name, pts, s.n)
        if self.critical.point is not None:
            _points("critical.point", [self.critical.point], s.n)
        if self.curvature.normalization not in NORMALIZATIONS:
            raise ConfigError(f"curvature.normalization must be one of {NORMALIZATIONS}")
        b = self.ball
        _positive("ball.r", b.r)
        if b.cap is not None:
            _positive("ball.cap", b.cap)
        _positive_int("ball.samples", b.samples)
        _nonneg_int("ball.seed", b.seed)
        _positive("ball.rtol", b.rtol)
        _positive_int("ball.workers", b.workers)
        v = self.solver
        if v.h is not None:
            _positive("solver.h", v.h)
        if v.radius is not None:
            _positive("solver.radius", v.radius)
        _positive("solver.tol", v.tol)
        _nonneg_int("solver.degree", v.degree)
        w = self.verify
        if not w.lambdas:
            raise ConfigError("verify.lambdas must be a non-empty list")
        for lam in w.lambdas:
            _positive("verify.lambdas entry", lam)
        _positive_int("verify.samples", w.samples)
        if w.samples % 2:
            raise ConfigError("verify.samples must be even (antithetic pairs)")
        _positive("verify.rtol", w.rtol)
        if w.source not in ("solution", "perturbation"):
            raise ConfigError("verify.source must be 'solution' or 'perturbation'")
        return self


def _positive(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0 or not math.isfinite(value):
        raise ConfigError(f"{name} must be a positive number, got {value!r}")


def _positive_int(name, value):
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")


def _nonneg_int(name, value):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ConfigError(f"{name} must be a non-negative integer, got {value!r}")


def _points(name, pts, n):
    if not isinstance(pts, list) or not pts:
        raise ConfigError(f"{name} must be a non-empty list of points")
    for p in pts:
        if not isinstance(p, list) or len(p) != n or not all(isinstance(c, (int, float)) for c in p):
            raise ConfigError(f"{name}: each point needs {n} numeric coordinates, got {p!r}")


_FLOATS = {"E", "lam", "turning_margin", "k_B", "half_width", "grad_tol", "r", "cap", "rtol", "h", "tol", "radius"}


def _build(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(sorted(map(str, unknown)))}")
    kwargs = {}
    for key, value in data.items():
        # YAML reads "1e-3" without a dot as a string; accept it for float fields
        if key in _FLOATS and isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{section}.{key} must be a number, got {value!r}") from None
        if key in _FLOATS and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if key in ("Vc", "Vtilde", "boundary") and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = repr(float(value)) if isinstance(value, float) else str(value)
        if key == "lambdas" and isinstance(value, list):
            value = [float(v) if isinstance(v, (int, str)) and not isinstance(v, bool) else v for v in value]
        kwargs[key] = value
    return cls(**kwargs)


_CLASSES = {
    "system": SystemConfig, "critical": CriticalConfig, "curvature": CurvatureConfig, "ball": BallConfig,
    "solver": SolverConfig, "verify": VerifyConfig, "output": OutputConfig,
}


def from_dict(data) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping of sections")
    unknown = set(data) - set(_CLASSES)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(map(str, unknown)))}")
    try:
        parts = {name: _build(cls, data.get(name), name) for name, cls in _CLASSES.items()}
    except TypeError as err:
        raise ConfigError(str(err)) from err
    return RunConfig(**parts)


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"invalid YAML: {err}") from err
    return from_dict(data)


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return loads(text)
