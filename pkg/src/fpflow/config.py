"""Declarative run configuration: schema, validation, hashing, field builders.

A run is described by one JSON document (schema_version 1).  The effective
configuration (file contents plus the seed) is hashed, and every output file
carries that hash together with the tool version, so identical inputs can be
checked for byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, make_family
from .discretization import DensityField, GridSpec, read_field_binary
from .ergodic import Observable
from .resolvent import SolverConfig

__all__ = [
    "RunConfig",
    "ConfigError",
    "load_config",
    "config_hash",
    "build_initial_field",
    "build_observable",
    "gaussian_field",
    "uniform_field",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """The configuration file is malformed or violates a precondition."""


@dataclass
class RunConfig:
    """Parsed and validated run configuration."""

    raw: dict
    seed: int
    family_id: str
    family_params: dict
    grid: GridSpec
    solver: SolverConfig
    initial: dict
    evolution: dict
    ergodic: dict
    particles: dict
    hypotheses: dict
    compare: dict

    def coefficient_set(self) -> CoefficientSet:
        return make_family(self.family_id, self.grid.dim, self.family_params)

    @property
    def hash(self) -> str:
        return config_hash(self.raw, self.seed)


def config_hash(raw: dict, seed: int) -> str:
    payload = dict(raw)
    payload["_seed"] = seed
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def load_config(path, seed: int = 0) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return parse_config(raw, seed)


def parse_config(raw: dict, seed: int = 0) -> RunConfig:
    _require(isinstance(raw, dict), "config must be a JSON object")
    version = raw.get("schema_version")
    _require(version == SCHEMA_VERSION, f"schema_version must be {SCHEMA_VERSION}, got {version!r}")

    fam = raw.get("family")
    _require(isinstance(fam, dict) and "id" in fam, "config needs a family block with an id")
    family_id = fam["id"]
    family_params = dict(fam.get("params", {}))

    g = raw.get("grid")
    _require(isinstance(g, dict), "config needs a grid block")
    try:
        grid = GridSpec(
            int(g.get("dim", 1)), float(g.get("half_width", 6.0)), int(g.get("cells_per_axis", 64))
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad grid block: {err}") from err

    s = dict(raw.get("solver", {}))
    try:
        solver = SolverConfig(
            lam=float(s.get("lam", 0.05)),
            eps_schedule=tuple(s.get("eps_schedule", (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6))),
            newton_tol=(None if s.get("newton_tol") is None else float(s["newton_tol"])),
            max_newton_iters=int(s.get("max_newton_iters", 60)),
            damping=float(s.get("damping", 0.5)),
            continuation_tol=float(s.get("continuation_tol", 1e-8)),
            lam_max=float(s.get("lam_max", 1.0)),
            polish_iters=int(s.get("polish_iters", 1)),
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad solver block: {err}") from err

    evolution = dict(raw.get("evolution", {}))
    if evolution:
        _require(float(evolution.get("T", 1.0)) > 0, "evolution.T must be positive")
        _require(float(evolution.get("h", 0.05)) > 0, "evolution.h must be positive")

    particles = dict(raw.get("particles", {}))
    if particles:
        _require(int(particles.get("count", 1)) >= 1, "particles.count must be at least 1")
        _require(float(particles.get("dt", 1e-3)) > 0, "particles.dt must be positive")

    return RunConfig(
        raw=raw,
        seed=seed,
        family_id=family_id,
        family_params=family_params,
        grid=grid,
        solver=solver,
        initial=dict(raw.get("initial", {"kind": "gaussian"})),
        evolution=evolution,
        ergodic=dict(raw.get("ergodic", {})),
        particles=particles,
        hypotheses=dict(raw.get("hypotheses", {})),
        compare=dict(raw.get("compare", {})),
    )


def gaussian_field(grid: GridSpec, mean=0.0, sigma=1.0) -> DensityField:
    """Cell-averaged box-projected Gaussian with diagonal covariance, mass 1.

    Cell averages come from exact per-axis CDF differences, so the field is
    the L2 projection of the restricted Gaussian onto the grid up to the
    final renormalization.
    """
    from math import erf, sqrt

    mean = np.broadcast_to(np.asarray(mean, dtype=float), (grid.dim,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (grid.dim,))
    if np.any(sigma <= 0):
        raise ConfigError("gaussian sigma must be positive")
    h = grid.spacing
    edges = -grid.half_width + h * np.arange(grid.cells_per_axis + 1)
    vals = np.ones(grid.shape)
    for k in range(grid.dim):
        z = (edges - mean[k]) / (sigma[k] * sqrt(2.0))
        cdf = np.array([0.5 * (1.0 + erf(t)) for t in z])
        axis_avg = np.diff(cdf) / h
        shape = tuple(-1 if j == k else 1 for j in range(grid.dim))
        vals = vals * axis_avg.reshape(shape)
    vals = vals / (vals.sum() * grid.cell_volume)
    return DensityField(grid, vals, kind="probability")


def uniform_field(grid: GridSpec) -> DensityField:
    vals = np.full(grid.shape, 1.0 / (2.0 * grid.half_width) ** grid.dim)
    return DensityField(grid, vals, kind="probability")


def build_initial_field(cfg: RunConfig) -> DensityField:
    spec = cfg.initial
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        return gaussian_field(cfg.grid, spec.get("mean", 0.0), spec.get("sigma", 1.0))
    if kind == "uniform":
        return uniform_field(cfg.grid)
    if kind == "file":
        _require("path" in spec, "initial kind 'file' needs a path")
        u = read_field_binary(spec["path"])
        _require(u.grid == cfg.grid, "initial field file does not match the configured grid")
        _require(u.kind == "probability", "initial field file must hold a probability density")
        return u
    raise ConfigError(f"unknown initial condition kind {kind!r}")


def build_observable(grid: GridSpec, spec: dict) -> Observable:
    kind = spec.get("kind", "moment")
    label = spec.get("label")
    if kind == "ones":
        return Observable.ones(grid, label or "1")
    if kind == "moment":
        axis = int(spec.get("axis", 0))
        power = int(spec.get("power", 2))
        _require(0 <= axis < grid.dim, f"observable axis {axis} out of range")
        return Observable.moment(grid, axis, power, label)
    if kind == "indicator":
        _require("lo" in spec and "hi" in spec, "indicator observable needs lo and hi")
        return Observable.indicator_box(grid, spec["lo"], spec["hi"], label)
    raise ConfigError(f"unknown observable kind {kind!r}")


def default_t_values(T: float, count: int = 8) -> list[float]:
    """Geometric checkpoint times in (0, T] for Cesaro studies."""
    lo = T / 2**(count - 1)
    return [lo * 2**k for k in range(count)]


def ceil_steps(T: float, h: float) -> int:
    return math.ceil(T / h)
