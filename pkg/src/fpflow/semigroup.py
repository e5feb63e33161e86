"""The flow S(t): backward-Euler mild solution and the exponential formula.

A trajectory advances a probability density by repeated resolvent steps with
lam equal to the time step.  Snapshots are recorded at a configurable stride
together with running left-endpoint time accumulators, from which ergodic
averages are formed later without revisiting every step.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .discretization import (
    DensityField,
    GridSpec,
    WeightedNormContext,
    l1_distance,
    mass,
    read_field_binary,
    weighted_norm,
    write_field_binary,
)
from .resolvent import NewtonError, ResolventResult, SolverConfig, resolvent

__all__ = [
    "Trajectory",
    "PositivityError",
    "step",
    "evolve",
    "exponential_formula",
    "check_contraction",
    "check_semigroup_property",
    "write_trajectory",
    "read_trajectory",
]

MASS_DRIFT_TOL = 1e-12
NEGATIVE_PART_TOL = 1e-10


class PositivityError(RuntimeError):
    """A step produced a mass or sign violation too large to be roundoff."""


@dataclass
class Trajectory:
    """Recorded flow: snapshot fields plus running Cesaro accumulators.

    times[k] is the model time of snapshots[k]; cesaro_acc[k] holds the
    left-endpoint sum of step-weighted fields over [0, times[k]), so the
    Cesaro mean at a recorded time t > 0 is cesaro_acc[k] / t.  The
    accumulator is updated every step regardless of the snapshot stride.
    """

    grid: GridSpec
    step_size: float
    times: list[float]
    snapshots: list[DensityField]
    cesaro_acc: list[np.ndarray]
    config_fingerprint: str
    complete: bool = True
    diagnostics: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.times or self.times[0] != 0.0:
            raise ValueError("a trajectory must start at time 0")
        if len(self.times) != len(self.snapshots) or len(self.times) != len(self.cesaro_acc):
            raise ValueError("times, snapshots and accumulators must align")

    @property
    def span(self) -> float:
        return self.times[-1]

    def checkpoint_index(self, t: float) -> int:
        """Index of the recorded time nearest t; t must lie inside the span."""
        if t < -1e-12 or t > self.span + 0.5 * self.step_size:
            raise ValueError(f"t={t:g} lies outside the recorded span [0, {self.span:g}]")
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > 0.5 * self.step_size + 1e-12:
            raise ValueError(
                f"t={t:g} is not within half a step of a recorded time "
                f"(nearest is {self.times[k]:g}; adjust the snapshot stride)"
            )
        return k


def _fingerprint(u0: DensityField, cs, cfg: SolverConfig, h: float, T: float) -> str:
    payload = {
        "family": getattr(cs, "name", "custom"),
        "family_params": getattr(cs, "params", {}),
        "grid": [u0.grid.dim, u0.grid.cells_per_axis, u0.grid.half_width],
        "h": h,
        "T": T,
        "cfg": {
            "eps_schedule": list(cfg.eps_schedule),
            "newton_tol": cfg.newton_tol,
            "max_newton_iters": cfg.max_newton_iters,
            "damping": cfg.damping,
            "continuation_tol": cfg.continuation_tol,
            "polish_iters": cfg.polish_iters,
        },
        "u0": hashlib.sha256(u0.values.tobytes()).hexdigest(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _advance(u: DensityField, cs, grid: GridSpec, cfg: SolverConfig) -> tuple[DensityField, ResolventResult]:
    """One backward-Euler step with the roundoff clip-and-renormalize policy.

    Negative values are clipped to zero and the mass renormalized only when
    the induced mass drift is below 1e-12; anything larger raises instead of
    being silently repaired.
    """
    result = resolvent(u, cs, grid, cfg)
    y = result.solution
    if u.kind != "probability":
        return y, result
    vals = y.values
    vol = grid.cell_volume
    m = float(vals.sum()) * vol
    if abs(m - 1.0) > MASS_DRIFT_TOL:
        raise PositivityError(f"mass drifted to {m!r} in one step (tolerance 1e-12)")
    if vals.min() < 0.0:
        clipped = np.maximum(vals, 0.0)
        clip_drift = float((clipped - vals).sum()) * vol
        if abs(clip_drift) > MASS_DRIFT_TOL:
            raise PositivityError(
                f"negative part carries mass {clip_drift!r}, too large to clip (tolerance 1e-12)"
            )
        vals = clipped
    vals = vals / (float(vals.sum()) * vol)
    out = DensityField(grid, vals, kind="probability")
    return out, result


def step(u: DensityField, cs, grid: GridSpec, cfg: SolverConfig, h: float) -> DensityField:
    """One implicit step of size h: the resolvent with lam set to h."""
    if h <= 0:
        raise ValueError("step size must be positive")
    out, _ = _advance(u, cs, grid, replace(cfg, lam=h))
    return out


def evolve(
    u0: DensityField,
    T: float,
    h: float,
    cs,
    grid: GridSpec,
    cfg: SolverConfig,
    n_snapshots: int = 64,
    norm_ctx: WeightedNormContext | None = None,
    diag_sink=None,
) -> Trajectory:
    """Run ceil(T/h) implicit steps, recording snapshots at a uniform stride.

    The Cesaro accumulator is updated every step.  If norm_ctx is given and
    the initial weighted norm exceeds eta, a warning lands in diagnostics.
    A failed step returns the partial trajectory with complete=False.
    """
    if T <= 0 or h <= 0:
        raise ValueError("T and h must be positive")
    n_steps = math.ceil(T / h)
    stride = max(1, n_steps // max(1, n_snapshots))
    step_cfg = replace(cfg, lam=h)
    fingerprint = _fingerprint(u0, cs, cfg, h, T)

    diagnostics: list[dict] = []
    if norm_ctx is not None:
        w0 = weighted_norm(u0, norm_ctx)
        if w0 > norm_ctx.eta:
            diagnostics.append(
                {"warning": f"initial weighted norm {w0!r} exceeds eta {norm_ctx.eta!r}"}
            )

    times = [0.0]
    snapshots = [u0.copy()]
    acc = np.zeros_like(u0.values)
    cesaro = [acc.copy()]
    u = u0
    complete = True
    for k in range(n_steps):
        acc += u.values * h  # left endpoint of [k*h, (k+1)*h)
        try:
            u, result = _advance(u, cs, grid, step_cfg)
        except (NewtonError, PositivityError) as err:
            diagnostics.append({"step": k, "error": str(err)})
            complete = False
            break
        rec = {
            "step": k,
            "t": (k + 1) * h,
            "stages": [s.as_dict() for s in result.stages],
            "eps_converged": result.eps_converged,
            "eps_floor_active": result.eps_floor_active,
        }
        if diag_sink is not None:
            diag_sink(rec)
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            times.append((k + 1) * h)
            snapshots.append(u)
            cesaro.append(acc.copy())
    return Trajectory(
        grid=grid,
        step_size=h,
        times=times,
        snapshots=snapshots,
        cesaro_acc=cesaro,
        config_fingerprint=fingerprint,
        complete=complete,
        diagnostics=diagnostics,
    )


def exponential_formula(
    u0: DensityField, t: float, n: int, cs, grid: GridSpec, cfg: SolverConfig
) -> DensityField:
    """Apply the resolvent with lam = t/n exactly n times.

    Shares the stepping code with evolve, so evolve(u0, t, t/n) reproduces
    the same composition bit for bit.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if t <= 0:
        raise ValueError("t must be positive")
    step_cfg = replace(cfg, lam=t / n)
    u = u0
    for _ in range(n):
        u, _ = _advance(u, cs, grid, step_cfg)
    return u


def check_contraction(
    u0: DensityField,
    v0: DensityField,
    T: float,
    h: float,
    cs,
    grid: GridSpec,
    cfg: SolverConfig,
    slack: float = 1e-10,
):
    """Distance series between two trajectories and its per-step margins.

    Returns (times, distances, nonincreasing) where nonincreasing holds iff
    each recorded distance exceeds its successor minus the slack.
    """
    ta = evolve(u0, T, h, cs, grid, cfg, n_snapshots=math.ceil(T / h))
    tb = evolve(v0, T, h, cs, grid, cfg, n_snapshots=math.ceil(T / h))
    dists = [l1_distance(a, b) for a, b in zip(ta.snapshots, tb.snapshots)]
    nonincreasing = all(d2 <= d1 + slack for d1, d2 in zip(dists, dists[1:]))
    return ta.times, dists, nonincreasing


def check_semigroup_property(
    u0: DensityField, t: float, s: float, h: float, cs, grid: GridSpec, cfg: SolverConfig
) -> float:
    """|S_h(t+s)u0 - S_h(t) S_h(s) u0| in L1.

    Exactly zero when t and s are integer multiples of h (the two sides are
    the same composition); otherwise the rounding of step counts makes the
    comparison O(h) and the value is reported, not asserted.
    """
    both = evolve(u0, t + s, h, cs, grid, cfg, n_snapshots=1).snapshots[-1]
    first = evolve(u0, s, h, cs, grid, cfg, n_snapshots=1).snapshots[-1]
    second = evolve(first, t, h, cs, grid, cfg, n_snapshots=1).snapshots[-1]
    return l1_distance(both, second)


# ---------------------------------------------------------------------------
# trajectory artifacts
# ---------------------------------------------------------------------------


def write_trajectory(
    traj: Trajectory,
    outdir,
    config_hash: str = "",
    tool_version: str = "",
    norm_ctx: WeightedNormContext | None = None,
) -> dict:
    """Write snapshots, accumulators and a manifest under outdir; returns the manifest."""
    os.makedirs(outdir, exist_ok=True)
    snap_dir = os.path.join(outdir, "snapshots")
    ces_dir = os.path.join(outdir, "cesaro")
    os.makedirs(snap_dir, exist_ok=True)
    os.makedirs(ces_dir, exist_ok=True)
    snap_files, ces_files = [], []
    for k, (snap, acc) in enumerate(zip(traj.snapshots, traj.cesaro_acc)):
        sname = f"snap_{k:06d}.bin"
        cname = f"ces_{k:06d}.bin"
        write_field_binary(snap, os.path.join(snap_dir, sname))
        write_field_binary(DensityField(traj.grid, acc, kind="signed"), os.path.join(ces_dir, cname))
        snap_files.append(sname)
        ces_files.append(cname)
    manifest = {
        "schema_version": 1,
        "tool_version": tool_version,
        "config_hash": config_hash,
        "config_fingerprint": traj.config_fingerprint,
        "grid": {
            "dim": traj.grid.dim,
            "cells_per_axis": traj.grid.cells_per_axis,
            "half_width": traj.grid.half_width,
        },
        "step_size": traj.step_size,
        "complete": traj.complete,
        "times": traj.times,
        "masses": [mass(s) for s in traj.snapshots],
        "l1_norms": [float(np.abs(s.values).sum()) * traj.grid.cell_volume for s in traj.snapshots],
        "weighted_norms": (
            [weighted_norm(s, norm_ctx) for s in traj.snapshots] if norm_ctx is not None else None
        ),
        "snapshot_files": snap_files,
        "cesaro_files": ces_files,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_trajectory(outdir) -> tuple[Trajectory, dict]:
    with open(os.path.join(outdir, "manifest.json")) as fh:
        manifest = json.load(fh)
    g = manifest["grid"]
    grid = GridSpec(g["dim"], g["half_width"], g["cells_per_axis"])
    snapshots = [
        read_field_binary(os.path.join(outdir, "snapshots", name))
        for name in manifest["snapshot_files"]
    ]
    cesaro = [
        read_field_binary(os.path.join(outdir, "cesaro", name)).values
        for name in manifest["cesaro_files"]
    ]
    traj = Trajectory(
        grid=grid,
        step_size=manifest["step_size"],
        times=list(manifest["times"]),
        snapshots=snapshots,
        cesaro_acc=cesaro,
        config_fingerprint=manifest.get("config_fingerprint", ""),
        complete=manifest.get("complete", True),
    )
    return traj, manifest
