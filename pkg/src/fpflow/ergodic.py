"""Cesaro time averages, empirical omega-limit sets and stationarity probes.

The long-time average itself stands in for the invariant-measure integral:
nothing here constructs a measure on the limit set, only the convergence
behaviour of the averages and the geometry of late-window snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretization import (
    DensityField,
    GridSpec,
    apply_operator,
    l1_distance,
    l1_norm,
)
from .semigroup import Trajectory, step

__all__ = [
    "Observable",
    "OmegaEstimate",
    "cesaro_observable",
    "cesaro_mean_field",
    "cesaro_cauchy_test",
    "estimate_omega",
    "stationary_residual",
    "fixed_point_test",
]


@dataclass
class Observable:
    """Bounded cell-sampled integrand g; F(u) = sum_i g_i u_i h^d."""

    grid: GridSpec
    values: np.ndarray
    label: str = "g"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observable must be bounded (finite sampled values)")

    def __call__(self, u: DensityField) -> float:
        if u.grid != self.grid:
            raise ValueError("observable and field live on different grids")
        return float((self.values * u.values).sum()) * self.grid.cell_volume

    def apply_to_values(self, values: np.ndarray) -> float:
        return float((self.values * values).sum()) * self.grid.cell_volume

    @classmethod
    def moment(cls, grid: GridSpec, axis: int = 0, power: int = 2, label: str | None = None):
        x = grid.cell_centers()[:, axis].reshape(grid.shape)
        return cls(grid, x**power, label or f"x{axis}^{power}")

    @classmethod
    def ones(cls, grid: GridSpec, label: str = "1"):
        return cls(grid, np.ones(grid.shape), label)

    @classmethod
    def indicator_box(cls, grid: GridSpec, lo, hi, label: str | None = None):
        """Indicator of an axis-aligned box, cells weighted by overlap fraction."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (grid.dim,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (grid.dim,))
        h = grid.spacing
        centers = grid.axis_centers()
        frac = np.ones(grid.shape)
        for k in range(grid.dim):
            left = np.maximum(centers - h / 2, lo[k])
            right = np.minimum(centers + h / 2, hi[k])
            overlap = np.clip(right - left, 0.0, h) / h
            shape = tuple(-1 if j == k else 1 for j in range(grid.dim))
            frac = frac * overlap.reshape(shape)
        return cls(grid, frac, label or "indicator")


@dataclass
class OmegaEstimate:
    """Empirical limit-set summary from late-window snapshots."""

    representatives: list[DensityField]
    representative_times: list[float]
    distance_matrix: np.ndarray
    window: tuple[float, float]
    diameter: float
    cluster_count: int
    threshold: float
    notes: list[str] = field(default_factory=list)


def cesaro_observable(traj: Trajectory, obs: Observable, t_values) -> list[float]:
    """(1/T) integral of F(S(t)u0) dt at each requested T.

    Left-endpoint step quadrature; since F is linear this equals F applied to
    the running accumulator, so only recorded checkpoints are needed.
    """
    out = []
    for t in np.atleast_1d(np.asarray(t_values, dtype=float)):
        if t <= 0:
            raise ValueError("Cesaro averages need T > 0")
        k = traj.checkpoint_index(float(t))
        if k == 0:
            raise ValueError("T is below the first recorded positive time")
        tk = traj.times[k]
        out.append(obs.apply_to_values(traj.cesaro_acc[k]) / tk)
    return out


def cesaro_mean_field(traj: Trajectory, t_values) -> list[DensityField]:
    """Running means (1/T) integral of S(t)u0 dt at the requested times."""
    out = []
    for t in np.atleast_1d(np.asarray(t_values, dtype=float)):
        if t <= 0:
            raise ValueError("Cesaro means need T > 0")
        k = traj.checkpoint_index(float(t))
        if k == 0:
            raise ValueError("T is below the first recorded positive time")
        tk = traj.times[k]
        vals = traj.cesaro_acc[k] / tk
        kind = "signed"
        if vals.min() >= 0 and abs(float(vals.sum()) * traj.grid.cell_volume - 1.0) <= 1e-12:
            kind = "probability"
        out.append(DensityField(traj.grid, vals, kind=kind))
    return out


def cesaro_cauchy_test(traj: Trajectory, t_seq) -> tuple[bool, list[float]]:
    """Cauchy trend of the Cesaro means: distances between successive means
    must shrink (negative log-log least-squares slope).

    All-zero distances (a fixed point) pass trivially.
    """
    t_seq = list(np.atleast_1d(np.asarray(t_seq, dtype=float)))
    if len(t_seq) < 2:
        raise ValueError("need at least two T values")
    means = cesaro_mean_field(traj, t_seq)
    deltas = [l1_distance(a, b) for a, b in zip(means, means[1:])]
    arr = np.asarray(deltas)
    scale = max(l1_norm(means[0]), 1.0)
    if np.all(arr <= 1e-14 * scale):
        return True, deltas
    pos = arr > 0
    if pos.sum() < 2:
        return True, deltas
    x = np.log(np.asarray(t_seq[:-1])[pos])
    y = np.log(arr[pos])
    slope = float(np.polyfit(x, y, 1)[0])
    return slope < 0.0, deltas


def estimate_omega(
    traj: Trajectory, window_fraction: float = 0.25, threshold: float | None = None
) -> OmegaEstimate:
    """Cluster late-window snapshots in L1 and report medoids and diameter.

    Single-linkage merging at twice the median nearest-neighbour distance
    (or an explicit threshold override); the window covers the last
    window_fraction of the recorded span and must hold at least eight
    snapshots.  Geometrically relaxing flows can fragment under the
    median-NN heuristic because early-window gaps dwarf late ones; pass a
    threshold at the expected limit-set resolution in that case.
    """
    if not (0 < window_fraction <= 1):
        raise ValueError("window_fraction must lie in (0, 1]")
    t_start = traj.span * (1.0 - window_fraction)
    idx = [k for k, t in enumerate(traj.times) if t >= t_start]
    if len(idx) < 8:
        raise ValueError(
            f"window holds only {len(idx)} snapshots; need at least 8 "
            "(lengthen the run or enlarge window_fraction)"
        )
    snaps = [traj.snapshots[k] for k in idx]
    m = len(snaps)
    dist = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            dist[i, j] = dist[j, i] = l1_distance(snaps[i], snaps[j])
    diameter = float(dist.max())

    if threshold is None:
        nn = np.array([np.min(dist[i, np.arange(m) != i]) for i in range(m)])
        threshold = 2.0 * float(np.median(nn))
        threshold_note = "2x median NN distance"
    else:
        threshold = float(threshold)
        threshold_note = "user override"

    # single-linkage union-find at the threshold
    parent = list(range(m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(m):
        for j in range(i + 1, m):
            if dist[i, j] <= threshold:
                parent[find(i)] = find(j)
    clusters: dict[int, list[int]] = {}
    for i in range(m):
        clusters.setdefault(find(i), []).append(i)

    reps, rep_times = [], []
    for members in clusters.values():
        sub = dist[np.ix_(members, members)]
        medoid = members[int(np.argmin(sub.sum(axis=1)))]
        reps.append(snaps[medoid])
        rep_times.append(traj.times[idx[medoid]])
    order = np.argsort(rep_times)
    reps = [reps[i] for i in order]
    rep_times = [rep_times[i] for i in order]
    return OmegaEstimate(
        representatives=reps,
        representative_times=rep_times,
        distance_matrix=dist,
        window=(t_start, traj.span),
        diameter=diameter,
        cluster_count=len(clusters),
        threshold=threshold,
        notes=[f"{m} snapshots in window, threshold {threshold!r} ({threshold_note})"],
    )


def stationary_residual(u: DensityField, cs, grid: GridSpec) -> float:
    """L1 size of the stationary-equation defect of u under the discrete operator."""
    if u.grid != grid:
        raise ValueError("u does not live on the supplied grid")
    return l1_norm(apply_operator(u, cs, eps=0.0))


def fixed_point_test(
    u: DensityField, cs, grid: GridSpec, cfg, t_probe: float = 0.1
) -> tuple[bool, float]:
    """Probe S(t_probe)u against u.

    The flag compares the drift against ten times the stationary-scheme
    tolerance t_probe * h^2 * |u|_1 + newton_tol, the scale at which a
    grid-projected stationary state moves in one probe step.
    """
    moved = step(u, cs, grid, cfg, t_probe)
    drift = l1_distance(moved, u)
    tol = t_probe * grid.spacing**2 * l1_norm(u) + cfg.tol_for(grid)
    return drift <= 10.0 * tol, drift
