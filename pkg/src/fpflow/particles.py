"""Interacting-particle simulation of the law-dependent diffusion.

Particles move by Euler-Maruyama with drift D(X) b(u_hat(X)) and noise
variance 2 beta(u_hat)/u_hat per coordinate, where u_hat is the current
grid estimate of the time-marginal density interpolated at the particle.
The box boundary reflects.  Density estimates are histograms with optional
separable triangular smoothing; both preserve unit mass exactly.

All randomness flows through a counter-based Philox generator, so a seed
pins the entire run regardless of how the work is batched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .discretization import DensityField, GridSpec
from .ergodic import Observable

__all__ = [
    "ParticleEnsemble",
    "DensityEstimate",
    "ParticleSummary",
    "sample_from_density",
    "estimate_density",
    "em_step",
    "simulate",
    "marginal_ergodic_average",
    "occupation_measure",
    "mc_standard_error",
]

DENSITY_FLOOR = 1e-8


@dataclass
class ParticleEnsemble:
    """N particle positions in the box with their generator state."""

    positions: np.ndarray  # (N, dim)
    rng: np.random.Generator
    time: float = 0.0
    reflections: int = 0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("particle positions must be finite")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass
class DensityEstimate:
    field: DensityField
    bandwidth: int
    method: str  # "histogram" or "smoothed-histogram"


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def sample_from_density(u0: DensityField, n: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified inverse-CDF sampling: ordered uniforms across cells, then
    a uniform jitter inside each chosen cell."""
    if u0.kind != "probability":
        raise ValueError("initial sampling needs a probability field")
    grid = u0.grid
    probs = (u0.values.ravel() * grid.cell_volume).clip(min=0.0)
    probs = probs / probs.sum()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    v = (np.arange(n) + rng.uniform(size=n)) / n
    cells = np.searchsorted(cdf, v, side="left")
    centers = grid.cell_centers()[cells]
    jitter = rng.uniform(-0.5, 0.5, size=(n, grid.dim)) * grid.spacing
    return centers + jitter


def _histogram(positions: np.ndarray, grid: GridSpec) -> np.ndarray:
    L, n = grid.half_width, grid.cells_per_axis
    clipped = np.clip(positions, -L, L - 1e-12 * max(L, 1.0))
    idx = np.floor((clipped + L) / grid.spacing).astype(np.int64)
    np.clip(idx, 0, n - 1, out=idx)
    flat = np.zeros(grid.n_cells)
    lin = np.ravel_multi_index(tuple(idx[:, k] for k in range(grid.dim)), grid.shape)
    np.add.at(flat, lin, 1.0)
    return flat.reshape(grid.shape) / (positions.shape[0] * grid.cell_volume)


def _reflect_shift(values: np.ndarray, shift: int, axis: int) -> np.ndarray:
    """Shift along an axis, folding mass that leaves the box back inside."""
    if shift == 0:
        return values
    n = values.shape[axis]
    out = np.zeros_like(values)
    src = np.arange(n)
    dest = src + shift
    # fold: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2
    dest = np.where(dest < 0, -dest - 1, dest)
    dest = np.where(dest >= n, 2 * n - 1 - dest, dest)
    for s, d in zip(src, dest):
        sl_src = tuple(s if k == axis else slice(None) for k in range(values.ndim))
        sl_dst = tuple(d if k == axis else slice(None) for k in range(values.ndim))
        out[sl_dst] += values[sl_src]
    return out


def _smooth(values: np.ndarray, bandwidth: int) -> np.ndarray:
    """Separable triangular kernel of half-width `bandwidth` cells.

    Shifts use boundary folding, so the kernel redistributes each cell's
    mass with weights summing to one and total mass is preserved exactly.
    """
    if bandwidth <= 0:
        return values
    offsets = np.arange(-bandwidth, bandwidth + 1)
    weights = (bandwidth + 1.0) - np.abs(offsets)
    weights = weights / weights.sum()
    out = values
    for axis in range(values.ndim):
        acc = np.zeros_like(out)
        for off, w in zip(offsets, weights):
            acc += w * _reflect_shift(out, int(off), axis)
        out = acc
    return out


def estimate_density(ens: ParticleEnsemble, grid: GridSpec, bandwidth: int = 0) -> DensityEstimate:
    """Histogram of the ensemble on the grid, optionally smoothed; unit mass."""
    if ens.count < 1:
        raise ValueError("cannot estimate a density from an empty ensemble")
    vals = _histogram(ens.positions, grid)
    method = "histogram"
    if bandwidth > 0:
        vals = _smooth(vals, bandwidth)
        method = "smoothed-histogram"
    return DensityEstimate(DensityField(grid, vals, kind="probability"), bandwidth, method)


def _interp_density(est: DensityField, positions: np.ndarray) -> np.ndarray:
    grid = est.grid
    centers = grid.axis_centers()
    clipped = np.clip(positions, centers[0], centers[-1])
    if grid.dim == 1:
        return np.interp(clipped[:, 0], centers, est.values)
    interp = RegularGridInterpolator(
        (centers,) * grid.dim, est.values, method="linear", bounds_error=False, fill_value=None
    )
    return interp(clipped)


def _reflect_positions(positions: np.ndarray, L: float) -> tuple[np.ndarray, int]:
    period = 4.0 * L
    shifted = (positions + L) % period
    over = shifted > 2.0 * L
    shifted[over] = period - shifted[over]
    return shifted - L, int(over.sum())


def em_step(
    ens: ParticleEnsemble,
    est: DensityEstimate,
    dt: float,
    cs,
    noise_scale: float = 1.0,
    u_floor: float = DENSITY_FLOOR,
) -> ParticleEnsemble:
    """One Euler-Maruyama step with the current density estimate frozen.

    noise_scale multiplies the diffusion (zero gives the deterministic
    characteristic flow); the reflecting boundary folds excursions back and
    counts them.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = ens.positions
    u_hat = _interp_density(est.field, x)
    drift = cs.drift(x) * cs.b(u_hat)[:, None]
    sigma2 = cs.sigma_squared(u_hat, u_floor=u_floor)
    noise = ens.rng.standard_normal(size=x.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = x + drift * dt + noise_scale * np.sqrt(sigma2 * dt)[:, None] * noise
    if not np.all(np.isfinite(x_new)):
        raise FloatingPointError(
            "non-finite particle position after a step; dt is too large for these coefficients"
        )
    L = est.field.grid.half_width
    x_new, n_reflected = _reflect_positions(x_new, L)
    return ParticleEnsemble(
        positions=x_new,
        rng=ens.rng,
        time=ens.time + dt,
        reflections=ens.reflections + n_reflected,
    )


@dataclass
class ParticleSummary:
    """Recorded output of a particle run.

    observable_series holds per-step ensemble means (piecewise-constant g
    evaluated through the step histogram); cesaro_checkpoints accumulate the
    left-endpoint time integral of the histogram density at recorded times.
    """

    grid: GridSpec
    dt: float
    seed: int
    times: list[float]
    estimates: list[DensityEstimate]
    cesaro_checkpoints: list[np.ndarray]
    observable_series: dict[str, np.ndarray]
    moments: list[dict]
    reflections: int
    params: dict = field(default_factory=dict)

    def checkpoint_index(self, t: float) -> int:
        times = np.asarray(self.times)
        if t < -1e-12 or t > times[-1] + 0.5 * self.dt:
            raise ValueError(f"t={t:g} outside the recorded span [0, {times[-1]:g}]")
        k = int(np.argmin(np.abs(times - t)))
        return k


def simulate(
    u0: DensityField,
    n_particles: int,
    T: float,
    dt: float,
    cs,
    grid: GridSpec,
    seed: int,
    refresh_every: int = 1,
    bandwidth: int = 0,
    n_snapshots: int = 64,
    observables: list[Observable] | None = None,
    noise_scale: float = 1.0,
) -> ParticleSummary:
    """Alternate Euler-Maruyama steps with density refreshes.

    The density entering the coefficients is refreshed every refresh_every
    steps; the Cesaro accumulator and the per-step observable series always
    use the current step's histogram.
    """
    if u0.kind != "probability":
        raise ValueError("u0 must be a probability field")
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    if refresh_every < 1:
        raise ValueError("refresh_every must be at least 1")
    n_steps = int(np.ceil(T / dt))
    stride = max(1, n_steps // max(1, n_snapshots))
    rng = _rng(seed)
    positions = sample_from_density(u0, n_particles, rng)
    ens = ParticleEnsemble(positions=positions, rng=rng)
    obs_list = observables or []

    est = estimate_density(ens, grid, bandwidth)
    hist = est.field.values if bandwidth == 0 else _histogram(ens.positions, grid)
    acc = np.zeros(grid.shape)
    times = [0.0]
    estimates = [est]
    checkpoints = [acc.copy()]
    series = {obs.label: [] for obs in obs_list}
    moments = [_ensemble_moments(ens)]
    for k in range(n_steps):
        for obs in obs_list:
            series[obs.label].append(obs.apply_to_values(hist))
        acc += hist * dt  # left endpoint of [k dt, (k+1) dt)
        ens = em_step(ens, est, dt, cs, noise_scale=noise_scale)
        hist = _histogram(ens.positions, grid)
        if (k + 1) % refresh_every == 0:
            if bandwidth > 0:
                est = DensityEstimate(
                    DensityField(grid, _smooth(hist, bandwidth), kind="probability"),
                    bandwidth,
                    "smoothed-histogram",
                )
            else:
                est = DensityEstimate(DensityField(grid, hist, kind="probability"), 0, "histogram")
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            times.append((k + 1) * dt)
            snap = _smooth(hist, bandwidth) if bandwidth > 0 else hist
            estimates.append(
                DensityEstimate(
                    DensityField(grid, snap, kind="probability"),
                    bandwidth,
                    "smoothed-histogram" if bandwidth > 0 else "histogram",
                )
            )
            checkpoints.append(acc.copy())
            moments.append(_ensemble_moments(ens))
    return ParticleSummary(
        grid=grid,
        dt=dt,
        seed=seed,
        times=times,
        estimates=estimates,
        cesaro_checkpoints=checkpoints,
        observable_series={k: np.asarray(v) for k, v in series.items()},
        moments=moments,
        reflections=ens.reflections,
        params={
            "n_particles": n_particles,
            "T": T,
            "dt": dt,
            "refresh_every": refresh_every,
            "bandwidth": bandwidth,
            "noise_scale": noise_scale,
        },
    )


def _ensemble_moments(ens: ParticleEnsemble) -> dict:
    x = ens.positions
    return {
        "t": ens.time,
        "mean": x.mean(axis=0).tolist(),
        "second_moment": float((x**2).sum(axis=1).mean()),
        "reflections": ens.reflections,
    }


def marginal_ergodic_average(summary: ParticleSummary, obs: Observable, t_values) -> list[float]:
    """Time averages (1/T) integral of the ensemble mean of g over [0, T].

    Uses the per-step series recorded during the run when the observable was
    registered there, else integrates the accumulated density.
    """
    out = []
    for t in np.atleast_1d(np.asarray(t_values, dtype=float)):
        if t <= 0:
            raise ValueError("averages need T > 0")
        if obs.label in summary.observable_series:
            n = int(round(t / summary.dt))
            ser = summary.observable_series[obs.label]
            if n < 1 or n > len(ser):
                raise ValueError(f"T={t:g} outside the recorded series span")
            out.append(float(ser[:n].sum()) * summary.dt / (n * summary.dt))
        else:
            k = summary.checkpoint_index(float(t))
            if k == 0:
                raise ValueError("T is below the first recorded time")
            tk = summary.times[k]
            out.append(obs.apply_to_values(summary.cesaro_checkpoints[k]) / tk)
    return out


def occupation_measure(summary: ParticleSummary, lo, hi, T: float) -> float:
    """Time-averaged fraction of particles inside the axis-aligned box [lo, hi]."""
    box = Observable.indicator_box(summary.grid, lo, hi)
    k = summary.checkpoint_index(float(T))
    if k == 0:
        raise ValueError("T is below the first recorded time")
    tk = summary.times[k]
    return box.apply_to_values(summary.cesaro_checkpoints[k]) / tk


def mc_standard_error(summary: ParticleSummary, obs: Observable, T: float, n_blocks: int = 20) -> float:
    """Block standard error of the time-averaged observable series up to T."""
    if obs.label not in summary.observable_series:
        raise ValueError(f"observable {obs.label!r} was not recorded during the run")
    n = int(round(T / summary.dt))
    ser = summary.observable_series[obs.label][:n]
    if len(ser) < n_blocks:
        raise ValueError("series too short for the requested block count")
    usable = (len(ser) // n_blocks) * n_blocks
    blocks = ser[:usable].reshape(n_blocks, -1).mean(axis=1)
    return float(blocks.std(ddof=1) / np.sqrt(n_blocks))
