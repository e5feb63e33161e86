"""Independent oracles for the test suite.

Everything here is computed from first principles (explicit loops, closed
forms, scipy special functions), not through the package's operator or
solver code paths, so agreement is evidence and not tautology.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from fpflow.discretization import DensityField, GridSpec


def bernoulli(z: float) -> float:
    return 1.0 if z == 0.0 else z / np.expm1(z)


def box_gaussian(grid: GridSpec, mean=0.0, sigma=1.0) -> DensityField:
    """Cell-averaged Gaussian on the box via scipy CDFs, renormalized."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (grid.dim,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (grid.dim,))
    h = grid.spacing
    edges = -grid.half_width + h * np.arange(grid.cells_per_axis + 1)
    vals = np.ones(grid.shape)
    for k in range(grid.dim):
        cdf = norm.cdf(edges, loc=mean[k], scale=sigma[k])
        axis_avg = np.diff(cdf) / h
        shape = tuple(-1 if j == k else 1 for j in range(grid.dim))
        vals = vals * axis_avg.reshape(shape)
    vals = vals / (vals.sum() * grid.cell_volume)
    return DensityField(grid, vals, kind="probability")


def linear_flow_matrix_1d(grid: GridSpec, eps: float, fitted: bool, potential_scale: float = 1.0) -> np.ndarray:
    """Dense matrix of the 1-D discrete operator for beta(r)=r, b=1,
    Phi = 1 + scale*x^2/2 (drift v = -scale*x at faces), assembled entry by
    entry from the scheme definition.

    With `fitted` the diffusive jump carries the Bernoulli factor
    z/(e^z - 1), z = |v| h / (1 + eps); otherwise the plain donor-cell flux.
    """
    n = grid.cells_per_axis
    h = grid.spacing
    A = np.zeros((n, n))
    for face in range(1, n):  # interior faces between cells face-1 and face
        xf = -grid.half_width + face * h
        v = -potential_scale * xf
        kappa = bernoulli(abs(v) * h / (1.0 + eps)) if fitted else 1.0
        i, j = face - 1, face  # left, right cells
        # flux = -kappa*(1+eps)*(u_j - u_i)/h + v * u_up
        dF_di = kappa * (1.0 + eps) / h + (v if v > 0 else 0.0)
        dF_dj = -kappa * (1.0 + eps) / h + (v if v <= 0 else 0.0)
        # cell i gains +flux/h, cell j gains -flux/h
        A[i, i] += dF_di / h
        A[i, j] += dF_dj / h
        A[j, i] -= dF_di / h
        A[j, j] -= dF_dj / h
    return A


def resolvent_oracle_1d(
    f: np.ndarray, grid: GridSpec, lam: float, eps: float, fitted: bool = True, potential_scale: float = 1.0
) -> np.ndarray:
    """Direct linear solve of (I + lam*A) y = f for the linear family."""
    A = linear_flow_matrix_1d(grid, eps, fitted, potential_scale)
    return np.linalg.solve(np.eye(grid.cells_per_axis) + lam * A, np.asarray(f, dtype=float))


def smooth_random_density(rng: np.random.Generator, grid: GridSpec) -> DensityField:
    """Nonnegative random field smoothed by a short moving average, mass one."""
    vals = rng.uniform(0.05, 1.0, grid.shape)
    for _ in range(3):
        acc = vals.copy()
        for axis in range(grid.dim):
            acc = acc + np.roll(vals, 1, axis=axis) + np.roll(vals, -1, axis=axis)
        vals = acc / (1 + 2 * grid.dim)
    vals = vals / (vals.sum() * grid.cell_volume)
    return DensityField(grid, vals, kind="probability")
