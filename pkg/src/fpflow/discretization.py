"""Truncated-box tensor grids and the conservative finite-volume operator.

The computational domain is the box [-L, L]^d with a uniform tensor grid of
cell averages and zero-flux boundaries.  The discrete drift-diffusion
operator acts on cell-average fields through two-point face fluxes:

    flux = -kappa * (beta(u_R) + eps*u_R - beta(u_L) - eps*u_L) / h
           + v * b(u_up) * u_up

with v the outward face velocity of the drift, u_up the donor (upstream)
cell, and kappa a Bernoulli factor kappa = z/(e^z - 1), z = |v| h / slope,
applied only when the coefficient set declares a constant diffusion slope.
For such (linear-diffusion) families the factor makes the flux exponentially
fitted, so the discrete stationary state matches the continuum one exactly;
otherwise kappa = 1 and the flux is the plain monotone donor-cell scheme.
Either way the flux is nondecreasing in u_L and nonincreasing in u_R, which
is what the contraction and positivity properties rest on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "DensityField",
    "WeightedNormContext",
    "GridMismatchError",
    "apply_operator",
    "face_velocities",
    "mass",
    "l1_norm",
    "l1_distance",
    "weighted_norm",
    "write_field_csv",
    "read_field_csv",
    "write_field_binary",
    "read_field_binary",
]

MASS_TOL = 1e-12


class GridMismatchError(ValueError):
    """Two fields (or a field and a context) live on different grids."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on the box [-half_width, half_width]^dim."""

    dim: int
    half_width: float
    cells_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.cells_per_axis < 4:
            raise ValueError("cells_per_axis must be at least 4")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.cells_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.dim

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis_centers(self) -> np.ndarray:
        h = self.spacing
        return -self.half_width + h * (np.arange(self.cells_per_axis) + 0.5)

    def cell_centers(self) -> np.ndarray:
        """All cell centers, shape (n_cells, dim), row-major cell order."""
        c = self.axis_centers()
        grids = np.meshgrid(*([c] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def face_centers(self, axis: int) -> np.ndarray:
        """Centers of the interior faces orthogonal to `axis`.

        Shape (n, ..., n-1, ..., n, dim) flattened to (count, dim), ordered
        like the face slab produced by differencing along `axis`.
        """
        h = self.spacing
        coords = []
        for k in range(self.dim):
            if k == axis:
                coords.append(-self.half_width + h * np.arange(1, self.cells_per_axis))
            else:
                coords.append(self.axis_centers())
        grids = np.meshgrid(*coords, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass
class DensityField:
    """Cell-averaged field on a GridSpec.

    kind is "probability" (nonnegative, unit mass within 1e-12) or "signed".
    """

    grid: GridSpec
    values: np.ndarray
    kind: str = "signed"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if self.kind not in ("signed", "probability"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.kind == "probability":
            if self.values.min() < 0.0:
                raise ValueError(
                    f"probability field has negative value {self.values.min():g}"
                )
            m = float(self.values.sum()) * self.grid.cell_volume
            if abs(m - 1.0) > MASS_TOL:
                raise ValueError(f"probability field has mass {m!r}, not 1")

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.values.copy(), self.kind)


@dataclass
class WeightedNormContext:
    """Confining-potential weight evaluated at cell centers, plus the bound eta."""

    grid: GridSpec
    phi_values: np.ndarray
    eta: float

    def __post_init__(self):
        self.phi_values = np.asarray(self.phi_values, dtype=float).reshape(self.grid.shape)
        if self.phi_values.min() < 1.0:
            raise ValueError(
                f"potential weight must be >= 1 everywhere, min is {self.phi_values.min():g}"
            )
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @classmethod
    def from_coefficients(cls, cs, grid: GridSpec, eta: float) -> "WeightedNormContext":
        phi = cs.phi(grid.cell_centers()).reshape(grid.shape)
        return cls(grid, phi, eta)


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def mass(u: DensityField) -> float:
    return float(u.values.sum()) * u.grid.cell_volume


def l1_norm(u: DensityField) -> float:
    return float(np.abs(u.values).sum()) * u.grid.cell_volume


def l1_distance(u: DensityField, v: DensityField) -> float:
    _check_same_grid(u, v)
    return float(np.abs(u.values - v.values).sum()) * u.grid.cell_volume


def weighted_norm(u: DensityField, ctx: WeightedNormContext) -> float:
    _check_same_grid(u, ctx)
    return float((np.abs(u.values) * ctx.phi_values).sum()) * u.grid.cell_volume


def _bernoulli(z: np.ndarray) -> np.ndarray:
    """B(z) = z / (e^z - 1), with B(0) = 1, evaluated stably."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-12
    out[nz] = z[nz] / np.expm1(z[nz])
    return out


def face_velocities(grid: GridSpec, cs) -> list[np.ndarray]:
    """Outward drift velocity D . n at the interior faces, one slab per axis.

    Axis k slab has shape (n, ..., n-1, ..., n) with n-1 on axis k.  Reused
    across operator applications and Jacobian assemblies for one (grid, cs).
    """
    out = []
    n = grid.cells_per_axis
    for axis in range(grid.dim):
        pts = grid.face_centers(axis)
        drift = cs.drift(pts)  # (count, dim)
        shape = tuple(n - 1 if k == axis else n for k in range(grid.dim))
        out.append(drift[:, axis].reshape(shape))
    return out


def _face_kappa(grid: GridSpec, cs, eps: float, velocities: list[np.ndarray]) -> list[np.ndarray] | None:
    """Bernoulli anti-diffusion factors, or None when the plain scheme applies."""
    slope = getattr(cs, "beta_slope_constant", None)
    if slope is None:
        return None
    h = grid.spacing
    return [_bernoulli(np.abs(v) * h / (slope + eps)) for v in velocities]


def apply_operator(
    u: DensityField,
    cs,
    eps: float = 0.0,
    velocities: list[np.ndarray] | None = None,
) -> DensityField:
    """Discrete drift-diffusion operator  -div(grad beta_eps(u)) + div(D b(u) u).

    Returns a signed field; by construction the output sums to zero exactly
    (interior fluxes telescope and boundary faces carry none).  `velocities`
    may carry precomputed face velocities from :func:`face_velocities`.
    """
    if cs.dim != u.grid.dim:
        raise GridMismatchError(
            f"coefficient set is {cs.dim}-dimensional, grid is {u.grid.dim}-dimensional"
        )
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    grid = u.grid
    h = grid.spacing
    vals = u.values
    if velocities is None:
        velocities = face_velocities(grid, cs)
    kappas = _face_kappa(grid, cs, eps, velocities)

    beta_reg = cs.beta(vals) + eps * vals
    g = cs.b(vals) * vals
    out = np.zeros_like(vals)
    for axis in range(grid.dim):
        lo = tuple(slice(0, -1) if k == axis else slice(None) for k in range(grid.dim))
        hi = tuple(slice(1, None) if k == axis else slice(None) for k in range(grid.dim))
        v = velocities[axis]
        diff_jump = (beta_reg[hi] - beta_reg[lo]) / h
        if kappas is not None:
            diff_jump = kappas[axis] * diff_jump
        upwind = np.where(v > 0, g[lo], g[hi])
        flux = -diff_jump + v * upwind
        # net outflow of each cell: flux out the hi face minus in at the lo face
        out[lo] += flux / h
        out[hi] -= flux / h
    return DensityField(grid, out, kind="signed")


# ---------------------------------------------------------------------------
# serialization: flat CSV and a compact binary format
# ---------------------------------------------------------------------------

_BIN_HEADER = struct.Struct("<qqd")  # dim, cells_per_axis, half_width


def write_field_binary(u: DensityField, path) -> None:
    """Header: dim, n, L as little-endian 64-bit; payload: n^d float64 row-major."""
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(u.grid.dim, u.grid.cells_per_axis, u.grid.half_width))
        fh.write(u.values.astype("<f8").tobytes(order="C"))


def read_field_binary(path) -> DensityField:
    with open(path, "rb") as fh:
        dim, n, half_width = _BIN_HEADER.unpack(fh.read(_BIN_HEADER.size))
        grid = GridSpec(dim, half_width, n)
        payload = fh.read(8 * grid.n_cells)
        if len(payload) != 8 * grid.n_cells:
            raise ValueError(f"truncated field file {path}")
        values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape)
    kind = "signed"
    if values.min() >= 0.0 and abs(float(values.sum()) * grid.cell_volume - 1.0) <= MASS_TOL:
        kind = "probability"
    return DensityField(grid, values.copy(), kind)


def write_field_csv(u: DensityField, path) -> None:
    """Flat CSV: index, one coordinate column per axis, value."""
    centers = u.grid.cell_centers()
    flat = u.values.ravel(order="C")
    cols = ",".join(f"x{k+1}" for k in range(u.grid.dim))
    lines = [f"index,{cols},value"]
    for i in range(u.grid.n_cells):
        coord = ",".join(repr(float(c)) for c in centers[i])
        lines.append(f"{i},{coord},{float(flat[i])!r}")
    with open(path, "w", newline="") as fh:
        fh.write("\r\n".join(lines) + "\r\n")


def read_field_csv(path, grid: GridSpec) -> DensityField:
    values = np.empty(grid.n_cells)
    with open(path, "r", newline="") as fh:
        header = fh.readline()
        if not header.startswith("index,"):
            raise ValueError(f"{path} is not a field CSV")
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            values[int(parts[0])] = float(parts[-1])
    kind = "signed"
    if values.min() >= 0.0 and abs(float(values.sum()) * grid.cell_volume - 1.0) <= MASS_TOL:
        kind = "probability"
    return DensityField(grid, values.reshape(grid.shape), kind)
