"""Implicit resolvent solves (I + lam * A)^(-1) f by damped Newton with
viscosity continuation.

Each continuation stage solves the eps-regularized system

    y + lam * A_eps(y) = f,    A_eps(y) = -div(grad(beta(y) + eps*y)) + div(D b(y) y)

by a damped Newton iteration on the L1 residual; stages walk eps down a
decreasing schedule, warm-starting from the previous solution, and stop when
consecutive stage solutions are Cauchy in L1.  The last eps is kept strictly
positive, so the Jacobian stays invertible even where beta' vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .discretization import (
    DensityField,
    GridSpec,
    apply_operator,
    face_velocities,
    l1_distance,
    _face_kappa,
)

__all__ = [
    "SolverConfig",
    "ResolventResult",
    "StageDiagnostics",
    "NewtonError",
    "solve_regularized",
    "resolvent",
    "default_newton_tol",
]

DEFAULT_EPS_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


class NewtonError(RuntimeError):
    """Newton failed to converge; carries the last iterate and residual history."""

    def __init__(self, message, last_iterate=None, residual_history=None, stage_eps=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_history = residual_history or []
        self.stage_eps = stage_eps


def default_newton_tol(grid: GridSpec) -> float:
    # 1e-10 relative to the box volume n^d * h^d
    return 1e-10 * grid.n_cells * grid.cell_volume


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the resolvent solve.

    lam is the resolvent step; lam_max mirrors the small-step regime in
    which compactness of the resolvent is available.  polish_iters extra
    full Newton steps run after the tolerance is met so that conservation
    and contraction hold well below the nominal tolerance.
    """

    lam: float = 0.05
    eps_schedule: tuple[float, ...] = DEFAULT_EPS_SCHEDULE
    newton_tol: float | None = None  # default 1e-10 * n^d * h^d, see default_newton_tol
    max_newton_iters: int = 60
    damping: float = 0.5
    continuation_tol: float = 1e-8
    lam_max: float = 1.0
    polish_iters: int = 1
    h_fd: float = 1e-5

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        eps = tuple(float(e) for e in self.eps_schedule)
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("eps_schedule must be nonempty and positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_schedule must be strictly decreasing")
        object.__setattr__(self, "eps_schedule", eps)
        if not (0 < self.damping < 1):
            raise ValueError("damping must lie in (0, 1)")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be at least 1")

    def tol_for(self, grid: GridSpec) -> float:
        return self.newton_tol if self.newton_tol is not None else default_newton_tol(grid)


@dataclass
class StageDiagnostics:
    eps: float
    newton_iters: int
    residual: float
    l1_diff_prev_stage: float | None

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "newton_iters": self.newton_iters,
            "residual": self.residual,
            "l1_diff_prev_stage": self.l1_diff_prev_stage,
        }


@dataclass
class ResolventResult:
    solution: DensityField
    stages: list[StageDiagnostics]
    final_residual: float
    eps_converged: bool
    eps_floor_active: bool = False

    @property
    def stage_iterations(self) -> list[int]:
        return [s.newton_iters for s in self.stages]


def _axis_slices(dim, axis):
    lo = tuple(slice(0, -1) if k == axis else slice(None) for k in range(dim))
    hi = tuple(slice(1, None) if k == axis else slice(None) for k in range(dim))
    return lo, hi


def _assemble_jacobian(grid, cs, eps, lam, velocities, slope_beta, slope_g):
    """Sparse Jacobian of y + lam*A_eps(y) with supplied per-cell slopes.

    slope_beta and slope_g are arrays shaped like the field: slopes of
    beta + eps*id and of b(r)*r, derivative (Newton) or secant (Picard).
    """
    h = grid.spacing
    idx = np.arange(grid.n_cells).reshape(grid.shape)
    kappas = _face_kappa(grid, cs, eps, velocities)
    rows, cols, vals = [], [], []
    n_total = grid.n_cells
    diag = np.ones(n_total)  # identity part
    for axis in range(grid.dim):
        lo, hi = _axis_slices(grid.dim, axis)
        v = velocities[axis]
        kap = kappas[axis] if kappas is not None else 1.0
        up_is_lo = v > 0
        # flux F = -kap*(B(y_hi)-B(y_lo))/h + v*g(y_up);  dA_lo = +F/h, dA_hi = -F/h
        dF_dlo = kap * slope_beta[lo] / h + np.where(up_is_lo, v * slope_g[lo], 0.0)
        dF_dhi = -kap * slope_beta[hi] / h + np.where(up_is_lo, 0.0, v * slope_g[hi])
        i_lo = idx[lo].ravel()
        i_hi = idx[hi].ravel()
        a = (lam / h) * dF_dlo.ravel()
        c = (lam / h) * dF_dhi.ravel()
        np.add.at(diag, i_lo, a)
        np.add.at(diag, i_hi, -c)
        rows.append(i_lo)
        cols.append(i_hi)
        vals.append(c)
        rows.append(i_hi)
        cols.append(i_lo)
        vals.append(-a)
    rows.append(np.arange(n_total))
    cols.append(np.arange(n_total))
    vals.append(diag)
    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_total, n_total),
    )
    return J.tocsc()


def _residual(y_vals, f, cs, eps, lam, velocities):
    y = DensityField(f.grid, y_vals, kind="signed")
    a = apply_operator(y, cs, eps=eps, velocities=velocities)
    return y_vals + lam * a.values - f.values


def _secant_slope(fn, y):
    """Symmetric secant slope (fn(y+d) - fn(y-d)) / (2d), clipped monotone."""
    d = np.maximum(1e-8, 1e-6 * np.abs(y))
    out = (fn(y + d) - fn(y - d)) / (2.0 * d)
    return np.maximum(out, 0.0)


def _newton_loop(f, cs, grid, cfg, eps, initial, velocities, picard):
    """Damped Newton (or secant-slope Picard) iteration on the L1 residual.

    Returns (solution or None, residual history, last iterate, iterations).
    """
    lam = cfg.lam
    tol = cfg.tol_for(grid)
    vol = grid.cell_volume
    if initial is None:
        y = f.values.copy()
    else:
        y = np.asarray(initial, dtype=float).reshape(grid.shape).copy()
    res = _residual(y, f, cs, eps, lam, velocities)
    rnorm = float(np.abs(res).sum()) * vol
    history = [rnorm]
    polish_left = cfg.polish_iters
    iters = 0
    while iters < cfg.max_newton_iters:
        if rnorm <= tol:
            if polish_left <= 0:
                return y, history, y, iters
            polish_left -= 1
        iters += 1
        if picard:
            slope_beta = _secant_slope(cs.beta, y) + eps
            slope_g = _secant_slope(lambda r: cs.b(r) * r, y)
        else:
            slope_beta = cs.beta_prime(y) + eps
            slope_g = cs.b_prime(y) * y + cs.b(y)
        J = _assemble_jacobian(grid, cs, eps, lam, velocities, slope_beta, slope_g)
        step = spsolve(J, -res.ravel()).reshape(grid.shape)
        t = 1.0
        accepted = False
        while t > 1e-8:
            y_try = y + t * step
            res_try = _residual(y_try, f, cs, eps, lam, velocities)
            rnorm_try = float(np.abs(res_try).sum()) * vol
            if rnorm_try < rnorm or rnorm_try <= tol:
                y, res, rnorm = y_try, res_try, rnorm_try
                accepted = True
                break
            t *= cfg.damping
        if not accepted:
            if rnorm <= tol:
                return y, history, y, iters  # polish step could not improve; done
            return None, history, y, iters
        history.append(rnorm)
        # stagnation: less than 1e-3 reduction over the last ten iterations
        if rnorm > tol and len(history) > 10 and history[-11] > 0:
            if rnorm / history[-11] > 1.0 - 1e-3:
                return None, history, y, iters
    if rnorm <= tol:
        return y, history, y, iters
    return None, history, y, iters


def _solve_stage(f, cs, grid, cfg, eps, initial, velocities):
    y, hist, last, iters = _newton_loop(f, cs, grid, cfg, eps, initial, velocities, picard=False)
    if y is None:
        # one Picard retry with frozen secant slopes
        y, hist2, last, iters2 = _newton_loop(
            f, cs, grid, cfg, eps, initial, velocities, picard=True
        )
        hist = hist + hist2
        iters += iters2
        if y is None:
            raise NewtonError(
                f"resolvent iteration stagnated at eps={eps:g} "
                f"(last residual {hist[-1]:.3e}, tol {cfg.tol_for(grid):.3e})",
                last_iterate=DensityField(grid, last, kind="signed"),
                residual_history=hist,
                stage_eps=eps,
            )
    return DensityField(grid, y, kind="signed"), iters, hist[-1]


def solve_regularized(
    f: DensityField,
    cs,
    grid: GridSpec,
    cfg: SolverConfig,
    eps: float,
    initial: np.ndarray | None = None,
) -> DensityField:
    """Solve the eps-regularized resolvent system by damped Newton.

    Stagnation (residual reduction below 1e-3 over ten iterations) triggers a
    single Picard retry with secant slopes; failing that, NewtonError carries
    the last iterate and the residual history.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if f.grid != grid:
        raise ValueError("f does not live on the supplied grid")
    if cfg.lam > cfg.lam_max:
        raise ValueError(f"lam={cfg.lam:g} exceeds lam_max={cfg.lam_max:g}")
    velocities = face_velocities(grid, cs)
    field, _, _ = _solve_stage(f, cs, grid, cfg, eps, initial, velocities)
    return field


def resolvent(f: DensityField, cs, grid: GridSpec, cfg: SolverConfig) -> ResolventResult:
    """Viscosity-limit resolvent: walk the eps schedule with warm starts.

    Stops once consecutive stage solutions differ by at most continuation_tol
    in L1 (eps_converged), else runs the whole schedule and reports
    eps_converged False.  The returned field keeps f's probability kind when
    the mass and sign constraints survive the solve.
    """
    if not np.all(np.isfinite(f.values)):
        raise ValueError("resolvent input must be finite")
    if f.grid != grid:
        raise ValueError("f does not live on the supplied grid")
    if cfg.lam > cfg.lam_max:
        raise ValueError(f"lam={cfg.lam:g} exceeds lam_max={cfg.lam_max:g}")
    velocities = face_velocities(grid, cs)
    stages: list[StageDiagnostics] = []
    prev: DensityField | None = None
    current: DensityField | None = None
    eps_converged = False
    for stage_idx, eps in enumerate(cfg.eps_schedule):
        warm = prev.values if prev is not None else None
        try:
            current, iters, res = _solve_stage(f, cs, grid, cfg, eps, warm, velocities)
        except NewtonError as err:
            raise NewtonError(
                f"continuation stage {stage_idx} (eps={eps:g}) failed: {err}",
                last_iterate=err.last_iterate,
                residual_history=err.residual_history,
                stage_eps=eps,
            ) from err
        diff = l1_distance(current, prev) if prev is not None else None
        stages.append(StageDiagnostics(eps, iters, res, diff))
        prev = current
        if diff is not None and diff <= cfg.continuation_tol:
            eps_converged = True
            break
    # a vanishing diffusion slope anywhere along the solution keeps the eps floor active
    floor_active = bool(np.any(cs.beta_prime(current.values) < 1e-12))
    result_field = current
    if f.kind == "probability":
        vals = current.values
        m = float(vals.sum()) * grid.cell_volume
        if vals.min() >= 0.0 and abs(m - 1.0) <= 1e-12:
            result_field = DensityField(grid, vals, kind="probability")
    return ResolventResult(
        solution=result_field,
        stages=stages,
        final_residual=stages[-1].residual,
        eps_converged=eps_converged,
        eps_floor_active=floor_active,
    )
