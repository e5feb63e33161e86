"""Coefficient families (beta, b, Phi, D) and numerical audits of their hypotheses.

A CoefficientSet bundles the nonlinear diffusion beta, the mobility b, the
confining potential Phi (the drift is always D = -grad Phi, never stored on
its own) and the structural constants mu1, mu2, nu, b0, m, alpha.  The
checkers sample the stated pointwise inequalities on deterministic sample
sets and report worst-case margins; they never attempt symbolic proofs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, interpolate

__all__ = [
    "CoefficientSet",
    "HypothesisReport",
    "CoefficientEvaluationError",
    "check_h1",
    "check_h2",
    "check_h3",
    "check_uniqueness_condition",
    "fixed_point_criteria",
    "make_family",
    "load_beta_table",
    "BUILTIN_FAMILIES",
    "FD_STEP",
]

FD_STEP = 1e-5  # central finite-difference step when derivatives are not supplied


class CoefficientEvaluationError(ValueError):
    """A coefficient function returned a non-finite value at a named sample."""


@dataclass(frozen=True)
class CoefficientSet:
    """The coefficient triple (beta, b, Phi) with D = -grad Phi and constants.

    All scalar maps are vectorized over numpy arrays.  beta(0) must be 0
    exactly; construction rejects anything else.  `beta_slope_constant`
    is set (to beta') by families whose diffusion slope is constant, which
    enables the exponentially fitted flux in the discretization.
    """

    name: str
    dim: int
    beta: Callable[[np.ndarray], np.ndarray]
    beta_prime: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    b_prime: Callable[[np.ndarray], np.ndarray]
    phi: Callable[[np.ndarray], np.ndarray]
    grad_phi: Callable[[np.ndarray], np.ndarray]
    mu1: float
    mu2: float
    nu: float
    b0: float
    m: float = 2.0
    alpha: float | None = None
    laplacian_phi: Callable[[np.ndarray], np.ndarray] | None = None
    beta_slope_constant: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        for label, value in (("mu1", self.mu1), ("mu2", self.mu2), ("b0", self.b0)):
            if value <= 0:
                raise ValueError(f"{label} must be positive, got {value}")
        b0 = float(self.beta(np.array([0.0]))[0])
        if b0 != 0.0:
            raise ValueError(f"beta(0) must be 0 exactly, got {b0!r}")

    def drift(self, x: np.ndarray) -> np.ndarray:
        """D(x) = -grad Phi(x); x has shape (m, dim), result likewise."""
        return -self.grad_phi(np.atleast_2d(np.asarray(x, dtype=float)))

    def laplacian_phi_at(self, x: np.ndarray, h_fd: float = FD_STEP) -> np.ndarray:
        """Laplacian of Phi, analytic when supplied, else central differences."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.laplacian_phi is not None:
            return self.laplacian_phi(x)
        out = np.zeros(x.shape[0])
        base = self.phi(x)
        for k in range(self.dim):
            xp = x.copy()
            xm = x.copy()
            xp[:, k] += h_fd
            xm[:, k] -= h_fd
            out += (self.phi(xp) - 2.0 * base + self.phi(xm)) / h_fd**2
        return out

    def sigma_squared(self, u: np.ndarray, u_floor: float = 1e-8) -> np.ndarray:
        """Diffusion coefficient 2*beta(u)/u of the particle dynamics.

        Below u_floor the ratio is frozen at its value at the floor, which
        avoids a spurious blow-up where the estimated density vanishes.
        """
        u = np.asarray(u, dtype=float)
        floor_ratio = 2.0 * float(self.beta(np.array([u_floor]))[0]) / u_floor
        safe = np.maximum(u, u_floor)
        out = 2.0 * self.beta(safe) / safe
        return np.where(u > u_floor, out, floor_ratio)


@dataclass
class HypothesisReport:
    """Outcome of one sampled hypothesis audit.

    margins maps inequality labels to their worst (most negative) sampled
    value; the inequality holds on the samples iff its margin is >= 0.
    Reports are deterministic given the sample descriptor.
    """

    name: str
    passed: bool
    margins: dict[str, float]
    samples: dict
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.passed and any(v < 0 for v in self.margins.values()):
            raise ValueError("a report with a negative margin cannot be passing")

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "passed": self.passed,
                "margins": self.margins,
                "samples": self.samples,
                "notes": self.notes,
            },
            indent=2,
            sort_keys=True,
        )


def _eval_checked(fn, r, what):
    out = np.asarray(fn(np.asarray(r, dtype=float)), dtype=float)
    bad = ~np.isfinite(out)
    if bad.any():
        where = np.asarray(r)[bad].ravel()[0]
        raise CoefficientEvaluationError(f"{what} is not finite at sample {where!r}")
    return out


def check_h1(cs: CoefficientSet, r_samples) -> HypothesisReport:
    """Two-sided growth bounds and strict monotonicity of beta on samples.

    Checks mu1*min(|r|^nu, |r|) <= |beta(r)| <= mu2*|r|, beta' > 0 away from
    zero, and the arithmetic condition nu > (d-1)/d.
    """
    r = np.asarray(list(r_samples), dtype=float)
    if r.size == 0:
        raise ValueError("r_samples must be nonempty")
    if not np.all(np.isfinite(r)):
        raise ValueError("r_samples must be finite")
    beta = _eval_checked(cs.beta, r, "beta")
    beta_p = _eval_checked(cs.beta_prime, r, "beta'")
    absr = np.abs(r)
    lower = np.abs(beta) - cs.mu1 * np.minimum(absr**cs.nu, absr)
    upper = cs.mu2 * absr - np.abs(beta)
    nonzero = absr > 0
    margins = {
        "lower_growth": float(lower.min()),
        "upper_growth": float(upper.min()),
        "beta_prime_positive": float(beta_p[nonzero].min()) if nonzero.any() else np.inf,
        "nu_exponent": cs.nu - (cs.dim - 1) / cs.dim,
    }
    passed = (
        margins["lower_growth"] >= -1e-14
        and margins["upper_growth"] >= -1e-14
        and margins["beta_prime_positive"] > 0
        and margins["nu_exponent"] > 0
    )
    # clamp roundoff-level negatives so the invariant "passing => margins >= 0" holds
    if passed:
        margins = {k: (0.0 if -1e-14 <= v < 0 else v) for k, v in margins.items()}
    return HypothesisReport(
        name="h1",
        passed=passed,
        margins=margins,
        samples={"r_count": int(r.size), "r_min": float(r.min()), "r_max": float(r.max())},
    )


def check_h2(
    cs: CoefficientSet,
    x_samples,
    quad_radius: float,
    h_fd: float = FD_STEP,
    n_shells: int = 6,
    quad_points_per_axis: int = 48,
    coercivity_margin: float = 1.0,
) -> HypothesisReport:
    """Potential-side conditions: Phi >= 1, the drift-dissipation sign
    inequality mu2*lap(Phi) - b0*|grad Phi|^2 <= 0, coercivity at the far
    boundary, and a heuristic integrability audit of Phi^(-m).

    The integral of Phi^(-m) over the whole space cannot be decided
    numerically; a decay-rate fit on nested quadrature shells stands in for
    it and is flagged as heuristic in the notes.
    """
    if quad_radius <= 0:
        raise ValueError("quad_radius must be positive")
    x = np.atleast_2d(np.asarray(list(x_samples), dtype=float))
    if x.shape[1] != cs.dim:
        raise ValueError(f"x_samples must have {cs.dim} coordinates")
    phi = _eval_checked(cs.phi, x, "Phi")
    grad = cs.grad_phi(x)
    lap = cs.laplacian_phi_at(x, h_fd=h_fd)
    sign_lhs = cs.mu2 * lap - cs.b0 * (grad**2).sum(axis=1)

    margins = {
        "phi_at_least_one": float(phi.min() - 1.0),
        "sign_condition": float(-sign_lhs.max()),
    }
    notes = []

    # coercivity: Phi at far probes must clear Phi near the origin by a margin
    phi0 = float(cs.phi(np.zeros((1, cs.dim)))[0])
    far = quad_radius * np.eye(cs.dim)
    far_probe = np.vstack([far, -far])
    phi_far = float(cs.phi(far_probe).min())
    margins["coercivity"] = phi_far - (phi0 + coercivity_margin)
    notes.append(
        f"coercivity probed at |x|={quad_radius:g}: Phi_far={phi_far:g} vs Phi(0)+{coercivity_margin:g}"
    )

    # nested-shell quadrature of Phi^(-m) on balls R_k = quad_radius * k/n_shells
    axis = np.linspace(-quad_radius, quad_radius, quad_points_per_axis, endpoint=False)
    axis += quad_radius / quad_points_per_axis  # midpoints
    mesh = np.meshgrid(*([axis] * cs.dim), indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    radii = np.linalg.norm(pts, axis=1)
    w = (2.0 * quad_radius / quad_points_per_axis) ** cs.dim
    integrand = cs.phi(pts) ** (-cs.m)
    shell_edges = quad_radius * np.arange(1, n_shells + 1) / n_shells
    partials = np.array([float(integrand[radii <= R].sum()) * w for R in shell_edges])
    shell_sums = np.diff(partials)
    positive = shell_sums > 0
    if positive.sum() >= 2:
        ks = np.log(shell_edges[1:][positive])
        vs = np.log(shell_sums[positive])
        slope = float(np.polyfit(ks, vs, 1)[0])
        # shell mass ~ R^(d-1-m*growth); decaying shells mean a convergent tail
        integrable = slope < 0.0
        notes.append(f"heuristic decay fit: shell-sum log-log slope {slope:.3f}")
    else:
        integrable = True
        notes.append("heuristic decay fit: shell sums vanish, integrand negligible")
    margins["integrability_heuristic"] = 0.0 if integrable else -1.0
    notes.append(f"partial integral of Phi^-m on |x|<={quad_radius:g}: {partials[-1]!r}")

    passed = all(v >= 0 for v in margins.values())
    return HypothesisReport(
        name="h2",
        passed=passed,
        margins=margins,
        samples={
            "x_count": int(x.shape[0]),
            "quad_radius": float(quad_radius),
            "quad_points_per_axis": quad_points_per_axis,
            "n_shells": n_shells,
        },
        notes=notes,
    )


def check_h3(cs: CoefficientSet, r_max: float = 10.0, b_max_bound: float = 1e6, n: int = 512) -> HypothesisReport:
    """Mobility bounds: b0 <= b(r) <= b_max_bound on [0, r_max]."""
    r = np.linspace(0.0, r_max, n)
    b = _eval_checked(cs.b, r, "b")
    margins = {
        "lower_bound": float(b.min() - cs.b0),
        "upper_bound": float(b_max_bound - b.max()),
    }
    return HypothesisReport(
        name="h3",
        passed=all(v >= 0 for v in margins.values()),
        margins=margins,
        samples={"r_max": float(r_max), "count": n, "b_max_bound": float(b_max_bound)},
    )


def check_uniqueness_condition(cs: CoefficientSet, alpha: float, r_samples) -> HypothesisReport:
    """Lipschitz domination |b(r)r - b(s)s| <= alpha * |beta(r) - beta(s)| over sample pairs."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    r = np.asarray(list(r_samples), dtype=float)
    beta = _eval_checked(cs.beta, r, "beta")
    g = _eval_checked(cs.b, r, "b") * r
    dg = np.abs(g[:, None] - g[None, :])
    dbeta = np.abs(beta[:, None] - beta[None, :])
    mask = ~np.eye(r.size, dtype=bool)
    degenerate = mask & (dbeta == 0) & (dg > 0)
    if degenerate.any():
        worst = np.inf
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dbeta > 0, dg / dbeta, 0.0)
        worst = float(ratio[mask].max()) if mask.any() else 0.0
    passed = np.isfinite(worst) and worst <= alpha * (1.0 + 1e-12) + 1e-15
    return HypothesisReport(
        name="uniqueness",
        passed=passed,
        margins={"alpha_minus_worst_ratio": float(alpha - worst)},
        samples={"r_count": int(r.size), "alpha": float(alpha)},
        notes=[f"worst ratio {worst!r}"],
    )


def fixed_point_criteria(cs: CoefficientSet, r_lo: float, r_hi: float, n_checkpoints: int = 12):
    """Divergence audit of the integral of beta'(s)/(s b(s)) from 1 outward.

    Integrates toward r_hi and toward r_lo on geometric checkpoints and fits
    the decay of per-octave increments: increments that do not decay signal
    divergence (to +inf at infinity, to -inf at zero).  Returns the two
    flags plus a note on which case the stored nu makes relevant.
    """
    if not (0 < r_lo < 1 < r_hi):
        raise ValueError("need 0 < r_lo < 1 < r_hi")

    def integrand(s):
        val = cs.beta_prime(np.array([s]))[0] / (s * cs.b(np.array([s]))[0])
        if not np.isfinite(val):
            raise CoefficientEvaluationError(f"integrand not finite at s={s!r}")
        return val

    def diverges(checkpoints):
        increments = []
        for a, b in zip(checkpoints[:-1], checkpoints[1:]):
            lo, hi = (a, b) if a < b else (b, a)
            val, _ = integrate.quad(integrand, lo, hi, limit=200)
            if not np.isfinite(val):
                raise CoefficientEvaluationError(
                    f"integral of beta'/(s b) not integrable on ({lo!r}, {hi!r})"
                )
            increments.append(abs(val))
        increments = np.asarray(increments)
        if np.all(increments < 1e-300):
            return False
        pos = increments > 0
        if pos.sum() < 2:
            return False
        k = np.arange(len(increments), dtype=float)[pos]
        slope = float(np.polyfit(k, np.log(increments[pos]), 1)[0])
        return slope > -0.1  # per-octave increments do not decay

    up = np.geomspace(1.0, r_hi, n_checkpoints)
    down = np.geomspace(1.0, r_lo, n_checkpoints)
    limit_at_infinity_diverges = diverges(up)
    limit_at_zero_diverges = diverges(down)
    if cs.nu > 1:
        relevant = "zero"
    elif cs.nu > 1 - 1.0 / cs.dim:
        relevant = "infinity"
    else:
        relevant = "none"
    return limit_at_infinity_diverges, limit_at_zero_diverges, relevant


# ---------------------------------------------------------------------------
# builtin families
# ---------------------------------------------------------------------------


def _quadratic_potential(scale: float):
    def phi(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return 1.0 + 0.5 * scale * (x**2).sum(axis=1)

    def grad(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return scale * x

    def lap(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.full(x.shape[0], scale * x.shape[1], dtype=float)

    return phi, grad, lap


def _linear_ou(dim: int, params: dict) -> CoefficientSet:
    scale = float(params.get("potential_scale", 1.0))
    phi, grad, lap = _quadratic_potential(scale)
    return CoefficientSet(
        name="linear-ou",
        dim=dim,
        beta=lambda r: np.asarray(r, dtype=float),
        beta_prime=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        b=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        b_prime=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        phi=phi,
        grad_phi=grad,
        laplacian_phi=lap,
        mu1=1.0,
        mu2=1.0,
        nu=1.0,
        b0=1.0,
        m=2.0,
        alpha=1.0,
        beta_slope_constant=1.0,
        params={"potential_scale": scale},
    )


def _porous_medium(dim: int, params: dict) -> CoefficientSet:
    # odd extension r|r| of the quadratic diffusion: monotone on all of R,
    # identical to r^2 on nonnegative densities
    scale = float(params.get("potential_scale", 1.0))
    mu2 = float(params.get("mu2", 2.0))
    phi, grad, lap = _quadratic_potential(scale)
    return CoefficientSet(
        name="porous-medium",
        dim=dim,
        beta=lambda r: np.asarray(r, dtype=float) * np.abs(r),
        beta_prime=lambda r: 2.0 * np.abs(np.asarray(r, dtype=float)),
        b=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        b_prime=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        phi=phi,
        grad_phi=grad,
        laplacian_phi=lap,
        mu1=1.0,
        mu2=mu2,
        nu=2.0,
        b0=1.0,
        m=2.0,
        alpha=None,
        params={"potential_scale": scale, "mu2": mu2},
    )


def _paper_phi(dim: int, params: dict) -> CoefficientSet:
    """Piecewise-power diffusion with the log-quadratic inner potential.

    beta follows the piecewise form mu1*r|r|^(d-1) inside |r| <= r0 with a
    C^1 linear continuation beyond, nu = d.  The potential keeps the inner
    branch |x|^2 log|x| + mu up to delta = exp(-(d+2)/(2d)) and glues a
    generic smoothstep-to-linear outer branch (slope eta at infinity); the
    outer branch is a stand-in, see the package docs.
    """
    mu = float(params.get("mu", 2.0))
    eta = float(params.get("eta", 5.0))
    glue_width = float(params.get("glue_width", 0.25))
    r0 = float(params.get("r0", 1.0))
    mu1 = float(params.get("mu1", 1.0))
    d = dim
    # linear growth of the outer branch: Phi^-m is integrable only for m > d
    m_exp = float(params.get("m", d + 2))
    delta = float(np.exp(-(d + 2) / (2.0 * d)))
    inner_slope = delta * (2.0 * np.log(delta) + 1.0)  # radial dPhi/dr at delta (< 0)
    inner_value = delta**2 * np.log(delta) + mu

    def radial(r):
        r = np.asarray(r, dtype=float)
        inner = np.where(r > 0, r**2 * np.log(np.maximum(r, 1e-300)), 0.0) + mu
        t = np.clip((r - delta) / glue_width, 0.0, None)
        # C^1 glue: slope ramps from inner_slope to eta over glue_width, then linear
        ramp = np.minimum(t, 1.0)
        s_blend = inner_slope * (ramp - 0.5 * ramp**2) + eta * 0.5 * ramp**2
        outer = (
            inner_value
            + glue_width * s_blend
            + np.maximum(r - delta - glue_width, 0.0) * eta
        )
        return np.where(r <= delta, inner, outer)

    def radial_slope(r):
        r = np.asarray(r, dtype=float)
        inner = np.where(r > 0, r * (2.0 * np.log(np.maximum(r, 1e-300)) + 1.0), 0.0)
        ramp = np.clip((r - delta) / glue_width, 0.0, 1.0)
        outer = inner_slope * (1.0 - ramp) + eta * ramp
        return np.where(r <= delta, inner, outer)

    def phi(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return radial(np.linalg.norm(x, axis=1))

    def grad(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        slope = radial_slope(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, x / np.maximum(r, 1e-300)[:, None], 0.0)
        return slope[:, None] * unit

    # beta: mu1 * r |r|^(d-1) for |r| <= r0, C^1 linear beyond
    edge_val = mu1 * r0**d
    edge_slope = mu1 * d * r0 ** (d - 1)
    mu2 = float(params.get("mu2", max(2.0 * edge_slope, 2.0 * mu1)))

    def beta(r):
        r = np.asarray(r, dtype=float)
        inner = mu1 * r * np.abs(r) ** (d - 1)
        outer = np.sign(r) * (edge_val + edge_slope * (np.abs(r) - r0))
        return np.where(np.abs(r) <= r0, inner, outer)

    def beta_prime(r):
        r = np.asarray(r, dtype=float)
        return np.where(np.abs(r) <= r0, mu1 * d * np.abs(r) ** (d - 1), edge_slope)

    return CoefficientSet(
        name="paper-phi",
        dim=dim,
        beta=beta,
        beta_prime=beta_prime,
        b=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        b_prime=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        phi=phi,
        grad_phi=grad,
        mu1=mu1,
        mu2=mu2,
        nu=float(d),
        b0=1.0,
        m=m_exp,
        alpha=None,
        params={
            "mu": mu,
            "eta": eta,
            "glue_width": glue_width,
            "r0": r0,
            "mu1": mu1,
            "mu2": mu2,
            "m": m_exp,
            "delta": delta,
        },
    )


def load_beta_table(path):
    """Monotone cubic interpolants for beta and beta' from CSV (r, beta, beta_prime)."""
    rs, betas, primes = [], [], []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [c.strip() for c in header[:3]] != ["r", "beta", "beta_prime"]:
            raise ValueError(f"{path}: expected header r,beta,beta_prime")
        for row in reader:
            if not row:
                continue
            rs.append(float(row[0]))
            betas.append(float(row[1]))
            primes.append(float(row[2]))
    r = np.asarray(rs)
    if not np.all(np.diff(r) > 0):
        raise ValueError(f"{path}: r column must be strictly increasing")
    beta_interp = interpolate.PchipInterpolator(r, np.asarray(betas))
    prime_interp = interpolate.PchipInterpolator(r, np.asarray(primes))

    def beta(s):
        return beta_interp(np.clip(np.asarray(s, dtype=float), r[0], r[-1]))

    def beta_prime(s):
        return prime_interp(np.clip(np.asarray(s, dtype=float), r[0], r[-1]))

    return beta, beta_prime


def _custom_table(dim: int, params: dict) -> CoefficientSet:
    path = params["table"]
    beta, beta_prime = load_beta_table(path)
    scale = float(params.get("potential_scale", 1.0))
    b_const = float(params.get("b_const", 1.0))
    phi, grad, lap = _quadratic_potential(scale)
    return CoefficientSet(
        name="custom-table",
        dim=dim,
        beta=beta,
        beta_prime=beta_prime,
        b=lambda r: np.full_like(np.asarray(r, dtype=float), b_const),
        b_prime=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        phi=phi,
        grad_phi=grad,
        laplacian_phi=lap,
        mu1=float(params.get("mu1", 1.0)),
        mu2=float(params.get("mu2", 1.0)),
        nu=float(params.get("nu", 1.0)),
        b0=b_const,
        m=2.0,
        alpha=params.get("alpha"),
        params=dict(params),
    )


BUILTIN_FAMILIES = {
    "linear-ou": _linear_ou,
    "porous-medium": _porous_medium,
    "paper-phi": _paper_phi,
    "custom-table": _custom_table,
}


def make_family(family_id: str, dim: int, params: dict | None = None) -> CoefficientSet:
    try:
        factory = BUILTIN_FAMILIES[family_id]
    except KeyError:
        raise ValueError(
            f"unknown coefficient family {family_id!r}; known: {sorted(BUILTIN_FAMILIES)}"
        ) from None
    return factory(dim, params or {})
