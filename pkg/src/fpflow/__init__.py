"""fpflow: nonlinear Fokker-Planck flows on truncated boxes.

Builds the contraction flow of a degenerate drift-diffusion equation by
implicit resolvent stepping, audits the coefficient hypotheses numerically,
verifies contraction/invariance/ergodicity properties at desk scale, and
cross-validates the flow's time marginals against an interacting-particle
simulation of the associated law-dependent diffusion.
"""

__version__ = "0.1.0"

from .coefficients import (
    BUILTIN_FAMILIES,
    CoefficientSet,
    HypothesisReport,
    check_h1,
    check_h2,
    check_h3,
    check_uniqueness_condition,
    fixed_point_criteria,
    make_family,
)
from .discretization import (
    DensityField,
    GridSpec,
    WeightedNormContext,
    apply_operator,
    l1_distance,
    l1_norm,
    mass,
    weighted_norm,
)
from .ergodic import (
    Observable,
    OmegaEstimate,
    cesaro_cauchy_test,
    cesaro_mean_field,
    cesaro_observable,
    estimate_omega,
    fixed_point_test,
    stationary_residual,
)
from .particles import (
    DensityEstimate,
    ParticleEnsemble,
    ParticleSummary,
    em_step,
    estimate_density,
    marginal_ergodic_average,
    mc_standard_error,
    occupation_measure,
    simulate,
)
from .resolvent import (
    NewtonError,
    ResolventResult,
    SolverConfig,
    resolvent,
    solve_regularized,
)
from .semigroup import (
    PositivityError,
    Trajectory,
    check_contraction,
    check_semigroup_property,
    evolve,
    exponential_formula,
    step,
)

__all__ = [
    "__version__",
    "BUILTIN_FAMILIES",
    "CoefficientSet",
    "HypothesisReport",
    "check_h1",
    "check_h2",
    "check_h3",
    "check_uniqueness_condition",
    "fixed_point_criteria",
    "make_family",
    "DensityField",
    "GridSpec",
    "WeightedNormContext",
    "apply_operator",
    "l1_distance",
    "l1_norm",
    "mass",
    "weighted_norm",
    "Observable",
    "OmegaEstimate",
    "cesaro_cauchy_test",
    "cesaro_mean_field",
    "cesaro_observable",
    "estimate_omega",
    "fixed_point_test",
    "stationary_residual",
    "DensityEstimate",
    "ParticleEnsemble",
    "ParticleSummary",
    "em_step",
    "estimate_density",
    "marginal_ergodic_average",
    "mc_standard_error",
    "occupation_measure",
    "simulate",
    "NewtonError",
    "ResolventResult",
    "SolverConfig",
    "resolvent",
    "solve_regularized",
    "PositivityError",
    "Trajectory",
    "check_contraction",
    "check_semigroup_property",
    "evolve",
    "exponential_formula",
    "step",
]
