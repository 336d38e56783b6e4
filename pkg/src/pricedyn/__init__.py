"""Second-order price dynamics: models, integrators, diagnostics and closed forms."""

from pricedyn.analytic import ModeSet, conservative_modes, flat_solution, rotational_modes
from pricedyn.demand import (
    DecompositionResult,
    DemandModel,
    LinearTwoPriceSpec,
    decompose_linear,
    eval_excess_demand,
    linear_model,
    project_tangent,
    quadratic_model,
    verify_divergence_free,
    verify_walras,
)
from pricedyn.dynamics import (
    DynamicsParams,
    FlatState,
    SphereState,
    Trajectory,
    acceleration_flat,
    acceleration_sphere,
    integrate,
    renormalize,
    step_sphere,
)
from pricedyn.errors import NumericError, PriceDynError, UsageError

__version__ = "0.1.0"

__all__ = [
    "DecompositionResult",
    "DemandModel",
    "DynamicsParams",
    "FlatState",
    "LinearTwoPriceSpec",
    "ModeSet",
    "NumericError",
    "PriceDynError",
    "SphereState",
    "Trajectory",
    "UsageError",
    "acceleration_flat",
    "acceleration_sphere",
    "conservative_modes",
    "decompose_linear",
    "eval_excess_demand",
    "flat_solution",
    "integrate",
    "linear_model",
    "project_tangent",
    "quadratic_model",
    "renormalize",
    "rotational_modes",
    "step_sphere",
    "verify_divergence_free",
    "verify_walras",
]
