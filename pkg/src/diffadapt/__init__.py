"""Diffusion adaptation for distributed optimization over networks."""

__version__ = "0.1.0"

from .costs import (  # noqa: E402
    CostModel,
    LinearModelData,
    LocalizationCost,
    QuadraticCost,
    SparseRegCost,
    global_minimizer,
)
from .graph import (  # noqa: E402
    CombinationMatrices,
    Network,
    averaging_weights,
    geometric_topology,
    metropolis_weights,
    strategy_matrices,
    validate,
)
from .strategies import Strategy, diffusion_step, run  # noqa: E402
from .theory import analyze, steady_state_mse  # noqa: E402

__all__ = [
    "CombinationMatrices",
    "CostModel",
    "LinearModelData",
    "LocalizationCost",
    "Network",
    "QuadraticCost",
    "SparseRegCost",
    "Strategy",
    "analyze",
    "averaging_weights",
    "diffusion_step",
    "geometric_topology",
    "global_minimizer",
    "metropolis_weights",
    "run",
    "steady_state_mse",
    "strategy_matrices",
    "validate",
]
