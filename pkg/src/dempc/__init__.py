"""Dynamically embedded MPC for constrained LTI plants."""

from .lti import ContinuousPlant, DiscretePlant, PolytopicConstraints, Equilibrium, discretize, equilibrium_map
from .flow import FlowParams, PrimalDualState

__version__ = "0.1.0"

__all__ = [
    "ContinuousPlant",
    "DiscretePlant",
    "PolytopicConstraints",
    "Equilibrium",
    "discretize",
    "equilibrium_map",
    "FlowParams",
    "PrimalDualState",
]
