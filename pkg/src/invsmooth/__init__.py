"""Invariant smoothing on matrix Lie groups for low and zero process noise."""

from . import dynamics, lie, models, sim, smoother
from .dynamics import GroupAffineStep, preintegrate, step
from .lie import GroupElement, GroupId
from .smoother import (
    DegeneratePrior,
    FactorChainProblem,
    GaussNewtonOptions,
    MeasurementFactor,
    RetractionKind,
    SlidingWindowSmoother,
    TrajectoryEstimate,
    gauss_newton,
    linearize,
    marginalize_oldest,
    solve_degenerate_chain,
)

__version__ = "0.1.0"

__all__ = [
    "DegeneratePrior",
    "FactorChainProblem",
    "GaussNewtonOptions",
    "GroupAffineStep",
    "GroupElement",
    "GroupId",
    "MeasurementFactor",
    "RetractionKind",
    "SlidingWindowSmoother",
    "TrajectoryEstimate",
    "dynamics",
    "gauss_newton",
    "lie",
    "linearize",
    "marginalize_oldest",
    "models",
    "preintegrate",
    "sim",
    "smoother",
    "solve_degenerate_chain",
    "step",
]
