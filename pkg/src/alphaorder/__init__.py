"""Passing-order optimization for signal-free intersections.

A learned pointer-network policy proposes a candidate passing order for the
vehicles inside the control zone; a short-budget Monte Carlo tree search over
conflict-free vehicle groups refines it. Exhaustive enumeration, a FIFO
reservation baseline, and a rolling-horizon intersection simulator provide
ground truth and end-to-end evaluation.
"""

__version__ = "0.1.0"

from .core import (
    PassingOrder,
    Scenario,
    Vehicle,
    build_schedule,
    evaluate_objective,
    is_enforceable,
    make_scenario,
)
from .geometry import (
    GeometryConfig,
    IntersectionGeometry,
    Steering,
    build_geometry,
    default_geometry,
)

__all__ = [
    "GeometryConfig",
    "IntersectionGeometry",
    "PassingOrder",
    "Scenario",
    "Steering",
    "Vehicle",
    "build_geometry",
    "build_schedule",
    "default_geometry",
    "evaluate_objective",
    "is_enforceable",
    "make_scenario",
    "__version__",
]
