"""Expert-parallel MoE routing toolkit.

Token routers (even-split, greedy least-activated, exact, brute force) over
EPLB-style placements, with a roofline cost model and trace-driven
simulation for the memory-bound decode regime.
"""

from .core import (
    ClusterSpec,
    ConfigurationError,
    ExpertLoadVector,
    ModelSpec,
    PlacementMap,
    RoutingAssignment,
    Token,
    TokenBatch,
    Trace,
    TraceBatch,
    TraceFormatError,
    ValidationError,
    aggregate_loads,
    gen_zipf_trace,
    load_trace,
    save_trace,
    validate_assignment,
)
from .costmodel import CostProfile, LayerTiming
from .placement import ReplicationPlan, eplb_place, eplb_replicate
from .routing import (
    ROUTER_KINDS,
    lambda_of,
    route_bruteforce,
    route_eplb,
    route_metro,
    route_metro_parallel,
    route_optimal,
)

__all__ = [
    "ClusterSpec",
    "ConfigurationError",
    "CostProfile",
    "ExpertLoadVector",
    "LayerTiming",
    "ModelSpec",
    "PlacementMap",
    "ReplicationPlan",
    "ROUTER_KINDS",
    "RoutingAssignment",
    "Token",
    "TokenBatch",
    "Trace",
    "TraceBatch",
    "TraceFormatError",
    "ValidationError",
    "aggregate_loads",
    "eplb_place",
    "eplb_replicate",
    "gen_zipf_trace",
    "lambda_of",
    "load_trace",
    "route_bruteforce",
    "route_eplb",
    "route_metro",
    "route_metro_parallel",
    "route_optimal",
    "save_trace",
    "validate_assignment",
]

__version__ = "0.1.0"
