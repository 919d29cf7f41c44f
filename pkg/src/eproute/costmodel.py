"""Roofline timing for the MoE layer and the operational-intensity regime test.

Memory and compute times take the roofline max (overlap assumption);
communication and fixed per-layer overheads add serially. All constants are
SI units: bytes, seconds, flops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

from .core import ClusterSpec, ModelSpec, ValidationError

ALL_TO_ALL = "all_to_all"
ALL_GATHER = "all_gather"

MEMORY_BOUND = "memory_bound"
COMPUTE_BOUND = "compute_bound"

# Per-layer routing-kernel cost by router kind, seconds. The greedy kernel
# costs up to 26us on an A100 SM; the exact search costs over 100us on CPU.
DEFAULT_ROUTING_OVERHEAD: Dict[str, float] = {
    "eplb": 0.0,
    "metro": 26e-6,
    "metro-parallel": 26e-6,
    "optimal": 122e-6,
    "bruteforce": 122e-6,
}


@dataclass
class CostProfile:
    """Hardware + model constants feeding the roofline and comm models."""

    cluster: ClusterSpec
    model: ModelSpec
    routing_overhead: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_ROUTING_OVERHEAD)
    )
    topk_overhead: float = 18e-6  # per layer, baseline gating cost
    topk_allgather_extra: float = 3e-6  # added when gating runs on the full token set
    nonmoe_overhead: float = 100e-6  # attention etc., lumped per layer

    def __post_init__(self):
        for name in ("topk_overhead", "topk_allgather_extra", "nonmoe_overhead"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        for kind, value in self.routing_overhead.items():
            if value < 0:
                raise ValidationError(f"routing_overhead[{kind}] must be non-negative")


@dataclass
class LayerTiming:
    """Per-layer timing and load metrics from one simulated step."""

    mem_time: float
    compute_time: float
    comm_time: float
    routing_time: float
    topk_time: float
    nonmoe_time: float
    max_activated_experts: int
    max_tokens_per_gpu: int

    @property
    def layer_time(self) -> float:
        return (
            max(self.mem_time, self.compute_time)
            + self.comm_time
            + self.routing_time
            + self.topk_time
            + self.nonmoe_time
        )


def activation_bytes_per_token(model: ModelSpec) -> float:
    """Read + write of one token's hidden state."""
    return 2.0 * model.hidden_dim * model.dtype_bytes


def memory_time(lambda_max: int, tokens_max: int, p: CostProfile) -> float:
    """HBM traffic time on the busiest GPU.

    Weight traffic covers the activated expert replicas plus the per-layer
    dense weights; activation traffic covers the tokens resident on the GPU.
    """
    traffic = (
        lambda_max * p.model.expert_weight_bytes
        + p.model.dense_weight_bytes
        + tokens_max * activation_bytes_per_token(p.model)
    )
    return traffic / p.cluster.hbm_bandwidth


def compute_time(pairs_max: int, p: CostProfile) -> float:
    """FLOP time for the routed token-expert pairs on the busiest GPU."""
    return pairs_max * p.model.flops_per_token_per_expert / p.cluster.peak_flops


def comm_time(kind: str, tokens_per_gpu: int, p: CostProfile) -> float:
    """Latency + bandwidth model for one collective.

    all_to_all sends each GPU's payload once; all_gather sends it to every
    other GPU (ring semantics, (G-1) shards).
    """
    payload = tokens_per_gpu * p.model.hidden_dim * p.model.dtype_bytes
    if kind == ALL_TO_ALL:
        volume = payload
    elif kind == ALL_GATHER:
        volume = (p.cluster.num_gpus - 1) * payload
    else:
        raise ValidationError(f"unknown collective kind {kind!r}")
    return (
        p.cluster.collective_launch_overhead
        + p.cluster.link_base_latency
        + volume / p.cluster.link_bandwidth
    )


def comm_volume(kind: str, tokens_per_gpu: int, p: CostProfile) -> float:
    """Bytes sent per GPU for one collective."""
    payload = tokens_per_gpu * p.model.hidden_dim * p.model.dtype_bytes
    if kind == ALL_TO_ALL:
        return float(payload)
    if kind == ALL_GATHER:
        return float((p.cluster.num_gpus - 1) * payload)
    raise ValidationError(f"unknown collective kind {kind!r}")


def expected_distinct_experts(batch_tokens: int, model: ModelSpec) -> float:
    """Expected count of distinct activated experts under uniform gating."""
    n = model.num_experts
    draws = batch_tokens * model.top_k
    return n * (1.0 - (1.0 - 1.0 / n) ** draws)


def operational_intensity(batch_tokens: int, p: CostProfile) -> float:
    """Attainable flops per HBM byte for a decode batch of the given size."""
    if batch_tokens < 1:
        raise ValidationError("batch_tokens must be >= 1")
    flops = batch_tokens * p.model.top_k * p.model.flops_per_token_per_expert
    traffic = (
        expected_distinct_experts(batch_tokens, p.model) * p.model.expert_weight_bytes
        + p.model.dense_weight_bytes
        + batch_tokens * activation_bytes_per_token(p.model)
    )
    return flops / traffic


def regime(oi: float, cluster: ClusterSpec) -> str:
    """Classify an operational intensity against the hardware flops/byte ratio.

    The boundary itself counts as compute-bound (strict inequality).
    """
    ridge = cluster.peak_flops / cluster.hbm_bandwidth
    return MEMORY_BOUND if oi < ridge else COMPUTE_BOUND
