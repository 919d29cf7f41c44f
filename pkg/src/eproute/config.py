"""Experiment configuration: JSON schema, defaults, and seed splitting."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .core import ClusterSpec, ConfigurationError, ModelSpec
from .costmodel import DEFAULT_ROUTING_OVERHEAD, CostProfile
from .routing import ROUTER_KINDS

# A100-40GB-class pool on one 600 GB/s NVLink domain.
DEFAULT_CLUSTER = {
    "num_gpus": 8,
    "hbm_bandwidth": 1.555e12,
    "peak_flops": 312e12,
    "link_bandwidth": 600e9,
    "collective_launch_overhead": 15e-6,
    "link_base_latency": 2e-6,
}

# Fine-grained 128-expert MoE at fp16 serving precision (Qwen3-30B-class
# geometry: hidden 2048, expert FFN intermediate 768, three weight matrices
# per expert -> 3*2048*768 params, 2 bytes each, 2 flops per param-token).
DEFAULT_MODEL = {
    "num_experts": 128,
    "top_k": 8,
    "hidden_dim": 2048,
    "dtype_bytes": 2,
    "expert_weight_bytes": 9437184.0,
    "dense_weight_bytes": 2e7,
    "flops_per_token_per_expert": 9437184.0,
    "num_moe_layers": 48,
}

DEFAULT_COST = {
    "routing_overhead": dict(DEFAULT_ROUTING_OVERHEAD),
    "topk_overhead": 18e-6,
    "topk_allgather_extra": 3e-6,
    "nonmoe_overhead": 100e-6,
}

DEFAULT_WORKLOAD = {
    "trace": None,  # path to an existing trace; null -> synthesize
    "skew": 1.2,
    "tokens_per_gpu": 32,
    "num_batches": 10,
    "prefill_tokens_per_gpu": 0,
    "prefill_batches": 0,
    "interleave": 1.0,
}

DEFAULT_PLACEMENT = {
    "ratio": 1.25,
    "history_skew": 1.2,
}

DEFAULT_SWEEP = {
    "batch_sizes": [64, 128, 256],
    "tp_degrees": [1, 2, 4, 8],
    "ratios": [1.0, 1.25, 1.5],
    "routers": ["eplb", "metro"],
}


@dataclass
class ExperimentConfig:
    cluster: ClusterSpec
    model: ModelSpec
    cost: Dict[str, Any]
    placement: Dict[str, Any]
    workload: Dict[str, Any]
    sweep: Dict[str, Any]
    router: Optional[str] = None
    seed: int = 0
    out_dir: str = "out"

    def profile(self) -> CostProfile:
        return CostProfile(
            cluster=self.cluster,
            model=self.model,
            routing_overhead=dict(self.cost["routing_overhead"]),
            topk_overhead=self.cost["topk_overhead"],
            topk_allgather_extra=self.cost["topk_allgather_extra"],
            nonmoe_overhead=self.cost["nonmoe_overhead"],
        )


def _merged(defaults: Dict[str, Any], given: Any, path: str) -> Dict[str, Any]:
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigurationError(f"{path}: expected an object")
    out = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigurationError(f"{path}.{key}: unknown field")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged = dict(defaults[key])
            merged.update(value)
            out[key] = merged
        else:
            out[key] = value
    return out


def _require_number(section: Dict[str, Any], key: str, path: str, minimum=None):
    value = section[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigurationError(f"{path}.{key}: expected a number, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigurationError(f"{path}.{key}: must be >= {minimum}")
    return value


def parse_config(raw: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw config mapping, filling defaults for missing fields."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config root: expected an object")
    unknown = set(raw) - {
        "cluster", "model", "cost", "placement", "workload", "sweep",
        "router", "seed", "out_dir",
    }
    if unknown:
        raise ConfigurationError(f"config root: unknown fields {sorted(unknown)}")

    cluster_raw = _merged(DEFAULT_CLUSTER, raw.get("cluster"), "cluster")
    model_raw = _merged(DEFAULT_MODEL, raw.get("model"), "model")
    cost = _merged(DEFAULT_COST, raw.get("cost"), "cost")
    placement = _merged(DEFAULT_PLACEMENT, raw.get("placement"), "placement")
    workload = _merged(DEFAULT_WORKLOAD, raw.get("workload"), "workload")
    sweep = _merged(DEFAULT_SWEEP, raw.get("sweep"), "sweep")

    for key in DEFAULT_CLUSTER:
        _require_number(cluster_raw, key, "cluster", minimum=0)
    for key in DEFAULT_MODEL:
        _require_number(model_raw, key, "model", minimum=0)
    for key in ("topk_overhead", "topk_allgather_extra", "nonmoe_overhead"):
        _require_number(cost, key, "cost", minimum=0)
    _require_number(placement, "ratio", "placement", minimum=1)
    _require_number(workload, "skew", "workload", minimum=0)
    for key in ("tokens_per_gpu", "num_batches", "prefill_tokens_per_gpu", "prefill_batches"):
        _require_number(workload, key, "workload", minimum=0)
    _require_number(workload, "interleave", "workload", minimum=0)

    router = raw.get("router")
    if router is not None and router not in ROUTER_KINDS:
        raise ConfigurationError(f"router: {router!r} not in {ROUTER_KINDS}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigurationError("seed: expected an integer")

    try:
        cluster = ClusterSpec(
            num_gpus=int(cluster_raw["num_gpus"]),
            hbm_bandwidth=float(cluster_raw["hbm_bandwidth"]),
            peak_flops=float(cluster_raw["peak_flops"]),
            link_bandwidth=float(cluster_raw["link_bandwidth"]),
            collective_launch_overhead=float(cluster_raw["collective_launch_overhead"]),
            link_base_latency=float(cluster_raw["link_base_latency"]),
        )
        model = ModelSpec(
            num_experts=int(model_raw["num_experts"]),
            top_k=int(model_raw["top_k"]),
            hidden_dim=int(model_raw["hidden_dim"]),
            dtype_bytes=int(model_raw["dtype_bytes"]),
            expert_weight_bytes=float(model_raw["expert_weight_bytes"]),
            dense_weight_bytes=float(model_raw["dense_weight_bytes"]),
            flops_per_token_per_expert=float(model_raw["flops_per_token_per_expert"]),
            num_moe_layers=int(model_raw["num_moe_layers"]),
        )
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc

    return ExperimentConfig(
        cluster=cluster,
        model=model,
        cost=cost,
        placement=placement,
        workload=workload,
        sweep=sweep,
        router=router,
        seed=seed,
        out_dir=str(raw.get("out_dir", "out")),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw)


def subseed(seed: int, label: str) -> int:
    """Derive a component seed from the top-level seed.

    Rule: low 63 bits of sha256("<seed>:<label>"), so components can be
    rerun in isolation with stable streams.
    """
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & (2 ** 63 - 1)
