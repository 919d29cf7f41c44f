"""Trace-driven simulation: decode/prefill steps, router comparison, Pareto sweep.

Per-step timing is taken on the bottleneck GPU. Dispatch uses all-gather for
the greedy routers (they need the global per-expert load vector before
gating) and all-to-all otherwise; the combine is always all-to-all.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import costmodel
from .core import (
    ClusterSpec,
    ConfigurationError,
    ExpertLoadVector,
    ModelSpec,
    PlacementMap,
    TokenBatch,
    Trace,
    ValidationError,
    aggregate_loads,
    gen_zipf_trace,
    zipf_popularity,
)
from .costmodel import ALL_GATHER, ALL_TO_ALL, CostProfile, LayerTiming
from .placement import eplb_place, eplb_replicate
from .routing import run_router

ALL_GATHER_ROUTERS = ("metro", "metro-parallel")


@dataclass
class PhaseResult:
    """Aggregated per-phase metrics over one simulated run."""

    phase: str
    layer_timings: List[LayerTiming]
    step_time: float  # tpot for decode, ttft for prefill (seconds per step)
    tokens_processed: int
    token_throughput: float


@dataclass(frozen=True)
class SweepConfig:
    batch_size: int
    tp_degree: int
    ep_degree: int
    replication_ratio: float
    router: str


@dataclass(frozen=True)
class SweepPoint:
    batch_size: int
    tp_degree: int
    ep_degree: int
    replication_ratio: float
    router: str
    tpot: float
    decode_throughput: float
    lambda_max: int = 0
    max_tokens: int = 0


def _dispatch_kind(router: str) -> str:
    return ALL_GATHER if router in ALL_GATHER_ROUTERS else ALL_TO_ALL


def _step_timing(
    batch: TokenBatch,
    assignment_lambda: int,
    tokens_max: int,
    router: str,
    p: CostProfile,
) -> LayerTiming:
    src_max = batch.max_tokens_per_source_gpu(p.cluster.num_gpus)
    dispatch = costmodel.comm_time(_dispatch_kind(router), src_max, p)
    combine = costmodel.comm_time(ALL_TO_ALL, src_max, p)
    topk = p.topk_overhead + (
        p.topk_allgather_extra if _dispatch_kind(router) == ALL_GATHER else 0.0
    )
    return LayerTiming(
        mem_time=costmodel.memory_time(assignment_lambda, tokens_max, p),
        compute_time=costmodel.compute_time(tokens_max, p),
        comm_time=dispatch + combine,
        routing_time=p.routing_overhead.get(router, 0.0),
        topk_time=topk,
        nonmoe_time=p.nonmoe_overhead,
        max_activated_experts=assignment_lambda,
        max_tokens_per_gpu=tokens_max,
    )


def simulate_decode_step(
    batch: TokenBatch,
    A: PlacementMap,
    router: str,
    p: CostProfile,
    seed: int = 0,
) -> LayerTiming:
    """Route one decode batch and evaluate the per-layer roofline cost."""
    loads = aggregate_loads(batch, p.model)
    assignment = run_router(router, loads, A, seed=seed)
    return _step_timing(
        batch, assignment.lam, assignment.max_tokens_per_gpu(), router, p
    )


def simulate_prefill_step(batch: TokenBatch, A: PlacementMap, p: CostProfile) -> LayerTiming:
    """Prefill always routes with the even-split baseline."""
    return simulate_decode_step(batch, A, "eplb", p)


def _phase_result(
    phase: str, timings: List[LayerTiming], tokens: int, p: CostProfile
) -> PhaseResult:
    per_step = [t.layer_time * p.model.num_moe_layers for t in timings]
    total_time = float(sum(per_step))
    step_time = total_time / len(per_step) if per_step else 0.0
    throughput = tokens / total_time if total_time > 0 else 0.0
    return PhaseResult(
        phase=phase,
        layer_timings=timings,
        step_time=step_time,
        tokens_processed=tokens,
        token_throughput=throughput,
    )


def simulate_codeployed(
    trace: Trace,
    A: PlacementMap,
    router: str,
    p: CostProfile,
    prefill_decode_interleave: float = 1.0,
) -> Tuple[float, Dict[str, PhaseResult]]:
    """Simulate a co-deployed prefill/decode run over a whole trace.

    Each trace batch stands for one step through all MoE layers. The
    interleave ratio fixes the scheduling order (decode steps consumed per
    prefill step); total time is the sum of all step times, so the reported
    throughput is order-invariant.
    """
    if not trace.batches:
        raise ValidationError("trace has no batches")
    if prefill_decode_interleave <= 0:
        raise ValidationError("interleave ratio must be positive")
    timings: Dict[str, List[LayerTiming]] = {"prefill": [], "decode": []}
    tokens: Dict[str, int] = {"prefill": 0, "decode": 0}
    for tb in trace.batches:
        if tb.phase == "prefill":
            timings["prefill"].append(simulate_prefill_step(tb.batch, A, p))
            tokens["prefill"] += len(tb.batch)
        else:
            timings["decode"].append(simulate_decode_step(tb.batch, A, router, p))
            tokens["decode"] += len(tb.batch)
    results = {
        phase: _phase_result(phase, ts, tokens[phase], p)
        for phase, ts in timings.items()
        if ts
    }
    total_tokens = sum(tokens.values())
    total_time = sum(
        t.layer_time * p.model.num_moe_layers for ts in timings.values() for t in ts
    )
    return total_tokens / total_time, results


def compare_routers(
    batches: Sequence[TokenBatch],
    A: PlacementMap,
    p: CostProfile,
    routers: Sequence[str] = ("eplb", "metro", "optimal"),
    include_bruteforce_guard: int = 0,
) -> Dict[str, Dict[str, List[float]]]:
    """Run each router on every batch; collect lambda, load, and tpot samples.

    When `include_bruteforce_guard` is positive, the brute-force oracle also
    runs on batches whose search space fits under the guard.
    """
    out: Dict[str, Dict[str, List[float]]] = {
        r: {"lambda_max": [], "max_tokens": [], "tpot": []} for r in routers
    }
    if include_bruteforce_guard > 0 and "bruteforce" not in out:
        out["bruteforce"] = {"lambda_max": [], "max_tokens": [], "tpot": []}
    for batch in batches:
        loads = aggregate_loads(batch, p.model)
        for r in routers:
            timing = simulate_decode_step(batch, A, r, p)
            out[r]["lambda_max"].append(float(timing.max_activated_experts))
            out[r]["max_tokens"].append(float(timing.max_tokens_per_gpu))
            out[r]["tpot"].append(timing.layer_time * p.model.num_moe_layers)
        if include_bruteforce_guard > 0:
            active = np.flatnonzero(loads.loads)
            space = 1
            for i in active:
                space *= len(A.replicas(int(i)))
                if space > include_bruteforce_guard:
                    break
            if space <= include_bruteforce_guard:
                timing = simulate_decode_step(batch, A, "bruteforce", p)
                out["bruteforce"]["lambda_max"].append(float(timing.max_activated_experts))
                out["bruteforce"]["max_tokens"].append(float(timing.max_tokens_per_gpu))
                out["bruteforce"]["tpot"].append(timing.layer_time * p.model.num_moe_layers)
    return out


def _scaled_profile(p: CostProfile, tp: int, ep: int) -> CostProfile:
    """Shard weights and flops across the TP group; shrink the EP domain."""
    model = replace(
        p.model,
        expert_weight_bytes=p.model.expert_weight_bytes / tp,
        dense_weight_bytes=p.model.dense_weight_bytes / tp,
        flops_per_token_per_expert=p.model.flops_per_token_per_expert / tp,
    )
    cluster = replace(p.cluster, num_gpus=ep)
    return replace(p, model=model, cluster=cluster)


def _sweep_placement(
    p: CostProfile, ep: int, ratio: float, seed: int
) -> Tuple[PlacementMap, ExpertLoadVector]:
    history = ExpertLoadVector(
        np.round(zipf_popularity(p.model.num_experts, 1.2, seed) * 1e6).astype(np.int64)
    )
    plan = eplb_replicate(history, ratio, ep)
    return eplb_place(plan, history, ep), history


def evaluate_sweep_config(
    cfg: SweepConfig, trace_seed: int, p: CostProfile, skew: float = 1.2
) -> SweepPoint:
    """Simulate one decode configuration of the sweep grid.

    With a full-TP mapping (ep == 1) the expert-parallel subsystem vanishes:
    there is no routing decision, no EP dispatch/combine, and every router
    yields the identical point.
    """
    g = p.cluster.num_gpus
    if cfg.tp_degree * cfg.ep_degree != g:
        raise ConfigurationError(
            f"tp ({cfg.tp_degree}) x ep ({cfg.ep_degree}) must equal num_gpus ({g})"
        )
    if cfg.batch_size % cfg.ep_degree != 0:
        raise ConfigurationError("batch size must divide evenly over EP ranks")
    sp = _scaled_profile(p, cfg.tp_degree, cfg.ep_degree)
    ratio = cfg.replication_ratio if cfg.ep_degree > 1 else 1.0
    tokens_per_gpu = cfg.batch_size // cfg.ep_degree
    batch = gen_zipf_trace(sp.model, sp.cluster, tokens_per_gpu, skew, trace_seed)

    if cfg.ep_degree > 1:
        A, _ = _sweep_placement(sp, cfg.ep_degree, ratio, trace_seed)
        timing = simulate_decode_step(batch, A, cfg.router, sp)
        layer_time = timing.layer_time
        lambda_max = timing.max_activated_experts
        max_tokens = timing.max_tokens_per_gpu
    else:
        # Full TP: all experts resident (sharded) on the single EP rank.
        loads = aggregate_loads(batch, sp.model)
        lambda_max = int((loads.loads > 0).sum())
        max_tokens = cfg.batch_size
        mem = costmodel.memory_time(lambda_max, max_tokens, sp)
        comp = costmodel.compute_time(max_tokens, sp)
        layer_time = max(mem, comp) + sp.topk_overhead + sp.nonmoe_overhead
    if cfg.tp_degree > 1:
        # One extra collective per layer across the TP group.
        layer_time += costmodel.comm_time(ALL_TO_ALL, tokens_per_gpu, sp)

    tpot = layer_time * p.model.num_moe_layers
    return SweepPoint(
        batch_size=cfg.batch_size,
        tp_degree=cfg.tp_degree,
        ep_degree=cfg.ep_degree,
        replication_ratio=ratio,
        router=cfg.router,
        tpot=tpot,
        decode_throughput=cfg.batch_size / tpot,
        lambda_max=lambda_max,
        max_tokens=max_tokens,
    )


def pareto_filter(points: Iterable[SweepPoint]) -> List[SweepPoint]:
    """Keep points not dominated in (tpot, throughput)."""
    pts = list(points)
    keep = []
    for a in pts:
        dominated = any(
            (b.tpot <= a.tpot and b.decode_throughput >= a.decode_throughput)
            and (b.tpot < a.tpot or b.decode_throughput > a.decode_throughput)
            for b in pts
        )
        if not dominated:
            keep.append(a)
    keep.sort(key=lambda s: (s.tpot, -s.decode_throughput))
    return keep


def pareto_sweep(
    configs: Sequence[SweepConfig],
    trace_seed: int,
    p: CostProfile,
    skew: float = 1.2,
) -> Tuple[List[SweepPoint], List[SweepPoint]]:
    """Evaluate a config grid; return (all points, Pareto-optimal points)."""
    points = [evaluate_sweep_config(cfg, trace_seed, p, skew=skew) for cfg in configs]
    return points, pareto_filter(points)
