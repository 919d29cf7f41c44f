"""Command-line entry point: trace generation, placement, routing, simulation.

All randomness flows from the top-level seed through `config.subseed`, so
every command is deterministic and idempotent for a fixed config + seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import core, placement as placement_mod, routing, simulate
from .config import ExperimentConfig, load_config, subseed
from .core import (
    ConfigurationError,
    ExpertLoadVector,
    Trace,
    TraceBatch,
    ValidationError,
    gen_zipf_trace,
    load_trace,
    save_trace,
    zipf_popularity,
)

RESULT_COLUMNS = [
    "batch", "tp", "ep", "ratio", "router", "seed",
    "lambda_max_mean", "lambda_max_p99", "max_tokens_mean",
    "tpot_s", "ttft_s", "throughput_tok_s",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9e}"
    return str(value)


def _write_csv(path: Path, rows: List[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(RESULT_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row[c]) for c in RESULT_COLUMNS) + "\n")


def _out_dir(cfg: ExperimentConfig, override: Optional[str]) -> Path:
    out = Path(override) if override else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_trace(cfg: ExperimentConfig) -> Trace:
    wl = cfg.workload
    trace = Trace(
        num_experts=cfg.model.num_experts,
        num_gpus=cfg.cluster.num_gpus,
        top_k=cfg.model.top_k,
    )
    layers = cfg.model.num_moe_layers
    pop_seed = subseed(cfg.seed, "popularity")
    for b in range(int(wl["prefill_batches"])):
        batch = gen_zipf_trace(
            cfg.model, cfg.cluster, int(wl["prefill_tokens_per_gpu"]),
            float(wl["skew"]), subseed(cfg.seed, f"trace:prefill:{b}"),
            popularity_seed=pop_seed,
        )
        trace.batches.append(TraceBatch(layer=b % layers, phase="prefill", batch=batch))
    for b in range(int(wl["num_batches"])):
        batch = gen_zipf_trace(
            cfg.model, cfg.cluster, int(wl["tokens_per_gpu"]),
            float(wl["skew"]), subseed(cfg.seed, f"trace:decode:{b}"),
            popularity_seed=pop_seed,
        )
        trace.batches.append(TraceBatch(layer=b % layers, phase="decode", batch=batch))
    return trace


def _load_or_build_trace(cfg: ExperimentConfig, out: Path) -> Trace:
    path = cfg.workload.get("trace")
    if path:
        trace = load_trace(path)
    else:
        generated = out / "trace.jsonl"
        if generated.exists():
            trace = load_trace(generated)
        else:
            trace = _build_trace(cfg)
    trace.validate(cfg.model, cfg.cluster)
    return trace


def _history(cfg: ExperimentConfig) -> ExpertLoadVector:
    # History shares the workload's popularity permutation: EPLB replicates
    # from the last window of the same workload it will serve.
    probs = zipf_popularity(
        cfg.model.num_experts,
        float(cfg.placement["history_skew"]),
        subseed(cfg.seed, "popularity"),
    )
    return ExpertLoadVector(np.round(probs * 1e6).astype(np.int64))


def _build_placement(cfg: ExperimentConfig, ratio: Optional[float] = None):
    history = _history(cfg)
    use_ratio = float(ratio if ratio is not None else cfg.placement["ratio"])
    plan = placement_mod.eplb_replicate(history, use_ratio, cfg.cluster.num_gpus)
    return placement_mod.eplb_place(plan, history, cfg.cluster.num_gpus), history


def cmd_gen_trace(cfg: ExperimentConfig, out: Path, args) -> None:
    trace = _build_trace(cfg)
    trace.validate(cfg.model, cfg.cluster)
    save_trace(trace, out / "trace.jsonl")


def cmd_place(cfg: ExperimentConfig, out: Path, args) -> None:
    A, _ = _build_placement(cfg)
    placement_mod.save_placement(A, out / "placement.jsonl")


def cmd_route(cfg: ExperimentConfig, out: Path, args) -> None:
    trace = _load_or_build_trace(cfg, out)
    decode = [tb for tb in trace.batches if tb.phase == "decode"]
    if not 0 <= args.batch_index < len(decode):
        raise ValidationError(
            f"batch index {args.batch_index} out of range (trace has {len(decode)} decode batches)"
        )
    A, _ = _build_placement(cfg)
    loads = core.aggregate_loads(decode[args.batch_index].batch, cfg.model)
    kind = cfg.router or "metro"
    assignment = routing.run_router(kind, loads, A, seed=subseed(cfg.seed, "route"))
    report = core.validate_assignment(
        assignment, A, loads, require_single_replica=kind not in ("eplb",)
    )
    if not report.ok:
        raise ValidationError(f"router output failed validation: {report.violations}")
    routing.save_assignment(assignment, out / "assignment.jsonl")


def _simulate_rows(cfg: ExperimentConfig, trace: Trace, routers: Sequence[str]) -> List[dict]:
    profile = cfg.profile()
    rows = []
    decode_tokens_per_gpu = int(cfg.workload["tokens_per_gpu"])
    for kind in routers:
        A, _ = _build_placement(cfg)
        _, phases = simulate.simulate_codeployed(
            trace, A, kind, profile, float(cfg.workload["interleave"])
        )
        decode = phases.get("decode")
        prefill = phases.get("prefill")
        lam = [t.max_activated_experts for t in decode.layer_timings] if decode else [0]
        toks = [t.max_tokens_per_gpu for t in decode.layer_timings] if decode else [0]
        total_tokens = sum(p.tokens_processed for p in phases.values())
        total_time = sum(
            p.step_time * len(p.layer_timings) for p in phases.values()
        )
        rows.append({
            "batch": decode_tokens_per_gpu * cfg.cluster.num_gpus,
            "tp": 1,
            "ep": cfg.cluster.num_gpus,
            "ratio": float(cfg.placement["ratio"]),
            "router": kind,
            "seed": cfg.seed,
            "lambda_max_mean": float(np.mean(lam)),
            "lambda_max_p99": float(np.percentile(lam, 99)),
            "max_tokens_mean": float(np.mean(toks)),
            "tpot_s": decode.step_time if decode else 0.0,
            "ttft_s": prefill.step_time if prefill else 0.0,
            "throughput_tok_s": total_tokens / total_time if total_time else 0.0,
        })
    return rows


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> None:
    trace = _load_or_build_trace(cfg, out)
    routers = [cfg.router] if cfg.router else ["eplb", "metro", "optimal"]
    _write_csv(out / "results.csv", _simulate_rows(cfg, trace, routers))


def cmd_compare(cfg: ExperimentConfig, out: Path, args) -> None:
    trace = _load_or_build_trace(cfg, out)
    batches = [tb.batch for tb in trace.batches if tb.phase == "decode"]
    if not batches:
        raise ValidationError("trace has no decode batches to compare on")
    A, _ = _build_placement(cfg)
    profile = cfg.profile()
    stats = simulate.compare_routers(batches, A, profile)
    rows = []
    for kind in sorted(stats):
        s = stats[kind]
        if not s["lambda_max"]:
            continue
        rows.append({
            "batch": int(cfg.workload["tokens_per_gpu"]) * cfg.cluster.num_gpus,
            "tp": 1,
            "ep": cfg.cluster.num_gpus,
            "ratio": float(cfg.placement["ratio"]),
            "router": kind,
            "seed": cfg.seed,
            "lambda_max_mean": float(np.mean(s["lambda_max"])),
            "lambda_max_p99": float(np.percentile(s["lambda_max"], 99)),
            "max_tokens_mean": float(np.mean(s["max_tokens"])),
            "tpot_s": float(np.mean(s["tpot"])),
            "ttft_s": 0.0,
            "throughput_tok_s": 0.0,
        })
    _write_csv(out / "compare.csv", rows)


def _sweep_grid(cfg: ExperimentConfig) -> List[simulate.SweepConfig]:
    sw = cfg.sweep
    g = cfg.cluster.num_gpus
    grid = []
    seen = set()
    for batch in sw["batch_sizes"]:
        for tp in sw["tp_degrees"]:
            if g % tp != 0:
                raise ConfigurationError(f"sweep.tp_degrees: {tp} does not divide num_gpus={g}")
            ep = g // tp
            ratios = sw["ratios"] if ep > 1 else [1.0]
            for ratio in ratios:
                for router in sw["routers"]:
                    key = (int(batch), int(tp), ep, float(ratio), router)
                    if key in seen:
                        continue
                    seen.add(key)
                    grid.append(simulate.SweepConfig(
                        batch_size=int(batch), tp_degree=int(tp), ep_degree=ep,
                        replication_ratio=float(ratio), router=router,
                    ))
    return grid


def _sweep_rows(cfg: ExperimentConfig, points: Sequence[simulate.SweepPoint]) -> List[dict]:
    rows = []
    for pt in points:
        rows.append({
            "batch": pt.batch_size,
            "tp": pt.tp_degree,
            "ep": pt.ep_degree,
            "ratio": pt.replication_ratio,
            "router": pt.router,
            "seed": cfg.seed,
            "lambda_max_mean": float(pt.lambda_max),
            "lambda_max_p99": float(pt.lambda_max),
            "max_tokens_mean": float(pt.max_tokens),
            "tpot_s": pt.tpot,
            "ttft_s": 0.0,
            "throughput_tok_s": pt.decode_throughput,
        })
    return rows


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> None:
    grid = _sweep_grid(cfg)
    profile = cfg.profile()
    points, pareto = simulate.pareto_sweep(
        grid, subseed(cfg.seed, "sweep"), profile, skew=float(cfg.workload["skew"])
    )
    order = sorted(points, key=lambda s: (s.tpot, -s.decode_throughput, s.router))
    _write_csv(out / "sweep.csv", _sweep_rows(cfg, order))
    _write_csv(out / "pareto.csv", _sweep_rows(cfg, pareto))


COMMANDS = {
    "gen-trace": cmd_gen_trace,
    "place": cmd_place,
    "route": cmd_route,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eproute",
        description="Expert-parallel MoE routing toolkit: traces, placement, "
        "routing, and roofline simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--router", choices=routing.ROUTER_KINDS, default=None)
        p.add_argument("--ratio", type=float, default=None, help="override replication ratio")
        if name == "route":
            p.add_argument("--batch-index", type=int, default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.router is not None:
            cfg.router = args.router
        if args.ratio is not None:
            cfg.placement["ratio"] = args.ratio
        out = _out_dir(cfg, args.out)
        COMMANDS[args.command](cfg, out, args)
    except (ValidationError, ConfigurationError, core.TraceFormatError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
