"""Trace-driven decode/prefill simulation, router comparison, and the sweep."""

import numpy as np
import pytest

from eproute import (
    ClusterSpec,
    ConfigurationError,
    CostProfile,
    ExpertLoadVector,
    ModelSpec,
    PlacementMap,
    Token,
    TokenBatch,
    Trace,
    TraceBatch,
    ValidationError,
    gen_zipf_trace,
)
from eproute.core import zipf_popularity
from eproute.placement import eplb_place, eplb_replicate
from eproute.simulate import (
    SweepConfig,
    compare_routers,
    evaluate_sweep_config,
    pareto_filter,
    pareto_sweep,
    simulate_codeployed,
    simulate_decode_step,
    simulate_prefill_step,
)

from .conftest import make_placement


def two_gpu_profile(**model_overrides):
    cluster = ClusterSpec(2, 1.555e12, 312e12, 600e9, 15e-6, 2e-6)
    model_kwargs = dict(
        num_experts=2,
        top_k=2,
        hidden_dim=1,
        dtype_bytes=2,
        expert_weight_bytes=9437184.0,
        dense_weight_bytes=0.0,
        flops_per_token_per_expert=9437184.0,
        num_moe_layers=4,
    )
    model_kwargs.update(model_overrides)
    return CostProfile(cluster=cluster, model=ModelSpec(**model_kwargs))


def full_replication_2x2():
    return PlacementMap(matrix=np.ones((2, 2), dtype=np.int8), slots_per_gpu=2)


def both_experts_batch(tokens_per_gpu=8):
    tokens = [
        Token(source_gpu=j % 2, expert_ids=(0, 1)) for j in range(2 * tokens_per_gpu)
    ]
    return TokenBatch(tokens)


class TestDecodeStep:
    def test_empty_batch_costs_overheads_only(self):
        p = two_gpu_profile()
        t = simulate_decode_step(TokenBatch(), full_replication_2x2(), "eplb", p)
        assert t.mem_time == 0.0
        assert t.compute_time == 0.0
        assert t.max_activated_experts == 0
        assert t.layer_time > 0.0

    def test_replication_halves_greedy_memory_time(self):
        # Both experts fully replicated and both active on every token: the
        # even split activates both experts on both GPUs (lambda 2) while the
        # greedy router separates them (lambda 1). With no dense weights and
        # a 1-wide hidden state, memory time drops by half.
        p = two_gpu_profile()
        A = full_replication_2x2()
        batch = both_experts_batch()
        eplb = simulate_decode_step(batch, A, "eplb", p)
        metro = simulate_decode_step(batch, A, "metro", p)
        assert eplb.max_activated_experts == 2
        assert metro.max_activated_experts == 1
        assert metro.mem_time == pytest.approx(eplb.mem_time / 2, rel=1e-4)

    def test_metro_at_least_optimal_modulo_overheads(self):
        p = CostProfile(
            cluster=ClusterSpec(4, 1.555e12, 312e12, 600e9, 15e-6, 2e-6),
            model=ModelSpec(16, 4, 2048, 2, 9437184.0, 0.0, 9437184.0, 4),
        )
        A = make_placement(16, 4, 1.25, history_seed=5)
        batch = gen_zipf_trace(p.model, p.cluster, 16, 1.2, seed=6, popularity_seed=5)
        metro = simulate_decode_step(batch, A, "metro", p)
        optimal = simulate_decode_step(batch, A, "optimal", p)
        overhead_delta = (
            optimal.routing_time - metro.routing_time
            + optimal.comm_time - metro.comm_time
            + optimal.topk_time - metro.topk_time
        )
        assert metro.layer_time >= optimal.layer_time - max(overhead_delta, 0.0) - 1e-15
        assert metro.max_activated_experts >= optimal.max_activated_experts


class TestPrefillStep:
    def test_large_balanced_batch_is_compute_bound(self, profile):
        A = make_placement(128, 8, 1.25, history_seed=5)
        batch = gen_zipf_trace(profile.model, profile.cluster, 1024, 0.5, seed=8)
        t = simulate_prefill_step(batch, A, profile)
        assert t.compute_time > t.mem_time

    def test_empty_batch(self, profile):
        # No activations or compute; only the per-layer dense weights load.
        A = make_placement(128, 8, 1.25, history_seed=5)
        t = simulate_prefill_step(TokenBatch(), A, profile)
        assert t.compute_time == 0.0
        assert t.mem_time == pytest.approx(
            profile.model.dense_weight_bytes / profile.cluster.hbm_bandwidth
        )

    def test_compute_time_scales_with_batch(self, profile):
        A = make_placement(128, 8, 1.0, history_seed=5)
        small = gen_zipf_trace(profile.model, profile.cluster, 512, 0.0, seed=9)
        big = gen_zipf_trace(profile.model, profile.cluster, 1024, 0.0, seed=9)
        t_small = simulate_prefill_step(small, A, profile)
        t_big = simulate_prefill_step(big, A, profile)
        assert t_big.compute_time == pytest.approx(2 * t_small.compute_time, rel=0.05)


def build_trace(model, cluster, pop_seed, decode_batches, prefill_batches, seed0):
    trace = Trace(model.num_experts, cluster.num_gpus, model.top_k)
    for b in range(decode_batches):
        batch = gen_zipf_trace(model, cluster, 32, 1.2, seed0 + b, popularity_seed=pop_seed)
        trace.batches.append(TraceBatch(b % model.num_moe_layers, "decode", batch))
    for b in range(prefill_batches):
        batch = gen_zipf_trace(model, cluster, 256, 1.2, seed0 + 500 + b, popularity_seed=pop_seed)
        trace.batches.append(TraceBatch(b % model.num_moe_layers, "prefill", batch))
    return trace


class TestCodeployed:
    def test_decode_only_identity(self, profile):
        A = make_placement(128, 8, 1.25, history_seed=5)
        trace = build_trace(profile.model, profile.cluster, 5, 4, 0, seed0=100)
        throughput, phases = simulate_codeployed(trace, A, "metro", profile)
        assert set(phases) == {"decode"}
        decode = phases["decode"]
        total_time = sum(
            t.layer_time * profile.model.num_moe_layers for t in decode.layer_timings
        )
        assert throughput == pytest.approx(decode.tokens_processed / total_time)

    def test_prefill_only_identity(self, profile):
        A = make_placement(128, 8, 1.25, history_seed=5)
        trace = build_trace(profile.model, profile.cluster, 5, 0, 2, seed0=100)
        throughput, phases = simulate_codeployed(trace, A, "metro", profile)
        assert set(phases) == {"prefill"}
        assert throughput == pytest.approx(phases["prefill"].token_throughput)

    def test_empty_trace_rejected(self, profile):
        A = make_placement(128, 8, 1.25, history_seed=5)
        with pytest.raises(ValidationError):
            simulate_codeployed(Trace(128, 8, 8), A, "metro", profile)

    def test_token_conservation(self, profile):
        A = make_placement(128, 8, 1.25, history_seed=5)
        trace = build_trace(profile.model, profile.cluster, 5, 3, 2, seed0=100)
        _, phases = simulate_codeployed(trace, A, "metro", profile)
        total = sum(p.tokens_processed for p in phases.values())
        assert total == sum(len(tb.batch) for tb in trace.batches)

    def test_deterministic(self, profile):
        A = make_placement(128, 8, 1.25, history_seed=5)
        trace = build_trace(profile.model, profile.cluster, 5, 3, 1, seed0=100)
        first = simulate_codeployed(trace, A, "metro", profile)
        second = simulate_codeployed(trace, A, "metro", profile)
        assert first[0] == second[0]

    def test_greedy_beats_even_split_on_skewed_traces(self, profile):
        # Decode-heavy traces at 1.5x replication: the greedy router's lower
        # activation counts win on total throughput for every seed.
        for s in range(20):
            pop = 1000 + s
            A = make_placement(128, 8, 1.5, history_seed=pop)
            trace = build_trace(profile.model, profile.cluster, pop, 6, 2, seed0=7000 + s * 100)
            metro, _ = simulate_codeployed(trace, A, "metro", profile, 1.5)
            eplb, _ = simulate_codeployed(trace, A, "eplb", profile, 1.5)
            assert metro > eplb


class TestCompareRouters:
    def test_single_batch_dominance(self, profile):
        A = make_placement(128, 8, 1.25, history_seed=5)
        batch = gen_zipf_trace(profile.model, profile.cluster, 32, 1.2, 11, popularity_seed=5)
        stats = compare_routers([batch], A, profile)
        assert stats["optimal"]["lambda_max"][0] <= stats["metro"]["lambda_max"][0]
        assert stats["metro"]["lambda_max"][0] <= stats["eplb"]["lambda_max"][0]

    def test_no_replication_leaves_no_choice(self, profile):
        A = make_placement(128, 8, 1.0, history_seed=5)
        batches = [
            gen_zipf_trace(profile.model, profile.cluster, 32, 1.2, 20 + b, popularity_seed=5)
            for b in range(3)
        ]
        stats = compare_routers(batches, A, profile)
        assert stats["eplb"]["lambda_max"] == stats["metro"]["lambda_max"]
        assert stats["metro"]["lambda_max"] == stats["optimal"]["lambda_max"]


class TestSweep:
    def test_single_config_is_pareto_optimal(self, profile):
        cfg = SweepConfig(batch_size=128, tp_degree=1, ep_degree=8, replication_ratio=1.25, router="metro")
        points, pareto = pareto_sweep([cfg], 42, profile)
        assert pareto == points

    def test_dominated_point_excluded(self):
        from eproute.simulate import SweepPoint

        good = SweepPoint(64, 1, 8, 1.25, "metro", tpot=1e-3, decode_throughput=1e5)
        bad = SweepPoint(64, 1, 8, 1.25, "eplb", tpot=2e-3, decode_throughput=5e4)
        assert pareto_filter([good, bad]) == [good]

    def test_invalid_factorization_rejected(self, profile):
        cfg = SweepConfig(batch_size=64, tp_degree=3, ep_degree=2, replication_ratio=1.0, router="metro")
        with pytest.raises(ConfigurationError):
            evaluate_sweep_config(cfg, 42, profile)

    def test_full_tp_points_coincide(self, profile):
        points = [
            evaluate_sweep_config(
                SweepConfig(batch_size=128, tp_degree=8, ep_degree=1, replication_ratio=r, router=router),
                42,
                profile,
            )
            for router in ("eplb", "metro")
            for r in (1.0, 1.5)
        ]
        assert len({(pt.tpot, pt.decode_throughput, pt.lambda_max) for pt in points}) == 1


class TestRatioDirection:
    RATIOS = (1.0, 1.125, 1.25, 1.5)

    def mean_metrics(self, profile, router):
        pop = 11
        batches = [
            gen_zipf_trace(profile.model, profile.cluster, 32, 1.2, 5000 + s, popularity_seed=pop)
            for s in range(30)
        ]
        out = []
        for ratio in self.RATIOS:
            A = make_placement(128, 8, ratio, history_seed=pop)
            lams, tpots = [], []
            for batch in batches:
                t = simulate_decode_step(batch, A, router, profile)
                lams.append(t.max_activated_experts)
                tpots.append(t.layer_time * profile.model.num_moe_layers)
            out.append((float(np.mean(lams)), float(np.mean(tpots))))
        return out

    def test_even_split_degrades_with_replication(self, profile):
        metrics = self.mean_metrics(profile, "eplb")
        lams = [m[0] for m in metrics]
        tpots = [m[1] for m in metrics]
        assert all(b >= a for a, b in zip(lams, lams[1:]))
        assert all(b >= a for a, b in zip(tpots, tpots[1:]))

    def test_greedy_does_not_degrade_with_replication(self, profile):
        # The greedy router's tpot may wobble within a hair of flat between
        # adjacent ratios; the trend bound is 1%.
        metrics = self.mean_metrics(profile, "metro")
        tpots = [m[1] for m in metrics]
        assert all(b <= a * 1.01 for a, b in zip(tpots, tpots[1:]))
        assert tpots[-1] <= tpots[0] * 1.01
