"""Shared fixtures and instance generators for the test suite."""

import numpy as np
import pytest

from eproute import (
    ClusterSpec,
    CostProfile,
    ExpertLoadVector,
    ModelSpec,
    PlacementMap,
)
from eproute.core import zipf_popularity
from eproute.placement import eplb_place, eplb_replicate


@pytest.fixture
def cluster8() -> ClusterSpec:
    return ClusterSpec(
        num_gpus=8,
        hbm_bandwidth=1.555e12,
        peak_flops=312e12,
        link_bandwidth=600e9,
        collective_launch_overhead=15e-6,
        link_base_latency=2e-6,
    )


@pytest.fixture
def model128() -> ModelSpec:
    return ModelSpec(
        num_experts=128,
        top_k=8,
        hidden_dim=2048,
        dtype_bytes=2,
        expert_weight_bytes=9437184.0,
        dense_weight_bytes=2e7,
        flops_per_token_per_expert=9437184.0,
        num_moe_layers=48,
    )


@pytest.fixture
def profile(cluster8, model128) -> CostProfile:
    return CostProfile(cluster=cluster8, model=model128)


def make_placement(n: int, g: int, ratio: float, history_seed: int) -> PlacementMap:
    """Build a valid placement from a synthetic Zipf history."""
    probs = zipf_popularity(n, 1.2, history_seed)
    history = ExpertLoadVector(np.round(probs * 1e6).astype(np.int64))
    plan = eplb_replicate(history, ratio, g)
    return eplb_place(plan, history, g)


def random_small_instance(rng: np.random.Generator, max_active: int = 10, max_g: int = 4):
    """Tiny (T, A) instance with bounded replica counts for oracle checks.

    The placement matrix here need not have uniform column sums; the routers
    only consume the matrix itself.
    """
    g = int(rng.integers(2, max_g + 1))
    n = int(rng.integers(1, max_active + 1))
    matrix = np.zeros((n, g), dtype=np.int8)
    for i in range(n):
        r = int(rng.integers(1, min(3, g) + 1))
        matrix[i, rng.choice(g, size=r, replace=False)] = 1
    slots = int(matrix.sum(axis=0).max())
    A = PlacementMap(matrix=matrix, slots_per_gpu=slots)
    T = ExpertLoadVector(rng.integers(0, 9, size=n))
    return T, A


# Shape/ratio combinations whose slot totals divide evenly over the GPUs.
DOMINANCE_COMBOS = [(8, 2), (16, 2), (16, 4), (32, 4), (32, 8), (64, 4), (64, 8), (128, 8)]
DOMINANCE_RATIOS = [1.0, 1.125, 1.25, 1.5]


def random_dominance_instance(rng: np.random.Generator):
    """(T, A) instance drawn from the dominance-check family (N <= 128, G <= 8)."""
    n, g = DOMINANCE_COMBOS[int(rng.integers(len(DOMINANCE_COMBOS)))]
    valid = [r for r in DOMINANCE_RATIOS if round(n * r) % g == 0 and round(n * r) <= n * g]
    ratio = valid[int(rng.integers(len(valid)))]
    history = ExpertLoadVector(rng.integers(0, 10_000, size=n))
    plan = eplb_replicate(history, ratio, g)
    A = eplb_place(plan, history, g)
    skew = float(rng.uniform(0.5, 1.5))
    probs = zipf_popularity(n, skew, int(rng.integers(1 << 30)))
    tokens = int(rng.integers(4, 65)) * g
    loads = rng.multinomial(tokens, probs)
    return ExpertLoadVector(loads), A
