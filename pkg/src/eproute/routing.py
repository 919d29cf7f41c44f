"""Token routers: even-split, greedy least-activated, optimal, and brute force.

All routers consume the per-expert load vector T and the placement matrix A
and emit a RoutingAssignment (x, y, lambda). The greedy and optimal routers
assign each active expert to exactly one replica; the even-split router
spreads each expert's tokens across all of its replicas.
"""

from __future__ import annotations

import json
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    ExpertLoadVector,
    PlacementMap,
    RoutingAssignment,
    ValidationError,
)
from .flow import feasibility_test

ROUTER_KINDS = ("eplb", "metro", "metro-parallel", "optimal", "bruteforce")

BRUTEFORCE_GUARD = 10 ** 6


def _check_dims(T: ExpertLoadVector, A: PlacementMap) -> None:
    if T.num_experts != A.num_experts:
        raise ValidationError(
            f"dimension mismatch: T has {T.num_experts} experts, A has {A.num_experts}"
        )


def lambda_of(a: RoutingAssignment) -> int:
    """Maximum activated-expert count over GPUs."""
    return int(a.y.sum(axis=0).max()) if a.y.size else 0


def _assignment_from_choice(
    T: ExpertLoadVector, A: PlacementMap, choice: dict
) -> RoutingAssignment:
    """Build (x, y, lambda) from a one-replica-per-active-expert mapping."""
    n, g = A.matrix.shape
    x = np.zeros((n, g), dtype=np.int64)
    y = np.zeros((n, g), dtype=np.int8)
    for i, gpu in choice.items():
        x[i, gpu] = T.loads[i]
        y[i, gpu] = 1
    lam = int(y.sum(axis=0).max()) if choice else 0
    return RoutingAssignment(x=x, y=y, lam=lam)


def route_eplb(T: ExpertLoadVector, A: PlacementMap) -> RoutingAssignment:
    """Split each expert's tokens evenly across its replicas.

    Remainder tokens go to replicas in ascending GPU id; a replica is
    activated iff it receives at least one token.
    """
    _check_dims(T, A)
    n, g = A.matrix.shape
    x = np.zeros((n, g), dtype=np.int64)
    for i in np.flatnonzero(T.loads):
        gpus = A.replicas(int(i))
        assert gpus, "placement invariant: every expert has a replica"
        base, rem = divmod(int(T.loads[i]), len(gpus))
        for rank, gpu in enumerate(gpus):
            x[i, gpu] = base + (1 if rank < rem else 0)
    y = (x > 0).astype(np.int8)
    lam = int(y.sum(axis=0).max()) if n and g else 0
    return RoutingAssignment(x=x, y=y, lam=lam)


def _active_order(T: ExpertLoadVector, A: PlacementMap) -> List[int]:
    """Canonical greedy order: most-constrained experts first.

    Experts with fewer replicas have fewer candidate GPUs, so placing them
    first lets the flexible (replicated) experts balance around them.
    Ties break by descending load, then ascending expert id.
    """
    replica_counts = A.matrix.sum(axis=1)
    active = np.flatnonzero(T.loads)
    order = sorted(
        active, key=lambda i: (int(replica_counts[i]), -int(T.loads[i]), int(i))
    )
    return [int(i) for i in order]


def _greedy_assign(T: ExpertLoadVector, A: PlacementMap, order: Sequence[int]) -> RoutingAssignment:
    g = A.num_gpus
    counters = np.zeros(g, dtype=np.int64)
    choice = {}
    for i in order:
        best = -1
        for gpu in A.replicas(i):
            if best < 0 or counters[gpu] < counters[best]:
                best = gpu
        assert best >= 0, "placement invariant: every expert has a replica"
        choice[i] = best
        counters[best] += 1
    return _assignment_from_choice(T, A, choice)


def route_metro(T: ExpertLoadVector, A: PlacementMap) -> RoutingAssignment:
    """Greedily assign each active expert to its least-activated candidate GPU.

    Experts are processed in canonical order (fewest replicas first, ties by
    descending load then ascending id); GPU ties break toward the lower id.
    Runs in time linear in the number of ones of the placement matrix.
    """
    _check_dims(T, A)
    return _greedy_assign(T, A, _active_order(T, A))


def route_metro_parallel(T: ExpertLoadVector, A: PlacementMap, seed: int) -> RoutingAssignment:
    """Greedy assignment under a seeded emulation of parallel execution.

    Per-expert assignment steps are atomic (each reads the counters over its
    candidate set and bumps the chosen one while holding all candidate locks),
    so any parallel schedule is equivalent to some serialization order. The
    seed picks that order.
    """
    _check_dims(T, A)
    active = [int(i) for i in np.flatnonzero(T.loads)]
    rng = np.random.default_rng(seed)
    rng.shuffle(active)
    return _greedy_assign(T, A, active)


def route_optimal(T: ExpertLoadVector, A: PlacementMap) -> RoutingAssignment:
    """Minimize the maximum activated-expert count exactly.

    Binary-searches lambda between the pigeonhole lower bound ceil(m/G) and
    min(m, max hosted experts per GPU), testing each candidate with the
    capacitated bipartite matching feasibility test.
    """
    _check_dims(T, A)
    active = [int(i) for i in np.flatnonzero(T.loads)]
    m = len(active)
    if m == 0:
        return _assignment_from_choice(T, A, {})
    g = A.num_gpus
    lo = -(-m // g)
    hi = min(m, int(A.matrix.sum(axis=0).max()))
    best_matching = None
    best_at = None
    while lo < hi:
        mid = (lo + hi) // 2
        feasible, matching = feasibility_test(active, A, mid)
        if feasible:
            hi = mid
            best_matching, best_at = matching, mid
        else:
            lo = mid + 1
    if best_at != lo:
        feasible, best_matching = feasibility_test(active, A, lo)
        assert feasible, "minimal lambda from binary search must be feasible"
    return _assignment_from_choice(T, A, best_matching)


def route_bruteforce(
    T: ExpertLoadVector, A: PlacementMap, guard: int = BRUTEFORCE_GUARD
) -> RoutingAssignment:
    """Exhaustively search one-replica-per-active-expert assignments.

    Returns a minimizer of the maximum per-GPU activated count; among
    minimizers, the lexicographically smallest assignment vector (active
    experts in ascending id, replicas in ascending GPU id). Refuses instances
    whose search space exceeds `guard`.
    """
    _check_dims(T, A)
    active = [int(i) for i in np.flatnonzero(T.loads)]
    m = len(active)
    if m == 0:
        return _assignment_from_choice(T, A, {})
    options = [A.replicas(i) for i in active]
    space = 1
    for opts in options:
        space *= len(opts)
        if space > guard:
            raise ValidationError(
                f"brute-force search space exceeds guard ({guard}); refusing"
            )
    g = A.num_gpus
    lower_bound = -(-m // g)
    counters = np.zeros(g, dtype=np.int64)
    best_lam = m + 1
    best_choice: Optional[List[int]] = None
    chosen: List[int] = [0] * m

    def dfs(depth: int) -> bool:
        """Depth-first in lexicographic order; returns True to stop early."""
        nonlocal best_lam, best_choice
        if depth == m:
            lam = int(counters.max())
            if lam < best_lam:
                best_lam = lam
                best_choice = list(chosen)
                if best_lam == lower_bound:
                    return True
            return False
        for gpu in options[depth]:
            if counters[gpu] + 1 >= best_lam:
                continue  # cannot beat the incumbent through this branch
            counters[gpu] += 1
            chosen[depth] = gpu
            stop = dfs(depth + 1)
            counters[gpu] -= 1
            if stop:
                return True
        return False

    dfs(0)
    assert best_choice is not None
    return _assignment_from_choice(T, A, dict(zip(active, best_choice)))


def run_router(
    kind: str, T: ExpertLoadVector, A: PlacementMap, seed: int = 0
) -> RoutingAssignment:
    """Dispatch to a router by name."""
    if kind == "eplb":
        return route_eplb(T, A)
    if kind == "metro":
        return route_metro(T, A)
    if kind == "metro-parallel":
        return route_metro_parallel(T, A, seed)
    if kind == "optimal":
        return route_optimal(T, A)
    if kind == "bruteforce":
        return route_bruteforce(T, A)
    raise ValidationError(f"unknown router kind {kind!r}; expected one of {ROUTER_KINDS}")


def save_assignment(a: RoutingAssignment, path) -> None:
    """Export non-zero routes plus a summary record."""
    with open(path, "w", encoding="utf-8") as f:
        rows, cols = np.nonzero(a.x)
        for i, g in zip(rows, cols):
            record = {"expert": int(i), "gpu": int(g), "tokens": int(a.x[i, g])}
            f.write(json.dumps(record, separators=(",", ":")) + "\n")
        summary = {"lambda": a.lam, "max_tokens_per_gpu": a.max_tokens_per_gpu()}
        f.write(json.dumps(summary, separators=(",", ":")) + "\n")
