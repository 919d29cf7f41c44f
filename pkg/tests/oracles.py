"""Independent reference implementations used only to check the package.

These deliberately avoid sharing code with the implementations under test:
the max-flow oracle is a plain BFS augmenting-path search, the load tally
uses collections.Counter, and the placement oracle is exhaustive.
"""

from collections import Counter
from typing import Dict, List, Sequence, Tuple


def edmonds_karp(num_nodes: int, edges: Sequence[Tuple[int, int, int]], s: int, t: int) -> int:
    """Max-flow value by BFS augmenting paths on a dense residual matrix."""
    residual = [[0] * num_nodes for _ in range(num_nodes)]
    for u, v, cap in edges:
        residual[u][v] += cap
    total = 0
    while True:
        parent = [-1] * num_nodes
        parent[s] = s
        queue = [s]
        while queue and parent[t] < 0:
            u = queue.pop(0)
            for v in range(num_nodes):
                if residual[u][v] > 0 and parent[v] < 0:
                    parent[v] = u
                    queue.append(v)
        if parent[t] < 0:
            return total
        bottleneck = float("inf")
        v = t
        while v != s:
            u = parent[v]
            bottleneck = min(bottleneck, residual[u][v])
            v = u
        v = t
        while v != s:
            u = parent[v]
            residual[u][v] -= bottleneck
            residual[v][u] += bottleneck
            v = u
        total += bottleneck


def tally_selections(batch, num_experts: int) -> List[int]:
    """Recount per-expert selections independently of aggregate_loads."""
    counts = Counter()
    for tok in batch.tokens:
        counts.update(tok.expert_ids)
    return [counts.get(i, 0) for i in range(num_experts)]


def best_balanced_placement(
    expected_loads: Sequence[Tuple[float, int]], num_gpus: int, slots_per_gpu: int
) -> float:
    """Minimal achievable max per-GPU expected load over all feasible placements.

    Exhaustive depth-first search with capacity and no-duplicate constraints;
    only viable for tiny instances.
    """
    replicas = sorted(expected_loads, key=lambda item: (-item[0], item[1]))
    best = float("inf")
    used = [0] * num_gpus
    load = [0.0] * num_gpus
    hosted: Dict[int, set] = {g: set() for g in range(num_gpus)}

    def dfs(depth: int) -> None:
        nonlocal best
        if max(load) >= best:
            return
        if depth == len(replicas):
            best = max(load)
            return
        expected, expert = replicas[depth]
        for g in range(num_gpus):
            if used[g] >= slots_per_gpu or expert in hosted[g]:
                continue
            used[g] += 1
            load[g] += expected
            hosted[g].add(expert)
            dfs(depth + 1)
            hosted[g].remove(expert)
            load[g] -= expected
            used[g] -= 1

    dfs(0)
    return best
