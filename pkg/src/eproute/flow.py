"""Dinic max-flow and the capacitated bipartite feasibility test for routing."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

from .core import PlacementMap, ValidationError


@dataclass
class FlowNetwork:
    """Directed graph with integer capacities and designated source/sink."""

    num_nodes: int
    edges: List[Tuple[int, int, int]] = field(default_factory=list)  # (u, v, cap)
    source: int = 0
    sink: int = 1

    def add_edge(self, u: int, v: int, cap: int) -> int:
        if u == v:
            raise ValidationError("self-loops are not allowed")
        if cap < 0:
            raise ValidationError("capacities must be non-negative")
        self.edges.append((u, v, cap))
        return len(self.edges) - 1


def max_flow(net: FlowNetwork) -> Tuple[int, List[int]]:
    """Compute a maximum s-t flow with Dinic's algorithm.

    Returns the flow value and per-edge flows aligned with `net.edges`.
    """
    n = net.num_nodes
    # Adjacency as parallel arrays: to, cap, and index of the reverse arc.
    to: List[int] = []
    cap: List[int] = []
    head: List[List[int]] = [[] for _ in range(n)]
    for u, v, c in net.edges:
        head[u].append(len(to))
        to.append(v)
        cap.append(c)
        head[v].append(len(to))
        to.append(u)
        cap.append(0)

    s, t = net.source, net.sink
    total = 0
    level = [0] * n
    it = [0] * n

    def bfs() -> bool:
        for i in range(n):
            level[i] = -1
        level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for eid in head[u]:
                v = to[eid]
                if cap[eid] > 0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level[t] >= 0

    def dfs(u: int, pushed: int) -> int:
        if u == t:
            return pushed
        while it[u] < len(head[u]):
            eid = head[u][it[u]]
            v = to[eid]
            if cap[eid] > 0 and level[v] == level[u] + 1:
                got = dfs(v, min(pushed, cap[eid]))
                if got > 0:
                    cap[eid] -= got
                    cap[eid ^ 1] += got
                    return got
            it[u] += 1
        return 0

    while bfs():
        it = [0] * n
        while True:
            pushed = dfs(s, 1 << 62)
            if pushed == 0:
                break
            total += pushed

    flows = [net.edges[i][2] - cap[2 * i] for i in range(len(net.edges))]
    return total, flows


def feasibility_test(
    active: Sequence[int], A: PlacementMap, lambda0: int
) -> Tuple[bool, Dict[int, int]]:
    """Test whether every active expert can pick a replica with at most
    `lambda0` activations per GPU; returns the matching when feasible.

    Builds source -> expert edges (cap 1), expert -> GPU edges where the
    placement allows (cap 1), and GPU -> sink edges (cap lambda0). Feasible
    iff the max flow saturates all active experts.
    """
    if lambda0 < 0:
        raise ValidationError("lambda0 must be >= 0")
    active = sorted(set(int(i) for i in active))
    m = len(active)
    g = A.num_gpus
    # Node layout: 0 source, 1 sink, experts 2..m+1, GPUs m+2..m+g+1.
    net = FlowNetwork(num_nodes=m + g + 2, source=0, sink=1)
    expert_edges = []
    for idx, i in enumerate(active):
        net.add_edge(0, 2 + idx, 1)
    for idx, i in enumerate(active):
        for gpu in A.replicas(i):
            eid = net.add_edge(2 + idx, 2 + m + gpu, 1)
            expert_edges.append((eid, i, gpu))
    for gpu in range(g):
        net.add_edge(2 + m + gpu, 1, lambda0)

    value, flows = max_flow(net)
    if value != m:
        return False, {}
    matching = {i: gpu for eid, i, gpu in expert_edges if flows[eid] == 1}
    return True, matching
