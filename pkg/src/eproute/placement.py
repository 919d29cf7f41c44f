"""Expert replication and replica placement in the style of EPLB.

Replication apportions extra slots proportionally to historical load
(largest-remainder method); placement greedily assigns replicas, heaviest
expected load first, to the least-loaded GPU with a free slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List

import numpy as np

from .core import ConfigurationError, ExpertLoadVector, PlacementMap, ValidationError


@dataclass
class ReplicationPlan:
    """Per-expert replica counts for a target replication ratio."""

    replica_counts: np.ndarray  # (N,) positive ints
    replication_ratio: float

    def __post_init__(self):
        self.replica_counts = np.asarray(self.replica_counts, dtype=np.int64)
        if (self.replica_counts < 1).any():
            raise ValidationError("every expert needs at least one replica")

    @property
    def total_slots(self) -> int:
        return int(self.replica_counts.sum())


def eplb_replicate(history: ExpertLoadVector, ratio: float, num_gpus: int) -> ReplicationPlan:
    """Apportion round(N*ratio) replica slots over experts by historical load.

    Every expert keeps one base replica; the extra slots go to experts by
    largest-remainder apportionment over `history`, capped at one replica per
    GPU. Overflow from the cap is reassigned to the next-largest remainders.
    """
    if ratio < 1:
        raise ConfigurationError("replication ratio must be >= 1")
    n = history.num_experts
    total_slots = round(n * ratio)
    if total_slots % num_gpus != 0:
        raise ConfigurationError(
            f"round(N*ratio)={total_slots} is not divisible by G={num_gpus}; "
            "memory-balanced placement is impossible"
        )
    if total_slots > n * num_gpus:
        raise ConfigurationError("more slots requested than expert-GPU pairs")

    extras = total_slots - n
    loads = history.loads.astype(np.float64)
    total_load = loads.sum()
    if total_load == 0:
        quotas = np.full(n, extras / n)
    else:
        quotas = extras * loads / total_load

    counts = np.ones(n, dtype=np.int64) + np.floor(quotas).astype(np.int64)
    counts = np.minimum(counts, num_gpus)
    remainders = quotas - np.floor(quotas)
    # Largest remainder first; ties broken by lower expert id.
    order = np.lexsort((np.arange(n), -remainders))
    leftover = extras - int(counts.sum() - n)
    while leftover > 0:
        progressed = False
        for i in order:
            if leftover == 0:
                break
            if counts[i] < num_gpus:
                counts[i] += 1
                leftover -= 1
                progressed = True
        if not progressed:
            raise ConfigurationError("cannot place all slots: every expert is at the GPU cap")
    return ReplicationPlan(replica_counts=counts, replication_ratio=ratio)


def eplb_place(plan: ReplicationPlan, history: ExpertLoadVector, num_gpus: int) -> PlacementMap:
    """Greedily place replicas to balance expected per-GPU load.

    Each replica of expert i is expected to carry history[i]/r[i] tokens.
    Replicas are assigned in descending expected-load order to the GPU with
    the least accumulated expected load that still has a free slot and does
    not already host the expert. Ties break toward lower expert id, then
    lower GPU id.
    """
    n = history.num_experts
    if plan.replica_counts.shape[0] != n:
        raise ValidationError("plan and history dimensions disagree")
    total_slots = plan.total_slots
    if total_slots % num_gpus != 0:
        raise ConfigurationError("total slots not divisible by GPU count")
    slots_per_gpu = total_slots // num_gpus

    replicas: List[tuple] = []  # (expected_load, expert_id)
    for i in range(n):
        r = int(plan.replica_counts[i])
        expected = history.loads[i] / r
        replicas.extend((expected, i) for _ in range(r))
    # Descending expected load, ties by lower expert id, then insertion order.
    replicas.sort(key=lambda item: (-item[0], item[1]))

    matrix = np.zeros((n, num_gpus), dtype=np.int8)
    gpu_load = np.zeros(num_gpus, dtype=np.float64)
    gpu_used = np.zeros(num_gpus, dtype=np.int64)
    for expected, i in replicas:
        best = -1
        for g in range(num_gpus):
            if gpu_used[g] >= slots_per_gpu or matrix[i, g]:
                continue
            if best < 0 or gpu_load[g] < gpu_load[best]:
                best = g
        if best < 0:
            # Cannot happen when r[i] <= G and slots divide evenly for the
            # instance shapes this artifact targets; fail loudly otherwise.
            raise ConfigurationError(f"no feasible GPU left for a replica of expert {i}")
        matrix[i, best] = 1
        gpu_load[best] += expected
        gpu_used[best] += 1

    placement = PlacementMap(matrix=matrix, slots_per_gpu=slots_per_gpu)
    placement.validate()
    return placement


def save_placement(placement: PlacementMap, path) -> None:
    """Export a placement as line-delimited {"expert": i, "gpus": [...]} records."""
    with open(path, "w", encoding="utf-8") as f:
        header = {
            "header": {
                "N": placement.num_experts,
                "G": placement.num_gpus,
                "slots_per_gpu": placement.slots_per_gpu,
            }
        }
        f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for i in range(placement.num_experts):
            record = {"expert": i, "gpus": placement.replicas(i)}
            f.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_placement(path) -> PlacementMap:
    """Import a placement written by `save_placement`."""
    header = None
    rows = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if header is None:
                header = record.get("header")
                if not isinstance(header, dict):
                    raise ValidationError(f"line {lineno}: first record must be the header")
                continue
            rows[int(record["expert"])] = [int(g) for g in record["gpus"]]
    if header is None:
        raise ValidationError("placement file has no header record")
    n, g = int(header["N"]), int(header["G"])
    matrix = np.zeros((n, g), dtype=np.int8)
    for i, gpus in rows.items():
        matrix[i, gpus] = 1
    placement = PlacementMap(matrix=matrix, slots_per_gpu=int(header["slots_per_gpu"]))
    placement.validate()
    return placement
