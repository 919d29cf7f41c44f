"""Shared domain types, trace ingestion/generation, and assignment validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

PHASES = ("prefill", "decode")


class ValidationError(ValueError):
    """Raised when an input violates a structural invariant."""


class ConfigurationError(ValueError):
    """Raised when requested settings are internally inconsistent."""


class TraceFormatError(ValueError):
    """Raised on malformed trace files; carries the offending line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ClusterSpec:
    """Hardware constants for one GPU pool (single NVLink domain)."""

    num_gpus: int
    hbm_bandwidth: float  # bytes/s per GPU
    peak_flops: float  # flops/s per GPU
    link_bandwidth: float  # bytes/s per GPU
    collective_launch_overhead: float  # seconds
    link_base_latency: float  # seconds

    def __post_init__(self):
        if self.num_gpus < 1:
            raise ValidationError("num_gpus must be >= 1")
        for name in ("hbm_bandwidth", "peak_flops", "link_bandwidth"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("collective_launch_overhead", "link_base_latency"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ModelSpec:
    """MoE model constants at serving precision."""

    num_experts: int
    top_k: int
    hidden_dim: int
    dtype_bytes: int
    expert_weight_bytes: float  # per expert
    dense_weight_bytes: float  # per layer, non-expert
    flops_per_token_per_expert: float
    num_moe_layers: int

    def __post_init__(self):
        if not 1 <= self.top_k <= self.num_experts:
            raise ValidationError("top_k must be in [1, num_experts]")
        for name in (
            "num_experts",
            "hidden_dim",
            "dtype_bytes",
            "expert_weight_bytes",
            "flops_per_token_per_expert",
            "num_moe_layers",
        ):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.dense_weight_bytes < 0:
            raise ValidationError("dense_weight_bytes must be non-negative")


@dataclass
class PlacementMap:
    """Binary expert-to-GPU matrix with uniform per-GPU slot counts."""

    matrix: np.ndarray  # (N, G) of {0, 1}
    slots_per_gpu: int

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int8)
        if self.matrix.ndim != 2:
            raise ValidationError("placement matrix must be 2-dimensional")

    @property
    def num_experts(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_gpus(self) -> int:
        return self.matrix.shape[1]

    def replicas(self, expert: int) -> List[int]:
        """GPU ids hosting `expert`, ascending."""
        return [int(g) for g in np.flatnonzero(self.matrix[expert])]

    def validate(self) -> None:
        if not np.isin(self.matrix, (0, 1)).all():
            raise ValidationError("placement matrix must be binary")
        row_sums = self.matrix.sum(axis=1)
        if (row_sums < 1).any():
            bad = int(np.flatnonzero(row_sums < 1)[0])
            raise ValidationError(f"expert {bad} has no replica")
        col_sums = self.matrix.sum(axis=0)
        if (col_sums != self.slots_per_gpu).any():
            raise ValidationError(
                f"per-GPU slot counts {col_sums.tolist()} != slots_per_gpu={self.slots_per_gpu}"
            )


@dataclass
class ExpertLoadVector:
    """Per-logical-expert token counts for one batch."""

    loads: np.ndarray  # (N,) non-negative ints

    def __post_init__(self):
        self.loads = np.asarray(self.loads, dtype=np.int64)
        if self.loads.ndim != 1:
            raise ValidationError("loads must be 1-dimensional")
        if (self.loads < 0).any():
            raise ValidationError("loads must be non-negative")

    @property
    def num_experts(self) -> int:
        return self.loads.shape[0]

    def total(self) -> int:
        return int(self.loads.sum())


@dataclass(frozen=True)
class Token:
    source_gpu: int
    expert_ids: Tuple[int, ...]


@dataclass
class TokenBatch:
    """One batch of tokens with their top-k expert selections."""

    tokens: List[Token] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self, model: ModelSpec, cluster: ClusterSpec) -> None:
        for idx, tok in enumerate(self.tokens):
            if not 0 <= tok.source_gpu < cluster.num_gpus:
                raise ValidationError(f"token {idx}: source_gpu {tok.source_gpu} out of range")
            if len(tok.expert_ids) != model.top_k:
                raise ValidationError(
                    f"token {idx}: expected {model.top_k} expert ids, got {len(tok.expert_ids)}"
                )
            if len(set(tok.expert_ids)) != len(tok.expert_ids):
                raise ValidationError(f"token {idx}: expert ids must be distinct")
            for e in tok.expert_ids:
                if not 0 <= e < model.num_experts:
                    raise ValidationError(f"token {idx}: expert id {e} out of range")

    def max_tokens_per_source_gpu(self, num_gpus: int) -> int:
        counts = np.zeros(num_gpus, dtype=np.int64)
        for tok in self.tokens:
            counts[tok.source_gpu] += 1
        return int(counts.max()) if num_gpus else 0


@dataclass
class RoutingAssignment:
    """Router decision variables: token split x, activation matrix y, objective lam."""

    x: np.ndarray  # (N, G) non-negative ints
    y: np.ndarray  # (N, G) of {0, 1}
    lam: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.lam = int(self.lam)

    def max_tokens_per_gpu(self) -> int:
        return int(self.x.sum(axis=0).max()) if self.x.size else 0


@dataclass
class TraceBatch:
    layer: int
    phase: str
    batch: TokenBatch


@dataclass
class Trace:
    """Ordered batches of per-layer token routing information."""

    num_experts: int
    num_gpus: int
    top_k: int
    batches: List[TraceBatch] = field(default_factory=list)

    def validate(self, model: ModelSpec, cluster: ClusterSpec) -> None:
        if self.num_experts != model.num_experts or self.top_k != model.top_k:
            raise ValidationError("trace header does not match model spec")
        if self.num_gpus != cluster.num_gpus:
            raise ValidationError("trace header does not match cluster spec")
        for tb in self.batches:
            if not 0 <= tb.layer < model.num_moe_layers:
                raise ValidationError(f"layer index {tb.layer} out of range")
            if tb.phase not in PHASES:
                raise ValidationError(f"unknown phase {tb.phase!r}")
            tb.batch.validate(model, cluster)


@dataclass
class ValidationReport:
    """Outcome of checking an assignment against the routing constraints."""

    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def aggregate_loads(batch: TokenBatch, model: ModelSpec) -> ExpertLoadVector:
    """Count (token, expert) selections per logical expert."""
    loads = np.zeros(model.num_experts, dtype=np.int64)
    for idx, tok in enumerate(batch.tokens):
        for e in tok.expert_ids:
            if not 0 <= e < model.num_experts:
                raise ValidationError(f"token {idx}: expert id {e} out of range")
            loads[e] += 1
    return ExpertLoadVector(loads)


def validate_assignment(
    a: RoutingAssignment,
    A: PlacementMap,
    T: ExpertLoadVector,
    require_single_replica: bool = False,
) -> ValidationReport:
    """Check an assignment against the routing constraints.

    The report lists each violated constraint by name; when
    `require_single_replica` is set, additionally checks that every expert's
    tokens land on at most one replica.
    """
    n, g = A.matrix.shape
    if a.x.shape != (n, g) or a.y.shape != (n, g) or T.num_experts != n:
        raise ValidationError(
            f"dimension mismatch: x {a.x.shape}, y {a.y.shape}, A {(n, g)}, T {T.num_experts}"
        )
    report = ValidationReport()
    if (a.y.sum(axis=0) > a.lam).any():
        report.violations.append("constraint_1_activation_bound")
    if (a.x.sum(axis=1) != T.loads).any():
        report.violations.append("constraint_2_token_conservation")
    off = A.matrix == 0
    if (a.x[off] != 0).any() or (a.y[off] != 0).any():
        report.violations.append("constraint_3_placement")
    if (a.x > T.loads[:, None] * a.y).any():
        report.violations.append("constraint_4_activation_link")
    if (a.x < 0).any() or not np.isin(a.y, (0, 1)).all():
        report.violations.append("variable_domain")
    if a.lam != (int(a.y.sum(axis=0).max()) if a.y.size else 0):
        report.violations.append("lambda_mismatch")
    if require_single_replica and ((a.x > 0).sum(axis=1) > 1).any():
        report.violations.append("single_replica_form")
    return report


def zipf_popularity(num_experts: int, skew: float, seed: int) -> np.ndarray:
    """Zipf(skew) probabilities over expert ids, rank order permuted by seed."""
    if skew < 0:
        raise ValidationError("skew must be >= 0")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(num_experts)
    weights = np.arange(1, num_experts + 1, dtype=np.float64) ** (-skew)
    probs = np.empty(num_experts, dtype=np.float64)
    probs[perm] = weights / weights.sum()
    return probs


def gen_zipf_trace(
    model: ModelSpec,
    cluster: ClusterSpec,
    tokens_per_gpu: int,
    skew: float,
    seed: int,
    popularity_seed: Optional[int] = None,
) -> TokenBatch:
    """Generate one synthetic decode-style batch.

    Each token draws `top_k` distinct experts without replacement from a
    Zipf(skew) popularity whose rank-to-expert mapping is permuted by
    `popularity_seed` (defaults to `seed`). Batches of one workload share a
    popularity seed so expert popularity is stable across batches while the
    per-batch sampling varies. Sampling uses the Gumbel top-k race, which is
    equivalent to sequential weighted sampling without replacement.
    Deterministic per (seed, popularity_seed).
    """
    if tokens_per_gpu < 0:
        raise ValidationError("tokens_per_gpu must be >= 0")
    if popularity_seed is None:
        popularity_seed = seed
    probs = zipf_popularity(model.num_experts, skew, popularity_seed)
    rng = np.random.default_rng(seed)
    total = tokens_per_gpu * cluster.num_gpus
    tokens: List[Token] = []
    if total:
        keys = np.log(probs)[None, :] + rng.gumbel(size=(total, model.num_experts))
        top = np.argpartition(-keys, model.top_k - 1, axis=1)[:, : model.top_k]
        row_keys = np.take_along_axis(keys, top, axis=1)
        order = np.argsort(-row_keys, axis=1)
        top = np.take_along_axis(top, order, axis=1)
        for j in range(total):
            tokens.append(Token(source_gpu=j % cluster.num_gpus, expert_ids=tuple(int(e) for e in top[j])))
    return TokenBatch(tokens)


def save_trace(trace: Trace, path) -> None:
    """Write a trace as line-delimited JSON with a one-line header record."""
    with open(path, "w", encoding="utf-8") as f:
        header = {"header": {"N": trace.num_experts, "G": trace.num_gpus, "k": trace.top_k}}
        f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for tb in trace.batches:
            record = {
                "layer": tb.layer,
                "phase": tb.phase,
                "tokens": [
                    {"src": tok.source_gpu, "experts": list(tok.expert_ids)}
                    for tok in tb.batch.tokens
                ],
            }
            f.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_trace(path) -> Trace:
    """Read a trace written by `save_trace`, validating ids against the header."""
    trace: Optional[Trace] = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"invalid JSON: {exc}", lineno) from exc
            if trace is None:
                header = record.get("header")
                if not isinstance(header, dict):
                    raise TraceFormatError("first record must be the header", lineno)
                try:
                    trace = Trace(
                        num_experts=int(header["N"]),
                        num_gpus=int(header["G"]),
                        top_k=int(header["k"]),
                    )
                except KeyError as exc:
                    raise TraceFormatError(f"header missing field {exc}", lineno) from exc
                continue
            try:
                layer = int(record["layer"])
                phase = record["phase"]
                raw_tokens = record["tokens"]
            except KeyError as exc:
                raise TraceFormatError(f"batch record missing field {exc}", lineno) from exc
            if phase not in PHASES:
                raise TraceFormatError(f"unknown phase {phase!r}", lineno)
            tokens = []
            for raw in raw_tokens:
                src = int(raw["src"])
                experts = tuple(int(e) for e in raw["experts"])
                if len(experts) != trace.top_k:
                    raise TraceFormatError(
                        f"expected {trace.top_k} expert ids, got {len(experts)}", lineno
                    )
                if not 0 <= src < trace.num_gpus:
                    raise TraceFormatError(f"source gpu {src} out of range", lineno)
                for e in experts:
                    if not 0 <= e < trace.num_experts:
                        raise TraceFormatError(f"expert id {e} out of range", lineno)
                tokens.append(Token(source_gpu=src, expert_ids=experts))
            trace.batches.append(TraceBatch(layer=layer, phase=phase, batch=TokenBatch(tokens)))
    if trace is None:
        # A file with no records at all is an empty trace.
        return Trace(num_experts=0, num_gpus=0, top_k=0)
    return trace
