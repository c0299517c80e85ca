"""Budgeted three-tier streaming memory for token embeddings.

Frames of token embeddings are ingested under a hard token budget into
short/mid/long tiers, compressed by a probe-bank salience prior, and
queried through a recency-gated late-interaction retriever. The package
also ships a binary trace format, a synthetic stream generator, and
benchmark drivers with a brute-force oracle.
"""

from .errors import (
    BadMagic,
    BudgetUnsatisfiable,
    ConfigError,
    DimensionError,
    DimMismatch,
    EmptyFrame,
    EmptyInputError,
    FrameTooLarge,
    FrozenMemory,
    NonMonotoneTimestamp,
    NoSuchEvent,
    SpecError,
    TierMemError,
    TraceFormatError,
    TruncatedRecord,
    UnknownVariant,
    UnsupportedVersion,
    ValidationError,
)
from .vecspace import (
    DEFAULT_PROBE_LABELS,
    ProbeBank,
    cosine,
    late_interaction,
    max_sim,
    normalize,
)
from .tiers import (
    EvictionReport,
    FrameEntry,
    IngestReport,
    MemorySnapshot,
    TierConfig,
    TieredMemory,
    TokenRecord,
    encode_frame,
    encode_tokens,
    is_scene_boundary,
    new_memory,
    selective_forget,
    spatial_semantic_select,
    temporal_semantic_prune,
)
from .retrieval import (
    GateState,
    QuerySpec,
    RetrievalResult,
    adaptive_select,
    gate_check,
    load_queries_jsonl,
    rank_top_k,
    retrieve,
    score_candidates,
    update_gate,
)
from .synth import (
    StreamSpec,
    event_block,
    event_direction,
    generate_stream,
    grid_side,
    load_stream_spec,
    query_for_event,
    segment_direction,
)
from .traceio import RawFrame, RawToken, load_trace, read_trace, write_trace
from .bench import (
    RunReport,
    VariantFlags,
    emit_score_histograms,
    histogram_csv,
    parse_variant,
    report_json,
    resolve_prior_bank,
    run_growth_sweep,
    run_ingest,
    run_oracle,
    run_query_replay,
    sweep_csv,
    write_report,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagic",
    "BudgetUnsatisfiable",
    "ConfigError",
    "DEFAULT_PROBE_LABELS",
    "DimMismatch",
    "DimensionError",
    "EmptyFrame",
    "EmptyInputError",
    "EvictionReport",
    "FrameEntry",
    "FrameTooLarge",
    "FrozenMemory",
    "GateState",
    "IngestReport",
    "MemorySnapshot",
    "NoSuchEvent",
    "NonMonotoneTimestamp",
    "ProbeBank",
    "QuerySpec",
    "RawFrame",
    "RawToken",
    "RetrievalResult",
    "RunReport",
    "SpecError",
    "StreamSpec",
    "TierConfig",
    "TierMemError",
    "TieredMemory",
    "TokenRecord",
    "TraceFormatError",
    "TruncatedRecord",
    "UnknownVariant",
    "UnsupportedVersion",
    "ValidationError",
    "VariantFlags",
    "adaptive_select",
    "cosine",
    "emit_score_histograms",
    "encode_frame",
    "encode_tokens",
    "event_block",
    "event_direction",
    "gate_check",
    "generate_stream",
    "grid_side",
    "histogram_csv",
    "is_scene_boundary",
    "late_interaction",
    "load_queries_jsonl",
    "load_stream_spec",
    "load_trace",
    "max_sim",
    "new_memory",
    "normalize",
    "parse_variant",
    "query_for_event",
    "rank_top_k",
    "read_trace",
    "report_json",
    "resolve_prior_bank",
    "retrieve",
    "run_growth_sweep",
    "run_ingest",
    "run_oracle",
    "run_query_replay",
    "score_candidates",
    "segment_direction",
    "selective_forget",
    "spatial_semantic_select",
    "sweep_csv",
    "temporal_semantic_prune",
    "update_gate",
    "write_report",
    "write_trace",
    "__version__",
]
