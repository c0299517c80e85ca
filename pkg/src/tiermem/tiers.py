"""Ingest-side engine: a three-tier token memory under a hard budget.

Frames enter a small FIFO of recent frames kept at full fidelity. When
that tier overflows, the oldest frame is compressed by temporal pruning
(drop tokens that a spatially aligned neighbour in the newest frame
already represents, sparing salient ones) and moves to the mid tier.
When the mid tier overflows, the oldest frame is compressed again by
spatial selection (cover a coarse grid, rank by salience within it) and
moves to the long tier. A global token budget is enforced after every
ingest by forgetting the lowest-salience tokens, oldest first, from the
long tier and then the mid tier; the recent FIFO is never touched.

Tokens are normalized and scored against the probe bank exactly once,
at ingest; every later stage reuses the stored embedding and score.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BudgetUnsatisfiable,
    ConfigError,
    DimensionError,
    EmptyFrame,
    FrameTooLarge,
    FrozenMemory,
    NonMonotoneTimestamp,
    ValidationError,
)
from .retrieval import GateState, update_gate
from .vecspace import ProbeBank, max_sim, normalize, pooled_max_sim_units


@dataclass(frozen=True, eq=False)
class TokenRecord:
    """One retained token: unit embedding, cached salience, origin coordinates."""

    embedding: np.ndarray
    score: float
    frame_index: int
    spatial_row: int
    spatial_col: int

    def __post_init__(self):
        arr = np.asarray(self.embedding, dtype=np.float64)
        if arr.ndim != 1:
            raise DimensionError(f"token embedding must be 1-D, got shape {arr.shape}")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        object.__setattr__(self, "embedding", arr)
        if not math.isfinite(self.score):
            raise ValidationError(f"token score must be finite, got {self.score}")
        if self.frame_index < 0:
            raise ValidationError("frame_index must be non-negative")
        if self.spatial_row < 0 or self.spatial_col < 0:
            raise ValidationError("spatial coordinates must be non-negative")


@dataclass(frozen=True, eq=False)
class FrameEntry:
    """A frame's surviving tokens plus per-frame metadata.

    pooled_score and the stacked token matrix are derived from the token
    list at construction, so they can never drift out of sync with it.
    """

    frame_index: int
    timestamp: float
    tokens: tuple[TokenRecord, ...]
    scene_boundary: bool = False
    pooled_score: float = field(init=False)
    token_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if not tokens:
            raise EmptyFrame(f"frame {self.frame_index} has no tokens")
        for t in tokens:
            if t.frame_index != self.frame_index:
                raise ValidationError(
                    f"token from frame {t.frame_index} placed in frame {self.frame_index}"
                )
        object.__setattr__(self, "tokens", tokens)
        matrix = np.stack([t.embedding for t in tokens])
        matrix.setflags(write=False)
        object.__setattr__(self, "token_matrix", matrix)
        scores = np.array([t.score for t in tokens], dtype=np.float64)
        object.__setattr__(self, "pooled_score", float(np.mean(scores)))

    @property
    def token_count(self) -> int:
        return len(self.tokens)

    def with_tokens(self, kept: Sequence[TokenRecord]) -> "FrameEntry":
        """Same frame, reduced token set (embeddings and scores untouched)."""
        return FrameEntry(
            frame_index=self.frame_index,
            timestamp=self.timestamp,
            tokens=tuple(kept),
            scene_boundary=self.scene_boundary,
        )


_CONFIG_FIELDS = (
    "short_cap_frames",
    "mid_cap_frames",
    "token_budget",
    "keep_fraction",
    "semantic_weight",
    "scene_threshold",
    "grid_size",
    "long_quota_per_frame",
    "tokens_per_frame_max",
)


@dataclass(frozen=True)
class TierConfig:
    """Capacities and compression knobs for one memory instance."""

    short_cap_frames: int = 4
    mid_cap_frames: int = 16
    token_budget: int = 2048
    keep_fraction: float = 0.5
    semantic_weight: float = 1.0
    scene_threshold: float = 0.8
    grid_size: int = 4
    long_quota_per_frame: int = 16
    tokens_per_frame_max: int = 512

    def __post_init__(self):
        for name in (
            "short_cap_frames",
            "mid_cap_frames",
            "token_budget",
            "grid_size",
            "long_quota_per_frame",
            "tokens_per_frame_max",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not (0.0 < self.keep_fraction <= 1.0):
            raise ConfigError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if not (self.semantic_weight >= 0.0 and math.isfinite(self.semantic_weight)):
            raise ConfigError(f"semantic_weight must be >= 0, got {self.semantic_weight}")
        if not (-1.0 < self.scene_threshold < 1.0):
            raise ConfigError(
                f"scene_threshold must be in (-1, 1), got {self.scene_threshold}"
            )
        # The recent FIFO is never forgotten, so it must fit the budget.
        if self.short_cap_frames * self.tokens_per_frame_max > self.token_budget:
            raise ConfigError(
                f"short_cap_frames * tokens_per_frame_max = "
                f"{self.short_cap_frames * self.tokens_per_frame_max} exceeds "
                f"token_budget = {self.token_budget}"
            )

    @classmethod
    def from_file(cls, path) -> "TierConfig":
        """JSON config file; absent fields take the defaults above."""
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path}: invalid JSON") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path}: expected a JSON object")
        unknown = sorted(set(doc) - set(_CONFIG_FIELDS))
        if unknown:
            raise ConfigError(f"config file {path}: unknown fields {unknown}")
        return cls(**doc)

    def to_json_dict(self) -> dict:
        return {name: getattr(self, name) for name in _CONFIG_FIELDS}


@dataclass(frozen=True)
class IngestReport:
    """What one ingest did: drops per stage and the resulting occupancy."""

    frame_index: int
    timestamp: float
    scene_boundary: bool
    pooled_score: float
    tokens_in: int
    dropped_temporal: int
    dropped_spatial: int
    dropped_budget: int
    short_frames: int
    mid_frames: int
    long_frames: int
    short_tokens: int
    mid_tokens: int
    long_tokens: int
    total_tokens: int

    def to_json_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "timestamp": self.timestamp,
            "scene_boundary": self.scene_boundary,
            "pooled_score": self.pooled_score,
            "tokens_in": self.tokens_in,
            "dropped_temporal": self.dropped_temporal,
            "dropped_spatial": self.dropped_spatial,
            "dropped_budget": self.dropped_budget,
            "short_frames": self.short_frames,
            "mid_frames": self.mid_frames,
            "long_frames": self.long_frames,
            "short_tokens": self.short_tokens,
            "mid_tokens": self.mid_tokens,
            "long_tokens": self.long_tokens,
            "total_tokens": self.total_tokens,
        }


@dataclass(frozen=True)
class EvictionReport:
    """Tokens removed by budget enforcement, in eviction order.

    Each entry is (frame_index, token position within the frame at call
    time, score).
    """

    evicted: tuple[tuple[int, int, float], ...]

    @property
    def count(self) -> int:
        return len(self.evicted)

    def to_json_dict(self) -> dict:
        return {"evicted": [[f, i, s] for f, i, s in self.evicted]}


@dataclass(frozen=True)
class MemorySnapshot:
    """Immutable view of all tiers at a freeze point."""

    short: tuple[FrameEntry, ...]
    mid: tuple[FrameEntry, ...]
    long: tuple[FrameEntry, ...]
    freeze_timestamp: float
    total_tokens: int
    config: TierConfig

    def all_frames(self) -> tuple[FrameEntry, ...]:
        """Every retained frame in ascending frame order."""
        return self.long + self.mid + self.short

    @property
    def frame_count(self) -> int:
        return len(self.short) + len(self.mid) + len(self.long)


def encode_tokens(
    frame_index: int, raw_tokens: Iterable[tuple], bank: ProbeBank
) -> list[TokenRecord]:
    """Normalize and score raw (vector, row, col) triples.

    Scoring runs per token through the same public max_sim path that any
    later recomputation would use, so stored scores reproduce bit-exactly.
    """
    records = []
    for vec, row, col in raw_tokens:
        unit = normalize(vec, dim=bank.dim)
        score = max_sim(unit, bank)
        records.append(
            TokenRecord(
                embedding=unit,
                score=score,
                frame_index=frame_index,
                spatial_row=int(row),
                spatial_col=int(col),
            )
        )
    return records


def encode_frame(
    frame_index: int,
    timestamp: float,
    raw_tokens: Iterable[tuple],
    bank: ProbeBank,
    scene_boundary: bool = False,
) -> FrameEntry:
    """Build a full-fidelity FrameEntry outside of a TieredMemory.

    Used by harness modes that bypass the compression pipeline.
    """
    records = encode_tokens(frame_index, raw_tokens, bank)
    return FrameEntry(
        frame_index=frame_index,
        timestamp=float(timestamp),
        tokens=tuple(records),
        scene_boundary=scene_boundary,
    )


def is_scene_boundary(
    frame: FrameEntry, prev: FrameEntry | None, config: TierConfig
) -> bool:
    """A frame starts a scene if it has no predecessor or sits far from it.

    Distance is the mean over the frame's tokens of the max cosine against
    the previous frame's tokens, compared to the configured threshold.
    """
    if prev is None:
        return True
    similarity = pooled_max_sim_units(frame.token_matrix, prev.token_matrix)
    return similarity < config.scene_threshold


def temporal_semantic_prune(
    frame: FrameEntry, reference: FrameEntry | None, config: TierConfig
) -> FrameEntry:
    """Compress a frame leaving the recent FIFO.

    Scene-boundary frames pass through whole. Otherwise each token's
    redundancy is its cosine to the reference token at the same spatial
    position (0 when absent), the keep-score is (1 - redundancy) plus
    semantic_weight times the token's salience, and the top
    ceil(keep_fraction * n) tokens by keep-score survive. Ties keep the
    lower token position. Embeddings and scores pass through unchanged.
    """
    if frame.scene_boundary:
        return frame
    n = frame.token_count
    keep = math.ceil(config.keep_fraction * n)
    if keep >= n:
        return frame
    by_position: dict[tuple[int, int], TokenRecord] = {}
    if reference is not None:
        for tok in reference.tokens:
            by_position.setdefault((tok.spatial_row, tok.spatial_col), tok)
    keep_scores = []
    for tok in frame.tokens:
        ref = by_position.get((tok.spatial_row, tok.spatial_col))
        if ref is None:
            redundancy = 0.0
        else:
            redundancy = float(np.clip(np.dot(tok.embedding, ref.embedding), -1.0, 1.0))
        keep_scores.append((1.0 - redundancy) + config.semantic_weight * tok.score)
    ranked = sorted(range(n), key=lambda i: (-keep_scores[i], i))
    kept_positions = sorted(ranked[:keep])
    return frame.with_tokens([frame.tokens[i] for i in kept_positions])


def spatial_semantic_select(frame: FrameEntry, config: TierConfig) -> FrameEntry:
    """Compress a frame leaving the mid tier.

    Tokens are bucketed into a grid_size x grid_size grid (coordinates
    scaled by each axis's extent within the frame). The best token per
    non-empty cell is taken first; if that exceeds the long-tier quota the
    cell winners are cut by salience rank, otherwise the remaining slots
    are filled by salience over the leftovers. Ties keep the lower token
    position.
    """
    grid = config.grid_size
    quota = config.long_quota_per_frame
    tokens = frame.tokens
    n = len(tokens)
    extent_r = max(t.spatial_row for t in tokens) + 1
    extent_c = max(t.spatial_col for t in tokens) + 1

    def cell_of(tok: TokenRecord) -> tuple[int, int]:
        return (
            min(tok.spatial_row * grid // extent_r, grid - 1),
            min(tok.spatial_col * grid // extent_c, grid - 1),
        )

    best_in_cell: dict[tuple[int, int], int] = {}
    for i, tok in enumerate(tokens):
        cell = cell_of(tok)
        incumbent = best_in_cell.get(cell)
        # Strict > keeps the earlier token on equal scores.
        if incumbent is None or tok.score > tokens[incumbent].score:
            best_in_cell[cell] = i
    winners = sorted(best_in_cell.values(), key=lambda i: (-tokens[i].score, i))
    if len(winners) > quota:
        winners = winners[:quota]
    selected = set(winners)
    if len(selected) < quota:
        leftovers = [i for i in range(n) if i not in selected]
        leftovers.sort(key=lambda i: (-tokens[i].score, i))
        for i in leftovers[: quota - len(selected)]:
            selected.add(i)
    if len(selected) == n:
        return frame
    return frame.with_tokens([tokens[i] for i in sorted(selected)])


class TieredMemory:
    """Mutable streaming memory; single writer, frozen for reads."""

    def __init__(self, config: TierConfig, bank: ProbeBank, dim: int | None = None):
        if dim is not None and bank.dim != dim:
            raise DimensionError(f"bank dimension {bank.dim}, session dimension {dim}")
        self.config = config
        self.bank = bank
        self.dim = bank.dim if dim is None else int(dim)
        self.short: list[FrameEntry] = []
        self.mid: list[FrameEntry] = []
        self.long: list[FrameEntry] = []
        self.gate_stats = GateState()
        self._total_tokens = 0
        self._last_timestamp: float | None = None
        self._next_frame_index = 0
        self._frozen = False

    @property
    def total_tokens(self) -> int:
        return self._total_tokens

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def last_timestamp(self) -> float | None:
        return self._last_timestamp

    def recount_tokens(self) -> int:
        """Recount from the tiers; must always equal total_tokens."""
        return sum(
            e.token_count for tier in (self.short, self.mid, self.long) for e in tier
        )

    def ingest_frame(self, timestamp: float, raw_tokens: Sequence[tuple]) -> IngestReport:
        """Push one frame through the pipeline; returns what happened.

        raw_tokens is a sequence of (vector, spatial_row, spatial_col).
        Timestamps must be strictly increasing; the frame must be
        non-empty and within the per-frame token cap.
        """
        if self._frozen:
            raise FrozenMemory("memory is frozen; thaw before ingesting")
        ts = float(timestamp)
        if not math.isfinite(ts):
            raise ValidationError(f"timestamp must be finite, got {ts}")
        if self._last_timestamp is not None and ts <= self._last_timestamp:
            raise NonMonotoneTimestamp(
                f"timestamp {ts} does not advance past {self._last_timestamp}"
            )
        raw = list(raw_tokens)
        if not raw:
            raise EmptyFrame("a frame must carry at least one token")
        if len(raw) > self.config.tokens_per_frame_max:
            raise FrameTooLarge(
                f"{len(raw)} tokens exceeds tokens_per_frame_max = "
                f"{self.config.tokens_per_frame_max}"
            )

        index = self._next_frame_index
        records = encode_tokens(index, raw, self.bank)
        matrix = np.stack([r.embedding for r in records])
        prev = self.short[-1] if self.short else None
        boundary = (
            prev is None
            or pooled_max_sim_units(matrix, prev.token_matrix)
            < self.config.scene_threshold
        )
        entry = FrameEntry(
            frame_index=index,
            timestamp=ts,
            tokens=tuple(records),
            scene_boundary=boundary,
        )
        self.short.append(entry)
        self._total_tokens += entry.token_count
        self._last_timestamp = ts
        self._next_frame_index = index + 1
        self.gate_stats = update_gate(self.gate_stats, entry.pooled_score)

        dropped_temporal = 0
        while len(self.short) > self.config.short_cap_frames:
            oldest = self.short.pop(0)
            reference = self.short[-1] if self.short else None
            kept = temporal_semantic_prune(oldest, reference, self.config)
            dropped_temporal += oldest.token_count - kept.token_count
            self.mid.append(kept)

        dropped_spatial = 0
        while len(self.mid) > self.config.mid_cap_frames:
            oldest = self.mid.pop(0)
            kept = spatial_semantic_select(oldest, self.config)
            dropped_spatial += oldest.token_count - kept.token_count
            self.long.append(kept)

        self._total_tokens -= dropped_temporal + dropped_spatial
        eviction = selective_forget(self)

        return IngestReport(
            frame_index=index,
            timestamp=ts,
            scene_boundary=boundary,
            pooled_score=entry.pooled_score,
            tokens_in=len(raw),
            dropped_temporal=dropped_temporal,
            dropped_spatial=dropped_spatial,
            dropped_budget=eviction.count,
            short_frames=len(self.short),
            mid_frames=len(self.mid),
            long_frames=len(self.long),
            short_tokens=sum(e.token_count for e in self.short),
            mid_tokens=sum(e.token_count for e in self.mid),
            long_tokens=sum(e.token_count for e in self.long),
            total_tokens=self._total_tokens,
        )

    def freeze(self, at: float | None = None) -> MemorySnapshot:
        """Produce an immutable snapshot and block ingest until thawed.

        `at` stamps the snapshot's freeze time; it defaults to the last
        ingest timestamp (0.0 for a never-written memory) and may not
        precede any ingested frame.
        """
        if at is None:
            freeze_ts = self._last_timestamp if self._last_timestamp is not None else 0.0
        else:
            freeze_ts = float(at)
            if self._last_timestamp is not None and freeze_ts < self._last_timestamp:
                raise NonMonotoneTimestamp(
                    f"freeze time {freeze_ts} precedes last ingest {self._last_timestamp}"
                )
        self._frozen = True
        return MemorySnapshot(
            short=tuple(self.short),
            mid=tuple(self.mid),
            long=tuple(self.long),
            freeze_timestamp=freeze_ts,
            total_tokens=self._total_tokens,
            config=self.config,
        )

    def thaw(self) -> None:
        """Re-enable ingest after a freeze."""
        self._frozen = False

    def state_digest(self) -> str:
        """SHA-256 over the full state; equal digests mean equal states."""
        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_json_dict(), sort_keys=True).encode())
        h.update(struct.pack("<dddq", self.gate_stats.ema, self.gate_stats.decay,
                             self.gate_stats.floor, self.gate_stats.observations))
        h.update(struct.pack("<qq", self._total_tokens, self._next_frame_index))
        for tier in (self.short, self.mid, self.long):
            h.update(struct.pack("<q", len(tier)))
            for entry in tier:
                h.update(struct.pack("<qd?q", entry.frame_index, entry.timestamp,
                                     entry.scene_boundary, entry.token_count))
                for tok in entry.tokens:
                    h.update(struct.pack("<qqd", tok.spatial_row, tok.spatial_col,
                                         tok.score))
                    h.update(tok.embedding.tobytes())
        return h.hexdigest()


def new_memory(config: TierConfig, bank: ProbeBank, dim: int | None = None) -> TieredMemory:
    """Fresh empty memory; bank dimension must match the session's."""
    return TieredMemory(config, bank, dim=dim)


def selective_forget(mem: TieredMemory) -> EvictionReport:
    """Evict lowest-salience tokens until the budget holds.

    Eviction drains the long tier first and cascades to the mid tier;
    the recent FIFO is never touched. Ties are broken toward the older
    frame, then the lower token position. Frames emptied of all tokens
    are dropped from their tier.
    """
    budget = mem.config.token_budget
    overflow = mem.total_tokens - budget
    if overflow <= 0:
        return EvictionReport(evicted=())
    short_tokens = sum(e.token_count for e in mem.short)
    if short_tokens > budget:
        raise BudgetUnsatisfiable(
            f"recent FIFO alone holds {short_tokens} tokens, budget is {budget}"
        )
    evicted: list[tuple[int, int, float]] = []
    for tier_name in ("long", "mid"):
        if overflow <= 0:
            break
        tier = getattr(mem, tier_name)
        candidates = [
            (tok.score, entry.frame_index, i)
            for entry in tier
            for i, tok in enumerate(entry.tokens)
        ]
        candidates.sort()
        victims = candidates[:overflow]
        if not victims:
            continue
        overflow -= len(victims)
        doomed: dict[int, set[int]] = {}
        for score, frame_index, position in victims:
            doomed.setdefault(frame_index, set()).add(position)
            evicted.append((frame_index, position, score))
        rebuilt: list[FrameEntry] = []
        for entry in tier:
            dead = doomed.get(entry.frame_index)
            if not dead:
                rebuilt.append(entry)
                continue
            kept = [tok for i, tok in enumerate(entry.tokens) if i not in dead]
            if kept:
                rebuilt.append(entry.with_tokens(kept))
        tier[:] = rebuilt
    mem._total_tokens = mem.recount_tokens()
    if mem._total_tokens > budget:
        raise BudgetUnsatisfiable(
            f"budget {budget} unreachable; {mem._total_tokens} tokens remain"
        )
    return EvictionReport(evicted=tuple(evicted))
