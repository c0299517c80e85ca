"""Deterministic synthetic streams with planted, queryable events.

A stream is a sequence of segments, each built around a seeded unit base
direction; every token is the base plus gaussian noise, renormalized.
Event frames overwrite a contiguous leading block of tokens with a blend
toward a seeded event direction, which gives retrieval tests an exact
ground truth. All randomness derives from (rng_seed, purpose tag, key)
triples, so frame i's content does not depend on the stream length.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoSuchEvent, SpecError
from .retrieval import QuerySpec
from .traceio import RawFrame, RawToken
from .vecspace import normalize

# Seed-sequence tags keeping the per-purpose RNG streams disjoint.
_TAG_SEGMENT = 0
_TAG_EVENT = 1
_TAG_FRAME = 2
_TAG_QUERY = 3

# Fraction of a frame's tokens an event occupies (at least one token).
EVENT_BLOCK_FRACTION = 0.25


@dataclass(frozen=True)
class StreamSpec:
    """Recipe for one synthetic stream.

    segments is a list of (start_frame, end_frame, direction_seed) that
    must partition [0, frames); events is a list of
    (frame_index, event_seed, strength) with strength in (0, 1].
    """

    dim: int
    frames: int
    tokens_per_frame: int
    segments: tuple[tuple[int, int, int], ...] = ()
    events: tuple[tuple[int, int, float], ...] = ()
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.frames < 1 or self.tokens_per_frame < 1:
            raise SpecError("dim, frames, and tokens_per_frame must be positive")
        if not (self.noise_sigma >= 0.0 and math.isfinite(self.noise_sigma)):
            raise SpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.rng_seed < 0:
            raise SpecError(f"rng_seed must be non-negative, got {self.rng_seed}")
        segments = tuple(
            (int(s), int(e), int(seed)) for s, e, seed in (self.segments or ())
        )
        if not segments:
            segments = ((0, self.frames, 0),)
        cursor = 0
        for start, end, seed in segments:
            if start != cursor:
                raise SpecError(
                    f"segments must partition [0, {self.frames}) in order; "
                    f"expected start {cursor}, got {start}"
                )
            if end <= start:
                raise SpecError(f"segment [{start}, {end}) is empty")
            if seed < 0:
                raise SpecError("segment direction seeds must be non-negative")
            cursor = end
        if cursor != self.frames:
            raise SpecError(
                f"segments cover [0, {cursor}) but the stream has {self.frames} frames"
            )
        object.__setattr__(self, "segments", segments)
        events = tuple(
            (int(f), int(seed), float(strength))
            for f, seed, strength in (self.events or ())
        )
        for frame, seed, strength in events:
            if not (0 <= frame < self.frames):
                raise SpecError(f"event frame {frame} outside [0, {self.frames})")
            if seed < 0:
                raise SpecError("event seeds must be non-negative")
            if not (0.0 < strength <= 1.0):
                raise SpecError(f"event strength must be in (0, 1], got {strength}")
        object.__setattr__(self, "events", events)

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "frames": self.frames,
            "tokens_per_frame": self.tokens_per_frame,
            "segments": [list(s) for s in self.segments],
            "events": [list(e) for e in self.events],
            "noise_sigma": self.noise_sigma,
            "rng_seed": self.rng_seed,
        }


def load_stream_spec(path) -> StreamSpec:
    """Read a StreamSpec from a JSON file; optional fields take defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"stream spec {path}: invalid JSON") from exc
    if not isinstance(doc, dict):
        raise SpecError(f"stream spec {path}: expected a JSON object")
    known = {
        "dim",
        "frames",
        "tokens_per_frame",
        "segments",
        "events",
        "noise_sigma",
        "rng_seed",
    }
    unknown = sorted(set(doc) - known)
    if unknown:
        raise SpecError(f"stream spec {path}: unknown fields {unknown}")
    for required in ("dim", "frames", "tokens_per_frame"):
        if required not in doc:
            raise SpecError(f"stream spec {path}: missing {required}")
    return StreamSpec(
        dim=int(doc["dim"]),
        frames=int(doc["frames"]),
        tokens_per_frame=int(doc["tokens_per_frame"]),
        segments=tuple(tuple(s) for s in doc.get("segments", ())),
        events=tuple(tuple(e) for e in doc.get("events", ())),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        rng_seed=int(doc.get("rng_seed", 0)),
    )


def _seeded_unit(dim: int, seed_parts: list[int]) -> np.ndarray:
    rng = np.random.default_rng(seed_parts)
    return normalize(rng.standard_normal(dim))


def segment_direction(spec: StreamSpec, segment_ordinal: int) -> np.ndarray:
    """The unit base direction of one segment."""
    if not (0 <= segment_ordinal < len(spec.segments)):
        raise SpecError(f"segment ordinal {segment_ordinal} out of range")
    seed = spec.segments[segment_ordinal][2]
    return _seeded_unit(spec.dim, [spec.rng_seed, _TAG_SEGMENT, seed])


def event_direction(spec: StreamSpec, event_ordinal: int) -> np.ndarray:
    """The unit direction planted by one event."""
    if not (0 <= event_ordinal < len(spec.events)):
        raise NoSuchEvent(
            f"event ordinal {event_ordinal} out of range (spec has {len(spec.events)})"
        )
    seed = spec.events[event_ordinal][1]
    return _seeded_unit(spec.dim, [spec.rng_seed, _TAG_EVENT, seed])


def event_block(spec: StreamSpec) -> range:
    """Token positions an event overwrites within its frame."""
    return range(max(1, spec.tokens_per_frame // 4))


def grid_side(tokens_per_frame: int) -> int:
    """Side of the square spatial grid tokens are laid out on."""
    return math.ceil(math.sqrt(tokens_per_frame))


def generate_stream(spec: StreamSpec) -> list[RawFrame]:
    """Materialize the stream as trace frames (float32 tokens).

    Timestamps are the frame index as seconds; spatial coordinates go
    row-major over a ceil(sqrt(tokens_per_frame)) square grid.
    """
    directions = [segment_direction(spec, i) for i in range(len(spec.segments))]
    segment_of = np.empty(spec.frames, dtype=np.int64)
    for ordinal, (start, end, _) in enumerate(spec.segments):
        segment_of[start:end] = ordinal
    events_by_frame: dict[int, list[int]] = {}
    for ordinal, (frame, _, _) in enumerate(spec.events):
        events_by_frame.setdefault(frame, []).append(ordinal)
    block = event_block(spec)
    side = grid_side(spec.tokens_per_frame)

    frames: list[RawFrame] = []
    for i in range(spec.frames):
        base = directions[segment_of[i]]
        rng = np.random.default_rng([spec.rng_seed, _TAG_FRAME, i])
        rows = []
        for j in range(spec.tokens_per_frame):
            if spec.noise_sigma > 0.0:
                rows.append(normalize(base + spec.noise_sigma * rng.standard_normal(spec.dim)))
            else:
                rows.append(base)
        for ordinal in events_by_frame.get(i, ()):
            _, _, strength = spec.events[ordinal]
            direction = event_direction(spec, ordinal)
            for j in block:
                if strength == 1.0:
                    rows[j] = direction
                else:
                    rows[j] = normalize((1.0 - strength) * rows[j] + strength * direction)
        tokens = tuple(
            RawToken(
                spatial_row=j // side,
                spatial_col=j % side,
                vector=np.asarray(rows[j], dtype=np.float32),
            )
            for j in range(spec.tokens_per_frame)
        )
        frames.append(RawFrame(frame_index=i, timestamp=float(i), tokens=tokens))
    return frames


def query_for_event(
    spec: StreamSpec,
    event_ordinal: int,
    jitter: float = 0.0,
    rng_seed: int = 0,
    n_tokens: int = 1,
    arrival_time: float | None = None,
    rho: float = 0.1,
    top_k: int = 5,
    dispersion_lambda: float = 0.5,
    query_id: str | None = None,
) -> QuerySpec:
    """Build a query aimed at one planted event.

    With jitter 0 the query tokens equal the event direction exactly;
    otherwise each token is the direction plus seeded gaussian jitter,
    renormalized. Ground truth is the event's frame. arrival_time
    defaults to the end of the stream.
    """
    direction = event_direction(spec, event_ordinal)
    if not (jitter >= 0.0 and math.isfinite(jitter)):
        raise SpecError(f"jitter must be >= 0, got {jitter}")
    if n_tokens < 1:
        raise SpecError(f"n_tokens must be >= 1, got {n_tokens}")
    if jitter == 0.0:
        tokens = np.tile(direction, (n_tokens, 1))
    else:
        rng = np.random.default_rng([int(rng_seed), _TAG_QUERY, event_ordinal])
        tokens = np.stack(
            [normalize(direction + jitter * rng.standard_normal(spec.dim)) for _ in range(n_tokens)]
        )
    frame = spec.events[event_ordinal][0]
    return QuerySpec(
        query_id=query_id if query_id is not None else f"event{event_ordinal}",
        arrival_time=float(spec.frames - 1) if arrival_time is None else float(arrival_time),
        tokens=tokens,
        rho=rho,
        top_k=top_k,
        dispersion_lambda=dispersion_lambda,
        ground_truth_frames=frozenset({frame}),
    )
