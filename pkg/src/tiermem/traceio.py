"""Binary container for embedding streams.

Little-endian fixed layout, canonical on disk: a 20-byte header (magic
"SVMT", version, dimension, frame count), then per frame a u64 index,
f64 timestamp and u32 token count, then per token u16 row, u16 col and
dim f32 components. Vectors are stored and surfaced as float32, so a
trace read back and rewritten is byte-identical.

A frame count of 0 in the header means "read until end of stream",
which doubles as the encoding of a genuinely empty trace.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, Sequence, Union

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    NonMonotoneTimestamp,
    TraceFormatError,
    TruncatedRecord,
    UnsupportedVersion,
    ValidationError,
)

MAGIC = b"SVMT"
VERSION = 1

_HEADER = struct.Struct("<4sIIQ")
_FRAME = struct.Struct("<QdI")
_COORDS = struct.Struct("<HH")

MAX_COORD = 0xFFFF


@dataclass(frozen=True, eq=False)
class RawToken:
    """One token as it crosses the trace boundary: grid cell + f32 vector."""

    spatial_row: int
    spatial_col: int
    vector: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.vector, dtype=np.float32)
        if arr.ndim != 1 or arr.shape[0] == 0:
            raise ValidationError(f"token vector must be non-empty 1-D, got shape {arr.shape}")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        object.__setattr__(self, "vector", arr)
        for name in ("spatial_row", "spatial_col"):
            value = getattr(self, name)
            if not (0 <= value <= MAX_COORD):
                raise ValidationError(f"{name} must be in [0, {MAX_COORD}], got {value}")


@dataclass(frozen=True, eq=False)
class RawFrame:
    """One frame of raw tokens, ready for ingest or serialization."""

    frame_index: int
    timestamp: float
    tokens: tuple[RawToken, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.frame_index < 0:
            raise ValidationError("frame_index must be non-negative")

    @property
    def dim(self) -> int | None:
        return self.tokens[0].vector.shape[0] if self.tokens else None

    def ingest_tokens(self) -> list[tuple[np.ndarray, int, int]]:
        """(vector, row, col) triples in the shape ingest_frame expects."""
        return [(t.vector, t.spatial_row, t.spatial_col) for t in self.tokens]


Sink = Union[str, os.PathLike, "BinaryIO"]


def _is_path(sink) -> bool:
    return isinstance(sink, (str, os.PathLike))


def _frame_dim(frames: Sequence[RawFrame]) -> int | None:
    for frame in frames:
        if frame.tokens:
            return frame.tokens[0].vector.shape[0]
    return None


def write_trace(sink: Sink, frames: Iterable[RawFrame], dim: int | None = None) -> None:
    """Serialize frames to a file path or binary file object.

    All tokens must share one dimension; an all-empty trace needs `dim`
    passed explicitly. Timestamps must be strictly increasing.
    """
    frames = list(frames)
    inferred = _frame_dim(frames)
    if inferred is None and dim is None:
        raise ValidationError("cannot infer dim from a trace with no tokens; pass dim")
    if inferred is not None and dim is not None and inferred != dim:
        raise DimMismatch(f"frames carry dimension {inferred}, dim argument says {dim}")
    trace_dim = inferred if inferred is not None else int(dim)
    if trace_dim < 1:
        raise ValidationError(f"dim must be positive, got {trace_dim}")

    last_ts = None
    for frame in frames:
        if last_ts is not None and frame.timestamp <= last_ts:
            raise NonMonotoneTimestamp(
                f"frame {frame.frame_index} timestamp {frame.timestamp} "
                f"does not advance past {last_ts}"
            )
        last_ts = frame.timestamp
        for tok in frame.tokens:
            if tok.vector.shape[0] != trace_dim:
                raise DimMismatch(
                    f"frame {frame.frame_index} token has dimension "
                    f"{tok.vector.shape[0]}, trace has {trace_dim}"
                )

    own = _is_path(sink)
    fh = open(sink, "wb") if own else sink
    try:
        fh.write(_HEADER.pack(MAGIC, VERSION, trace_dim, len(frames)))
        for frame in frames:
            fh.write(_FRAME.pack(frame.frame_index, frame.timestamp, len(frame.tokens)))
            for tok in frame.tokens:
                fh.write(_COORDS.pack(tok.spatial_row, tok.spatial_col))
                fh.write(np.ascontiguousarray(tok.vector, dtype="<f4").tobytes())
    finally:
        if own:
            fh.close()


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedRecord(f"stream ended inside {what} ({len(data)}/{n} bytes)")
    return data


def read_trace(source: Sink) -> Iterator[RawFrame]:
    """Yield frames lazily from a file path or binary file object.

    Validates magic, version, dimension, and timestamp monotonicity.
    """
    own = _is_path(source)
    fh = open(source, "rb") if own else source
    try:
        magic, version, dim, frame_count = _HEADER.unpack(_read_exact(fh, _HEADER.size, "header"))
        if magic != MAGIC:
            raise BadMagic(f"expected magic {MAGIC!r}, got {magic!r}")
        if version != VERSION:
            raise UnsupportedVersion(f"version {version} not supported (want {VERSION})")
        if dim < 1:
            raise TraceFormatError(f"header dim must be positive, got {dim}")
        token_bytes = _COORDS.size + 4 * dim
        last_ts = None
        read = 0
        while True:
            if frame_count > 0 and read == frame_count:
                break
            head = fh.read(_FRAME.size)
            if not head and frame_count == 0:
                break
            if len(head) != _FRAME.size:
                raise TruncatedRecord(
                    f"stream ended inside frame header ({len(head)}/{_FRAME.size} bytes)"
                )
            frame_index, timestamp, token_count = _FRAME.unpack(head)
            if last_ts is not None and timestamp <= last_ts:
                raise NonMonotoneTimestamp(
                    f"frame {frame_index} timestamp {timestamp} does not advance past {last_ts}"
                )
            last_ts = timestamp
            tokens = []
            for _ in range(token_count):
                raw = _read_exact(fh, token_bytes, f"frame {frame_index} token")
                row, col = _COORDS.unpack_from(raw)
                vector = np.frombuffer(raw, dtype="<f4", offset=_COORDS.size)
                tokens.append(RawToken(spatial_row=row, spatial_col=col, vector=vector))
            read += 1
            yield RawFrame(frame_index=frame_index, timestamp=timestamp, tokens=tuple(tokens))
    finally:
        if own:
            fh.close()


def load_trace(source: Sink) -> list[RawFrame]:
    """Read a whole trace into memory."""
    return list(read_trace(source))
