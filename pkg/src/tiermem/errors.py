"""Exception hierarchy shared across the package."""


class TierMemError(Exception):
    """Base class for all tiermem errors."""


class DimensionError(TierMemError):
    """Vector length does not match the session dimension."""


class EmptyInputError(TierMemError):
    """An operation received an empty token list it cannot score."""


class ValidationError(TierMemError):
    """Malformed input file or parameter set."""


class ConfigError(ValidationError):
    """Tier configuration violates a structural constraint."""


class NonMonotoneTimestamp(TierMemError):
    """Timestamps must be strictly increasing along the stream."""


class FrameTooLarge(TierMemError):
    """Frame carries more tokens than tokens_per_frame_max."""


class FrozenMemory(TierMemError):
    """Ingest attempted while a snapshot is outstanding."""


class EmptyFrame(TierMemError):
    """A frame-level operation received a frame with no tokens."""


class BudgetUnsatisfiable(TierMemError):
    """The short tier alone exceeds the token budget (defensive; config
    validation prevents this state)."""


class SpecError(ValidationError):
    """Synthetic stream parameters violate their invariants."""


class NoSuchEvent(TierMemError):
    """Event ordinal out of range for the stream spec."""


class UnknownVariant(ValidationError):
    """Unrecognized benchmark variant flag."""


class TraceFormatError(TierMemError):
    """Base class for binary trace format violations."""


class BadMagic(TraceFormatError):
    """Trace does not start with the expected magic bytes."""


class UnsupportedVersion(TraceFormatError):
    """Trace version field is not supported by this reader."""


class TruncatedRecord(TraceFormatError):
    """Trace ended in the middle of a frame or token record."""


class DimMismatch(TraceFormatError):
    """Trace dimension disagrees with the expected dimension."""
