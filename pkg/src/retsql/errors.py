"""Exception hierarchy shared across the package.

Every error class carries a process exit code so the CLI can map failures
to distinct, scriptable statuses.
"""


class RetsqlError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(RetsqlError):
    """Unknown or malformed configuration key/value."""

    exit_code = 2


class MalformedRecord(RetsqlError):
    """An ingestion record violates the SQL query invariants."""

    exit_code = 4


class SchemaMismatch(RetsqlError):
    """A query references a column outside its table schema."""

    exit_code = 4


class SampleTooLarge(RetsqlError):
    """Requested more examples than the dataset holds."""

    exit_code = 7


class InsufficientPattern(RetsqlError):
    """A sampler needs more examples of a pattern than exist."""

    exit_code = 7

    def __init__(self, pattern_id: int, available: int, requested: int):
        self.pattern_id = pattern_id
        self.available = available
        self.requested = requested
        super().__init__(
            f"pattern {pattern_id}: {available} examples available, "
            f"{requested} requested"
        )


class EmptyInput(RetsqlError):
    """Encoder input is missing question tokens or headers."""

    exit_code = 6


class EmptyDataset(RetsqlError):
    """An operation requires at least one example."""

    exit_code = 6


class EmptyIndex(RetsqlError):
    """Retrieval attempted against an index with no entries."""

    exit_code = 6


class EmptyEval(RetsqlError):
    """Metrics requested over zero evaluation records."""

    exit_code = 6


class DimensionMismatch(RetsqlError):
    """A vector or tensor has an unexpected shape."""

    exit_code = 5


class VersionMismatch(RetsqlError):
    """A persisted artifact does not match the expected format/dimensions."""

    exit_code = 5


class ConfigMismatch(RetsqlError):
    """Aggregating runs whose configurations disagree."""

    exit_code = 2


class NoPositiveAvailable(RetsqlError):
    """No other example shares the anchor's logical pattern."""

    exit_code = 7


class NoNegativeAvailable(RetsqlError):
    """No example with a different logical pattern exists."""

    exit_code = 7


class EmptyCandidates(RetsqlError):
    """A pointer step has no eligible positions left."""

    exit_code = 6


class PatternMismatch(RetsqlError):
    """Gold query pattern disagrees with the decoding template."""

    exit_code = 4


class UnalignedValue(RetsqlError):
    """Grounding supervision requested for an unaligned value span."""

    exit_code = 4


class DivergedLoss(RetsqlError):
    """Training produced a non-finite loss."""

    exit_code = 8
