"""Exception types shared across the package."""


class SpaceSynthError(Exception):
    """Base class for all spacesynth errors."""


# --- tree ---

class UnknownNodeError(SpaceSynthError):
    """A node id does not exist in the tree."""


class TreeIncompleteError(SpaceSynthError):
    """An operation required a finished tree but the build is still in progress."""


class AlreadyExpandedError(SpaceSynthError):
    """attach_split was called on a node that already has children or a final kind."""


class DepthExceededError(SpaceSynthError):
    """attach_split was called on a node at the maximum depth."""


class InvalidDimensionError(SpaceSynthError):
    """A dimension violates its invariants (duplicate labels, degenerate split, ...)."""


# --- provider gateway ---

class GatewayError(SpaceSynthError):
    """Base class for provider-facing failures."""


class RateLimitedError(GatewayError):
    """The provider kept rate-limiting us after all retries."""


class ProviderTimeoutError(GatewayError):
    """The provider did not answer within the configured timeout, retries included."""


class ProviderError(GatewayError):
    """Non-retryable provider failure (bad request, auth, unexpected payload)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class EmptyInputError(GatewayError):
    """An embedding call received no input texts."""


class MalformedReplyError(GatewayError):
    """No parseable structured block could be located in the model reply."""


class SchemaViolationError(GatewayError):
    """A structured block parsed but is missing or mistyping required fields."""


# --- partitioner ---

class PartitionError(SpaceSynthError):
    """Base class for space-partitioning failures."""


class InsufficientSamplesError(PartitionError):
    """The provider could not produce enough distinct pivot samples."""


class NonExclusivePartitionError(PartitionError):
    """A pivot assignment is not a clean one-value-per-sample partition."""


class DimensionReuseError(PartitionError):
    """The provider kept proposing a dimension already used on the node's path."""


class CoverageRegressionError(PartitionError):
    """The completed value set dropped a value that was observed on the pivots."""


class ProviderExhaustedError(PartitionError):
    """All retries for one node (or one leaf batch) failed."""


class CorruptCheckpointError(PartitionError):
    """A checkpoint file could not be parsed back into a valid tree."""


class ConfigMismatchError(PartitionError):
    """A caller-supplied config contradicts the one persisted in a checkpoint."""


# --- quality / reporting ---

class EmptyCorpusError(SpaceSynthError):
    """Diversity scoring needs at least two records."""


class FingerprintMismatchError(SpaceSynthError):
    """An artifact references a different upstream artifact than the one on disk."""
