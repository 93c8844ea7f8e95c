"""Exception hierarchy. Every failure mode callers are expected to handle
gets its own class so the CLI can map them onto stable exit codes."""


class PromptVidError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PromptVidError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(PromptVidError):
    """A config violates its invariants (bad field value, key, or combination)."""


class ContractError(PromptVidError):
    """An operation was called outside its contract (bad target, non-scalar loss, ...)."""


class DegenerateInputError(PromptVidError):
    """Numerically meaningless input, e.g. a zero vector fed to cosine similarity."""


class InputTooLongError(PromptVidError):
    """A token sequence does not fit the configured context length."""


class TrainingDivergedError(PromptVidError):
    """The training loss became non-finite; the run is aborted."""


class DataSpecError(PromptVidError):
    """A dataset generation spec cannot be satisfied."""


class ClipFormatError(PromptVidError):
    """A clip file has bad magic, version, or trailing garbage."""


class ClipShapeError(PromptVidError):
    """A clip file header declares an invalid shape."""


class ClipTruncatedError(PromptVidError):
    """A clip file ends before its declared payload."""


class CheckpointError(PromptVidError):
    """Base class for checkpoint load failures."""


class CheckpointManifestError(CheckpointError):
    """The checkpoint manifest is unreadable or structurally invalid."""


class CheckpointShapeError(CheckpointError):
    """A tensor record's shape does not match its stored byte length."""


class CheckpointTruncatedError(CheckpointError):
    """The weights blob is shorter than the manifest requires."""


class MissingArtifactError(PromptVidError):
    """A required file or directory (checkpoint, dataset) does not exist."""


class DuplicateLabelError(ContractError):
    """The same label was given twice where labels must be unique."""
