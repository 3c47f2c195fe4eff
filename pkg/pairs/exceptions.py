from __future__ import annotations


class PairsError(RuntimeError):
    """Base class for every failure raised by the pipeline."""


class InvalidInputError(PairsError, ValueError):
    """Raised when an argument violates an operation's preconditions."""


class DegenerateInputError(InvalidInputError):
    """Raised when inputs are well-formed but leave the result undefined."""


class ConfigurationError(PairsError):
    """Raised for unusable pipeline, template or provider configuration."""


class IngestionError(PairsError):
    """Raised when a corpus cannot be turned into an index."""


class IndexFormatError(PairsError):
    """Raised when a persisted index directory is missing or inconsistent."""


class DatasetFormatError(InvalidInputError):
    """Raised for a malformed JSON-lines record."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProviderError(PairsError):
    """Raised when an embedding, generation or rerank backend fails."""

    def __init__(self, message: str, status: int | None = None, endpoint: str | None = None):
        super().__init__(message)
        self.status = status
        self.endpoint = endpoint


class ProtocolError(ProviderError):
    """Raised when a backend answers with a body we cannot interpret."""


class PipelineStageError(ProviderError):
    """A provider failure tagged with the pipeline stage that triggered it."""

    def __init__(self, stage: str, cause: ProviderError):
        super().__init__(f"{stage} failed: {cause}", status=cause.status, endpoint=cause.endpoint)
        self.stage = stage
