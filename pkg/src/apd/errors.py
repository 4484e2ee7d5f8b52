"""Shared exception types for the purification pipeline."""

from __future__ import annotations


class ApdError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(ApdError):
    pass


class SchemaError(ApdError):
    """Input file is missing a required column."""


class IoError(ApdError):
    """Input file could not be read."""


class GatewayError(ApdError):
    """Chat backend failed (retry budget exhausted or hard HTTP error)."""


class EmptyResponse(GatewayError):
    """Chat backend returned a response with no content."""


class ParseError(ApdError):
    """Base for model-output parse failures; triggers repair retries."""


class NoFenceError(ParseError):
    """Reply contains no complete triple-backtick fence."""


class MalformedCsv(ParseError):
    pass


class IncompleteOutput(ParseError):
    """Reply is valid CSV but ids are missing, duplicated, or unexpected."""


class UnknownFlag(ParseError):
    """Reply used a flag token outside the allowed vocabulary."""


class VerdictParseError(ParseError):
    """Guard model reply does not match the safe/unsafe grammar."""


class InvalidUrl(ApdError):
    pass


class ProviderError(ApdError):
    """Search-index provider failed; never to be coerced into a boolean."""


class BadRequest(ApdError):
    pass


class NotFound(ApdError):
    pass


class Conflict(ApdError):
    """Write rejected because the store is finalized."""


class IncompleteReview(ApdError):
    """Finalization requires a decision for every row."""

    def __init__(self, message: str, row_ids: tuple[str, ...] = ()):
        super().__init__(message)
        self.row_ids = tuple(row_ids)


class ShapeError(ApdError):
    """Predicted and actual row sets do not match."""


class EmbedError(ApdError):
    pass


class DimensionError(ApdError):
    pass


class EmptyIndex(ApdError):
    pass


class VersionError(ApdError):
    """Index file format version is not supported."""


class LoadError(ApdError):
    """Index file is corrupt; message names the offending line."""


class StageOrderError(ApdError):
    """Pipeline stage invoked before its prerequisites completed."""


class ThresholdExceeded(ApdError):
    """Too many rows failed flagging; the run halts rather than purge a
    corpus the backends could not classify."""
