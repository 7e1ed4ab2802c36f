"""Shared exception types."""


class PhishbenchError(Exception):
    """Base class for all errors raised by this package."""


class CorpusError(PhishbenchError):
    """Corpus ingestion, validation, or serialization failure."""


class FeatureError(PhishbenchError):
    """TF-IDF fitting/transform misuse or artifact version mismatch."""


class TrainingError(PhishbenchError):
    """Classifier training or prediction contract violation."""


class GatewayError(PhishbenchError):
    """LLM gateway failure."""


class ConfigurationError(GatewayError):
    """Provider misconfiguration detected before any network call."""


class TransportError(GatewayError):
    """All retries exhausted; carries the last observed status."""

    def __init__(self, message, status=None, attempts=0):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class GenerationError(PhishbenchError):
    """Email-generation pipeline stage failure.

    ``reason`` feeds the per-stage discard accounting: one of
    parse_failure, invalid_fields, provider_error.
    """

    def __init__(self, message, reason="parse_failure"):
        super().__init__(message)
        self.reason = reason


class EvaluationError(PhishbenchError):
    """Experiment protocol violation (leaks, degenerate inputs, bad schemas)."""
