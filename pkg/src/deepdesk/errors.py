"""Exception taxonomy shared across the engine and the evaluator."""

from __future__ import annotations


class DeepdeskError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DeepdeskError):
    """Invalid or incomplete configuration. Message names the offending key."""


class IngestionError(DeepdeskError):
    """A table bundle could not be read. Message names the offending file."""


class StoreValidationError(DeepdeskError):
    """A record violates a store invariant. Message names the table id."""


class GatewayError(DeepdeskError):
    """Model transport failed after the configured retries."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class ReplayError(DeepdeskError):
    """A scripted backend received a call it has no rule for."""

    def __init__(self, message: str, prompt_digest: str = ""):
        super().__init__(message)
        self.prompt_digest = prompt_digest


class PlanningError(DeepdeskError):
    """The planner could not parse a usable plan or action from the model."""


class ToolCallFailed(DeepdeskError):
    """A recoverable analyzer failure, surfaced to the planner as a failed call."""


class AnalyzerError(DeepdeskError):
    """A hard analyzer failure (retry ceilings exhausted); aborts the run."""


class RunAborted(DeepdeskError):
    """A research run aborted; the partial trajectory was persisted."""

    def __init__(self, message: str, trajectory_path: str | None = None):
        super().__init__(message)
        self.trajectory_path = trajectory_path


class EvalError(DeepdeskError):
    """The evaluation harness hit an unrecoverable condition."""


class CompileError(DeepdeskError):
    """Report-to-PDF compilation failed. Message names the asset when relevant."""
