"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PromptLoopError(Exception):
    """Base class for all errors raised by promptloop."""


class InvalidArgumentError(PromptLoopError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class StateError(PromptLoopError, RuntimeError):
    """An operation was called in a state that does not permit it."""


class TransportError(PromptLoopError):
    """A model call failed after exhausting its retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class TransientError(PromptLoopError):
    """A single provider attempt failed in a way worth retrying."""


class ProtocolError(PromptLoopError):
    """The provider answered with a payload we cannot interpret."""


class FeedbackParseError(PromptLoopError, ValueError):
    """Turn-level feedback text is missing one of the required fields."""

    def __init__(self, message: str, raw_text: str, missing: tuple[str, ...] = ()):
        super().__init__(message)
        self.raw_text = raw_text
        self.missing = missing


class RewriteParseError(PromptLoopError, ValueError):
    """The rewriter answer did not contain a fenced prompt block."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class EpochError(PromptLoopError):
    """Every candidate of an epoch failed; the epoch cannot select a prompt."""


class SqlExecutionError(PromptLoopError):
    """The embedded SQL engine rejected a query."""


class BundleValidationError(PromptLoopError, ValueError):
    """A task bundle failed validation. ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class CorruptLogError(PromptLoopError):
    """A run log is not a contiguous sequence of records."""


class RunNotFoundError(PromptLoopError, FileNotFoundError):
    """No run log exists for the requested run id."""


class AwaitingReviewError(PromptLoopError):
    """The optimizer needs human feedback for an epoch before it can continue."""

    def __init__(self, run_id: str, epoch: int):
        super().__init__(f"run {run_id!r} epoch {epoch} is waiting for human feedback")
        self.run_id = run_id
        self.epoch = epoch
