"""Exception hierarchy shared by every module."""

from typing import Optional


class EvalToolkitError(ValueError):
    """Base class for all toolkit errors."""


class InvalidValueError(EvalToolkitError):
    """A number is non-finite or outside its domain."""


class ConfigError(EvalToolkitError):
    """Run configuration is invalid or inconsistent."""


class CorpusError(EvalToolkitError):
    """A corpus could not be built or selected."""


class CorpusFormatError(CorpusError):
    """A JSONL line is malformed or breaks a field invariant."""

    def __init__(self, message: str, line_number: Optional[int] = None, field: Optional[str] = None):
        self.line_number = line_number
        self.field = field
        location = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{location}{message}")


class TemplateError(EvalToolkitError):
    """A prompt template or dimension lookup failed."""


class DivergenceError(EvalToolkitError):
    """Training produced a non-finite loss or non-finite parameters."""

    def __init__(self, step: int, last_finite_step: Optional[int], loss: float):
        self.step = step
        self.last_finite_step = last_finite_step
        self.loss = loss
        super().__init__(
            f"Training diverged at step {step} (loss {loss}, last finite step: {last_finite_step})"
        )
