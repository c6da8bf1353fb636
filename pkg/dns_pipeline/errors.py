"""Error types shared by every stage. CLI maps them to exit codes; library code raises, never prints."""
from __future__ import annotations

from typing import Optional


class PipelineError(Exception):
    pass


class ArgumentError(PipelineError, ValueError):
    pass


class ConfigError(PipelineError, ValueError):
    pass


class AudioFormatError(PipelineError):
    pass


class CorruptFileError(PipelineError):
    pass


class UndefinedSnrError(PipelineError):
    """No frame where both speech and noise are active."""


class MaterialError(PipelineError):
    pass


class PlanError(PipelineError):
    pass


class DataError(PipelineError):
    pass


class HarnessError(PipelineError, RuntimeError):
    pass


class RecipeError(PipelineError):
    def __init__(self, recipe_id: str, cause: Optional[BaseException] = None) -> None:
        self.recipe_id = recipe_id
        self.cause = cause
        detail = f"{type(cause).__name__}: {cause}" if cause is not None else "failed"
        super().__init__(f"recipe {recipe_id!r}: {detail}")
