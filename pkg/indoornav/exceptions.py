"""Exception hierarchy.

Every error raised on purpose by the package derives from `IndoorNavError`
and carries a short, stable `code` that the CLI prints and tests match on.
"""
from typing import Optional


class IndoorNavError(Exception):
    """Base class for all errors raised by indoornav."""

    default_code = "error"

    def __init__(self, message: str, code: Optional[str] = None) -> None:
        super().__init__(message)
        self.code = code or self.default_code

    def __str__(self) -> str:
        return f"[{self.code}] {super().__str__()}"


class ConfigError(IndoorNavError):
    default_code = "bad-config"


class SceneError(IndoorNavError):
    default_code = "invalid-scene"


class PipelineError(IndoorNavError):
    default_code = "pipeline"


class GenerationError(IndoorNavError):
    default_code = "not-connected"


class RenderError(IndoorNavError):
    default_code = "inside-wall"


class PerceptionError(IndoorNavError):
    default_code = "perception"


class EpisodeError(IndoorNavError):
    default_code = "episode"


class NeuroError(IndoorNavError):
    default_code = "neuro"


class AgentError(IndoorNavError):
    default_code = "agent"


class BenchError(IndoorNavError):
    default_code = "bench"
