# -*- coding: utf-8 -*-


class FacevoxError(Exception):
    """Base error. `category` is the single-word tag printed by the CLI."""

    category = "runtime"
    exit_code = 1


class ConfigError(FacevoxError):
    category = "config"
    exit_code = 2


class CorpusError(FacevoxError):
    category = "corpus"


class CorpusExistsError(CorpusError):
    pass


class CorpusLoadError(CorpusError):
    category = "corpus-load"


class CorpusCorruptionError(CorpusError):
    category = "corpus-corruption"


class TranscriptError(FacevoxError, ValueError):
    category = "transcript"


class ShapeError(FacevoxError, ValueError):
    category = "shape"


class CheckpointError(FacevoxError):
    category = "checkpoint"


class CheckpointIntegrityError(CheckpointError):
    category = "checkpoint-integrity"


class CheckpointVersionError(CheckpointError):
    category = "checkpoint-version"


class DivergenceError(FacevoxError):
    """Raised when a loss term becomes non-finite. `term` names the offender."""

    category = "divergence"

    def __init__(self, term: str, step: int, value: float):
        self.term = term
        self.step = step
        self.value = value
        super().__init__(f"'{term}' loss is {value} at step {step}")


class EmbeddingError(FacevoxError, ValueError):
    """Zero or non-finite embedding where a direction is required."""

    category = "embedding"


class DegenerateTaskError(FacevoxError, ValueError):
    category = "degenerate"


class SelectionError(FacevoxError, ValueError):
    category = "selection"


class EvaluationError(FacevoxError, ValueError):
    category = "evaluation"


__all__ = [
    "FacevoxError",
    "ConfigError",
    "CorpusError",
    "CorpusExistsError",
    "CorpusLoadError",
    "CorpusCorruptionError",
    "TranscriptError",
    "ShapeError",
    "CheckpointError",
    "CheckpointIntegrityError",
    "CheckpointVersionError",
    "DivergenceError",
    "EmbeddingError",
    "DegenerateTaskError",
    "SelectionError",
    "EvaluationError",
]
