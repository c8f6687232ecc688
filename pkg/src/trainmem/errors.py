"""Exception types raised across the package."""

from __future__ import annotations


class TrainMemError(Exception):
    """Base class for all expected, user-facing failures."""


class ConfigError(TrainMemError):
    """Generation config text is malformed or inconsistent."""


class GenerationError(TrainMemError):
    """Sampling could not produce a valid spec within the retry budget."""


class ShapeError(TrainMemError):
    """A layer cannot consume the shape it is given."""


class UnsupportedOp(TrainMemError):
    """The layer kind has no accounting or propagation rule (e.g. CustomOp)."""


class ParseError(TrainMemError):
    """Text in one of the package file formats could not be parsed."""


class IntegrityError(ParseError):
    """Parsed text is well-formed but internally inconsistent."""


class DataError(TrainMemError):
    """Recorded run data or dataset tables are missing or unusable."""


class TrainingError(TrainMemError):
    """Training diverged (non-finite loss)."""
