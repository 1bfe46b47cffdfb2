"""Exception types shared across the package."""


class SpecLabError(Exception):
    """Base class for all package errors."""


class ConfigError(SpecLabError, ValueError):
    """Invalid model, schedule, or pipeline configuration."""


class LengthError(SpecLabError, ValueError):
    """Sequence or cache capacity exceeded."""


class NumericError(SpecLabError, ArithmeticError):
    """Non-finite values encountered where finite ones are required."""


class ContractError(SpecLabError, ValueError):
    """A caller violated an operation precondition (e.g. unnormalized distributions)."""


class DataError(SpecLabError, ValueError):
    """Corpus or dataset request cannot be satisfied."""


class VocabMismatchError(SpecLabError, ValueError):
    """Two models or tokenizers do not share an identical vocabulary."""


class StageError(SpecLabError, RuntimeError):
    """A pipeline stage aborted; carries the stage name and the cause."""
