"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
data problems exit 3, anything that fails at runtime exits 4. Plain
``ValueError`` is reserved for contract violations (bad shapes, bad ranges)
on in-process APIs.
"""


class KanrecError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(KanrecError):
    """Invalid or inconsistent configuration (unknown keys, bad values, missing paths)."""


class DataError(KanrecError):
    """Input data is unusable (unparsable, empty, or incompatible)."""


class ParseError(DataError):
    """A specific line of an input file could not be parsed."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number


class EmptyDatasetError(DataError):
    """Filtering or loading produced a dataset with no usable impressions."""


class CheckpointMismatchError(DataError):
    """A checkpoint and a dataset were built from different vocabularies."""


class TrainingError(KanrecError):
    """Training diverged or otherwise failed; carries the offending step index."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


class DegenerateNeighborhoodError(KanrecError):
    """Attention was requested over a fully masked neighborhood."""
