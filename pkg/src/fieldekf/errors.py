"""Exception types shared across the package."""

from __future__ import annotations


class FieldEKFError(Exception):
    """Base class for all package errors."""


class GridMismatchError(FieldEKFError, ValueError):
    """Two fields that must share a sampling grid do not."""


class DivergenceError(FieldEKFError):
    """A filter quantity became non-finite or left the plausible region.

    Attributes
    ----------
    k : int or None
        Time index at which the divergence was detected.
    detail : str
        What was found, e.g. the offending state entry.
    """

    def __init__(self, detail: str, k: int | None = None):
        self.detail = detail
        self.k = k
        where = f" at step {k}" if k is not None else ""
        super().__init__(f"filter diverged{where}: {detail}")


class SingularSpectrumError(FieldEKFError, ValueError):
    """A noise spectrum or covariance cannot be inverted."""

    def __init__(self, message: str, worst_frequency=None):
        self.worst_frequency = worst_frequency
        super().__init__(message)


class InvalidKernelError(FieldEKFError, ValueError):
    """A stationary kernel violates symmetry, support or PSD requirements."""


class TerrainError(FieldEKFError, ValueError):
    """The camera is at or below the terrain surface."""


class ConfigError(FieldEKFError, ValueError):
    """Configuration is malformed or names unknown keys."""


class DatasetError(FieldEKFError):
    """A dataset on disk violates the expected layout.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
