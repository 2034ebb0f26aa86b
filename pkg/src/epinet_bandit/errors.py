"""Exception types shared across the package.

The CLI maps these onto process exit codes: config errors exit 2,
numerical failures exit 3, analysis errors exit 4.
"""


class ConfigError(ValueError):
    """Invalid configuration or mismatched dimensions."""


class StateError(RuntimeError):
    """Operation called out of order (e.g. backward before forward)."""


class NumericalError(ArithmeticError):
    """A non-finite value reached a place where it must not be."""


class SimError(RuntimeError):
    """Environment-level violation (bad item id, pool too small)."""


class CheckpointError(IOError):
    """Checkpoint file is corrupt, truncated, or version-incompatible."""


class AnalysisError(RuntimeError):
    """Comparison/analysis cannot proceed (missing arm, too few seeds)."""
