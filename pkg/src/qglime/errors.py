"""Exception hierarchy shared across the package."""


class QGLimeError(Exception):
    """Base class for all package errors."""


class InvalidSizeError(QGLimeError):
    """A generator was asked for a structure below its minimum size."""


class QubitBudgetError(QGLimeError):
    """A graph exceeds the 16-node statevector budget."""


class EmptyGraphError(QGLimeError):
    """An operation would leave a graph with no nodes."""


class ConfigError(QGLimeError):
    """A configuration value is out of its admissible range."""


class DataError(QGLimeError):
    """An input file is missing or malformed."""


class NumericalError(QGLimeError):
    """A numerical routine diverged (NaN/Inf loss)."""
