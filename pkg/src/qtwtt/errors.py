"""Exception hierarchy. CLI exit codes hang off the three top-level kinds."""


class QtwttError(Exception):
    exit_code = 1


class ConfigError(QtwttError):
    exit_code = 2


class SimulationError(QtwttError):
    exit_code = 3


class TimeRangeError(SimulationError, ValueError):
    """A time value cannot be represented on the integer-picosecond grid."""


class AnalysisError(QtwttError):
    exit_code = 4


class AcquisitionError(AnalysisError):
    """Coarse delay search could not run (e.g. an empty stream)."""


class NoPeakError(AnalysisError):
    """No correlation peak stands out of the accidental background."""


class GapError(AnalysisError):
    """Invalid blocks interrupt a span that must be contiguous."""
