"""Exception hierarchy. Every library error derives from :class:`MrCostsError`."""


class MrCostsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MrCostsError):
    """Invalid configuration value or combination."""


class ParseError(MrCostsError):
    """Malformed input file."""


class NonUniformTimeGrid(MrCostsError):
    """Time stamps are not strictly increasing with constant spacing."""


class NonFiniteValue(MrCostsError):
    """NaN or Inf encountered at ingest."""


class IoError(MrCostsError):
    """Filesystem read or write failure."""


class VersionMismatch(MrCostsError):
    """Archive was written by an incompatible format version."""


class CorruptArchive(MrCostsError):
    """Archive directory is incomplete or a blob fails its size check."""


class WindowTooLong(MrCostsError):
    """Requested window length exceeds the number of snapshots."""


class RankDeficientWindow(MrCostsError):
    """Window has numerical rank below the requested fit rank."""


class NumericalBreakdown(MrCostsError):
    """Optimizer residual became non-finite and damping did not recover it."""


class UncoveredTime(MrCostsError):
    """No surviving window covers some time index."""


class TooFewPoints(MrCostsError):
    """Fewer distinct feature values than requested clusters."""


class DegeneratePartition(MrCostsError):
    """Cluster partition unusable for scoring (empty cluster or K < 2)."""


class AllWindowsFailed(MrCostsError):
    """Every window fit of a decomposition level failed."""


class NonIncreasingWindows(MrCostsError):
    """Level window lengths must be strictly increasing."""


class BandOutOfRange(MrCostsError):
    """Requested band index does not exist."""


class ShapeMismatch(MrCostsError):
    """Array shapes are incompatible for the requested operation."""
