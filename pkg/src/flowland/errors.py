"""Exception types shared across the toolkit.

The CLI maps ConfigError to exit code 2 and DegenerateDataError (and its
subclasses) to exit code 3.
"""


class ConfigError(ValueError):
    """Malformed configuration, scenario file, or persisted artifact."""


class DegenerateDataError(ValueError):
    """Input data cannot support the requested computation."""


class DegenerateGeometryError(DegenerateDataError):
    """Feature geometry is rank-deficient (e.g. all points collinear)."""


class NoConsensusError(DegenerateDataError):
    """RANSAC found no model with enough inliers."""


class NoSafeRegionError(DegenerateDataError):
    """No frame along the path was classified safe."""


class UndefinedMetricError(DegenerateDataError):
    """A metric is undefined for this input (single class, constant targets)."""
