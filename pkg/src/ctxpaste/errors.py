"""Exception hierarchy shared across the pipeline.

Every operational failure raises a subclass of PipelineError carrying a
stable ``kind`` tag so the CLI can emit machine-readable error lines.
Usage mistakes (bad config files, bad flags) raise ConfigError instead,
which the CLI maps to a distinct exit code.
"""


class PipelineError(Exception):
    """Base class for failures inside pipeline operations."""

    kind = "pipeline"


class ShapeError(PipelineError, ValueError):
    """Array dimensions or channel counts violate a container contract."""

    kind = "shape"


class BoundsError(PipelineError, ValueError):
    """A rectangle or paste position falls outside the target raster."""

    kind = "bounds"


class EmptyObjectError(PipelineError):
    """An instance extraction found no pixels for the requested category."""

    kind = "empty-object"


class EmptyBankError(PipelineError):
    """Harvesting produced zero qualifying instances."""

    kind = "empty-bank"


class InstanceTooSmallError(PipelineError):
    """A geometric transform left the instance without any support pixels."""

    kind = "instance-too-small"


class ExhaustionError(PipelineError):
    """Base class for resampling loops that cannot produce a valid draw."""

    kind = "exhaustion"


class NoDisjointCategoryError(ExhaustionError):
    """The bank holds no category outside the sample's label set."""

    kind = "no-disjoint-category"


class ResampleExhaustedError(ExhaustionError):
    """The retry budget ran out before a valid draw appeared."""

    kind = "resample-exhausted"


class PlacementError(PipelineError):
    """A blend could not fit the instance inside the target image."""

    kind = "placement"


class TrainingDivergedError(PipelineError):
    """The training loss became non-finite."""

    kind = "training-diverged"


class ManifestError(PipelineError):
    """A corpus or bank directory on disk violates its documented layout."""

    kind = "manifest"


class ConfigError(Exception):
    """A config file or CLI invocation is malformed (usage error)."""

    kind = "config"
