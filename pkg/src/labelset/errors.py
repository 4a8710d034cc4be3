"""Exception hierarchy shared by the library and the CLI."""


class LabelSetError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class InvalidArgumentError(LabelSetError, ValueError):
    """A caller-supplied argument violates a precondition."""

    exit_code = 2


class DataError(LabelSetError, ValueError):
    """Input data is malformed or cannot support the requested computation."""

    exit_code = 3


class LeakageError(InvalidArgumentError):
    """A model was fitted on rows that are also used for conformal calibration."""


class ArtifactVersionError(LabelSetError):
    """A persisted artifact has an unknown format tag or version."""

    exit_code = 4
