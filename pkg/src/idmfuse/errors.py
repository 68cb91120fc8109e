"""Exception hierarchy shared by all idmfuse modules."""


class IdmError(ValueError):
    """Base class for every error raised by idmfuse."""


class InvariantError(IdmError):
    """An image, kernel or model violates one of its structural invariants."""


class SceneFormatError(IdmError):
    """A scene directory is missing files or its payloads disagree with the header.

    ``field`` names the offending file or header key.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SingularSystemError(IdmError):
    """The normal matrix of a least-squares band fit is numerically singular."""

    def __init__(self, message, band=None):
        super().__init__(message)
        self.band = band


class DegenerateInputError(IdmError):
    """A statistic is undefined for the input (zero variance, constant image)."""


class FusionStageError(IdmError):
    """Wraps a failure inside the fusion pipeline with the stage and band involved."""

    def __init__(self, stage, band, cause):
        where = stage if band is None else f"{stage} (band {band})"
        super().__init__(f"fusion failed at {where}: {cause}")
        self.stage = stage
        self.band = band
        self.cause = cause
