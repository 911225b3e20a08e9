"""Exception types shared across the toolkit."""


class LungTriageError(Exception):
    """Base class for all toolkit-specific errors."""


class MalformedHeaderError(LungTriageError):
    """Volume file exists but its header cannot be parsed."""


class NonVolumePayloadError(LungTriageError):
    """Volume file parsed but does not contain a 3D scalar payload."""


class ManifestError(LungTriageError):
    """Manifest file is structurally invalid (duplicate ids, bad fields)."""


class SplitError(LungTriageError):
    """Dataset split cannot be performed (e.g. too few records)."""


class PhantomError(LungTriageError):
    """Synthetic phantom cannot be generated from the given spec."""


class CheckpointError(LungTriageError):
    """Checkpoint file is missing, malformed, or of the wrong model kind."""


class ClickOutOfBoundsError(LungTriageError):
    """A guidance click lies outside the volume grid."""

    def __init__(self, click_index: int, voxel, shape):
        self.click_index = click_index
        self.voxel = tuple(voxel)
        self.shape = tuple(shape)
        super().__init__(
            f"click {click_index} at voxel {self.voxel} outside volume {self.shape}"
        )


class TrainingDivergedError(LungTriageError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss_value: float):
        self.step = step
        self.loss_value = loss_value
        super().__init__(f"non-finite loss {loss_value!r} at step {step}")
