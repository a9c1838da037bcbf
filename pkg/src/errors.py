"""Exception types shared across the toolkit."""

from typing import Optional


class MRCFormatError(ValueError):
    """The file is not a readable MRC2014 file."""


class UnsupportedModeError(MRCFormatError):
    """The MODE word names a data type this reader does not handle."""


class CorruptFileError(MRCFormatError):
    """The data section is shorter than the header declares."""


class DegenerateInputError(ValueError):
    """Input has no usable signal (e.g. zero variance)."""


class NumericalFailureError(RuntimeError):
    """A loss or iterate became non-finite."""


class TrainingDivergedError(NumericalFailureError):
    """Training stopped on a non-finite loss.

    Carries the loss history recorded up to the failure and the path of the
    checkpoint that was kept, if any.
    """

    def __init__(self, message: str, history=None, checkpoint_path: Optional[str] = None):
        super().__init__(message)
        self.history = history
        self.checkpoint_path = checkpoint_path


class PrerequisiteError(ValueError):
    """A required earlier artifact (checkpoint, pose manifest) is missing."""


class ArtifactExistsError(ValueError):
    """An output file already exists and would be overwritten."""


class ExternalMethodError(OSError):
    """An external denoiser failed or produced an unusable output."""
