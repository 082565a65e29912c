"""Exception hierarchy for the nelf package.

Everything raised on purpose derives from NelfError so callers (and the CLI)
can distinguish our failures from genuine bugs.
"""


class NelfError(Exception):
    """Base class for all nelf errors."""


class ConfigError(NelfError):
    """A configuration value is invalid or inconsistent."""


class InvalidHyperparam(ConfigError):
    """A hyperparameter is out of its valid range."""


class ShapeMismatch(NelfError):
    """Array arguments have incompatible shapes."""


class ParallelRay(NelfError):
    """Ray is (numerically) parallel to the parameterization planes."""


class NonPowerOfTwo(NelfError):
    """Transform size must be a power of two."""


class StaleTape(NelfError):
    """Backward pass received a tape that does not match the parameters."""


class NonFiniteGradient(NelfError):
    """A gradient contained NaN or Inf; the optimizer refuses to step."""


class NonFiniteLoss(NelfError):
    """A loss value became NaN or Inf during training."""


class DatasetFormatError(NelfError):
    """Dataset or manifest failed validation; message carries the key path."""


class MissingFile(DatasetFormatError):
    """A file referenced by the manifest does not exist."""


class InvalidPose(DatasetFormatError):
    """A camera pose in the manifest failed validation."""


class InvalidManifest(DatasetFormatError):
    """Manifest structure is inconsistent (counts, grid dims, types)."""


class InconsistentResolution(DatasetFormatError):
    """Images in one dataset differ in size."""


class InvalidStride(NelfError):
    """Grid subsampling stride does not evenly divide the grid."""


class TooSmall(NelfError):
    """Image too small for the requested operation (e.g. SSIM window)."""


class EmptySplit(NelfError):
    """An evaluation split contains no views."""


class DegenerateFocus(NelfError):
    """Refocus plane coincides with the camera plane."""


class OutOfField(NelfError):
    """Requested ray cannot be parameterized (reported, normally not raised)."""


class CheckpointError(NelfError):
    """Checkpoint file is malformed or of an unsupported version."""
