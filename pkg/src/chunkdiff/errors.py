"""Exception types shared across the package."""


class ChunkdiffError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ChunkdiffError):
    """A tensor argument has an invalid or inconsistent shape."""


class DomainError(ChunkdiffError):
    """A scalar argument lies outside its documented domain."""


class LayoutError(ChunkdiffError):
    """A packed sequence layout is malformed or inconsistent."""


class LevelError(ChunkdiffError):
    """A noise level does not match what an operation requires."""


class DiracKernelError(ChunkdiffError):
    """A transition kernel degenerates to a point mass (zero variance)."""


class SingularDriftError(ChunkdiffError):
    """The diffusion drift is evaluated at a singular time."""


class WeightingError(ChunkdiffError):
    """A chunk-weighting function produced unusable raw weights."""


class RewardError(ChunkdiffError):
    """A reward dimension evaluated to a non-finite value."""


class ConfigError(ChunkdiffError):
    """A configuration file or object is invalid."""


class CheckpointError(ChunkdiffError):
    """A checkpoint or dataset file is malformed or incompatible."""


class TrainingDivergedError(ChunkdiffError):
    """A training loop detected sustained divergence."""


class DependencyError(ChunkdiffError):
    """A file another stage was supposed to produce is missing."""


class OracleError(ChunkdiffError):
    """A numerical test oracle could not produce a finite result."""
