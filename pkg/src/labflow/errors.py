"""Exception types raised across labflow.

All errors derive from ``LabflowError`` (itself a ``ValueError``) so callers can
catch the whole family at once; the CLI turns them into a machine-readable line.
"""

from __future__ import annotations


class LabflowError(ValueError):
    """Base class for every error raised by labflow."""


# dataset
class NoDataError(LabflowError):
    """Raised when statistics or sampling are requested on an empty dataset."""


class InvalidEpisodeError(LabflowError):
    """Raised when an episode violates its invariants (NaN actions, bad shapes)."""


class UnnormalizedInputError(LabflowError):
    """Raised when denormalizing values outside [-1, 1]."""


class StepOutOfRangeError(LabflowError, IndexError):
    """Raised when a step index falls outside an episode."""


class CorruptManifestError(LabflowError):
    """Raised when an episode or dataset manifest cannot be parsed."""


class ShapeMismatchError(LabflowError):
    """Raised when an array's length disagrees with its manifest."""


class TruncatedArrayError(LabflowError):
    """Raised when a raw array file is not a whole number of rows."""


# encoders / adapter / action expert
class IndivisibleImageError(LabflowError):
    """Raised when an image side is not a multiple of the patch size."""


class TokenMismatchError(LabflowError):
    """Raised when two token streams cannot be fused."""


class VocabularyError(LabflowError):
    """Raised when a token id falls outside the vocabulary."""


class EmptyPromptError(LabflowError):
    """Raised when the adapter receives a zero-length prompt."""


class TauRangeError(LabflowError):
    """Raised when a flow time lies outside [0, 1]."""


class ShapeError(LabflowError):
    """Raised when tensor shapes do not match the model configuration."""


# flow / trainer
class NonFiniteLossError(LabflowError):
    """Raised when the training loss is NaN or infinite."""


class NonFiniteSampleError(LabflowError):
    """Raised when an intermediate denoising state is not finite."""


class DivergenceError(LabflowError):
    """Raised when gradients contain NaN or infinite values."""


# runtime
class BufferOrderError(LabflowError):
    """Raised when a chunk is submitted with an anchor older than the newest one."""


# workbench
class ConfigError(LabflowError):
    """Raised when a run configuration cannot be parsed."""


class CheckpointError(LabflowError):
    """Raised when a checkpoint file is missing, unreadable or malformed."""


class CheckpointMismatchError(CheckpointError):
    """Raised when a checkpoint does not fit the requested configuration."""


class ExpertFailureRateError(LabflowError):
    """Raised when the scripted expert fails on too many seeds during collection."""
