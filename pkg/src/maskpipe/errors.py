"""Exception types shared by all maskpipe modules.

Every failure the library detects in its own data formats raises a
subclass of :class:`MaskPipeError`, so callers (and the CLI) can map
"bad input data" to a single except clause.  Filesystem failures
propagate as the builtin ``OSError``.
"""

from __future__ import annotations


class MaskPipeError(Exception):
    """Base class for all maskpipe data and format errors."""


# --- tensor container / file format ---

class InvalidDimsError(MaskPipeError):
    """A tensor dimension is zero, absurdly large, or inconsistent."""


class BadMagicError(MaskPipeError):
    """File does not start with the MFT magic bytes."""


class TruncatedFileError(MaskPipeError):
    """File ends before the declared payload is complete."""


class TrailingDataError(MaskPipeError):
    """File contains bytes beyond the declared payload."""


class UnsupportedFormatError(MaskPipeError):
    """Recognized container but an unsupported variant (dtype code, PGM flavor...)."""


# --- postprocessing ---

class ChannelMismatchError(MaskPipeError):
    """Score map does not have the channel layout an operation needs."""


class BackgroundClassRequestedError(MaskPipeError):
    """Class 0 is reserved for background and cannot be extracted as a mask."""


# --- annotations ---

class CountSumMismatchError(MaskPipeError):
    """RLE counts do not sum to the raster size."""


class EmptyMaskError(MaskPipeError):
    """Operation requires at least one foreground pixel."""


class DimsMismatchError(MaskPipeError):
    """Two rasters (or a raster and its metadata) disagree on dimensions."""


class ParseError(MaskPipeError):
    """Annotation document is not valid JSON or violates the schema."""


class ReferentialIntegrityError(MaskPipeError):
    """An annotation references an image or category id that does not exist."""


class DuplicateIdError(MaskPipeError):
    """Two entries in one document list share an id."""


# --- evaluation ---

class NoGroundTruthError(MaskPipeError):
    """Average precision is undefined for a class with zero ground truth."""


class NoClassesError(MaskPipeError):
    """Mean AP is undefined when no class has ground truth."""
