"""Exception types shared across the codec."""


class VoxgsError(Exception):
    """Base class for all voxgs errors."""


class CorruptStreamError(VoxgsError):
    """A bitstream failed a structural check during decoding."""


class AnchorFileError(VoxgsError):
    """An anchor text file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorrelationUndefinedError(VoxgsError):
    """Pearson correlation is undefined for the given calibration corpus.

    The fitted alpha is still available on the ``alpha`` attribute.
    """

    def __init__(self, message, alpha=None):
        super().__init__(message)
        self.alpha = alpha
