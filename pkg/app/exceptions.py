"""Exception hierarchy for sketchdecomp"""


class SketchDecompError(Exception):
    """Base class for all sketchdecomp errors"""


class PreconditionError(SketchDecompError, ValueError):
    """An operation was called with inputs outside its domain"""


class MatrixFormatError(PreconditionError):
    """A matrix, stream or frame file could not be parsed"""


class ConvergenceError(SketchDecompError):
    """A solver failed to converge where the caller cannot continue"""
