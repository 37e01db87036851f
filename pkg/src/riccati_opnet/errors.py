"""Exception types shared across the package."""


class RiccatiOpnetError(Exception):
    """Base class for all package errors."""


class SingularMatrix(RiccatiOpnetError):
    pass


class NotSymmetric(RiccatiOpnetError):
    pass


class NoConvergence(RiccatiOpnetError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NoStabilizingInit(RiccatiOpnetError):
    pass


class BlowUp(RiccatiOpnetError):
    def __init__(self, message, escape_time=None):
        super().__init__(message)
        self.escape_time = escape_time


class UnpairedComplexRoot(RiccatiOpnetError):
    pass


class GenerationStall(RiccatiOpnetError):
    pass


class ShapeMismatch(RiccatiOpnetError):
    pass


class NonFiniteGradient(RiccatiOpnetError):
    pass


class DivergedLoss(RiccatiOpnetError):
    pass


class GridMismatch(RiccatiOpnetError):
    pass


class NotAdmissible(RiccatiOpnetError):
    pass


class SchemaVersionMismatch(RiccatiOpnetError):
    pass


class CorruptRecord(RiccatiOpnetError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ChecksumMismatch(RiccatiOpnetError):
    pass


class ArchitectureMismatch(RiccatiOpnetError):
    pass


class ConfigError(RiccatiOpnetError):
    pass
