"""Exception hierarchy shared by every module."""


class ZSBiasError(Exception):
    """Base class for all errors raised by zsbias."""


class InvalidArgumentError(ZSBiasError, ValueError):
    """Shapes, ranges or parameters are inconsistent."""


class DegenerateInputError(ZSBiasError, ValueError):
    """The input carries nothing to correct (e.g. a constant volume)."""


class OptimizationDivergedError(ZSBiasError, ArithmeticError):
    """A loss or gradient became non-finite during optimization."""

    def __init__(self, step, message, trace=None):
        super().__init__(f"optimization diverged at step {step}: {message}")
        self.step = step
        self.trace = trace or []


class VolumeIOError(ZSBiasError, OSError):
    """Base class for volume reading/writing failures."""


class VolumeNotFoundError(VolumeIOError, FileNotFoundError):
    pass


class MalformedHeaderError(VolumeIOError):
    pass


class NotThreeDError(VolumeIOError):
    pass


class UnsupportedDtypeError(VolumeIOError):
    pass


class MaskError(ZSBiasError, ValueError):
    """Label mask is inconsistent with its label spec or reference volume."""
