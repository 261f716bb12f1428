"""Exception types shared across the package."""


class HoiError(Exception):
    """Base class for all errors raised by hoisynth."""


class GeometryError(HoiError, ValueError):
    pass


class SignUndefinedError(GeometryError):
    """Signed distance requested for a mesh that is not watertight."""


class UnderdeterminedError(GeometryError):
    """Point registration without enough independent correspondences."""


class DivergenceError(HoiError):
    """An optimizer produced a non-finite energy.

    ``trace`` holds the energies seen before the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
