"""Exception types raised across the package.

Everything inherits from WinofuseError so callers can catch library
failures with a single except clause.  Validation errors double as
ValueError (or MemoryError for allocation failures) to stay friendly to
generic handling code.
"""


class WinofuseError(Exception):
    pass


class InvalidDimensionError(WinofuseError, ValueError):
    """A tensor or layer dimension is out of range."""


class InvalidParameterError(WinofuseError, ValueError):
    """An engine or transform parameter is out of range."""


class BasisConstructionError(WinofuseError, ValueError):
    """Interpolation points cannot produce a valid transform basis."""


class ShapeMismatchError(WinofuseError, ValueError):
    """Operands passed to an engine or transform do not agree in shape."""


class MachineModelError(WinofuseError, ValueError):
    """A machine description file is missing or malformed."""


class IntermediateAllocationError(WinofuseError, MemoryError):
    """A full-size intermediate could not be allocated.

    Carries the number of bytes that was requested so callers can report
    how far over budget the layer was.
    """

    def __init__(self, nbytes: int, what: str):
        self.nbytes = int(nbytes)
        self.what = what
        super().__init__(
            f"failed to allocate {what}: {self.nbytes} bytes requested"
        )
