"""Exception hierarchy shared by all modules."""


class FreeLevyError(Exception):
    """Base class for every error raised by the package."""


class InvalidMeasureError(FreeLevyError, ValueError):
    """A measure, pair or triplet violates its invariants."""


class MomentDivergenceError(FreeLevyError, ValueError):
    """A requested moment or cumulant is not finite."""


class DomainError(FreeLevyError, ValueError):
    """An argument lies outside the domain of the operation."""


class FiniteActivityError(FreeLevyError, ValueError):
    """The radial jump measure has infinite total mass."""


class ResourceGuardError(FreeLevyError, RuntimeError):
    """A simulation would exceed the configured resource budget."""


class BranchError(FreeLevyError, ArithmeticError):
    """The characteristic Newton solver left the upper half-plane or stalled.

    Attributes ``z``, ``t`` and ``last_iterate`` carry the failing point.
    """

    def __init__(self, message, z=None, t=None, last_iterate=None):
        super().__init__(message)
        self.z = z
        self.t = t
        self.last_iterate = last_iterate

    def diagnostics(self):
        def _c(w):
            return None if w is None else [float(w.real), float(w.imag)]

        return {
            "error": str(self),
            "z": _c(self.z),
            "t": self.t,
            "last_iterate": _c(self.last_iterate),
        }


class EigensolverError(FreeLevyError, ArithmeticError):
    """Implicit QL did not converge; ``matrix`` holds the offending input."""

    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = matrix

    def dump(self, path):
        """Write the offending matrix in the binary dump format."""
        from freelevy.ensemble import write_matrix_dump

        write_matrix_dump(path, [self.matrix])
