"""Exception types shared across the package."""


class PffracError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PffracError):
    """Invalid configuration, CLI arguments, or input files.

    Maps to exit status 2 on the command line.
    """


class MeshFormatError(ConfigError):
    """Malformed mesh file (missing header, bad counts, out-of-range indices)."""


class AssemblyError(PffracError):
    """Non-finite values produced during assembly.

    Carries ``element`` or ``dof`` to localize the offending entity.
    """

    def __init__(self, message, element=None, dof=None):
        super().__init__(message)
        self.element = element
        self.dof = dof


class IndefiniteMatrixError(PffracError):
    """Symmetric factorization hit a non-positive pivot.

    ``pivot_index`` is the offending row/column in the original ordering.
    """

    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class NotDescentDirectionError(PffracError):
    """Line search was handed a direction with non-negative initial slope.

    This signals a bug upstream (assembly or Newton step), never a
    legitimate solver state.
    """


class ConeProjectionError(PffracError):
    """Inner cone minimization failed to reach stationarity.

    Carries the strain components that triggered the failure.
    """

    def __init__(self, message, strain=None):
        super().__init__(message)
        self.strain = strain
