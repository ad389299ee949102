"""Exception hierarchy mapped onto CLI exit codes."""


class HicontrastError(Exception):
    exit_code = 1


class ConfigError(HicontrastError):
    """Bad configuration, parameters or I/O."""

    exit_code = 2


class NumericalError(HicontrastError):
    """A numerical contract was violated (quadrature, solver, inequality)."""

    exit_code = 3


class TruncationError(NumericalError):
    def __init__(self, message, suggested_cutoff=None):
        super().__init__(message)
        self.suggested_cutoff = suggested_cutoff


class PoleError(NumericalError):
    pass


class UnsupportedError(HicontrastError):
    exit_code = 4
