"""Exception and warning types shared across the package."""


class PoseDmpError(Exception):
    """Base class for all package errors."""


class DomainError(PoseDmpError, ValueError):
    """A quaternion map was evaluated outside its bijective domain."""


class DegenerateKernelsWarning(RuntimeWarning):
    """Kernel activations summed to (numerically) zero."""


class InsufficientData(PoseDmpError, ValueError):
    pass


class SingularFitWarning(RuntimeWarning):
    """A kernel received (almost) no regression weight and was zeroed."""


class StallError(PoseDmpError, RuntimeError):
    """A primitive never met its switching trigger."""


class StabilityViolation(PoseDmpError, AssertionError):
    """A Lyapunov monitor or convergence check failed.

    Attributes
    ----------
    report : dict
        Report of the offending run, including the counterexample state.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class ParseError(PoseDmpError, ValueError):
    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class NonUniformSampling(PoseDmpError, ValueError):
    pass


class NonUnitQuaternion(PoseDmpError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NoSegments(PoseDmpError, ValueError):
    pass


class ConfigError(PoseDmpError, ValueError):
    """Invalid run configuration or plan file."""
