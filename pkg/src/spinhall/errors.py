"""Exception hierarchy.

Input/configuration problems derive from :class:`ConfigError` (CLI exit code 2);
numerical failures derive from :class:`NumericalError` (CLI exit code 3).
"""


class SpinHallError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SpinHallError, ValueError):
    """Invalid input, parameters or configuration."""


class NumericalError(SpinHallError, ArithmeticError):
    """A numerical tolerance could not be met."""


class InvalidParameter(ConfigError):
    pass


class MomentumAtOrigin(ConfigError):
    """Evaluation requested at (or too close to) the gauge-singular point p = 0."""


class RequiresZeroRashba(ConfigError):
    pass


class UnsupportedDimension(ConfigError):
    pass


class UnsupportedCombination(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class NotUnitary(ConfigError):
    pass


class BasisNotSpinDiagonal(ConfigError):
    """Spin currents need a basis of definite spin.

    In the energy eigenbasis the curvature is purely off-diagonal, so
    ``Tr[S_z G] = 0`` and the spin Hall response would vanish identically.
    """


class MissingSector(ConfigError):
    pass


class GapClosing(ConfigError):
    pass


class RegimeViolation(ConfigError):
    pass


class MalformedConfig(ConfigError):
    pass


class NotSpinDiagonalizable(NumericalError):
    pass


class StepTooLarge(NumericalError):
    pass


class NotRotationallySymmetric(NumericalError):
    pass


class TailBoundExceedsTolerance(NumericalError):
    pass


class MeasureSingular(NumericalError):
    pass


class ToleranceNotMet(NumericalError):
    pass
