"""Exception hierarchy.

Every error carries a CLI exit code so the driver can map failures without
inspecting messages: 2 for malformed input, 3 for budget/precondition
problems, 4 for failed checks.
"""


class LocmixError(Exception):
    exit_code = 4


class InputError(LocmixError, ValueError):
    exit_code = 2


class BudgetError(LocmixError):
    exit_code = 3


class PreconditionError(LocmixError, ValueError):
    exit_code = 3


# spin_measures
class AllZeroMass(InputError):
    pass


class NonFinite(InputError):
    pass


class DimensionTooLarge(BudgetError):
    pass


class BudgetExceeded(BudgetError):
    pass


class ZeroMassSubcube(PreconditionError):
    pass


class IncompatiblePin(PreconditionError):
    pass


class DegenerateCoordinate(PreconditionError):
    pass


class NotAbsolutelyContinuous(PreconditionError):
    pass


class NegativeInput(InputError):
    pass


class OutsideHull(PreconditionError):
    pass


class MaxIterations(LocmixError):
    pass


# models
class DegreeTooSmall(PreconditionError):
    pass


class InvalidPinning(PreconditionError):
    pass


class PreconditionViolated(PreconditionError):
    pass


class NotFerromagnetic(PreconditionError):
    pass


class NotInUniquenessRegime(PreconditionError):
    pass


class NotUnique(PreconditionError):
    pass


# kernels / spectra
class SubsetTooLarge(PreconditionError):
    pass


class ZeroStationaryRow(PreconditionError):
    pass


class InsufficientSamples(BudgetError):
    pass


class NotReversible(LocmixError):
    pass


class DegenerateEntropy(PreconditionError):
    pass


class Nonconvergence(LocmixError):
    pass


# localization
class NoFreeCoordinates(PreconditionError):
    pass


class StepTooLarge(PreconditionError):
    pass


class ZeroDenominator(PreconditionError):
    pass


class NotDoobFinalScheme(PreconditionError):
    pass


# rgo_grid
class NotStronglyConvex(PreconditionError):
    pass


class TailMass(PreconditionError):
    pass


class QuadratureFailure(LocmixError):
    pass


class DomainError(InputError):
    pass
