"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 for configuration problems, 3 for bad input data, 4 for numerical failure.
"""


class SelfBoostError(Exception):
    exit_code = 1


class ConfigInvalid(SelfBoostError):
    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(SelfBoostError):
    exit_code = 3


class EmptySeries(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class MissingValues(DataError):
    pass


class LengthMismatch(DataError):
    pass


class InsufficientLength(DataError):
    pass


class TooFewWindows(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class ShapeInfeasible(ConfigInvalid):
    def __init__(self, message):
        super().__init__("architecture", message)


class TooFewPoints(DataError):
    pass


class NumericalError(SelfBoostError):
    exit_code = 4


class ZeroVariance(NumericalError):
    pass


class TooFewExtrema(NumericalError):
    pass


class NotEnoughExtrema(NumericalError):
    pass


class NonPositiveRmse(NumericalError):
    pass


class AllActualsZero(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class GraphNotScalar(NumericalError):
    pass


class NaNLoss(NumericalError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
