"""Error hierarchy.

Every error carries a category that the command line maps onto an exit
code: ``config`` -> 2, ``data`` -> 3, ``numeric`` -> 4.
"""


class ShineError(Exception):
    category = "data"

    @property
    def name(self) -> str:
        return type(self).__name__


# configuration
class InvalidConfig(ShineError, ValueError):
    category = "config"


class ConfigParse(ShineError, ValueError):
    category = "config"


class TooFewSessions(ShineError, ValueError):
    category = "config"


class InconsistentGeometry(ShineError, ValueError):
    category = "config"


# data
class LengthMismatch(ShineError, ValueError):
    pass


class ShapeMismatch(ShineError, ValueError):
    pass


class TooShort(ShineError, ValueError):
    pass


class SessionTooShort(TooShort):
    pass


class SequenceTooShort(TooShort):
    pass


class RateMismatch(ShineError, ValueError):
    pass


class NonBinaryLabels(ShineError, ValueError):
    pass


class CorruptFile(ShineError, OSError):
    pass


class MissingField(ShineError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MixedSessions(ShineError, ValueError):
    pass


class SingleClassLabels(ShineError, ValueError):
    pass


class AllZeroWeights(ShineError, ValueError):
    pass


class EmptyInput(ShineError, ValueError):
    pass


# numeric
class ZeroVariance(ShineError, ArithmeticError):
    category = "numeric"


class DegenerateTarget(ShineError, ArithmeticError):
    category = "numeric"


class NonFiniteLoss(ShineError, ArithmeticError):
    category = "numeric"


class AllWindowsDegenerate(ShineError, ArithmeticError):
    category = "numeric"


EXIT_CODES = {"config": 2, "data": 3, "numeric": 4}
