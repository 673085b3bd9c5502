"""Exception hierarchy.

Every error carries a ``category`` (its class name) that the command line
prints as a single machine-parsable token.
"""


class DetectorError(Exception):
    category = "DetectorError"

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        cls.category = cls.__name__


# core types and file formats
class ZeroVariance(DetectorError, ValueError):
    def __init__(self, channel: str):
        super().__init__(f"channel {channel!r} has zero variance")
        self.channel = channel


class OutOfBounds(DetectorError, ValueError):
    pass


class FormatError(DetectorError, ValueError):
    pass


class MalformedHeader(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class UnknownVersion(FormatError):
    pass


class MalformedAnnotation(MalformedHeader):
    pass


# geometry
class InvalidOverlap(DetectorError, ValueError):
    pass


class NonPositiveDuration(DetectorError, ValueError):
    pass


# network
class InvalidConfig(DetectorError, ValueError):
    pass


class ShapeMismatch(DetectorError, ValueError):
    pass


class NonFiniteActivation(DetectorError, ArithmeticError):
    pass


class StaleCache(DetectorError, RuntimeError):
    pass


# loss and training
class DegenerateProbability(DetectorError, ArithmeticError):
    pass


class SamplingExhausted(DetectorError, RuntimeError):
    pass


class NonFiniteGradient(DetectorError, ArithmeticError):
    pass


# inference, evaluation, consensus, synthesis
class RecordTooShort(DetectorError, ValueError):
    pass


class MissingRecord(DetectorError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class OutOfRange(DetectorError, ValueError):
    pass


class PlacementFailure(DetectorError, RuntimeError):
    pass
