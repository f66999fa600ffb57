"""Exception hierarchy shared by every subsystem."""


class MeterGuardError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MeterGuardError, ValueError):
    pass


class DataError(MeterGuardError, ValueError):
    pass


# field arithmetic
class ZeroInverse(MeterGuardError, ZeroDivisionError):
    pass


class RangeOverflow(MeterGuardError, OverflowError):
    pass


# mpc engine
class MaskExhausted(MeterGuardError):
    pass


class OwnerMismatch(MeterGuardError, ValueError):
    pass


class TripleReuse(MeterGuardError):
    pass


class EmptyTranscript(MeterGuardError):
    pass


class ProtocolError(MeterGuardError):
    """A peer sent a frame that does not match the protocol schedule."""


class BillingAborted(MeterGuardError):
    """Tampering was detected; the billing period produced no statements."""


# network
class Deadlock(MeterGuardError):
    pass


# ingest
class MalformedRow(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class GapDetected(DataError):
    def __init__(self, meter_id: str, timestamp):
        super().__init__(f"meter {meter_id}: missing interval at {timestamp}")
        self.meter_id = meter_id
        self.timestamp = timestamp


class NonMonotonicTimestamps(DataError):
    pass


class InvalidAlpha(DataError):
    pass


# detector
class ShapeMismatch(MeterGuardError, ValueError):
    pass


class DegenerateCorpus(DataError):
    pass
