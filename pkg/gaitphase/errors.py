"""Exception hierarchy for gaitphase.

Every error carries the process exit code the CLI returns for it. They all derive
from ``ValueError`` as well, so code that only knows about ``ValueError`` still
catches them.
"""


class GaitPhaseError(ValueError):
    exit_code = 1


# data errors
class DataError(GaitPhaseError):
    exit_code = 2


class SignalFaultError(DataError):
    def __init__(self, channel: str, value=None):
        self.channel = channel
        self.value = value
        super().__init__(f"non-finite sample on channel {channel}: {value}")


class DegenerateStrideError(DataError):
    pass


class UndefinedPhaseError(DataError):
    pass


# calibration errors
class CalibrationError(GaitPhaseError):
    exit_code = 3


class InsufficientStridesError(CalibrationError):
    pass


class DegenerateCalibrationError(CalibrationError):
    pass


class CalibrationFailedError(CalibrationError):
    pass


class CalibrationMissingError(CalibrationError):
    pass


class InsufficientCalibrationDataError(CalibrationError):
    pass


class InvalidCalibrationError(CalibrationError):
    pass


# config errors
class ConfigError(GaitPhaseError):
    exit_code = 4


class InvalidParameterError(ConfigError):
    pass


class ROMViolationError(ConfigError):
    pass
