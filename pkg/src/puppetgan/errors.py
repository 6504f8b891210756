"""Exception types shared across the package.

The CLI maps each family to its own exit code, so new errors should
subclass one of the families below rather than ``Exception`` directly.
"""


class PuppetError(Exception):
    exit_code = 1


class ConfigError(PuppetError, ValueError):
    exit_code = 2


class DataFormatError(PuppetError, ValueError):
    exit_code = 3


class NumericalAbort(PuppetError, FloatingPointError):
    exit_code = 4

    def __init__(self, term: str, step: int, value: float):
        super().__init__(f"non-finite loss term {term!r} at step {step}: {value}")
        self.term = term
        self.step = step
        self.value = value


class StateError(PuppetError, RuntimeError):
    exit_code = 5


class IdxFormatError(DataFormatError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.path = path
        self.offset = offset


class RangeError(ConfigError):
    pass


class DegenerateRenderError(PuppetError, ValueError):
    pass


class ContractError(PuppetError, ValueError):
    pass


class ShapeError(PuppetError, ValueError):
    pass


class DomainError(PuppetError, KeyError):
    pass


class UndefinedMeasurementError(PuppetError, ValueError):
    pass


class CheckpointMismatch(StateError):
    pass
