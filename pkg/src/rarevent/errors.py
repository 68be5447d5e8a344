"""Exception hierarchy.

Every error belongs to one of three families, which the CLI maps to exit
codes: configuration (2), data (3) and computation (4).
"""

from __future__ import annotations


class RareventError(Exception):
    exit_code = 4


class ConfigError(RareventError):
    exit_code = 2


class DataError(RareventError):
    exit_code = 3


class ComputationError(RareventError):
    exit_code = 4


# -- configuration -----------------------------------------------------------

class ConfigParse(ConfigError):
    """Textual input could not be parsed; ``position`` is a byte offset."""

    def __init__(self, position: int, reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"at offset {position}: {reason}")


# -- data --------------------------------------------------------------------

class MissingColumn(DataError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing column {name!r}")


class MalformedRow(DataError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class EmptyPanel(DataError):
    pass


class EmptySubset(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# -- computation -------------------------------------------------------------

class SingularInformation(ComputationError):
    pass


class AllOneClass(ComputationError):
    pass


class NoConvergence(ComputationError):
    def __init__(self, iterations: int):
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} iterations")


class EmptyClass(ComputationError):
    pass


class OutOfRange(ComputationError):
    pass


class RatioWouldShrinkMinority(ComputationError):
    pass


class TooFewMinority(ComputationError):
    pass


class KTooLarge(ComputationError):
    pass


class AllReplicatesFailed(ComputationError):
    pass


class EmptyInput(ComputationError):
    pass


class OneClassOnly(ComputationError):
    pass


class NoSeedHistory(ComputationError):
    pass


class EmptySide(ComputationError):
    pass


class CalibrationFailed(ComputationError):
    pass


class InvalidParameter(ConfigError, ValueError):
    pass
