"""Exception hierarchy shared by every module.

Each error carries a stable ``code`` used in the CLI's machine-readable error
output and an ``exit_code`` following the CLI contract (2 input, 3 data
contract, 4 internal invariant).
"""

from __future__ import annotations


class GeocellKitError(Exception):
    code = "GeocellKitError"
    exit_code = 4


class InputError(GeocellKitError):
    exit_code = 2


class DataContractError(GeocellKitError):
    exit_code = 3


class InvalidGeoPoint(InputError, ValueError):
    code = "InvalidGeoPoint"


class ConfigError(InputError, ValueError):
    code = "ConfigError"


class UnresolvedInput(InputError):
    code = "UnresolvedInput"


class DegenerateGeometry(DataContractError, ValueError):
    code = "DegenerateGeometry"


class ProjectionDomain(DataContractError, ValueError):
    code = "ProjectionDomain"


class UnresolvedSample(DataContractError):
    code = "UnresolvedSample"


class EmptySet(DataContractError):
    code = "EmptySet"


class EmptyInput(DataContractError, ValueError):
    code = "EmptyInput"


class NonFinite(DataContractError, ArithmeticError):
    code = "NonFinite"


class ClassOutOfRange(DataContractError, ValueError):
    code = "ClassOutOfRange"


class MissingEmbedding(DataContractError, KeyError):
    code = "MissingEmbedding"


class EmptyCell(DataContractError):
    code = "EmptyCell"


class UnknownCell(DataContractError, KeyError):
    code = "UnknownCell"


class DimensionMismatch(DataContractError, ValueError):
    code = "DimensionMismatch"


class FormatError(DataContractError, ValueError):
    code = "FormatError"


class InvariantViolation(GeocellKitError, AssertionError):
    code = "InvariantViolation"
