"""Exception hierarchy.

Every error carries the process exit code the command line maps it to:
1 for usage/configuration problems, 2 for bad input data, 3 for failures
inside the model runtime.
"""

from __future__ import annotations


class CultureSteerError(Exception):
    exit_code = 3


class DataError(CultureSteerError, ValueError):
    exit_code = 2


class UsageError(CultureSteerError, ValueError):
    exit_code = 1


class ModelRuntimeError(CultureSteerError, RuntimeError):
    exit_code = 3


# --- dataset -------------------------------------------------------------
class DatasetParseError(DataError):
    pass


class UnknownWvsId(DataError):
    pass


class InvalidMapping(DataError):
    pass


class AxisMismatch(DataError):
    pass


class DuplicateScenarioId(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyConfig(DataError):
    pass


class EmptyAxis(DataError):
    pass


# --- persona -------------------------------------------------------------
class EmptyCountry(DataError):
    pass


class MissingVariable(DataError):
    pass


class MissingName(DataError):
    pass


# --- probing / analysis --------------------------------------------------
class MissingRange(DataError):
    pass


class DanglingScenarioId(DataError):
    pass


class UnknownCountry(DataError):
    pass


class DegenerateVariance(DataError):
    pass


class MissingDomain(DataError):
    pass


class ZeroIntendedShift(DataError):
    pass


class EmptyPrompts(DataError):
    pass


# --- files ---------------------------------------------------------------
class ShapeMismatch(DataError):
    pass


class WeightsFileError(DataError):
    pass


class MissingArtifact(DataError):
    """An intermediate file is absent; the message names the producing command."""

    def __init__(self, path: object, producer: str) -> None:
        super().__init__(f"missing artifact {path}; run `culturesteer {producer}` first")
        self.path = path
        self.producer = producer


# --- usage ---------------------------------------------------------------
class AlphaOverCap(UsageError):
    pass


class ZeroAlpha(UsageError):
    pass


class InvalidConfig(UsageError):
    pass


# --- runtime -------------------------------------------------------------
class TokenOutOfRange(ModelRuntimeError):
    pass


class SequenceTooLong(ModelRuntimeError):
    pass


class EmptyContinuation(ModelRuntimeError):
    pass


class NonFiniteLogit(ModelRuntimeError):
    pass


class TokenResolutionError(ModelRuntimeError):
    pass


class BackendError(ModelRuntimeError):
    pass


class MissingLayerVector(ModelRuntimeError):
    pass


class ProbeFailure(CultureSteerError):
    """Wraps an error raised while probing one scenario."""

    def __init__(self, scenario_id: str, cause: CultureSteerError) -> None:
        super().__init__(f"scenario {scenario_id}: {cause}")
        self.scenario_id = scenario_id
        self.exit_code = cause.exit_code


__all__ = [
    "CultureSteerError",
    "DataError",
    "UsageError",
    "ModelRuntimeError",
    "DatasetParseError",
    "UnknownWvsId",
    "InvalidMapping",
    "AxisMismatch",
    "DuplicateScenarioId",
    "EmptyDataset",
    "EmptyConfig",
    "EmptyAxis",
    "EmptyCountry",
    "MissingVariable",
    "MissingName",
    "MissingRange",
    "DanglingScenarioId",
    "UnknownCountry",
    "DegenerateVariance",
    "MissingDomain",
    "ZeroIntendedShift",
    "EmptyPrompts",
    "ShapeMismatch",
    "WeightsFileError",
    "MissingArtifact",
    "AlphaOverCap",
    "ZeroAlpha",
    "InvalidConfig",
    "TokenOutOfRange",
    "SequenceTooLong",
    "EmptyContinuation",
    "NonFiniteLogit",
    "TokenResolutionError",
    "BackendError",
    "MissingLayerVector",
    "ProbeFailure",
]
