"""Exception hierarchy for the toolkit.

Every error carries its class name, an optional time index (or stage/step),
and the CLI exit status it maps to:

- InputError (2): a precondition on the caller's input failed.
- SurrogateError (3): a finite-horizon surrogate hypothesis failed.
- NumericError (4): a numerical certificate or invertibility check failed.
"""

from typing import Any, Optional, Union


class BohlToolkitError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 4

    def __init__(
        self,
        message: str = "",
        index: Optional[Union[int, str]] = None,
        payload: Any = None,
    ):
        self.index = index
        self.payload = payload
        detail = message or self.__class__.__name__
        if index is not None:
            detail = f"{detail} (index={index})"
        super().__init__(detail)

    @property
    def name(self) -> str:
        return self.__class__.__name__

    def to_record(self) -> dict:
        """Flat record used by the CLI when reporting failures."""
        return {
            "error": self.name,
            "index": self.index,
            "message": str(self),
            "exit_code": self.exit_code,
        }


# ============================================================================
# INPUT ERRORS (exit 2)
# ============================================================================


class InputError(BohlToolkitError):
    exit_code = 2


class HorizonExceeded(InputError):
    pass


class EmptyWindowSet(InputError):
    pass


class DegenerateBasis(InputError):
    pass


class DegenerateSplitting(InputError):
    pass


class EmptySampleSet(InputError):
    pass


class NotInSubspace(InputError):
    pass


class SupportExceedsHorizon(InputError):
    pass


class ZeroVector(InputError):
    pass


class NotSlow(InputError):
    pass


class WindowDegenerate(InputError):
    pass


class ScenarioInvalid(InputError):
    pass


# ============================================================================
# SURROGATE HYPOTHESIS ERRORS (exit 3)
# ============================================================================


class SurrogateError(BohlToolkitError):
    exit_code = 3


class SurrogateHypothesisFailed(SurrogateError):
    pass


class PrefixEmpty(SurrogateError):
    pass


class StageExhausted(SurrogateError):
    """Raised when no admissible window remains; `payload` holds the partial result."""


# ============================================================================
# NUMERIC ERRORS (exit 4)
# ============================================================================


class NumericError(BohlToolkitError):
    exit_code = 4


class NonInvertibleCoefficient(NumericError):
    pass


class NonInvertible(NumericError):
    pass


class NonInvertiblePerturbed(NumericError):
    pass


class AntipodalPair(NumericError):
    pass


class CertificateFailed(NumericError):
    """A verified inequality did not hold; `payload` holds the certificate."""
