from typing import Any


class ReportableError(Exception):
    """
    Mixin giving an exception a reason code, an exit code and a JSON report.

    Attributes:
        reason (str): Machine-readable reason code, copied into CLI reports.
        exit_code (int): Exit code used by the CLI, 1 for a failed mathematical
                         check and 2 for unusable input.
        details (dict): Measured quantities that explain the error.
    """

    reason = "error"
    exit_code = 2

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(message)
        self.details = dict(details or {})

    def to_report(self) -> dict[str, Any]:
        """
        Returns the machine-readable form of the error.

        Returns:
            dict: Mapping with the keys "status", "reason", "message" and "details".
        """
        return {
            "status": "error",
            "reason": self.reason,
            "message": str(self),
            "details": self.details,
        }


class SpectraSectError(ReportableError, ValueError):
    """Base class for every rejection raised by the toolkit."""


class HermiticityError(SpectraSectError):
    reason = "non_hermitian"


class EndpointCollisionError(SpectraSectError):
    """An eigenvalue sits too close to a finite interval endpoint to classify."""

    reason = "endpoint_collision"


class TailMismatchError(SpectraSectError):
    reason = "tail_mismatch"


class SpectralRadiusError(SpectraSectError):
    reason = "spectral_radius"


class PreconditionError(SpectraSectError):
    reason = "precondition"


class SingularOperatorError(SpectraSectError):
    reason = "singular"


class ProjectionDistanceError(SpectraSectError):
    reason = "projection_distance"


class ConstructionError(SpectraSectError):
    """No workable cut-off exists inside the truncation window."""

    reason = "gss_too_far"
    exit_code = 1


class CutoffDivergenceError(ConstructionError):
    reason = "cutoff_divergence"


class IndexObstructionError(SpectraSectError):
    reason = "index_obstruction"
    exit_code = 1


class SignatureAmbiguityError(SpectraSectError):
    reason = "kernel_ambiguity"


class WConditionError(SpectraSectError):
    reason = "w_condition"
    exit_code = 1


class BisectionError(SpectraSectError):
    reason = "bisection"
    exit_code = 1


class InvariantViolationError(ReportableError, RuntimeError):
    """
    Raised when a guaranteed identity fails numerically.

    This signals a bug or an inconsistent input certificate, never a user error.
    """

    reason = "invariant_violation"
    exit_code = 1


class MalformedInputError(SpectraSectError):
    """A JSON input that cannot be parsed; details carry path, line and column."""

    reason = "malformed_json"
