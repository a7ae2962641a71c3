import json

import numpy as np
import pytest

from spectra_sect import interface
from spectra_sect.errors import (
    ConstructionError,
    HermiticityError,
    InvariantViolationError,
    MalformedInputError,
    ReportableError,
    SpectraSectError,
)
from spectra_sect.report_io import write_json
from spectra_sect.schema import Grading, TruncatedOperator


def test_invariant_violation_report():
    """
    Test the report of an error raised for a broken identity.

    Assert:
        The report carries the invariant reason, the message and a copy of the
        details, and the error is a RuntimeError rather than a rejection.
    """
    details = {"t": 0.5, "spectral_radius": 1.0}
    error = InvariantViolationError("radius reached 1", details)
    details["t"] = 0.0

    assert error.to_report() == {
        "status": "error",
        "reason": "invariant_violation",
        "message": "radius reached 1",
        "details": {"t": 0.5, "spectral_radius": 1.0},
    }
    assert error.exit_code == 1
    assert isinstance(error, RuntimeError)
    assert not isinstance(error, ValueError)
    assert not isinstance(error, SpectraSectError)


@pytest.mark.parametrize(
    "error_type, reason, exit_code",
    [
        (SpectraSectError, "error", 2),
        (HermiticityError, "non_hermitian", 2),
        (ConstructionError, "gss_too_far", 1),
        (MalformedInputError, "malformed_json", 2),
    ],
)
def test_rejection_reports(error_type, reason, exit_code):
    error = error_type("bad input")

    report = error.to_report()
    assert report["reason"] == reason
    assert report["details"] == {}
    assert error.exit_code == exit_code
    assert isinstance(error, ValueError)
    assert isinstance(error, ReportableError)


def test_cli_reports_invariant_violation(capsys, setup_env, monkeypatch):
    """
    Test that the command line front end turns a broken identity into exit code 1.

    Args:
        setup_env (Path): The temporary environment directory.

    Assert:
        The last stderr line is the JSON report of the error.
    """
    operator = setup_env / "a.json"
    grading = setup_env / "s.json"
    write_json(TruncatedOperator(entries=np.diag([-1.0, 1.0])), operator)
    write_json(Grading.standard(1, 1), grading)

    def broken(*args, **kwargs):
        raise InvariantViolationError("anticommutator drifted", {"defect": 0.5})

    monkeypatch.setattr(interface, "sigma_trick", broken)

    code = interface.main(
        ["sigma-trick", "--operator", str(operator), "--grading", str(grading)]
    )

    assert code == 1
    report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert report["reason"] == "invariant_violation"
    assert report["details"] == {"defect": 0.5}
