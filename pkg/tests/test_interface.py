import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from spectra_sect.families import fuglede_family, shift_family
from spectra_sect.graded import cl1_kernel_section, hat
from spectra_sect.interface import _run_config, build_parser, main
from spectra_sect.opcore import bounded_scalar
from spectra_sect.report_io import CURVE_COLUMNS, load_model, write_json
from spectra_sect.schema import (
    Grading,
    ProjectionMatrix,
    SampledFamily,
    SymbolSample,
    TailDescriptor,
    TailType,
    TruncatedOperator,
)
from spectra_sect.sections import SectionCertificate

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ]
)


def run(capsys, *argv) -> tuple[int, str, str]:
    """
    Run the command line front end in process.

    Args:
        capsys: The pytest capture fixture.
        *argv: Command line arguments without the program name.

    Returns:
        tuple: The exit code, standard output and standard error.
    """
    code = main([str(arg) for arg in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def last_report(stderr: str) -> dict:
    return json.loads(stderr.strip().splitlines()[-1])


def dump(path: Path, payload) -> Path:
    if isinstance(payload, list):
        payload = [item.model_dump(mode="json") for item in payload]
    write_json(payload, path)
    return path


@pytest.fixture(autouse=True)
def single_job(monkeypatch):
    monkeypatch.delenv("SPECTRA_SECT_JOBS", raising=False)


@pytest.fixture
def crossing_files(setup_env) -> tuple[Path, Path]:
    """
    Fixture to write a family whose middle eigenvalue crosses 0 and a constant
    generalized section for it.

    Returns:
        The family and generalized section paths.
    """
    grid = [-0.6, -0.2, 0.2, 0.6]
    family = SampledFamily(
        label="crossing",
        grid=grid,
        operators=[TruncatedOperator(entries=np.diag([-2.0, x, 3.0])) for x in grid],
        tail_rule=TailDescriptor(),
    )
    gss = [
        ProjectionMatrix(entries=np.diag([0.0, 0.0, 1.0]), tail_type=TailType.IDENTITY)
    ] * len(grid)
    return (
        dump(setup_env / "family.json", family),
        dump(setup_env / "gss.json", gss),
    )


def test_construct_verify_and_trivialize(capsys, setup_env, crossing_files):
    """
    Test the construct-section, verify-section and trivialize commands in a row.

    Args:
        capsys: The pytest capture fixture.
        setup_env (Path): The temporary environment directory.
        crossing_files (tuple[Path, Path]): Family and generalized section files.

    Asserts:
        Every command passes and the written certificate is verified.
    """
    family, gss = crossing_files
    certificate = setup_env / "out" / "certificate.json"

    code, out, _ = run(
        capsys,
        "construct-section",
        "--family",
        family,
        "--gss",
        gss,
        "--delta",
        "0.25",
        "--out",
        certificate,
    )
    assert code == 0
    assert out == ""
    loaded = load_model(certificate, SectionCertificate)
    assert loaded.verified
    assert loaded.label == "crossing"

    code, out, _ = run(
        capsys, "verify-section", "--family", family, "--certificate", certificate
    )
    assert code == 0
    report = json.loads(out)
    assert report["command"] == "verify-section"
    assert report["status"] == "pass"
    assert report["reason"] is None
    assert len(report["report"]["checks"]) == 4

    record = setup_env / "record.json"
    code, _, _ = run(
        capsys,
        "trivialize",
        "--family",
        family,
        "--certificate",
        certificate,
        "--psi",
        "linear",
        "--out",
        record,
    )
    assert code == 0
    assert json.loads(record.read_text())["passed"] is True


def test_verify_section_reports_failed_sample(capsys, setup_env, crossing_files):
    family, gss = crossing_files
    certificate = setup_env / "certificate.json"
    run(
        capsys,
        "construct-section",
        "--family",
        family,
        "--gss",
        gss,
        "--delta",
        "0.25",
        "--out",
        certificate,
    )
    tampered = json.loads(certificate.read_text())
    tampered["cutoffs"][2] = 0.1
    certificate.write_text(json.dumps(tampered))

    code, out, _ = run(
        capsys, "verify-section", "--family", family, "--certificate", certificate
    )

    assert code == 1
    report = json.loads(out)
    assert report["status"] == "fail"
    assert report["reason"] == "section_check_failed"
    assert [c["passed"] for c in report["report"]["checks"]] == [
        True,
        True,
        False,
        True,
    ]


def test_malformed_json_exits_with_input_error(capsys, setup_env):
    broken = setup_env / "broken.json"
    broken.write_text('{"label": "x", "grid": [1.0,')

    code, out, err = run(
        capsys, "verify-section", "--family", broken, "--certificate", broken
    )

    assert code == 2
    assert out == ""
    assert "Error in verify-section command" in err
    report = last_report(err)
    assert report["status"] == "error"
    assert report["reason"] == "malformed_json"
    assert report["details"]["path"] == str(broken)


def test_missing_file_exits_with_io_error(capsys, setup_env):
    code, _, err = run(
        capsys,
        "verify-section",
        "--family",
        setup_env / "missing.json",
        "--certificate",
        setup_env / "missing.json",
    )
    assert code == 2
    assert last_report(err)["reason"] == "io_error"


def test_invalid_model_exits_with_input_error(capsys, setup_env):
    family = setup_env / "family.json"
    family.write_text(
        json.dumps(
            {
                "label": "bad",
                "grid": [0.0],
                "operators": [{"re": [[0.0, 1.0], [0.0, 0.0]], "im": [[0, 0], [0, 0]]}],
                "tail_rule": None,
            }
        )
    )

    code, _, err = run(capsys, "family", "report", family)

    assert code == 2
    report = last_report(err)
    assert report["reason"] == "invalid_input"
    assert "Hermitian" in report["message"]


def test_json_only_command_rejects_csv(capsys, crossing_files):
    family, _ = crossing_files
    code, _, err = run(
        capsys,
        "verify-section",
        "--family",
        family,
        "--certificate",
        family,
        "--format",
        "csv",
    )
    assert code == 2
    report = last_report(err)
    assert report["reason"] == "precondition"
    assert report["details"] == {"format": "csv"}


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["demo", "unknown"],
        ["construct-section"],
        ["family"],
        ["demo", "shift", "--jobs", "many"],
    ],
)
def test_argument_errors_exit_with_2(capsys, argv):
    assert main(argv) == 2
    capsys.readouterr()


def test_config_file_and_flags(capsys, setup_config_file, crossing_files):
    """
    Test that flags override the config file, which overrides the defaults.

    Args:
        capsys: The pytest capture fixture.
        setup_config_file (Path): The temporary config file path.
        crossing_files (tuple[Path, Path]): Family and generalized section files.

    Asserts:
        The jump threshold is taken from the config file unless a flag is given.
    """
    family, _ = crossing_files
    setup_config_file.write_text(json.dumps({"jump": 0.7, "continuity": 0.2}))

    code, out, _ = run(
        capsys, "family", "report", family, "--config", setup_config_file
    )
    assert code == 0
    continuity = json.loads(out)["report"]["continuity"]
    assert continuity["jump"] == 0.7
    assert continuity["continuity"] == 0.2

    code, out, _ = run(
        capsys,
        "family",
        "report",
        family,
        "--config",
        setup_config_file,
        "--jump",
        "0.9",
    )
    assert code == 0
    continuity = json.loads(out)["report"]["continuity"]
    assert continuity["jump"] == 0.9
    assert continuity["continuity"] == 0.2


def test_jobs_fall_back_to_environment(monkeypatch):
    parser = build_parser()
    monkeypatch.setenv("SPECTRA_SECT_JOBS", "3")

    assert _run_config(parser.parse_args(["demo", "shift"])).jobs == 3
    assert _run_config(parser.parse_args(["demo", "shift", "--jobs", "2"])).jobs == 2


def test_family_report_csv(capsys, setup_env):
    operator = TruncatedOperator(entries=np.diag([-0.5, 0.5]))
    family = dump(
        setup_env / "shift.json", shift_family(operator, [-1.0, -0.5, 0.0, 0.5, 1.0])
    )
    curve = setup_env / "curve.csv"

    code, _, _ = run(
        capsys, "family", "report", family, "--format", "csv", "--out", curve
    )

    assert code == 0
    frame = pd.read_csv(curve)
    assert list(frame.columns) == CURVE_COLUMNS
    assert frame["x"].tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]
    assert frame["c_x"].tolist() == pytest.approx([-1.5, -1.0, -0.5, 0.0, 0.5])
    assert frame["riesz_step"].isna().tolist() == [False] * 4 + [True]


@pytest.mark.parametrize(
    "name, options, length",
    [
        ("fuglede", ["--dim", "5"], 5),
        ("no-gss", ["--dim", "4"], 5),
        ("negative-to-positive", ["--dim", "4", "--samples", "6"], 6),
        ("shift", ["--samples", "7"], 7),
        ("shift", ["--grid", "0.0", "1.0", "2.0"], 3),
    ],
)
def test_family_gen(capsys, setup_env, name, options, length):
    out = setup_env / f"{name}.json"

    code, _, _ = run(capsys, "family", "gen", name, *options, "--out", out)

    assert code == 0
    family = load_model(out, SampledFamily)
    assert len(family) == length


def test_family_gen_matches_library(capsys, setup_env):
    out = setup_env / "fuglede.json"
    run(capsys, "family", "gen", "fuglede", "--dim", "6", "--out", out)

    family = load_model(out, SampledFamily)
    expected = fuglede_family(6)

    assert family.at_infinity
    assert family.grid == expected.grid
    for got, want in zip(family.operators, expected.operators):
        assert np.allclose(got.entries, want.entries)


def test_demo_fuglede(capsys):
    code, out, _ = run(capsys, "demo", "fuglede", "--dim", "8")

    assert code == 0
    payload = json.loads(out)
    assert payload["status"] == "pass"
    report = payload["report"]
    assert report["riesz_step_to_infinity"] == pytest.approx(
        2 * float(bounded_scalar(7.0))
    )
    assert report["riesz_closed_form_defect"] <= 1e-12
    assert report["graph_closed_form_defect"] <= 1e-12


def test_demo_shift(capsys):
    code, out, _ = run(capsys, "demo", "shift", "--samples", "9")

    assert code == 0
    report = json.loads(out)["report"]
    assert report["certificate"]["verified"] is True
    assert report["riesz_check"]["passed"] is True


def test_demo_no_gss(capsys):
    code, out, _ = run(capsys, "demo", "no-gss", "--dim", "4", "--samples", "10")

    assert code == 0
    report = json.loads(out)["report"]
    assert report["semibounded"]["obstructed"] is True
    assert report["semibounded"]["clash"] == [3, 4]
    assert report["negative_to_positive"]["clash"] == [4, 5]


def test_demo_rellich_csv(capsys, setup_env):
    out = setup_env / "rellich.csv"

    code, _, _ = run(
        capsys,
        "demo",
        "rellich",
        "--x",
        "0.5",
        "--mesh",
        "2000",
        "--format",
        "csv",
        "--out",
        out,
    )

    assert code == 0
    frame = pd.read_csv(out)
    assert frame["x"].tolist() == [0.5]
    assert frame["relative_error"].iloc[0] < 0.01


def test_deform(capsys, setup_env):
    operators = [
        TruncatedOperator(entries=np.zeros((2, 2))),
        TruncatedOperator(entries=np.diag([1.0, -1.0])),
    ]
    family = dump(
        setup_env / "family.json",
        SampledFamily(
            label="deform",
            grid=[0.0, 1.0],
            operators=operators,
            tail_rule=TailDescriptor(),
        ),
    )

    code, out, _ = run(capsys, "deform", "--family", family, "--steps", "5")

    assert code == 0
    payload = json.loads(out)
    assert payload["command"] == "deform"
    assert payload["report"]["times"] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert payload["report"]["endpoint_min_abs"] == pytest.approx([0.25, 0.25])


def test_cl1_verify(capsys, setup_env):
    a = np.diag([2.0, 0.0])
    odd = hat(a)
    operator = dump(setup_env / "a.json", odd.base)
    grading = dump(setup_env / "s.json", odd.grading)
    projection = dump(setup_env / "p.json", cl1_kernel_section(a))

    code, out, _ = run(
        capsys,
        "cl1-verify",
        "--operator",
        operator,
        "--grading",
        grading,
        "--projection",
        projection,
        "--cutoff",
        "1.0",
    )

    assert code == 0
    assert json.loads(out)["status"] == "pass"


def test_factor_symbol(capsys, setup_env):
    symbol = dump(
        setup_env / "symbol.json",
        SymbolSample(
            tags=["unit", "scaled"], coefficients=np.stack([PAULI, 3.0 * PAULI])
        ),
    )

    code, out, _ = run(
        capsys, "factor-symbol", symbol, "--seed", "7", "--rotations", "20"
    )

    assert code == 0
    payload = json.loads(out)
    assert payload["status"] == "pass"
    assert [p["tag"] for p in payload["report"]["points"]] == ["unit", "scaled"]


def test_factor_symbol_w_violation(capsys, setup_env):
    symbol = dump(
        setup_env / "symbol.json",
        SymbolSample(tags=["bad"], coefficients=np.stack([PAULI[0], PAULI[0]])[None]),
    )

    code, _, err = run(capsys, "factor-symbol", symbol)

    assert code == 1
    report = last_report(err)
    assert report["reason"] == "w_condition"
    assert report["details"]["tag"] == "bad"


def test_sigma_trick_reports_lost_section(capsys, setup_env):
    operator = dump(
        setup_env / "a.json",
        TruncatedOperator(entries=np.diag([-2.0, -0.5, 0.5, 3.0])),
    )
    grading = dump(setup_env / "s.json", Grading.standard(2, 2))

    code, out, _ = run(
        capsys, "sigma-trick", "--operator", operator, "--grading", grading
    )

    assert code == 1
    payload = json.loads(out)
    assert payload["status"] == "fail"
    assert payload["reason"] == "not_generalized"
    assert payload["report"]["min_square_eigenvalue"] == pytest.approx(1.0)
