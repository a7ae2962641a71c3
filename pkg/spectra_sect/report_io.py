"""
Reading inputs and writing reports for the command line front end.
"""

import json
import sys
from pathlib import Path
from typing import Any, TypeVar

import pandas as pd
from pydantic import BaseModel, TypeAdapter

from spectra_sect.config import DEFAULT_TOLERANCES, Tolerances
from spectra_sect.errors import MalformedInputError
from spectra_sect.families import (
    ContinuityReport,
    LowerBoundCurve,
    rellich_lowest_eigenvalue,
    rellich_reference_eigenvalue,
)

M = TypeVar("M", bound=BaseModel)

CURVE_COLUMNS = ["x", "c_x", "riesz_step", "graph_step", "flags"]


def read_json(path: Path) -> Any:
    """
    Parses a JSON file.

    Args:
        path (Path): The file to read.

    Raises:
        FileNotFoundError: If the file does not exist.
        MalformedInputError: If the file is not valid JSON.

    Returns:
        Any: The parsed document.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedInputError(
            f"{path}: {e.msg} at line {e.lineno}, column {e.colno}",
            {"path": str(path), "line": e.lineno, "column": e.colno},
        ) from e


def load_model(
    path: Path, model: type[M], tolerances: Tolerances = DEFAULT_TOLERANCES
) -> M:
    """Validates a JSON file into a model, passing tolerances to its validators."""
    return model.model_validate(read_json(path), context={"tolerances": tolerances})


def load_models(
    path: Path, model: type[M], tolerances: Tolerances = DEFAULT_TOLERANCES
) -> list[M]:
    """Validates a JSON list of models."""
    return TypeAdapter(list[model]).validate_python(  # type: ignore[valid-type]
        read_json(path), context={"tolerances": tolerances}
    )


def envelope(
    command: str,
    report: BaseModel | dict[str, Any],
    passed: bool,
    reason: str | None = None,
) -> dict[str, Any]:
    """
    Wraps a report with its status.

    Args:
        command (str): The subcommand that produced the report.
        report (BaseModel | dict): The report body.
        passed (bool): Whether every check passed.
        reason (str | None): Machine-readable reason of a failure.

    Returns:
        dict: {"command", "status", "reason", "report"}.
    """
    body = report.model_dump(mode="json") if isinstance(report, BaseModel) else report
    return {
        "command": command,
        "status": "pass" if passed else "fail",
        "reason": None if passed else reason,
        "report": body,
    }


def write_json(payload: Any, out: Path | None = None):
    """
    Writes a JSON document to a file, or to stdout when out is None.

    Models are dumped in their JSON layout. Output is deterministic for equal
    inputs.
    """
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    text = json.dumps(payload, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")


def write_csv(frame: pd.DataFrame, out: Path | None = None):
    """
    Writes a frame as CSV without the index column.

    Args:
        frame (pd.DataFrame): The table to write.
        out (Path | None): Target file, parent directories are created. None
                           writes to stdout.
    """
    if out is None:
        frame.to_csv(sys.stdout, index=False)
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)


def curve_frame(continuity: ContinuityReport, lower: LowerBoundCurve) -> pd.DataFrame:
    """
    One row per sample: lower bound, distances to the next sample and flags.

    The step columns of the last sample are empty. Flags are joined with "|".

    Args:
        continuity (ContinuityReport): Distances of the family.
        lower (LowerBoundCurve): Lower bounds of the same family.

    Returns:
        pd.DataFrame: Columns x, c_x, riesz_step, graph_step and flags.
    """
    rows = []
    steps = {pair.left: pair for pair in continuity.pairs}
    blow_down = {i for i, _ in lower.blow_down_pairs}
    for i, x in enumerate(continuity.grid):
        pair = steps.get(i)
        flags = []
        if pair is not None:
            if pair.riesz_jump:
                flags.append("riesz_jump")
            if pair.graph_jump:
                flags.append("graph_jump")
            if pair.tail_mismatch:
                flags.append("tail_mismatch")
        if lower.unbounded[i]:
            flags.append("unbounded")
        if i in blow_down:
            flags.append("blow_down")
        rows.append(
            {
                "x": x,
                "c_x": lower.lower_bounds[i],
                "riesz_step": None if pair is None else pair.riesz,
                "graph_step": None if pair is None else pair.graph,
                "flags": "|".join(flags),
            }
        )
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def rellich_frame(grid: list[float], mesh: int) -> pd.DataFrame:
    """
    Finite-difference against reference negative eigenvalue per Robin parameter.

    Returns:
        pd.DataFrame: Columns x, finite_difference, reference and relative_error;
                      the last two are empty where no negative eigenvalue exists.
    """
    rows = []
    for x in grid:
        computed = rellich_lowest_eigenvalue(x, mesh)
        reference = rellich_reference_eigenvalue(x)
        rows.append(
            {
                "x": x,
                "finite_difference": computed,
                "reference": reference,
                "relative_error": (
                    None
                    if reference is None
                    else abs(computed - reference) / abs(reference)
                ),
            }
        )
    return pd.DataFrame(rows)
