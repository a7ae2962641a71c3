import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np
from pydantic import ValidationError

from spectra_sect.config import RunConfig, default_jobs
from spectra_sect.errors import PreconditionError, ReportableError
from spectra_sect.families import (
    continuity_report,
    fuglede_family,
    lower_bound_report,
    negative_to_positive_path,
    rellich_convergence_order,
    rellich_family,
    section_implies_riesz_check,
    semibounded_no_gss_family,
    shift_family,
    shift_section_certificate,
    tail_obstruction_report,
)
from spectra_sect.graded import factor_w_symbol, is_cl1_section, sigma_trick
from spectra_sect.opcore import bounded_scalar, cayley_scalar, chi_plus
from spectra_sect.report_io import (
    curve_frame,
    envelope,
    load_model,
    load_models,
    rellich_frame,
    write_csv,
    write_json,
)
from spectra_sect.schema import (
    Grading,
    OddOperator,
    ProjectionMatrix,
    SampledFamily,
    SymbolSample,
    TruncatedOperator,
)
from spectra_sect.sections import (
    PSI_PROFILES,
    SectionCertificate,
    construct_section,
    deform_to_invertible,
    trivializing_family,
    verify_certificate,
)

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, RunConfig], int]

RELLICH_DEMO_GRID = [0.2, 0.5, 0.9]
RELLICH_MAX_RELATIVE_ERROR = 0.01
CLOSED_FORM_TOLERANCE = 1e-12


def _common_parser() -> argparse.ArgumentParser:
    """
    Creates the flags shared by every subcommand.

    Returns:
        argparse.ArgumentParser: A parent parser without help.

    Arguments:
        --config (str | None): JSON file with RunConfig values; flags win over it.
        --out (str | None): Output file, stdout when omitted.
        --jobs (int | None): Worker threads, defaults to SPECTRA_SECT_JOBS or 1.
        --format (str | None): "json" or "csv".
        --seed (int | None): Seed for sampled checks.
        --verbose (bool): Log debug messages to stderr.
        --hermiticity, --idempotency, --gap, --invertibility, --inclusion (float):
            Numerical tolerances.
        --rank-budget (int | None): Budget for generalized-section checks.
        --eps, --jump, --continuity (float): Thresholds.
    """
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", default=None, help="JSON configuration file")
    parser.add_argument("--out", default=None, help="Output file, stdout if omitted")
    parser.add_argument("--jobs", type=int, default=None, help="Worker threads")
    parser.add_argument(
        "--format", choices=["json", "csv"], default=None, help="Output format"
    )
    parser.add_argument("--seed", type=int, default=None, help="Random seed")
    parser.add_argument(
        "--verbose", action="store_true", help="Log debug messages to stderr"
    )
    for name in ("hermiticity", "idempotency", "gap", "invertibility", "inclusion"):
        parser.add_argument(
            f"--{name}", type=float, default=None, help=f"{name} tolerance"
        )
    parser.add_argument(
        "--rank-budget", type=int, default=None, help="Generalized-section rank budget"
    )
    parser.add_argument("--eps", type=float, default=None, help="Tail threshold")
    parser.add_argument("--jump", type=float, default=None, help="Jump threshold")
    parser.add_argument(
        "--continuity", type=float, default=None, help="Continuity threshold"
    )
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    """
    Merges --config with the flags of the command line.

    The worker count falls back to SPECTRA_SECT_JOBS when neither the flag nor
    the file sets it.
    """
    overrides = {
        "hermiticity": args.hermiticity,
        "idempotency": args.idempotency,
        "gap": args.gap,
        "invertibility": args.invertibility,
        "inclusion": args.inclusion,
        "rank_budget": args.rank_budget,
        "eps": args.eps,
        "jump": args.jump,
        "continuity": args.continuity,
        "seed": args.seed,
        "output_format": args.format,
        "jobs": args.jobs,
    }
    config_file = Path(args.config) if args.config is not None else None
    config = RunConfig.from_sources(config_file, overrides)
    if "jobs" not in config.model_fields_set:
        config = config.model_copy(update={"jobs": default_jobs()})
    return config


def _out(args: argparse.Namespace) -> Path | None:
    return Path(args.out) if args.out is not None else None


def _require_json(config: RunConfig, command: str):
    if config.output_format != "json":
        raise PreconditionError(
            f"{command} only writes JSON", {"format": config.output_format}
        )


def _report_failure(command: str, reason: str, message: str):
    report = {"status": "fail", "reason": reason, "message": message}
    print(f"Check failed in {command}: {message}", file=sys.stderr)
    print(json.dumps(report), file=sys.stderr)


def _default_gss(family: SampledFamily, config: RunConfig) -> list[ProjectionMatrix]:
    return [chi_plus(op, config.tolerances) for op in family.operators]


def _load_gss(
    args: argparse.Namespace, family: SampledFamily, config: RunConfig
) -> list[ProjectionMatrix]:
    if args.gss is None:
        return _default_gss(family, config)
    return load_models(Path(args.gss), ProjectionMatrix, config.tolerances)


def verify_section_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Re-verify every sample of a section certificate.

    Example usage:
        spectra-sect verify-section --family family.json --certificate cert.json
    """
    _require_json(config, "verify-section")
    tol = config.tolerances
    family = load_model(Path(args.family), SampledFamily, tol)
    certificate = load_model(Path(args.certificate), SectionCertificate, tol)
    checks = verify_certificate(family, certificate, tol)
    passed = all(check.passed for check in checks)
    report = {
        "label": certificate.label,
        "max_violation": max(check.violation for check in checks),
        "checks": [check.model_dump(mode="json") for check in checks],
    }
    write_json(
        envelope("verify-section", report, passed, "section_check_failed"), _out(args)
    )
    return 0 if passed else 1


def construct_section_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Build a spectral section certificate near a generalized spectral section.

    Without --gss the projections chi+(A_x) are used.

    Example usage:
        spectra-sect construct-section --family family.json --delta 0.1
    """
    _require_json(config, "construct-section")
    tol = config.tolerances
    family = load_model(Path(args.family), SampledFamily, tol)
    certificate = construct_section(
        family,
        _load_gss(args, family, config),
        args.delta,
        tolerances=tol,
        rank_budget=config.rank_budget,
        eps=config.eps,
        jobs=config.jobs,
    )
    write_json(certificate, _out(args))
    if not certificate.verified:
        _report_failure(
            "construct-section",
            "section_check_failed",
            f"max violation {certificate.max_violation:.3e}",
        )
        return 1
    return 0


def trivialize_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Compute trivializing operators for a certified family.

    Example usage:
        spectra-sect trivialize --family family.json --certificate cert.json
    """
    _require_json(config, "trivialize")
    tol = config.tolerances
    family = load_model(Path(args.family), SampledFamily, tol)
    certificate = load_model(Path(args.certificate), SectionCertificate, tol)
    record = trivializing_family(
        family, certificate, PSI_PROFILES[args.psi], tol, config.jobs
    )
    write_json(record, _out(args))
    if not record.passed:
        failed = [i for i, check in enumerate(record.checks) if not check.passed]
        _report_failure("trivialize", "trivializer_failed", f"samples {failed}")
        return 1
    return 0


def deform_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Deform a family with a generalized spectral section to invertible operators.

    Example usage:
        spectra-sect deform --family family.json --steps 11
    """
    _require_json(config, "deform")
    tol = config.tolerances
    family = load_model(Path(args.family), SampledFamily, tol)
    grading = (
        load_model(Path(args.grading), Grading, tol)
        if args.grading is not None
        else None
    )
    table = deform_to_invertible(
        family,
        _load_gss(args, family, config),
        grading=grading,
        steps=args.steps,
        tolerances=tol,
        jobs=config.jobs,
    )
    payload = envelope("deform", table, table.invertible, "not_invertible")
    write_json(payload, _out(args))
    return 0 if table.invertible else 1


def cl1_verify_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Check that a projection is a Cl(1) spectral section of an odd operator.

    Example usage:
        spectra-sect cl1-verify --operator a.json --grading s.json --projection p.json
    """
    _require_json(config, "cl1-verify")
    tol = config.tolerances
    operator = OddOperator(
        base=load_model(Path(args.operator), TruncatedOperator, tol),
        grading=load_model(Path(args.grading), Grading, tol),
    )
    projection = load_model(Path(args.projection), ProjectionMatrix, tol)
    check = is_cl1_section(operator, projection, args.cutoff, tol)
    write_json(
        envelope("cl1-verify", check, check.passed, "cl1_check_failed"), _out(args)
    )
    return 0 if check.passed else 1


def factor_symbol_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Factor a sampled symbol into an automorphism times a Dirac type symbol.

    Example usage:
        spectra-sect factor-symbol symbol.json --rotations 50 --seed 7
    """
    _require_json(config, "factor-symbol")
    tol = config.tolerances
    symbol = load_model(Path(args.symbol), SymbolSample, tol)
    report = factor_w_symbol(symbol, config.seed, args.rotations, tol)
    write_json(
        envelope("factor-symbol", report, report.passed, "w_condition"), _out(args)
    )
    return 0 if report.passed else 1


def sigma_trick_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Replace an operator by its odd part plus the grading.

    Example usage:
        spectra-sect sigma-trick --operator a.json --grading s.json
    """
    _require_json(config, "sigma-trick")
    tol = config.tolerances
    operator = load_model(Path(args.operator), TruncatedOperator, tol)
    grading = load_model(Path(args.grading), Grading, tol)
    result = sigma_trick(operator, grading, tol)
    passed = result.generalized_section
    write_json(envelope("sigma-trick", result, passed, "not_generalized"), _out(args))
    return 0 if passed else 1


def _generate_family(args: argparse.Namespace, config: RunConfig) -> SampledFamily:
    name = args.name
    if name == "shift":
        if args.operator is not None:
            path = Path(args.operator)
            operator = load_model(path, TruncatedOperator, config.tolerances)
        else:
            operator = TruncatedOperator(entries=np.diag([-0.5, 0.5]))
        grid = args.grid or np.linspace(-1.0, 1.0, args.samples).tolist()
        return shift_family(operator, grid)
    if name == "fuglede":
        return fuglede_family(args.dim)
    if name == "no-gss":
        grid = [int(x) for x in args.grid] if args.grid else None
        return semibounded_no_gss_family(args.dim, grid)
    if name == "negative-to-positive":
        return negative_to_positive_path(args.dim, args.samples)
    family, _ = rellich_family(args.grid or RELLICH_DEMO_GRID, args.mesh)
    return family


def family_gen_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Write a built-in family to JSON.

    Example usage:
        spectra-sect family gen fuglede --dim 128 --out fuglede.json
        spectra-sect family gen rellich --grid 0.2 0.5 0.9 --mesh 400
    """
    _require_json(config, "family gen")
    write_json(_generate_family(args, config), _out(args))
    return 0


def family_report_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Continuity, lower bound and obstruction diagnostics of a family.

    Example usage:
        spectra-sect family report family.json --format csv --out curve.csv
    """
    tol = config.tolerances
    family = load_model(Path(args.family), SampledFamily, tol)
    continuity = continuity_report(
        family, config.jump, config.continuity, tol, config.jobs
    )
    lower = lower_bound_report(family, config.jump, tol)
    if config.output_format == "csv":
        write_csv(curve_frame(continuity, lower), _out(args))
        return 0
    report = {
        "continuity": continuity.model_dump(mode="json"),
        "lower_bound": lower.model_dump(mode="json"),
        "obstruction": tail_obstruction_report(family, tol).model_dump(mode="json"),
    }
    write_json(envelope("family report", report, True), _out(args))
    return 0


def _demo_rellich(args: argparse.Namespace, config: RunConfig) -> int:
    grid = args.x or RELLICH_DEMO_GRID
    frame = rellich_frame(grid, args.mesh)
    errors = frame["relative_error"].dropna()
    passed = bool((errors < RELLICH_MAX_RELATIVE_ERROR).all())
    if config.output_format == "csv":
        write_csv(frame, _out(args))
    else:
        orders = {str(x): rellich_convergence_order(x) for x in grid if 0 < x < 1}
        report = {
            "mesh": args.mesh,
            "rows": json.loads(frame.to_json(orient="records")),
            "convergence_order": orders,
        }
        payload = envelope("demo rellich", report, passed, "rellich_mismatch")
        write_json(payload, _out(args))
    return 0 if passed else 1


def _demo_fuglede(args: argparse.Namespace, config: RunConfig) -> int:
    family = fuglede_family(args.dim)
    continuity = continuity_report(
        family, config.jump, config.continuity, config.tolerances, config.jobs
    )
    if config.output_format == "csv":
        lower = lower_bound_report(family, config.jump, config.tolerances)
        write_csv(curve_frame(continuity, lower), _out(args))
        return 0
    riesz_defect = 0.0
    graph_defect = 0.0
    for pair in continuity.to_infinity:
        x = family.grid[pair.left]
        closed_riesz = 2 * float(bounded_scalar(x))
        closed_graph = abs(cayley_scalar(x) - cayley_scalar(-x))
        riesz_defect = max(riesz_defect, abs(pair.riesz - closed_riesz))
        graph_defect = max(graph_defect, abs(pair.graph - closed_graph))
    passed = max(riesz_defect, graph_defect) <= CLOSED_FORM_TOLERANCE
    last = continuity.to_infinity[-1]
    report = {
        "continuity": continuity.model_dump(mode="json"),
        "riesz_step_to_infinity": last.riesz,
        "graph_step_to_infinity": last.graph,
        "riesz_closed_form_defect": riesz_defect,
        "graph_closed_form_defect": graph_defect,
    }
    payload = envelope("demo fuglede", report, passed, "closed_form_mismatch")
    write_json(payload, _out(args))
    return 0 if passed else 1


def _demo_shift(args: argparse.Namespace, config: RunConfig) -> int:
    _require_json(config, "demo shift")
    operator = TruncatedOperator(entries=np.diag([-0.5, 0.5]))
    family = shift_family(operator, np.linspace(-1.0, 1.0, args.samples).tolist())
    certificate = shift_section_certificate(operator, family, config.tolerances)
    check = section_implies_riesz_check(
        family, certificate, config.jump, config.tolerances
    )
    passed = certificate.verified and check.passed
    report = {
        "certificate": certificate.model_dump(mode="json"),
        "riesz_check": check.model_dump(mode="json"),
    }
    write_json(envelope("demo shift", report, passed, "riesz_jump"), _out(args))
    return 0 if passed else 1


def _demo_no_gss(args: argparse.Namespace, config: RunConfig) -> int:
    _require_json(config, "demo no-gss")
    tol = config.tolerances
    reports = {
        "semibounded": tail_obstruction_report(
            semibounded_no_gss_family(args.dim), tol
        ),
        "negative_to_positive": tail_obstruction_report(
            negative_to_positive_path(args.dim, args.samples), tol
        ),
    }
    passed = all(report.obstructed for report in reports.values())
    body = {name: report.model_dump(mode="json") for name, report in reports.items()}
    write_json(envelope("demo no-gss", body, passed, "obstruction_missed"), _out(args))
    return 0 if passed else 1


DEMOS: dict[str, Handler] = {
    "rellich": _demo_rellich,
    "fuglede": _demo_fuglede,
    "shift": _demo_shift,
    "no-gss": _demo_no_gss,
}


def demo_command(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Run one of the built-in demonstrations.

    Example usage:
        spectra-sect demo fuglede --dim 32
        spectra-sect demo rellich --x 0.5 --mesh 2000
    """
    return DEMOS[args.name](args, config)


def build_parser() -> argparse.ArgumentParser:
    """
    Creates the spectra-sect argument parser with all subcommands.

    Returns:
        argparse.ArgumentParser: The configured parser.
    """
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="spectra-sect",
        description="Spectral sections and Riesz/graph diagnostics.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add(sub, name: str, handler: Handler, help_text: str):
        command = sub.add_parser(name, parents=[common], help=help_text)
        command.set_defaults(handler=handler)
        return command

    verify = add(commands, "verify-section", verify_section_command, "Verify sections")
    verify.add_argument("--family", required=True, help="SampledFamily JSON")
    verify.add_argument("--certificate", required=True, help="Certificate JSON")

    construct = add(
        commands, "construct-section", construct_section_command, "Build sections"
    )
    construct.add_argument("--family", required=True, help="SampledFamily JSON")
    construct.add_argument("--gss", default=None, help="JSON list of projections")
    construct.add_argument("--delta", type=float, default=0.1, help="Covering delta")

    trivialize = add(commands, "trivialize", trivialize_command, "Trivialize")
    trivialize.add_argument("--family", required=True, help="SampledFamily JSON")
    trivialize.add_argument("--certificate", required=True, help="Certificate JSON")
    trivialize.add_argument(
        "--psi", choices=sorted(PSI_PROFILES), default="smoothstep", help="Profile"
    )

    deform = add(commands, "deform", deform_command, "Deform to invertible")
    deform.add_argument("--family", required=True, help="SampledFamily JSON")
    deform.add_argument("--gss", default=None, help="JSON list of projections")
    deform.add_argument("--grading", default=None, help="Grading JSON")
    deform.add_argument("--steps", type=int, default=11, help="Number of time slices")

    cl1 = add(commands, "cl1-verify", cl1_verify_command, "Verify a Cl(1) section")
    cl1.add_argument("--operator", required=True, help="TruncatedOperator JSON")
    cl1.add_argument("--grading", required=True, help="Grading JSON")
    cl1.add_argument("--projection", required=True, help="ProjectionMatrix JSON")
    cl1.add_argument("--cutoff", type=float, required=True, help="Cut-off r")

    factor = add(commands, "factor-symbol", factor_symbol_command, "Factor a symbol")
    factor.add_argument("symbol", help="SymbolSample JSON")
    factor.add_argument("--rotations", type=int, default=50, help="Sampled directions")

    trick = add(commands, "sigma-trick", sigma_trick_command, "Apply the sigma trick")
    trick.add_argument("--operator", required=True, help="TruncatedOperator JSON")
    trick.add_argument("--grading", required=True, help="Grading JSON")

    family = commands.add_parser("family", help="Family generators and reports")
    family_commands = family.add_subparsers(dest="family_command", required=True)
    gen = add(family_commands, "gen", family_gen_command, "Generate a family")
    gen.add_argument(
        "name",
        choices=["shift", "fuglede", "no-gss", "negative-to-positive", "rellich"],
    )
    gen.add_argument("--dim", type=int, default=32, help="Truncation size")
    gen.add_argument("--grid", type=float, nargs="+", default=None, help="Grid")
    gen.add_argument("--samples", type=int, default=10, help="Number of samples")
    gen.add_argument("--mesh", type=int, default=100, help="Rellich interior points")
    gen.add_argument("--operator", default=None, help="Base operator of a shift")
    report = add(family_commands, "report", family_report_command, "Report a family")
    report.add_argument("family", help="SampledFamily JSON")

    demo = add(commands, "demo", demo_command, "Run a demonstration")
    demo.add_argument("name", choices=sorted(DEMOS))
    demo.add_argument("--dim", type=int, default=32, help="Truncation size")
    demo.add_argument("--x", type=float, nargs="+", default=None, help="Robin x")
    demo.add_argument("--mesh", type=int, default=2000, help="Rellich interior points")
    demo.add_argument("--samples", type=int, default=10, help="Number of samples")
    return parser


def _error_report(command: str, error: Exception, reason: str) -> dict[str, Any]:
    print(f"Error in {command} command: {error}", file=sys.stderr)
    if isinstance(error, ReportableError):
        return error.to_report()
    return {"status": "error", "reason": reason, "message": str(error), "details": {}}


def main(argv: list[str] | None = None) -> int:
    """
    Runs one spectra-sect command.

    Args:
        argv (list[str] | None): Arguments without the program name.

    Returns:
        int: 0 when every check passed, 1 when a mathematical check failed and 2
             for unusable input.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    if args.verbose:
        logging.basicConfig(level=logging.DEBUG, stream=sys.stderr)

    command = args.command
    if command == "family":
        command = f"family {args.family_command}"
    try:
        config = _run_config(args)
        logger.debug("running %s with %s", command, config.model_dump(mode="json"))
        return args.handler(args, config)
    except ReportableError as e:
        report, code = _error_report(command, e, e.reason), e.exit_code
    except ValidationError as e:
        report, code = _error_report(command, e, "invalid_input"), 2
    except OSError as e:
        report, code = _error_report(command, e, "io_error"), 2
    except ValueError as e:
        report, code = _error_report(command, e, "invalid_input"), 2
    print(json.dumps(report), file=sys.stderr)
    return code


def main_entry():
    """
    Console entry point.

    Example usage:
        spectra-sect demo fuglede --dim 32
    """
    sys.exit(main())
