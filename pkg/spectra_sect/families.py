"""
Operator families, continuity diagnostics and the Rellich boundary problem.
"""

import logging
import math

import numpy as np
import scipy.linalg
import scipy.optimize
from pydantic import BaseModel

from spectra_sect.config import DEFAULT_TOLERANCES, Tolerances
from spectra_sect.errors import (
    BisectionError,
    PreconditionError,
    TailMismatchError,
)
from spectra_sect.opcore import (
    bounded_scalar,
    bounded_transform,
    chi_plus,
    eig,
    graph_distance,
    riesz_distance,
    spectral_projection,
)
from spectra_sect.schema import (
    IntervalSpec,
    SampledFamily,
    TailDescriptor,
    TailKind,
    TailType,
    TruncatedOperator,
)
from spectra_sect.sections import (
    SectionCertificate,
    avoid_spectrum,
    is_spectral_section,
)
from spectra_sect.utils import opnorm, parallel_map

logger = logging.getLogger(__name__)

RELLICH_MIN_MESH = 100
RELLICH_TAIL = TailDescriptor(exponent=2.0, scale=math.pi**2)
BISECTION_XTOL = 1e-12


def _diagonal(values, tail: TailDescriptor) -> TruncatedOperator:
    entries = np.diag(np.asarray(values, dtype=np.float64))
    return TruncatedOperator(entries=entries, tail=tail)


def shift_family(
    operator: TruncatedOperator, grid: list[float], label: str = "shift"
) -> SampledFamily:
    """A_x = A + x for every x of the grid."""
    identity = np.eye(operator.dim)
    operators = [operator.with_entries(operator.entries + x * identity) for x in grid]
    return SampledFamily(
        label=label,
        grid=[float(x) for x in grid],
        operators=operators,
        tail_rule=operator.tail,
    )


def shift_section_certificate(
    operator: TruncatedOperator,
    family: SampledFamily,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> SectionCertificate:
    """
    The constant section chi+(A) of a shift family with cut-offs r_x = |x| + g / 2.

    g is the distance from 0 to the spectrum of A; a cut-off hitting the spectrum
    of A + x is moved upwards.

    Raises:
        PreconditionError: If A is not invertible.
    """
    spectrum = eig(operator, tolerances)
    spectral_gap = float(np.min(np.abs(spectrum.eigenvalues)))
    if spectral_gap <= tolerances.invertibility * (1 + operator.norm()):
        raise PreconditionError(
            "the shift family needs an invertible A", {"gap": spectral_gap}
        )
    projection = chi_plus(operator, tolerances, spectrum)
    cutoffs = [
        avoid_spectrum(abs(x) + spectral_gap / 2, spectrum.eigenvalues + x, tolerances)
        for x in family.grid
    ]
    checks = [
        is_spectral_section(op, projection, r, tolerances)
        for op, r in zip(family.operators, cutoffs)
    ]
    pairs = family.adjacent_pairs()
    return SectionCertificate(
        label=family.label,
        grid=list(family.grid),
        projections=[projection] * len(family),
        cutoffs=cutoffs,
        verified=all(c.passed for c in checks),
        max_violation=max(c.violation for c in checks),
        lipschitz=max(
            (
                abs(cutoffs[j] - cutoffs[i]) / abs(family.grid[j] - family.grid[i])
                for i, j in pairs
            ),
            default=0.0,
        ),
        proximity=[0.0] * len(family),
        adjacent_distances=[0.0] * len(pairs),
    )


def fuglede_family(dim: int) -> SampledFamily:
    """
    A_x e_n = n for n != x and -x for n = x, with A_inf e_n = n.

    The grid is 1, ..., dim - 1 followed by the point at infinity at coordinate dim.

    Args:
        dim (int): Truncation size, at least 3.

    Raises:
        PreconditionError: If dim < 3.

    Returns:
        SampledFamily: The family with a PositiveGrowth tail.
    """
    if dim < 3:
        raise PreconditionError(f"fuglede family needs dim >= 3, got {dim}")
    tail = TailDescriptor()
    diagonal = np.arange(1, dim + 1, dtype=np.float64)
    operators = []
    for x in range(1, dim):
        values = diagonal.copy()
        values[x - 1] = -x
        operators.append(_diagonal(values, tail))
    operators.append(_diagonal(diagonal, tail))
    return SampledFamily(
        label=f"fuglede-{dim}",
        grid=[float(x) for x in range(1, dim + 1)],
        operators=operators,
        tail_rule=tail,
        at_infinity=True,
    )


def semibounded_no_gss_family(dim: int, grid: list[int] | None = None) -> SampledFamily:
    """
    A_x e_n = -n for n < x and n for n >= x, with A_inf e_n = -n.

    Finite samples have a PositiveGrowth tail, the point at infinity a
    NegativeGrowth one, so the family has no tail rule.

    Args:
        dim (int): Truncation size, at least 2.
        grid (list[int] | None): Positive integer parameters, 1..dim if None.

    Returns:
        SampledFamily: The family with its point at infinity last.
    """
    if dim < 2:
        raise PreconditionError(f"dim must be at least 2, got {dim}")
    xs = list(range(1, dim + 1)) if grid is None else sorted(int(x) for x in grid)
    if not xs or xs[0] < 1:
        raise PreconditionError("grid must hold positive integers")
    n = np.arange(1, dim + 1, dtype=np.float64)
    positive = TailDescriptor(kind=TailKind.POSITIVE_GROWTH)
    negative = TailDescriptor(kind=TailKind.NEGATIVE_GROWTH)
    operators = [_diagonal(np.where(n < x, -n, n), positive) for x in xs]
    operators.append(_diagonal(-n, negative))
    return SampledFamily(
        label=f"no-gss-{dim}",
        grid=[float(x) for x in xs] + [float(xs[-1] + 1)],
        operators=operators,
        tail_rule=None,
        at_infinity=True,
    )


def negative_to_positive_path(dim: int, samples: int = 10) -> SampledFamily:
    """
    The path f(A_t) = (1 - t) f(-D) + t f(D), D = diag(1, ..., dim).

    The tail of A_t is negative for t < 1/2 and positive for t > 1/2; t = 1/2 is
    not sampled since the tail collapses there.

    Args:
        dim (int): Truncation size.
        samples (int): Even number of equispaced times in [0, 1].

    Raises:
        PreconditionError: If samples is odd or below 2.

    Returns:
        SampledFamily: The path without a shared tail rule.
    """
    if samples < 2 or samples % 2:
        raise PreconditionError("samples must be an even number of at least 2")
    n = np.arange(1, dim + 1, dtype=np.float64)
    image = bounded_scalar(n)
    grid = [float(t) for t in np.linspace(0.0, 1.0, samples)]
    operators = []
    for t in grid:
        a = (2 * t - 1) * image
        kind = TailKind.POSITIVE_GROWTH if t > 0.5 else TailKind.NEGATIVE_GROWTH
        operators.append(_diagonal(a / np.sqrt(1 - a * a), TailDescriptor(kind=kind)))
    return SampledFamily(
        label=f"negative-to-positive-{dim}",
        grid=grid,
        operators=operators,
        tail_rule=None,
    )


class ObstructionReport(BaseModel):
    """
    Tail types of chi+(A_x) along a family.

    A continuous generalized section would have constant tail type along every
    connected run of samples, so a change of type is an obstruction.
    """

    label: str
    tail_types: list[TailType]
    obstructed: bool
    clash: tuple[int, int] | None = None


def tail_obstruction_report(
    family: SampledFamily, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> ObstructionReport:
    types = [chi_plus(op, tolerances).tail_type for op in family.operators]
    clash = next(
        ((i, j) for i, j in family.adjacent_pairs() if types[i] != types[j]), None
    )
    return ObstructionReport(
        label=family.label, tail_types=types, obstructed=clash is not None, clash=clash
    )


def rellich_tridiagonal(x: float, mesh: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Symmetric finite differences for -psi'' on [0, 1] with psi(0) = 0 and
    psi(1) = x psi'(1).

    The unknowns are psi at t_j = j h, j = 1..M+1, h = 1 / (M + 1). The Robin
    row eliminates the ghost node of the centered stencil and the last unknown is
    rescaled by 1 / sqrt(2) to symmetrize. At x = 0 the boundary node decouples
    with diagonal 4 / h^2, the top of the discrete Dirichlet spectrum.

    Args:
        x (float): Robin parameter.
        mesh (int): Number M of interior points.

    Returns:
        tuple[np.ndarray, np.ndarray]: Diagonal (length M + 1) and off-diagonal.
    """
    h = 1.0 / (mesh + 1)
    diagonal = np.full(mesh + 1, 2.0 / h**2)
    off = np.full(mesh, -1.0 / h**2)
    if x == 0:
        diagonal[-1] = 4.0 / h**2
        off[-1] = 0.0
    else:
        diagonal[-1] = (2.0 - 2.0 * h / x) / h**2
        off[-1] = -math.sqrt(2.0) / h**2
    return diagonal, off


def rellich_matrix(x: float, mesh: int) -> np.ndarray:
    diagonal, off = rellich_tridiagonal(x, mesh)
    return np.diag(diagonal) + np.diag(off, 1) + np.diag(off, -1)


def rellich_lowest_eigenvalue(x: float, mesh: int) -> float:
    diagonal, off = rellich_tridiagonal(x, mesh)
    values = scipy.linalg.eigh_tridiagonal(
        diagonal, off, eigvals_only=True, select="i", select_range=(0, 0)
    )
    return float(values[0])


def _check_rellich_parameter(x: float) -> bool:
    if 0 < x < 1:
        return True
    logger.warning(
        "x = %s is outside (0, 1): the Robin problem has no negative eigenvalue", x
    )
    return False


def rellich_reference_eigenvalue(x: float) -> float | None:
    """
    The negative eigenvalue -mu^2 where tanh(mu) = x mu, by bisection.

    This is the relation e^{2 mu} - 1 = x mu (e^{2 mu} + 1) for the eigenfunction
    sinh(mu t).

    Args:
        x (float): Robin parameter.

    Raises:
        BisectionError: If the bisection does not converge.

    Returns:
        float | None: The eigenvalue, None with a warning when x is not in (0, 1).
    """
    if not _check_rellich_parameter(x):
        return None
    upper = max(50.0, 2.0 / x)
    try:
        mu, result = scipy.optimize.bisect(
            lambda m: math.tanh(m) - x * m,
            1e-6,
            upper,
            xtol=BISECTION_XTOL,
            maxiter=500,
            full_output=True,
        )
    except (ValueError, RuntimeError) as e:
        raise BisectionError(
            f"bisection on [1e-6, {upper}] failed for x = {x}: {e}",
            {"x": x, "bracket": [1e-6, upper]},
        ) from e
    if not result.converged:
        raise BisectionError(
            f"bisection did not converge for x = {x}", {"x": x, "flag": result.flag}
        )
    logger.debug("x = %s: mu = %.12g after %d iterations", x, mu, result.iterations)
    return -(mu**2)


def rellich_family(
    grid: list[float], mesh: int = RELLICH_MIN_MESH
) -> tuple[SampledFamily, list[float | None]]:
    """
    The discretized Robin family with its reference negative eigenvalues.

    Args:
        grid (list[float]): Robin parameters x, strictly increasing.
        mesh (int): Number of interior points, at least 100.

    Raises:
        PreconditionError: If mesh < 100.

    Returns:
        tuple[SampledFamily, list[float | None]]: The family and -mu^2 per x.
    """
    if mesh < RELLICH_MIN_MESH:
        raise PreconditionError(
            f"mesh must be at least {RELLICH_MIN_MESH}, got {mesh}", {"mesh": mesh}
        )
    operators = [
        TruncatedOperator(entries=rellich_matrix(x, mesh), tail=RELLICH_TAIL)
        for x in grid
    ]
    family = SampledFamily(
        label=f"rellich-{mesh}",
        grid=[float(x) for x in grid],
        operators=operators,
        tail_rule=RELLICH_TAIL,
    )
    return family, [rellich_reference_eigenvalue(x) for x in grid]


def rellich_convergence_order(x: float, mesh: int = 199) -> float:
    """
    Observed order log2(e(h) / e(h / 2)) of the lowest eigenvalue error.

    The finer mesh is 2 (M + 1) - 1 so that h is halved exactly.

    Raises:
        PreconditionError: If x is not in (0, 1).
    """
    reference = rellich_reference_eigenvalue(x)
    if reference is None:
        raise PreconditionError(f"no negative eigenvalue for x = {x}")
    coarse = abs(rellich_lowest_eigenvalue(x, mesh) - reference)
    fine = abs(rellich_lowest_eigenvalue(x, 2 * (mesh + 1) - 1) - reference)
    return math.log2(coarse / fine)


def riesz_modulus_from_graph(c: float) -> float:
    """
    sqrt(c / 2), a bound of |f(A) - f(B)| by c = |kappa(A) - kappa(B)| for
    operators with nonnegative spectrum, where f(A)^2 = (1 + Re kappa(A)) / 2.
    """
    return math.sqrt(max(c, 0.0) / 2)


class PairDistance(BaseModel):
    left: int
    right: int
    step: float
    riesz: float | None
    graph: float | None
    riesz_jump: bool = False
    graph_jump: bool = False
    tail_mismatch: bool = False
    nonnegative: bool = False


class ContinuityReport(BaseModel):
    """
    Riesz and graph distances of adjacent samples with jump flags.

    A pair is flagged as a Riesz jump when its Riesz distance is at least `jump`
    while the graph distance per normalized step stays at most `continuity`, and
    as a graph jump with the roles exchanged. The normalized step is the grid
    step divided by the mean grid step.

    Attributes:
        label (str): Label of the family.
        grid (list[float]): Grid of the family.
        pairs (list[PairDistance]): Adjacent pairs.
        to_infinity (list[PairDistance]): Distances of every finite sample to the
                                          point at infinity, if any.
        riesz_modulus (float): Max Riesz distance per unit parameter step.
        graph_modulus (float): Max graph distance per unit parameter step.
        modulus_violations (list[int]): Nonnegative pairs with Riesz distance above
                                        riesz_modulus_from_graph(graph).
        jump (float): Jump threshold.
        continuity (float): Continuity threshold.
    """

    label: str
    grid: list[float]
    pairs: list[PairDistance]
    to_infinity: list[PairDistance] = []
    riesz_modulus: float
    graph_modulus: float
    modulus_violations: list[int] = []
    jump: float
    continuity: float

    @property
    def riesz_jumps(self) -> list[PairDistance]:
        return [p for p in self.pairs if p.riesz_jump]

    @property
    def graph_jumps(self) -> list[PairDistance]:
        return [p for p in self.pairs if p.graph_jump]


def _pair_distance(
    family: SampledFamily,
    i: int,
    j: int,
    unit: float,
    jump: float,
    continuity: float,
    tolerances: Tolerances,
) -> PairDistance:
    a, b = family.operators[i], family.operators[j]
    step = abs(family.grid[j] - family.grid[i])
    normalized = step / unit if unit > 0 else 1.0
    try:
        riesz = riesz_distance(a, b)
        graph = graph_distance(a, b)
    except TailMismatchError:
        return PairDistance(
            left=i, right=j, step=step, riesz=None, graph=None, tail_mismatch=True
        )
    nonnegative = (
        a.tail.kind == TailKind.POSITIVE_GROWTH
        and min(eig(a, tolerances).eigenvalues[0], eig(b, tolerances).eigenvalues[0])
        >= -tolerances.gap
    )
    return PairDistance(
        left=i,
        right=j,
        step=step,
        riesz=riesz,
        graph=graph,
        riesz_jump=riesz >= jump and graph / normalized <= continuity,
        graph_jump=graph >= jump and riesz / normalized <= continuity,
        nonnegative=nonnegative,
    )


def continuity_report(
    family: SampledFamily,
    jump: float = 0.5,
    continuity: float = 0.05,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    jobs: int = 1,
) -> ContinuityReport:
    """
    Measures Riesz and graph distances between adjacent samples.

    Args:
        family (SampledFamily): At least two samples.
        jump (float): Jump threshold.
        continuity (float): Continuity threshold per normalized step.
        tolerances (Tolerances): Numerical thresholds.
        jobs (int): Worker threads for the pair distances.

    Raises:
        PreconditionError: If the family has a single sample.

    Returns:
        ContinuityReport: Distances, moduli and flags.
    """
    if len(family) < 2:
        raise PreconditionError("a continuity report needs at least two samples")
    span = max(family.grid) - min(family.grid)
    unit = span / (len(family) - 1)
    pairs = family.adjacent_pairs()
    if family.at_infinity:
        last = len(family) - 1
        infinity_pairs = [(i, last) for i in family.finite_indices()]
    else:
        infinity_pairs = []

    measured = parallel_map(
        lambda ij: _pair_distance(family, *ij, unit, jump, continuity, tolerances),
        pairs + infinity_pairs,
        jobs,
    )
    adjacent = measured[: len(pairs)]
    rates = [p for p in adjacent if p.riesz is not None and p.step > 0]
    violations = [
        k
        for k, p in enumerate(adjacent)
        if p.nonnegative
        and p.riesz is not None
        and p.graph is not None
        and p.riesz > riesz_modulus_from_graph(p.graph) + 1e-10
    ]
    return ContinuityReport(
        label=family.label,
        grid=list(family.grid),
        pairs=adjacent,
        to_infinity=measured[len(pairs) :],
        riesz_modulus=max((p.riesz / p.step for p in rates), default=0.0),
        graph_modulus=max((p.graph / p.step for p in rates), default=0.0),
        modulus_violations=violations,
        jump=jump,
        continuity=continuity,
    )


class LowerBoundCurve(BaseModel):
    """
    Lower bounds c_x = min eigenvalue of A_x along a family.

    Attributes:
        label (str): Label of the family.
        grid (list[float]): Grid of the family.
        lower_bounds (list[float | None]): c_x, None where the tail is unbounded
                                           below.
        unbounded (list[bool]): Samples whose tail has negative modes.
        bounded_steps (list[float | None]): |f(c_x) - f(c_y)| per adjacent pair.
        riesz_steps (list[float | None]): Riesz distance per adjacent pair.
        continuous (bool): Whether every bounded step is below the jump threshold
                           and no sample is unbounded below.
        blow_down_pairs (list[tuple[int, int]]): Pairs where a lower bound jump
                                                 coincides with a Riesz jump.
    """

    label: str
    grid: list[float]
    lower_bounds: list[float | None]
    unbounded: list[bool]
    bounded_steps: list[float | None]
    riesz_steps: list[float | None]
    continuous: bool
    blow_down_pairs: list[tuple[int, int]] = []


def lower_bound_report(
    family: SampledFamily,
    jump: float = 0.5,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> LowerBoundCurve:
    """
    Tracks the lowest eigenvalue of every sample and where it runs off.

    The lower bound is compared on the scale of the bounded transform, so a bound
    running towards -infinity shows up as a step of size close to 1 or more.

    Args:
        family (SampledFamily): The family.
        jump (float): Threshold for a lower bound jump and a Riesz jump.
        tolerances (Tolerances): Numerical thresholds.

    Returns:
        LowerBoundCurve: The bounds, steps and coincidences.
    """
    unbounded = [-1 in op.tail.signs() for op in family.operators]
    lower_bounds: list[float | None] = [
        None if flag else float(eig(op, tolerances).eigenvalues[0])
        for op, flag in zip(family.operators, unbounded)
    ]
    bounded_steps: list[float | None] = []
    riesz_steps: list[float | None] = []
    blow_down = []
    for i, j in family.adjacent_pairs():
        ci, cj = lower_bounds[i], lower_bounds[j]
        step = (
            None
            if ci is None or cj is None
            else abs(float(bounded_scalar(ci)) - float(bounded_scalar(cj)))
        )
        try:
            riesz = riesz_distance(family.operators[i], family.operators[j])
        except TailMismatchError:
            riesz = None
        bounded_steps.append(step)
        riesz_steps.append(riesz)
        if step is not None and riesz is not None and step >= jump and riesz >= jump:
            blow_down.append((i, j))
    continuous = not any(unbounded) and all(
        s is not None and s < jump for s in bounded_steps
    )
    return LowerBoundCurve(
        label=family.label,
        grid=list(family.grid),
        lower_bounds=lower_bounds,
        unbounded=unbounded,
        bounded_steps=bounded_steps,
        riesz_steps=riesz_steps,
        continuous=continuous,
        blow_down_pairs=blow_down,
    )


class BlockEvidence(BaseModel):
    """
    Adjacent-pair distances of the pieces f(A) S-, f(A) S0, f(A) S+ of the
    spectral decomposition at the certified cut-offs.
    """

    left: int
    right: int
    riesz: float
    section_distance: float
    lower_block: float
    window_block: float
    upper_block: float
    flagged: bool


class RieszCheckReport(BaseModel):
    label: str
    passed: bool
    pairs: list[BlockEvidence]
    offending: list[tuple[int, int]] = []


def _blocks(
    operator: TruncatedOperator, cutoff: float, tolerances: Tolerances
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    spectrum = eig(operator, tolerances)
    image = bounded_transform(operator, spectrum)
    pieces = [
        spectral_projection(operator, interval, tolerances, spectrum).entries
        for interval in (
            IntervalSpec.at_most(-cutoff),
            IntervalSpec.open(-cutoff, cutoff),
            IntervalSpec.at_least(cutoff),
        )
    ]
    lower, window, upper = (image @ piece for piece in pieces)
    return lower, window, upper


def section_implies_riesz_check(
    family: SampledFamily,
    certificate: SectionCertificate,
    jump: float = 0.5,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> RieszCheckReport:
    """
    Checks that a family with a verified spectral section shows no Riesz jump.

    For every adjacent pair the Riesz distance is reported together with the
    distances of the sections and of the three spectral pieces of f(A).

    Args:
        family (SampledFamily): The family.
        certificate (SectionCertificate): A verified certificate for the family.
        jump (float): Riesz jump threshold.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        PreconditionError: If the certificate is not verified or does not match.

    Returns:
        RieszCheckReport: The evidence, with the offending pairs named.
    """
    if not certificate.verified:
        raise PreconditionError("the certificate is not verified")
    if len(certificate.projections) != len(family):
        raise PreconditionError("certificate and family have different sample counts")
    blocks = [
        _blocks(op, r, tolerances)
        for op, r in zip(family.operators, certificate.cutoffs)
    ]
    evidence = []
    for i, j in family.adjacent_pairs():
        riesz = riesz_distance(family.operators[i], family.operators[j])
        lower, window, upper = (
            opnorm(blocks[i][k] - blocks[j][k]) for k in range(3)
        )
        evidence.append(
            BlockEvidence(
                left=i,
                right=j,
                riesz=riesz,
                section_distance=opnorm(
                    certificate.projections[i].entries
                    - certificate.projections[j].entries
                ),
                lower_block=lower,
                window_block=window,
                upper_block=upper,
                flagged=riesz >= jump,
            )
        )
    offending = [(e.left, e.right) for e in evidence if e.flagged]
    if offending:
        logger.warning("riesz jump on a family with a spectral section: %s", offending)
    return RieszCheckReport(
        label=family.label,
        passed=not offending,
        pairs=evidence,
        offending=offending,
    )
