"""
Spectral sections of truncated operator families.

A projection P is an r-spectral section for A when
1_[r, inf)(A) <= P <= 1_(-r, inf)(A). This module verifies that condition,
builds sections out of generalized ones, produces trivializing operators C with
chi+(A + C) = P and deforms families with a generalized section to invertible ones.
"""

import logging
from typing import Any, Callable, NamedTuple

import numpy as np
import scipy.linalg
from pydantic import (
    BaseModel,
    ConfigDict,
    field_serializer,
    field_validator,
    model_validator,
)

from spectra_sect.config import DEFAULT_TOLERANCES, Tolerances
from spectra_sect.errors import (
    ConstructionError,
    CutoffDivergenceError,
    HermiticityError,
    InvariantViolationError,
    PreconditionError,
    ProjectionDistanceError,
    SingularOperatorError,
    TailMismatchError,
)
from spectra_sect.opcore import (
    bounded_transform,
    chi_plus,
    decompose_matrix,
    eig,
    grading_basis,
    interval_mask,
    inverse_bounded_transform,
    spectral_projection,
)
from spectra_sect.schema import (
    Grading,
    IntervalSpec,
    ProjectionMatrix,
    SampledFamily,
    SpectralDecomposition,
    TailType,
    TruncatedOperator,
    matrix_from_json,
    matrix_to_json,
)
from spectra_sect.utils import (
    hermitian_defect,
    hermitian_function,
    min_abs_eigenvalue,
    opnorm,
    parallel_map,
    psd_sqrt,
    symmetrize,
)

logger = logging.getLogger(__name__)

Profile = Callable[[np.ndarray], np.ndarray]

# Minimal cut-offs rising at least this fast towards the point at infinity
# are read as a divergent cut-off function.
DIVERGENCE_SLOPE = 0.5
DIVERGENCE_RUN = 3


def smoothstep(t):
    """psi(t) = 2t^3 - 3t^2 + 1 on [0, 1], 1 below and 0 above."""
    c = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    return 2 * c**3 - 3 * c**2 + 1


def linear_ramp(t):
    return np.clip(1.0 - np.asarray(t, dtype=np.float64), 0.0, 1.0)


PSI_PROFILES: dict[str, Profile] = {"smoothstep": smoothstep, "linear": linear_ramp}


class SectionCheck(BaseModel):
    """
    Result of testing 1_[r, inf)(A) <= P <= 1_(-r, inf)(A).

    Attributes:
        passed (bool): Whether both inclusions and the tail condition hold.
        cutoff (float): The cut-off r.
        lower_violation (float): |(1 - P) S+| with S+ = 1_[r, inf)(A).
        upper_violation (float): |P S-| with S- = 1_(-inf, -r](A).
        tail_consistent (bool): Whether P has the tail type of S+.
    """

    passed: bool
    cutoff: float
    lower_violation: float
    upper_violation: float
    tail_consistent: bool

    def __bool__(self) -> bool:
        return self.passed

    @property
    def violation(self) -> float:
        return max(self.lower_violation, self.upper_violation)


def is_spectral_section(
    operator: TruncatedOperator,
    projection: ProjectionMatrix,
    cutoff: float,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    spectrum: SpectralDecomposition | None = None,
) -> SectionCheck:
    """
    Checks whether P is an r-spectral section for A.

    Args:
        operator (TruncatedOperator): The operator A.
        projection (ProjectionMatrix): The candidate P.
        cutoff (float): The cut-off r > 0.
        tolerances (Tolerances): Inclusions pass when their defect is at most
                                 tolerances.inclusion.
        spectrum (SpectralDecomposition | None): Precomputed decomposition of A.

    Raises:
        PreconditionError: If r is not positive or the dimensions differ.
        EndpointCollisionError: If +-r is too close to the spectrum of A.

    Returns:
        SectionCheck: The verdict with measured violations.
    """
    if not cutoff > 0:
        raise PreconditionError(f"cut-off must be positive, got {cutoff!r}")
    if projection.dim != operator.dim:
        raise PreconditionError("projection and operator dimensions differ")
    if spectrum is None:
        spectrum = eig(operator, tolerances)

    upper_part = spectral_projection(
        operator, IntervalSpec.at_least(cutoff), tolerances, spectrum
    )
    lower_part = spectral_projection(
        operator, IntervalSpec.at_most(-cutoff), tolerances, spectrum
    )
    p = projection.entries
    lower_violation = opnorm((np.eye(operator.dim) - p) @ upper_part.entries)
    upper_violation = opnorm(p @ lower_part.entries)
    tail_consistent = projection.tail_type == upper_part.tail_type

    passed = (
        lower_violation <= tolerances.inclusion
        and upper_violation <= tolerances.inclusion
        and tail_consistent
    )
    return SectionCheck(
        passed=passed,
        cutoff=cutoff,
        lower_violation=lower_violation,
        upper_violation=upper_violation,
        tail_consistent=tail_consistent,
    )


def is_generalized_section(
    operator: TruncatedOperator,
    projection: ProjectionMatrix,
    rank_budget: int | None = None,
    eps: float = 1e-6,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> bool:
    """
    Checks whether P - chi+(A) is compact in the truncated sense.

    That means P has the tail type of chi+(A) and every singular value of
    P - chi+(A) past index rank_budget is at most eps.

    Args:
        operator (TruncatedOperator): The operator A.
        projection (ProjectionMatrix): The candidate P.
        rank_budget (int | None): Allowed rank of the difference, dim // 2 if None.
        eps (float): Threshold for the remaining singular values.
        tolerances (Tolerances): Numerical thresholds.

    Returns:
        bool: True if P is a generalized spectral section for A.
    """
    if projection.dim != operator.dim:
        return False
    chi = chi_plus(operator, tolerances)
    if projection.tail_type != chi.tail_type:
        return False
    budget = operator.dim // 2 if rank_budget is None else rank_budget
    singular = scipy.linalg.svdvals(projection.entries - chi.entries)
    return bool(np.all(singular[budget:] <= eps))


def _t_average(
    spectrum: SpectralDecomposition,
    projection: np.ndarray,
    cutoff: float,
    tolerances: Tolerances,
) -> np.ndarray:
    values = spectrum.eigenvalues
    s_plus = spectrum.project(
        interval_mask(values, IntervalSpec.at_least(cutoff), tolerances)
    )
    s_zero = spectrum.project(
        interval_mask(values, IntervalSpec.open(-cutoff, cutoff), tolerances)
    )
    return s_plus + s_zero @ projection @ s_zero


def t_average(
    operator: TruncatedOperator,
    projection: ProjectionMatrix,
    cutoff: float,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """
    T_r(A, P) = S+ + S0 P S0 with S+ = 1_[r, inf)(A) and S0 = 1_(-r, r)(A).

    Args:
        operator (TruncatedOperator): The operator A.
        projection (ProjectionMatrix): The projection P.
        cutoff (float): The cut-off r > 0.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        EndpointCollisionError: If +-r is too close to the spectrum of A.

    Returns:
        np.ndarray: The Hermitian matrix T_r(A, P).
    """
    if not cutoff > 0:
        raise PreconditionError(f"cut-off must be positive, got {cutoff!r}")
    return _t_average(eig(operator, tolerances), projection.entries, cutoff, tolerances)


def candidate_cutoffs(
    values: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """
    Midpoints of the gaps of {0} together with {|lambda_k|}, ascending.

    Gaps narrower than twice the gap tolerance are skipped so every candidate is
    admissible for this spectrum.
    """
    magnitudes = np.unique(np.concatenate([[0.0], np.abs(values)]))
    lower, upper = magnitudes[:-1], magnitudes[1:]
    keep = upper - lower > 2 * tolerances.gap
    return (lower[keep] + upper[keep]) / 2


def round_half(
    matrix: np.ndarray,
    tail_type: TailType,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> ProjectionMatrix:
    """1_[1/2, inf)(T) for a Hermitian T."""
    spectrum = decompose_matrix(matrix, tolerances)
    return ProjectionMatrix(
        entries=spectrum.project(spectrum.eigenvalues >= 0.5),
        tail_type=tail_type,
        tolerance=tolerances.idempotency,
    )


class SectionCertificate(BaseModel):
    """
    Output of construct_section.

    Attributes:
        label (str): Label of the family.
        grid (list[float]): Grid of the family.
        projections (list[ProjectionMatrix]): Section Q_x per sample.
        cutoffs (list[float]): Cut-off R_x per sample.
        verified (bool): Whether every sample passed is_spectral_section.
        max_violation (float): Largest inclusion defect over the samples.
        lipschitz (float): L with |R_x - R_y| <= L |x - y| on adjacent samples.
        delta (float | None): Covering tolerance the section was built with.
        proximity (list[float]): |Q_x - P_x| per sample.
        adjacent_distances (list[float]): |Q_x - Q_y| per adjacent pair.
    """

    label: str = ""
    grid: list[float]
    projections: list[ProjectionMatrix]
    cutoffs: list[float]
    verified: bool
    max_violation: float
    lipschitz: float
    delta: float | None = None
    proximity: list[float] = []
    adjacent_distances: list[float] = []

    @model_validator(mode="after")
    def samples_must_align(self):
        if not (len(self.grid) == len(self.projections) == len(self.cutoffs)):
            raise ValueError("one projection and one cut-off per sample are required")
        if any(not r > 0 for r in self.cutoffs):
            raise ValueError("cut-offs must be positive")
        return self


class _Scan(NamedTuple):
    spectrum: SpectralDecomposition
    candidates: np.ndarray
    top: float
    minimal: float | None


def _scan_sample(
    operator: TruncatedOperator,
    projection: ProjectionMatrix,
    delta: float,
    tolerances: Tolerances,
) -> _Scan:
    spectrum = eig(operator, tolerances)
    candidates = candidate_cutoffs(spectrum.eigenvalues, tolerances)
    top = float(np.max(np.abs(spectrum.eigenvalues)))
    for r in candidates:
        distance = opnorm(
            _t_average(spectrum, projection.entries, r, tolerances) - projection.entries
        )
        if distance < delta:
            logger.debug("minimal cut-off %.6g, |T_r - P| = %.3e", r, distance)
            return _Scan(spectrum, candidates, top, float(r))
    return _Scan(spectrum, candidates, top, None)


def _admissible(scan: _Scan, cutoff: float, tolerances: Tolerances) -> bool:
    magnitudes = np.abs(scan.spectrum.eigenvalues)
    return cutoff < scan.top and bool(
        np.all(np.abs(magnitudes - cutoff) > tolerances.gap)
    )


def _works(
    scan: _Scan,
    projection: ProjectionMatrix,
    cutoff: float,
    delta: float,
    tolerances: Tolerances,
) -> bool:
    if not _admissible(scan, cutoff, tolerances):
        return False
    t = _t_average(scan.spectrum, projection.entries, cutoff, tolerances)
    return opnorm(t - projection.entries) < delta


def avoid_spectrum(
    cutoff: float, values: np.ndarray, tolerances: Tolerances
) -> float:
    """Moves a cut-off upwards until +-r lies in the resolvent set."""
    magnitudes = np.abs(values)
    while True:
        close = np.abs(magnitudes - cutoff) <= tolerances.gap
        if not np.any(close):
            return cutoff
        cutoff = float(magnitudes[close].max()) + 2 * tolerances.gap


def _check_divergence(family: SampledFamily, minimal: list[float]):
    """
    Rejects families whose minimal cut-offs run off towards the point at infinity.

    Raises:
        CutoffDivergenceError: If the last finite minimal cut-offs grow at least
                               DIVERGENCE_SLOPE times as fast as the parameter.
    """
    if not family.at_infinity:
        return
    finite = family.finite_indices()
    if len(finite) < DIVERGENCE_RUN:
        return
    run = finite[-DIVERGENCE_RUN:]
    slopes = [
        (minimal[j] - minimal[i]) / (family.grid[j] - family.grid[i])
        for i, j in zip(run, run[1:])
    ]
    if all(s >= DIVERGENCE_SLOPE for s in slopes):
        raise CutoffDivergenceError(
            "cut-off function diverges towards the point at infinity: minimal "
            f"cut-offs {[minimal[i] for i in run]} grow with slopes {slopes}",
            {"cutoffs": [minimal[i] for i in run], "slopes": slopes},
        )


def construct_section(
    family: SampledFamily,
    gss: list[ProjectionMatrix],
    delta: float,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    rank_budget: int | None = None,
    eps: float = 1e-6,
    jobs: int = 1,
) -> SectionCertificate:
    """
    Builds a spectral section close to a generalized spectral section.

    Per sample the smallest gap-midpoint r with |T_r(A, P) - P| < delta is found.
    Every node then gets the smallest r working on its whole star (itself and
    its neighbors), or on itself alone if none does. The averaging operator
    T_x = sum_i u_i(x) T_{r_i}(A_x, P_x) uses weights 1 for the own node and 1/2
    for every star containing x, normalized, and Q_x = 1_[1/2, inf)(T_x). The
    cut-off R_x is the weighted sum of the largest r_l among stars overlapping
    each active star, so it dominates every r_i used at x.

    Args:
        family (SampledFamily): The family, an interval grid or a graph of samples.
        gss (list[ProjectionMatrix]): A generalized spectral section per sample.
        delta (float): Covering tolerance in (0, 1/2).
        tolerances (Tolerances): Numerical thresholds.
        rank_budget (int | None): Budget for the generalized-section check.
        eps (float): Threshold for the generalized-section check.
        jobs (int): Worker threads for the per-sample phase.

    Raises:
        PreconditionError: If delta is outside (0, 1/2) or gss is not generalized.
        ConstructionError: If some sample has no workable cut-off below its
                           largest eigenvalue magnitude.
        CutoffDivergenceError: If the cut-offs diverge towards the point at infinity.

    Returns:
        SectionCertificate: The sections, cut-offs and verification results.
    """
    if not 0 < delta < 0.5:
        raise PreconditionError(
            f"delta must lie in (0, 1/2), got {delta!r}; the rounding gap closes",
            {"delta": delta},
        )
    if len(gss) != len(family):
        raise PreconditionError("one generalized section per sample is required")
    for i, (operator, projection) in enumerate(zip(family.operators, gss)):
        if not is_generalized_section(
            operator, projection, rank_budget, eps, tolerances
        ):
            raise PreconditionError(
                f"projection at sample {i} (x = {family.grid[i]!r}) is not a "
                "generalized spectral section",
                {"sample": i},
            )

    scans = parallel_map(
        lambda item: _scan_sample(item[0], item[1], delta, tolerances),
        list(zip(family.operators, gss)),
        jobs,
    )
    minimal: list[float] = []
    for i, scan in enumerate(scans):
        if scan.minimal is None:
            raise ConstructionError(
                f"GSS too far from spectral data at sample {i} (x = "
                f"{family.grid[i]!r}): no cut-off below {scan.top!r} works",
                {"sample": i, "r_max": scan.top},
            )
        minimal.append(scan.minimal)
    _check_divergence(family, minimal)

    n = len(family)
    supports: list[list[int]] = []
    radii: list[float] = []
    for i in range(n):
        members = [i] + family.neighbors(i)
        pool = sorted({float(r) for j in members for r in scans[j].candidates})
        chosen = None
        for r in pool:
            if r < minimal[i]:
                continue
            if all(_works(scans[j], gss[j], r, delta, tolerances) for j in members):
                chosen = r
                break
        if chosen is None:
            members, chosen = [i], minimal[i]
        supports.append(members)
        radii.append(chosen)
        logger.debug("sample %d: star %s with r = %.6g", i, members, chosen)

    dominating = [
        max(radii[l] for l in range(n) if set(supports[l]) & set(supports[i]))
        for i in range(n)
    ]

    projections: list[ProjectionMatrix] = []
    cutoffs: list[float] = []
    for j in range(n):
        active = [i for i in range(n) if j in supports[i]]
        weights = np.array([1.0 if i == j else 0.5 for i in active])
        weights /= weights.sum()
        p = gss[j].entries
        averaged = sum(
            w * _t_average(scans[j].spectrum, p, radii[i], tolerances)
            for w, i in zip(weights, active)
        )
        projections.append(round_half(averaged, gss[j].tail_type, tolerances))
        cutoff = float(sum(w * dominating[i] for w, i in zip(weights, active)))
        values = scans[j].spectrum.eigenvalues
        cutoffs.append(avoid_spectrum(cutoff, values, tolerances))

    checks = [
        is_spectral_section(op, q, r, tolerances, scan.spectrum)
        for op, q, r, scan in zip(family.operators, projections, cutoffs, scans)
    ]
    pairs = family.adjacent_pairs()
    lipschitz = max(
        (
            abs(cutoffs[j] - cutoffs[i]) / abs(family.grid[j] - family.grid[i])
            for i, j in pairs
            if family.grid[j] != family.grid[i]
        ),
        default=0.0,
    )
    return SectionCertificate(
        label=family.label,
        grid=list(family.grid),
        projections=projections,
        cutoffs=cutoffs,
        verified=all(c.passed for c in checks),
        max_violation=max(c.violation for c in checks),
        lipschitz=lipschitz,
        delta=delta,
        proximity=[opnorm(q.entries - p.entries) for q, p in zip(projections, gss)],
        adjacent_distances=[
            opnorm(projections[i].entries - projections[j].entries) for i, j in pairs
        ],
    )


def verify_certificate(
    family: SampledFamily,
    certificate: SectionCertificate,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> list[SectionCheck]:
    """Runs is_spectral_section at every sample of a certificate."""
    if len(certificate.projections) != len(family):
        raise PreconditionError("certificate and family have different sample counts")
    return [
        is_spectral_section(op, q, r, tolerances)
        for op, q, r in zip(
            family.operators, certificate.projections, certificate.cutoffs
        )
    ]


def relatively_compact_section(
    reference: TruncatedOperator,
    family: SampledFamily,
    delta: float,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    jobs: int = 1,
) -> SectionCertificate:
    """
    Uses chi+(B) of one reference operator as generalized section for every member.

    This is the constant map on a family of relatively compact deformations of B.
    """
    chi = chi_plus(reference, tolerances)
    return construct_section(
        family, [chi] * len(family), delta, tolerances=tolerances, jobs=jobs
    )


def homotopy_projections(
    p0: ProjectionMatrix,
    p1: ProjectionMatrix,
    t: float,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> ProjectionMatrix:
    """
    1_[1/2, inf)((1 - t) P0 + t P1), a path of projections from P0 to P1.

    Args:
        p0 (ProjectionMatrix): Start of the path.
        p1 (ProjectionMatrix): End of the path.
        t (float): Time in [0, 1].
        tolerances (Tolerances): The gap tolerance is the margin below 1.

    Raises:
        PreconditionError: If t is outside [0, 1] or the dimensions differ.
        TailMismatchError: If the tail types differ.
        ProjectionDistanceError: If |P0 - P1| is not below 1.

    Returns:
        ProjectionMatrix: The projection at time t.
    """
    if not 0 <= t <= 1:
        raise PreconditionError(f"t must lie in [0, 1], got {t!r}")
    if p0.dim != p1.dim:
        raise PreconditionError("projections have different dimensions")
    if p0.tail_type != p1.tail_type:
        raise TailMismatchError("projections have different tail types")
    distance = opnorm(p0.entries - p1.entries)
    if distance >= 1 - tolerances.gap:
        raise ProjectionDistanceError(
            f"the homotopy needs |P0 - P1| < 1, got {distance!r}",
            {"distance": distance},
        )
    if t == 0:
        return p0
    if t == 1:
        return p1
    return round_half((1 - t) * p0.entries + t * p1.entries, p0.tail_type, tolerances)


def gamma(
    operator: TruncatedOperator,
    projection: ProjectionMatrix,
    cutoff: float,
    psi: Profile = smoothstep,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """
    The r-trivializing operator agreeing with an r-spectral section.

    With Q = 1 - P, A+ = PAP and A- = QAQ:
    C = -PAQ - QAP + r (P psi(A+ / r) P - Q psi(-A- / r) Q).

    Args:
        operator (TruncatedOperator): The operator A.
        projection (ProjectionMatrix): An r-spectral section P for A.
        cutoff (float): The cut-off r.
        psi (Callable): Continuous profile, 1 on (-inf, 0] and 0 on [1, inf).
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        PreconditionError: If P is not an r-spectral section for A.

    Returns:
        np.ndarray: The Hermitian correction C.
    """
    check = is_spectral_section(operator, projection, cutoff, tolerances)
    if not check.passed:
        raise PreconditionError(
            "projection is not an r-spectral section for the operator",
            check.model_dump(),
        )
    a = operator.entries
    p = projection.entries
    q = np.eye(operator.dim) - p
    c_prime = -(p @ a @ q + q @ a @ p)
    a_plus = p @ a @ p
    a_minus = q @ a @ q
    c_second = cutoff * (
        p @ hermitian_function(a_plus / cutoff, psi) @ p
        - q @ hermitian_function(-a_minus / cutoff, psi) @ q
    )
    return symmetrize(c_prime + c_second)


class TrivializerCheck(BaseModel):
    """
    Measured properties of a candidate r-trivializing operator C.
    """

    passed: bool
    norm: float
    bound: float
    min_abs_eigenvalue: float
    invertibility_threshold: float
    window_defect: float
    agreement_defect: float | None = None


def _window(
    operator: TruncatedOperator,
    cutoff: float,
    tolerances: Tolerances,
    spectrum: SpectralDecomposition | None = None,
) -> np.ndarray:
    return spectral_projection(
        operator, IntervalSpec.open(-cutoff, cutoff), tolerances, spectrum
    ).entries


def is_trivializer(
    operator: TruncatedOperator,
    correction: np.ndarray,
    cutoff: float,
    projection: ProjectionMatrix | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> TrivializerCheck:
    """
    Checks |C| < 2r, invertibility of A + C, the window-range condition and,
    when P is given, chi+(A + C) = P.

    Args:
        operator (TruncatedOperator): The operator A.
        correction (np.ndarray): The Hermitian candidate C.
        cutoff (float): The cut-off r.
        projection (ProjectionMatrix | None): Section C should agree with.
        tolerances (Tolerances): Numerical thresholds.

    Returns:
        TrivializerCheck: The measured quantities and the verdict.
    """
    c = symmetrize(np.asarray(correction, dtype=np.complex128))
    window = _window(operator, cutoff, tolerances)
    window_defect = opnorm((np.eye(operator.dim) - window) @ c)
    shifted = operator.with_entries(operator.entries + c)
    spectrum = eig(shifted, tolerances)
    min_abs = float(np.min(np.abs(spectrum.eigenvalues)))
    threshold = tolerances.invertibility * (1 + operator.norm())
    norm = opnorm(c)

    agreement = None
    if projection is not None and min_abs > threshold:
        chi = chi_plus(shifted, tolerances, spectrum)
        agreement = opnorm(chi.entries - projection.entries)

    agrees = projection is None or (
        agreement is not None and agreement <= tolerances.inclusion
    )
    passed = (
        norm < 2 * cutoff
        and min_abs > threshold
        and window_defect <= tolerances.inclusion
        and agrees
    )
    return TrivializerCheck(
        passed=passed,
        norm=norm,
        bound=2 * cutoff,
        min_abs_eigenvalue=min_abs,
        invertibility_threshold=threshold,
        window_defect=window_defect,
        agreement_defect=agreement,
    )


def tau(
    operator: TruncatedOperator,
    correction: np.ndarray,
    cutoff: float,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[ProjectionMatrix, float]:
    """
    tau(A, C, r) = (chi+(A + C), r) for an r-trivializing operator C.

    Args:
        operator (TruncatedOperator): The operator A.
        correction (np.ndarray): Hermitian C with range inside 1_(-r, r)(A).
        cutoff (float): The cut-off r.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        HermiticityError: If C is not Hermitian.
        PreconditionError: If the range of C leaves the spectral window.
        SingularOperatorError: If A + C is not invertible.
        InvariantViolationError: If the result fails to be an r-spectral section.

    Returns:
        tuple[ProjectionMatrix, float]: The section P and the cut-off r.
    """
    c = np.asarray(correction, dtype=np.complex128)
    defect = hermitian_defect(c)
    if defect > tolerances.hermiticity:
        raise HermiticityError(
            f"correction is not Hermitian, measured defect {defect:.3e}",
            {"defect": defect},
        )
    c = symmetrize(c)
    window = _window(operator, cutoff, tolerances)
    window_defect = opnorm((np.eye(operator.dim) - window) @ c)
    if window_defect > tolerances.inclusion:
        raise PreconditionError(
            "range of the correction is not inside the spectral window (-r, r)",
            {"window_defect": window_defect},
        )
    shifted = operator.with_entries(operator.entries + c)
    spectrum = eig(shifted, tolerances)
    min_abs = float(np.min(np.abs(spectrum.eigenvalues)))
    if min_abs <= tolerances.invertibility * (1 + operator.norm()):
        raise SingularOperatorError(
            f"A + C is not invertible, min |eigenvalue| = {min_abs:.3e}",
            {"min_abs_eigenvalue": min_abs},
        )
    section = chi_plus(shifted, tolerances, spectrum)
    check = is_spectral_section(operator, section, cutoff, tolerances)
    if not check.passed:
        raise InvariantViolationError(
            "chi+(A + C) is not an r-spectral section", check.model_dump()
        )
    return section, cutoff


def mix_trivializers(c0: np.ndarray, c1: np.ndarray, t: float) -> np.ndarray:
    """(1 - t) C0 + t C1"""
    if not 0 <= t <= 1:
        raise PreconditionError(f"t must lie in [0, 1], got {t!r}")
    return (1 - t) * np.asarray(c0) + t * np.asarray(c1)


class TrivializerRecord(BaseModel):
    """
    One r_x-trivializing operator C_x per sample of a certified family.

    Attributes:
        label (str): Label of the family.
        corrections (list[np.ndarray]): C_x per sample.
        cutoffs (list[float]): r_x per sample.
        norm_margin (float): min over x of 2 r_x - |C_x|.
        checks (list[TrivializerCheck]): Per-sample verification.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    label: str = ""
    corrections: list[np.ndarray]
    cutoffs: list[float]
    norm_margin: float
    checks: list[TrivializerCheck] = []

    @field_validator("corrections", mode="before")
    @classmethod
    def corrections_from_json(cls, v):
        return [matrix_from_json(c) for c in v]

    @field_serializer("corrections")
    def corrections_to_json(
        self, corrections: list[np.ndarray]
    ) -> list[dict[str, Any]]:
        return [matrix_to_json(c) for c in corrections]

    @model_validator(mode="after")
    def corrections_must_respect_bound(self):
        """
        Validates |C_x| < 2 r_x at every sample.

        Raises:
            ValueError: If the counts differ or a bound is violated.

        Returns:
            TrivializerRecord: The validated record.
        """
        if len(self.corrections) != len(self.cutoffs):
            raise ValueError("one correction per cut-off is required")
        for c, r in zip(self.corrections, self.cutoffs):
            if not opnorm(c) < 2 * r:
                raise ValueError("every correction must satisfy |C_x| < 2 r_x")
        return self

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def trivializing_family(
    family: SampledFamily,
    certificate: SectionCertificate,
    psi: Profile = smoothstep,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    jobs: int = 1,
) -> TrivializerRecord:
    """
    Applies gamma samplewise to a certified family.

    Args:
        family (SampledFamily): The family.
        certificate (SectionCertificate): Sections and cut-offs for the family.
        psi (Callable): Cut-off profile for gamma.
        tolerances (Tolerances): Numerical thresholds.
        jobs (int): Worker threads.

    Returns:
        TrivializerRecord: Corrections with their verification.
    """
    if len(certificate.projections) != len(family):
        raise PreconditionError("certificate and family have different sample counts")
    samples = list(zip(family.operators, certificate.projections, certificate.cutoffs))

    def trivialize(item):
        operator, projection, cutoff = item
        c = gamma(operator, projection, cutoff, psi, tolerances)
        return c, is_trivializer(operator, c, cutoff, projection, tolerances)

    results = parallel_map(trivialize, samples, jobs)
    corrections = [c for c, _ in results]
    return TrivializerRecord(
        label=family.label,
        corrections=corrections,
        cutoffs=list(certificate.cutoffs),
        norm_margin=min(
            2 * r - opnorm(c) for c, r in zip(corrections, certificate.cutoffs)
        ),
        checks=[check for _, check in results],
    )


class DeformationTable(BaseModel):
    """
    Homotopy from a family to an invertible one.

    slices[k][i] is the operator at time times[k] and sample i.
    """

    label: str = ""
    times: list[float]
    slices: list[list[TruncatedOperator]]
    spectral_radii: list[float]
    endpoint_min_abs: list[float]
    invertible: bool


def compact_weights(dim: int, grading: Grading | None = None) -> np.ndarray:
    """
    K = diag(1/2, 1/3, ..., 1/(dim + 1)), diagonal in the grading eigenbasis if given.
    """
    k = 1.0 / np.arange(2, dim + 2)
    if grading is None:
        return np.diag(k).astype(np.complex128)
    basis = grading_basis(grading)
    return (basis * k) @ basis.conj().T


def deform_to_invertible(
    family: SampledFamily,
    gss: list[ProjectionMatrix],
    grading: Grading | None = None,
    steps: int = 11,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    jobs: int = 1,
) -> DeformationTable:
    """
    Deforms a family with a generalized section to a family of invertibles.

    With T = 2P - 1 and T' = (1 - K) T (1 - K) the path is
    h_t = f^{-1}((1 - t) f(A) + t T'); the t = 0 slice is the input itself.

    Args:
        family (SampledFamily): The family.
        gss (list[ProjectionMatrix]): A generalized spectral section per sample.
        grading (Grading | None): If given, K commutes with it so odd families
                                  stay odd.
        steps (int): Number of equispaced times in [0, 1].
        tolerances (Tolerances): Numerical thresholds.
        jobs (int): Worker threads.

    Raises:
        PreconditionError: If gss is not a generalized section or steps < 2.
        InvariantViolationError: If an intermediate bounded transform reaches
                                 spectral radius 1.

    Returns:
        DeformationTable: Operators per time and sample plus diagnostics.
    """
    if steps < 2:
        raise PreconditionError("at least two time steps are required")
    if len(gss) != len(family):
        raise PreconditionError("one generalized section per sample is required")
    for i, (operator, projection) in enumerate(zip(family.operators, gss)):
        if not is_generalized_section(operator, projection, tolerances=tolerances):
            raise PreconditionError(
                f"projection at sample {i} is not a generalized spectral section",
                {"sample": i},
            )

    times = [float(t) for t in np.linspace(0.0, 1.0, steps)]
    one_minus_k = np.eye(family.dim) - compact_weights(family.dim, grading)

    def deform(item):
        operator, projection = item
        a = bounded_transform(operator, eig(operator, tolerances))
        reflection = 2 * projection.entries - np.eye(operator.dim)
        target = symmetrize(one_minus_k @ reflection @ one_minus_k)
        row, radii = [], []
        for t in times:
            a_t = a if t == 0 else symmetrize((1 - t) * a + t * target)
            radius = float(np.max(np.abs(scipy.linalg.eigvalsh(a_t))))
            if radius >= 1 - tolerances.margin:
                raise InvariantViolationError(
                    f"bounded transform reached spectral radius {radius!r} at t = {t}",
                    {"t": t, "spectral_radius": radius},
                )
            radii.append(radius)
            row.append(
                operator
                if t == 0
                else inverse_bounded_transform(a_t, operator.tail, tolerances)
            )
        endpoint = min_abs_eigenvalue(target)
        return row, radii, endpoint

    results = parallel_map(deform, list(zip(family.operators, gss)), jobs)
    endpoint_min_abs = [endpoint for _, _, endpoint in results]
    return DeformationTable(
        label=family.label,
        times=times,
        slices=[[row[k] for row, _, _ in results] for k in range(len(times))],
        spectral_radii=[
            max(radii[k] for _, radii, _ in results) for k in range(len(times))
        ],
        endpoint_min_abs=endpoint_min_abs,
        invertible=all(m > tolerances.invertibility for m in endpoint_min_abs),
    )


class UnitaryDeformation(BaseModel):
    """
    u = b + i sqrt(1 - b^2) for b = (a + a*) / 2, with its distance to a.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    unitary: np.ndarray
    deformation_norm: float
    bound: float
    unitarity_defect: float

    @field_serializer("unitary")
    def unitary_to_json(self, unitary: np.ndarray) -> dict[str, Any]:
        return matrix_to_json(unitary)


def ess_sa_unitary(
    a: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> UnitaryDeformation:
    """
    Unitary close to a contraction a whose anti-Hermitian part is small.

    Args:
        a (np.ndarray): Square matrix with |a| <= 1.
        tolerances (Tolerances): margin bounds |a| - 1.

    Raises:
        PreconditionError: If |a| > 1 + margin.

    Returns:
        UnitaryDeformation: u, |u - a| and the bound
                            |a - a*| / 2 + |sqrt(1 - b^2)|.
    """
    a = np.asarray(a, dtype=np.complex128)
    norm = opnorm(a)
    if norm > 1 + tolerances.margin:
        raise PreconditionError(
            f"a must be a contraction, |a| = {norm!r}", {"norm": norm}
        )
    b = symmetrize(a)
    root, _ = psd_sqrt(np.eye(len(a)) - b @ b)
    u = b + 1j * root
    return UnitaryDeformation(
        unitary=u,
        deformation_norm=opnorm(u - a),
        bound=opnorm(a - a.conj().T) / 2 + opnorm(root),
        unitarity_defect=float(np.max(np.abs(u.conj().T @ u - np.eye(len(a))))),
    )
