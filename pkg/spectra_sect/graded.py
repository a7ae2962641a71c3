"""
Z2-graded operators and Cl(1) spectral sections.

A grading is a symmetry sigma; odd operators anticommute with it and a Cl(1)
section additionally satisfies sigma P sigma = 1 - P. The symbol helpers at the
end work pointwise on linear symbols d(xi) sampled at finitely many base points.
"""

import logging
from typing import Any, Callable

import numpy as np
import scipy.linalg
import scipy.stats
from pydantic import BaseModel, ConfigDict, field_serializer

from spectra_sect.config import DEFAULT_TOLERANCES, Tolerances
from spectra_sect.errors import (
    HermiticityError,
    IndexObstructionError,
    InvariantViolationError,
    PreconditionError,
    SignatureAmbiguityError,
    SingularOperatorError,
    WConditionError,
)
from spectra_sect.opcore import (
    chi_plus,
    decompose_matrix,
    eig,
    grading_basis,
    interval_mask,
)
from spectra_sect.schema import (
    Grading,
    IntervalSpec,
    OddOperator,
    ProjectionMatrix,
    SampledFamily,
    SymbolSample,
    TailDescriptor,
    TailKind,
    TailType,
    TruncatedOperator,
    matrix_to_json,
)
from spectra_sect.sections import (
    SectionCertificate,
    SectionCheck,
    construct_section,
    gamma,
    is_generalized_section,
    is_spectral_section,
    smoothstep,
)
from spectra_sect.utils import (
    hermitian_defect,
    hermitian_function,
    opnorm,
    psd_sqrt,
    symmetrize,
)

logger = logging.getLogger(__name__)

# Eigenvalues between the kernel threshold and this multiple of it are ambiguous.
AMBIGUITY_FACTOR = 100.0

HAT_TAIL = TailDescriptor(kind=TailKind.MIXED_SIGNED, sign_pattern=[1, -1])


def hat(a: np.ndarray) -> OddOperator:
    """
    The odd self-adjoint operator [[0, A*], [A, 0]] built from a k' x k matrix A.

    Args:
        a (np.ndarray): A rectangular matrix with k' rows and k columns.

    Returns:
        OddOperator: The operator on C^k + C^k' with grading diag(1_k, -1_k').
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
    k_prime, k = a.shape
    entries = np.zeros((k + k_prime, k + k_prime), dtype=np.complex128)
    entries[:k, k:] = a.conj().T
    entries[k:, :k] = a
    return OddOperator(
        base=TruncatedOperator(entries=entries, tail=HAT_TAIL),
        grading=Grading.standard(k, k_prime),
    )


def _kernel_bases(a: np.ndarray, tolerances: Tolerances):
    u, s, vh = scipy.linalg.svd(a)
    threshold = tolerances.invertibility * (1 + (s[0] if s.size else 0.0))
    rank = int(np.sum(s > threshold))
    return vh[rank:].conj().T, u[:, rank:]


def index(a: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES) -> int:
    """
    dim Ker A - dim Ker A* of a rectangular matrix.

    Args:
        a (np.ndarray): A k' x k matrix.
        tolerances (Tolerances): Singular values up to invertibility * (1 + |A|)
                                 count as zero.

    Returns:
        int: The index, k - k' in finite dimensions.
    """
    kernel, cokernel = _kernel_bases(np.atleast_2d(a), tolerances)
    return kernel.shape[1] - cokernel.shape[1]


def _cl1_defect(projection: ProjectionMatrix, grading: Grading) -> float:
    """|sigma P sigma - (1 - P)|"""
    if projection.dim != grading.dim:
        raise PreconditionError("projection and grading dimensions differ")
    p, sigma = projection.entries, grading.sigma
    return opnorm(sigma @ p @ sigma - np.eye(grading.dim) + p)


def nu(
    projection: ProjectionMatrix,
    grading: Grading,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """
    The unitary v with 2P - 1 = [[0, v*], [v, 0]] in the grading eigenbasis.

    Args:
        projection (ProjectionMatrix): P with sigma P sigma = 1 - P.
        grading (Grading): The grading, with equal halves.
        tolerances (Tolerances): inclusion bounds the Cl(1) and unitarity defects.

    Raises:
        PreconditionError: If the halves differ in size or P is not Cl(1).

    Returns:
        np.ndarray: v, mapping the +1 half to the -1 half.
    """
    if grading.plus_dim != grading.minus_dim:
        raise PreconditionError(
            "the graded halves must have equal dimension",
            {"plus_dim": grading.plus_dim, "minus_dim": grading.minus_dim},
        )
    defect = _cl1_defect(projection, grading)
    if defect > tolerances.inclusion:
        raise PreconditionError(
            f"projection is not Cl(1): |sigma P sigma - (1 - P)| = {defect:.3e}",
            {"anticommutator": defect},
        )
    basis = grading_basis(grading)
    k = grading.plus_dim
    reflection = 2 * projection.entries - np.eye(grading.dim)
    reflection = basis.conj().T @ reflection @ basis
    v = reflection[k:, :k]
    unitarity = opnorm(v.conj().T @ v - np.eye(k))
    if unitarity > tolerances.inclusion:
        raise InvariantViolationError(
            f"off-diagonal block is not unitary, defect {unitarity:.3e}",
            {"unitarity_defect": unitarity},
        )
    return v


def nu_inverse(
    v: np.ndarray,
    grading: Grading,
    tail_type: TailType = TailType.POSITIVE_PART,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> ProjectionMatrix:
    """
    The Cl(1) projection P with 2P - 1 = [[0, v*], [v, 0]] in the grading eigenbasis.

    Raises:
        PreconditionError: If v is not a unitary of the size of the graded halves.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.complex128))
    k = grading.plus_dim
    if grading.minus_dim != k or v.shape != (k, k):
        raise PreconditionError(
            f"v must be a {k} x {k} matrix between equal graded halves",
            {"shape": list(v.shape)},
        )
    unitarity = opnorm(v.conj().T @ v - np.eye(k))
    if unitarity > tolerances.inclusion:
        raise PreconditionError(
            f"v is not unitary, defect {unitarity:.3e}", {"unitarity_defect": unitarity}
        )
    reflection = np.zeros((2 * k, 2 * k), dtype=np.complex128)
    reflection[:k, k:] = v.conj().T
    reflection[k:, :k] = v
    basis = grading_basis(grading)
    entries = basis @ ((reflection + np.eye(2 * k)) / 2) @ basis.conj().T
    return ProjectionMatrix(
        entries=symmetrize(entries),
        tail_type=tail_type,
        tolerance=tolerances.idempotency,
    )


def even_bump(cutoff: float) -> Callable[[np.ndarray], np.ndarray]:
    """psi(t) = r max(0, 1 - (t / r)^2), even and supported in [-r, r]."""

    def psi(t):
        t = np.asarray(t, dtype=np.float64)
        return cutoff * np.maximum(0.0, 1.0 - (t / cutoff) ** 2)

    return psi


def odd_trivializer(
    operator: OddOperator,
    cutoff: float,
    psi_even: Callable[[np.ndarray], np.ndarray] | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[np.ndarray, ProjectionMatrix]:
    """
    The trivializer C = sigma psi(A) of an odd operator.

    Since psi(A) is even, (A + C)^2 = A^2 + psi(A)^2, so A + C is invertible as
    soon as psi does not vanish on the kernel of A.

    Args:
        operator (OddOperator): The odd operator A.
        cutoff (float): The cut-off r.
        psi_even (Callable | None): Even profile supported in [-r, r] with
                                    psi(0) != 0, even_bump(r) if None.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        PreconditionError: If lambda^2 + psi(lambda)^2 < 1e-12 at some eigenvalue.
        InvariantViolationError: If chi+(A + C) is not an r-spectral section.

    Returns:
        tuple[np.ndarray, ProjectionMatrix]: C and P = chi+(A + C).
    """
    if not cutoff > 0:
        raise PreconditionError(f"cut-off must be positive, got {cutoff!r}")
    psi = psi_even or even_bump(cutoff)
    spectrum = eig(operator.base, tolerances)
    values = spectrum.eigenvalues
    square = values**2 + psi(values) ** 2
    if np.min(square) < 1e-12:
        worst = float(values[np.argmin(square)])
        raise PreconditionError(
            f"profile too small at the kernel mode {worst!r}: A + C stays singular",
            {"eigenvalue": worst, "square": float(np.min(square))},
        )
    correction = symmetrize(operator.sigma @ spectrum.apply(psi(values)))
    shifted = operator.base.with_entries(operator.entries + correction)
    projection = chi_plus(shifted, tolerances)
    check = is_spectral_section(operator.base, projection, cutoff, tolerances, spectrum)
    if not check.passed:
        raise InvariantViolationError(
            "chi+(A + sigma psi(A)) is not an r-spectral section", check.model_dump()
        )
    return correction, projection


def _form_signature(vectors: np.ndarray, sigma: np.ndarray) -> int:
    if vectors.shape[1] == 0:
        return 0
    form = scipy.linalg.eigvalsh(symmetrize(vectors.conj().T @ sigma @ vectors))
    return int(np.sum(form > 0)) - int(np.sum(form < 0))


def kernel_signature(
    operator: OddOperator,
    cutoff: float | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> int:
    """
    Signature of <xi, sigma xi> on the kernel of an odd operator.

    When a cut-off r is given the signature on the range of 1_(-r, r)(A) is
    computed as well and must agree, since sigma pairs the eigenspaces of
    lambda and -lambda.

    Args:
        operator (OddOperator): The odd operator A.
        cutoff (float | None): Optional window half-width r.
        tolerances (Tolerances): invertibility * (1 + |A|) is the kernel threshold.

    Raises:
        SignatureAmbiguityError: If an eigenvalue lies between the kernel threshold
                                 and 100 times that threshold.
        InvariantViolationError: If kernel and window signatures differ.

    Returns:
        int: Number of positive minus number of negative directions.
    """
    spectrum = eig(operator.base, tolerances)
    magnitudes = np.abs(spectrum.eigenvalues)
    threshold = tolerances.invertibility * (1 + operator.base.norm())
    ambiguous = (magnitudes > threshold) & (magnitudes <= AMBIGUITY_FACTOR * threshold)
    if np.any(ambiguous):
        raise SignatureAmbiguityError(
            "eigenvalue straddles the kernel threshold, kernel dimension is ambiguous",
            {
                "eigenvalues": spectrum.eigenvalues[ambiguous].tolist(),
                "threshold": threshold,
            },
        )
    signature = _form_signature(
        spectrum.eigenvectors[:, magnitudes <= threshold], operator.sigma
    )
    if cutoff is not None:
        window = interval_mask(
            spectrum.eigenvalues, IntervalSpec.open(-cutoff, cutoff), tolerances
        )
        window_signature = _form_signature(
            spectrum.eigenvectors[:, window], operator.sigma
        )
        if window_signature != signature:
            raise InvariantViolationError(
                "kernel and window signatures differ",
                {"kernel": signature, "window": window_signature, "cutoff": cutoff},
            )
    return signature


class Cl1SectionCheck(BaseModel):
    """
    A spectral section check combined with the Cl(1) identity sigma P sigma = 1 - P.
    """

    passed: bool
    section: SectionCheck
    anticommutation_defect: float

    def __bool__(self) -> bool:
        return self.passed


def is_cl1_section(
    operator: OddOperator,
    projection: ProjectionMatrix,
    cutoff: float,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> Cl1SectionCheck:
    """
    Checks that P is an r-spectral section for A and that sigma P sigma = 1 - P.

    Args:
        operator (OddOperator): The odd operator A.
        projection (ProjectionMatrix): The candidate P.
        cutoff (float): The cut-off r.
        tolerances (Tolerances): inclusion bounds the Cl(1) defect.

    Returns:
        Cl1SectionCheck: The combined verdict.
    """
    section = is_spectral_section(operator.base, projection, cutoff, tolerances)
    defect = _cl1_defect(projection, operator.grading)
    return Cl1SectionCheck(
        passed=section.passed and defect <= tolerances.inclusion,
        section=section,
        anticommutation_defect=defect,
    )


def odd_gamma(
    operator: OddOperator,
    projection: ProjectionMatrix,
    cutoff: float,
    psi: Callable[[np.ndarray], np.ndarray] = smoothstep,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """
    gamma applied to odd data with a Cl(1) section, which yields an odd C.

    Raises:
        PreconditionError: If P is not a Cl(1) r-spectral section for A.
        InvariantViolationError: If the result fails to anticommute with sigma.
    """
    check = is_cl1_section(operator, projection, cutoff, tolerances)
    if not check.passed:
        raise PreconditionError(
            "projection is not a Cl(1) r-spectral section", check.model_dump()
        )
    correction = gamma(operator.base, projection, cutoff, psi, tolerances)
    defect = operator.grading.anticommutator(correction)
    if defect > tolerances.inclusion * (1 + operator.base.norm()):
        raise InvariantViolationError(
            f"correction is not odd, |sigma C + C sigma| = {defect:.3e}",
            {"anticommutator": defect},
        )
    return correction


def cl1_kernel_section(
    a: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> ProjectionMatrix:
    """
    A Cl(1) projection for hat(A) built from a unitary between Ker A and Ker A*.

    P = P0 + 1_(0, inf)(hat(A)), where P0 projects onto the span of the vectors
    (b0_i + b1_i) / sqrt(2) for orthonormal kernel bases b0 of A and b1 of A*.
    It is a spectral section for every cut-off above the kernel threshold.

    Args:
        a (np.ndarray): A k' x k matrix.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        IndexObstructionError: If dim Ker A != dim Ker A*, so no Cl(1) section
                               exists.

    Returns:
        ProjectionMatrix: P with sigma P sigma = 1 - P.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
    k_prime, k = a.shape
    kernel, cokernel = _kernel_bases(a, tolerances)
    if kernel.shape[1] != cokernel.shape[1]:
        raise IndexObstructionError(
            f"the index of A is {kernel.shape[1] - cokernel.shape[1]}, not 0: "
            "hat(A) admits no Cl(1) spectral section",
            {"kernel": kernel.shape[1], "cokernel": cokernel.shape[1]},
        )
    operator = hat(a)
    spectrum = eig(operator.base, tolerances)
    threshold = tolerances.invertibility * (1 + operator.base.norm())
    positive = spectrum.project(spectrum.eigenvalues > threshold)
    paired = np.concatenate([kernel, cokernel], axis=0) / np.sqrt(2)
    entries = positive + paired @ paired.conj().T
    return ProjectionMatrix(
        entries=symmetrize(entries),
        tail_type=TailType.POSITIVE_PART,
        tolerance=tolerances.idempotency,
    )


class NonSelfAdjointCorrection(BaseModel):
    """
    A correction C of a rectangular A with A + C invertible.

    Attributes:
        correction (np.ndarray): The k' x k matrix C.
        cutoff (float): The cut-off r on the scale of A A*.
        min_singular_value (float): Smallest singular value of A + C.
        range_defect (float): |(1 - 1_[0, r)(A A*)) C|.
        corange_defect (float): |C (1 - 1_[0, r)(A* A))|.
        passed (bool): Whether A + C is invertible and both defects are small.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    correction: np.ndarray
    cutoff: float
    min_singular_value: float
    range_defect: float
    corange_defect: float
    passed: bool

    @field_serializer("correction")
    def correction_to_json(self, correction: np.ndarray) -> dict[str, Any]:
        return matrix_to_json(correction)


def _lower_window(matrix: np.ndarray, cutoff: float, tolerances: Tolerances):
    spectrum = decompose_matrix(matrix, tolerances)
    interval = IntervalSpec(upper=cutoff, closed_upper=False)
    return spectrum.project(interval_mask(spectrum.eigenvalues, interval, tolerances))


def nonsa_correction(
    a: np.ndarray,
    cutoff: float,
    psi: Callable[[np.ndarray], np.ndarray] = smoothstep,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> NonSelfAdjointCorrection:
    """
    Makes a rectangular A invertible by a correction living in its small
    singular directions.

    The correction is the lower-left block of odd_gamma applied to hat(A), the
    section from cl1_kernel_section and the cut-off sqrt(r), so that the window
    of hat(A) matches 1_[0, r) of A A* and A* A.

    Args:
        a (np.ndarray): A k' x k matrix.
        cutoff (float): The cut-off r > 0.
        psi (Callable): Profile for gamma.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        IndexObstructionError: If the index of A does not vanish.

    Returns:
        NonSelfAdjointCorrection: C with its verification.
    """
    if not cutoff > 0:
        raise PreconditionError(f"cut-off must be positive, got {cutoff!r}")
    a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
    k = a.shape[1]
    projection = cl1_kernel_section(a, tolerances)
    odd = odd_gamma(hat(a), projection, float(np.sqrt(cutoff)), psi, tolerances)
    correction = np.array(odd[k:, :k])

    shifted = a + correction
    min_singular = float(scipy.linalg.svdvals(shifted)[-1])
    range_defect = opnorm(
        (np.eye(a.shape[0]) - _lower_window(a @ a.conj().T, cutoff, tolerances))
        @ correction
    )
    corange_defect = opnorm(
        correction
        @ (np.eye(k) - _lower_window(a.conj().T @ a, cutoff, tolerances))
    )
    threshold = tolerances.invertibility * (1 + opnorm(a))
    return NonSelfAdjointCorrection(
        correction=correction,
        cutoff=cutoff,
        min_singular_value=min_singular,
        range_defect=range_defect,
        corange_defect=corange_defect,
        passed=(
            min_singular > threshold
            and range_defect <= tolerances.inclusion
            and corange_defect <= tolerances.inclusion
        ),
    )


def construct_cl1_section(
    family: SampledFamily,
    grading: Grading,
    gss: list[ProjectionMatrix],
    delta: float,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    jobs: int = 1,
) -> SectionCertificate:
    """
    Runs construct_section on odd data and asserts that the sections are Cl(1).

    Averaging and rounding commute with conjugation by sigma, so odd operators
    with Cl(1) generalized sections produce Cl(1) sections.

    Raises:
        PreconditionError: If an operator is not odd or a gss is not Cl(1).
        InvariantViolationError: If some constructed section is not Cl(1).
    """
    for i, (operator, projection) in enumerate(zip(family.operators, gss)):
        odd_defect = grading.anticommutator(operator.entries)
        if odd_defect > 1e-8 * (1 + operator.norm()):
            raise PreconditionError(
                f"operator at sample {i} is not odd", {"anticommutator": odd_defect}
            )
        cl1_defect = _cl1_defect(projection, grading)
        if cl1_defect > tolerances.inclusion:
            raise PreconditionError(
                f"generalized section at sample {i} is not Cl(1)",
                {"anticommutation_defect": cl1_defect},
            )

    certificate = construct_section(
        family, gss, delta, tolerances=tolerances, jobs=jobs
    )
    for i, projection in enumerate(certificate.projections):
        defect = _cl1_defect(projection, grading)
        if defect > tolerances.inclusion:
            raise InvariantViolationError(
                f"constructed section at sample {i} is not Cl(1)",
                {"anticommutation_defect": defect},
            )
    return certificate


class SupersymmetricPair(BaseModel):
    """
    The grading sigma = J |J|^{-1} and the odd part of a Hermitian operator.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grading: Grading
    odd_part: np.ndarray
    correction_norm: float

    @field_serializer("odd_part")
    def odd_part_to_json(self, odd_part: np.ndarray) -> dict[str, Any]:
        return matrix_to_json(odd_part)


def _check_hermitian(matrix: np.ndarray, name: str, tolerances: Tolerances):
    defect = hermitian_defect(matrix)
    if defect > tolerances.hermiticity:
        raise HermiticityError(
            f"{name} is not Hermitian, measured defect {defect:.3e}",
            {"defect": defect},
        )


def supersymmetrize(
    j: np.ndarray,
    a_tilde: np.ndarray,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> SupersymmetricPair:
    """
    Builds sigma = J (J^2)^{-1/2} and the odd part (A - sigma A sigma) / 2.

    Args:
        j (np.ndarray): Invertible Hermitian matrix.
        a_tilde (np.ndarray): Hermitian matrix of the same size.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        HermiticityError: If J or A is not Hermitian.
        SingularOperatorError: If min |eigenvalue| of J is at most 1e-10.

    Returns:
        SupersymmetricPair: sigma, the odd part and |odd part - A|.
    """
    j = np.asarray(j, dtype=np.complex128)
    a_tilde = np.asarray(a_tilde, dtype=np.complex128)
    _check_hermitian(j, "J", tolerances)
    _check_hermitian(a_tilde, "A", tolerances)
    if j.shape != a_tilde.shape:
        raise PreconditionError("J and A must have the same shape")
    spectrum = decompose_matrix(j, tolerances)
    smallest = float(np.min(np.abs(spectrum.eigenvalues)))
    if smallest <= 1e-10:
        raise SingularOperatorError(
            f"J is singular, min |eigenvalue| = {smallest:.3e}",
            {"min_abs_eigenvalue": smallest},
        )
    sigma = symmetrize(spectrum.apply(np.sign(spectrum.eigenvalues)))
    odd_part = symmetrize((a_tilde - sigma @ a_tilde @ sigma) / 2)
    return SupersymmetricPair(
        grading=Grading(sigma=sigma),
        odd_part=odd_part,
        correction_norm=opnorm(odd_part - a_tilde),
    )


class PointFactorization(BaseModel):
    """
    W-factorization data at one base point.

    Attributes:
        tag (str): Base point tag.
        automorphism (np.ndarray): I = sqrt(S / 2), positive definite.
        w_residual (float): Worst |d(xi) d(eta)* + d(eta) d(xi)*| over sampled
                            orthogonal unit pairs.
        s_deviation (float): Largest deviation of S(eta) from its mean.
        dirac_defect (float): Worst |(I^-1 d(xi))(I^-1 d(xi))* - |xi|^2|.
        clipped (float): Negative eigenvalue mass clipped from S / 2.
        passed (bool): Whether S is constant and the Dirac identity holds.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tag: str
    automorphism: np.ndarray
    w_residual: float
    s_deviation: float
    dirac_defect: float
    clipped: float
    passed: bool

    @field_serializer("automorphism")
    def automorphism_to_json(self, automorphism: np.ndarray) -> dict[str, Any]:
        return matrix_to_json(automorphism)


class FactorizationReport(BaseModel):
    points: list[PointFactorization]
    passed: bool


def _sampled_directions(n_vars: int, seed: int, rotations: int):
    """Unit vectors and orthogonal pairs: coordinate ones plus seeded rotations."""
    identity = np.eye(n_vars)
    units = [identity[i] for i in range(n_vars)]
    pairs = [
        (identity[i], identity[j]) for i in range(n_vars) for j in range(i + 1, n_vars)
    ]
    if n_vars >= 2 and rotations > 0:
        frames = scipy.stats.ortho_group.rvs(
            dim=n_vars, size=rotations, random_state=seed
        )
        for frame in np.reshape(frames, (rotations, n_vars, n_vars)):
            units.append(frame[:, 0])
            pairs.append((frame[:, 0], frame[:, 1]))
    return units, pairs


def factor_w_symbol(
    symbol: SymbolSample,
    seed: int = 0,
    rotations: int = 50,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> FactorizationReport:
    """
    Factors a symbol satisfying the W condition as d = I d' with d' of Dirac type.

    At every base point the W condition d(xi) d(eta)* + d(eta) d(xi)* = 0 is
    checked on coordinate pairs and on `rotations` seeded random orthonormal
    pairs, S(eta) = 2 d(eta) d(eta)* / |eta|^2 is averaged over the sampled unit
    vectors and I is the positive square root of S / 2.

    Args:
        symbol (SymbolSample): The sampled linear symbol.
        seed (int): Seed of the random rotations.
        rotations (int): Number of random orthonormal frames.
        tolerances (Tolerances): inclusion, relative to 1 + max |d(e_j)|^2, bounds
                                 the W residual and the Dirac defect.

    Raises:
        WConditionError: If the W condition fails or S is not positive definite.

    Returns:
        FactorizationReport: Per-point automorphisms and residuals.
    """
    units, pairs = _sampled_directions(symbol.n_vars, seed, rotations)
    points = []
    for p, tag in enumerate(symbol.tags):
        scale = 1.0 + max(opnorm(c) ** 2 for c in symbol.coefficients[p])
        tol = tolerances.inclusion * scale

        w_residual, worst = 0.0, None
        for xi, eta in pairs:
            d_xi, d_eta = symbol.evaluate(p, xi), symbol.evaluate(p, eta)
            residual = opnorm(d_xi @ d_eta.conj().T + d_eta @ d_xi.conj().T)
            if residual > w_residual:
                w_residual, worst = residual, (xi.tolist(), eta.tolist())
        if w_residual > tol:
            raise WConditionError(
                f"W condition violated at base point {tag!r}, residual "
                f"{w_residual:.3e} on the pair {worst}",
                {"tag": tag, "residual": w_residual, "pair": worst},
            )

        samples = []
        for eta in units:
            d_eta = symbol.evaluate(p, eta)
            samples.append(2 * d_eta @ d_eta.conj().T / float(eta @ eta))
        s_mean = symmetrize(sum(samples) / len(samples))
        s_deviation = max(opnorm(s - s_mean) for s in samples)
        smallest = float(scipy.linalg.eigvalsh(s_mean)[0])
        if smallest <= tol:
            raise WConditionError(
                f"S is not positive definite at base point {tag!r}, "
                f"min eigenvalue {smallest:.3e}",
                {"tag": tag, "min_eigenvalue": smallest},
            )
        automorphism, clipped = psd_sqrt(s_mean / 2)
        inverse = scipy.linalg.inv(automorphism)
        dirac_defect = 0.0
        for eta in units:
            normalized = inverse @ symbol.evaluate(p, eta)
            gram = normalized @ normalized.conj().T
            dirac_defect = max(
                dirac_defect, opnorm(gram - float(eta @ eta) * np.eye(len(gram)))
            )
        logger.debug("base point %s: W residual %.2e", tag, w_residual)
        points.append(
            PointFactorization(
                tag=tag,
                automorphism=automorphism,
                w_residual=w_residual,
                s_deviation=s_deviation,
                dirac_defect=dirac_defect,
                clipped=clipped,
                passed=s_deviation <= tol and dirac_defect <= tolerances.inclusion,
            )
        )
    return FactorizationReport(
        points=points, passed=all(point.passed for point in points)
    )


class SigmaTrickResult(BaseModel):
    """
    A' = (A - sigma A sigma) / 2 + sigma, with (A')^2 = odd part^2 + 1.
    """

    operator: TruncatedOperator
    min_square_eigenvalue: float
    generalized_section: bool


def sigma_trick(
    operator: TruncatedOperator,
    grading: Grading,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> SigmaTrickResult:
    """
    Replaces A by its odd part plus sigma, an invertible operator.

    Args:
        operator (TruncatedOperator): The operator A.
        grading (Grading): A symmetry sigma.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        PreconditionError: If the dimensions differ.
        InvariantViolationError: If min eig((A')^2) < 1 - 1e-8.

    Returns:
        SigmaTrickResult: A', the bound on its square and whether chi+(A') is a
                          generalized spectral section for A.
    """
    if operator.dim != grading.dim:
        raise PreconditionError("operator and grading dimensions differ")
    sigma = grading.sigma
    a = operator.entries
    odd_part = (a - sigma @ a @ sigma) / 2
    shifted = operator.with_entries(symmetrize(odd_part + sigma))
    entries = shifted.entries
    smallest = float(scipy.linalg.eigvalsh(symmetrize(entries @ entries))[0])
    if smallest < 1 - 1e-8:
        raise InvariantViolationError(
            f"(A')^2 has eigenvalue {smallest!r} below 1",
            {"min_square_eigenvalue": smallest},
        )
    return SigmaTrickResult(
        operator=shifted,
        min_square_eigenvalue=smallest,
        generalized_section=is_generalized_section(
            operator, chi_plus(shifted, tolerances), tolerances=tolerances
        ),
    )


class OddProjection(BaseModel):
    """
    Output of ess_odd_projection.

    Attributes:
        projection (ProjectionMatrix): P = (u + 1) / 2.
        symmetry (np.ndarray): u = b + sigma sqrt(1 - b^2).
        odd_part (np.ndarray): b = (a - sigma a sigma) / 2.
        odd_defect (float): |sigma b + b sigma|.
        symmetry_defect (float): |u^2 - 1|.
        deformation_norm (float): |P - (a + 1) / 2|.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    projection: ProjectionMatrix
    symmetry: np.ndarray
    odd_part: np.ndarray
    odd_defect: float
    symmetry_defect: float
    deformation_norm: float

    @field_serializer("symmetry", "odd_part")
    def matrices_to_json(self, matrix: np.ndarray) -> dict[str, Any]:
        return matrix_to_json(matrix)


def ess_odd_projection(
    a: np.ndarray,
    grading: Grading,
    tail_type: TailType = TailType.POSITIVE_PART,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> OddProjection:
    """
    Projection built from the odd part of a Hermitian contraction.

    Args:
        a (np.ndarray): Hermitian matrix with |a| <= 1.
        grading (Grading): The grading sigma.
        tail_type (TailType): Tail type attached to the projection.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        HermiticityError: If a is not Hermitian.
        PreconditionError: If |a| > 1 + margin or the dimensions differ.

    Returns:
        OddProjection: P, u, b and the measured defects.
    """
    a = np.asarray(a, dtype=np.complex128)
    _check_hermitian(a, "a", tolerances)
    if a.shape != grading.sigma.shape:
        raise PreconditionError("a and the grading have different dimensions")
    norm = opnorm(a)
    if norm > 1 + tolerances.margin:
        raise PreconditionError(
            f"a must be a contraction, |a| = {norm!r}", {"norm": norm}
        )
    sigma = grading.sigma
    identity = np.eye(len(a))
    b = symmetrize((a - sigma @ a @ sigma) / 2)
    root = hermitian_function(
        identity - b @ b, lambda t: np.sqrt(np.maximum(t, 0.0))
    )
    u = symmetrize(b + sigma @ root)
    projection = ProjectionMatrix(
        entries=symmetrize((u + identity) / 2),
        tail_type=tail_type,
        tolerance=tolerances.idempotency,
    )
    return OddProjection(
        projection=projection,
        symmetry=u,
        odd_part=b,
        odd_defect=grading.anticommutator(b),
        symmetry_defect=opnorm(u @ u - identity),
        deformation_norm=opnorm(projection.entries - (a + identity) / 2),
    )
