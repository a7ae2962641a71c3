"""
Functional calculus of truncated self-adjoint operators.

Every other module builds on the primitives here: the canonical eigendecomposition,
the bounded transform f(x) = x / sqrt(1 + x^2) and its inverse, the Cayley
transform, spectral projections and the Riesz and graph distances.
"""

import logging
import math
from typing import Callable

import numpy as np
import scipy.linalg

from spectra_sect.config import DEFAULT_TOLERANCES, Tolerances
from spectra_sect.errors import (
    EndpointCollisionError,
    HermiticityError,
    InvariantViolationError,
    PreconditionError,
    SpectralRadiusError,
    TailMismatchError,
)
from spectra_sect.schema import (
    Grading,
    IntervalSpec,
    ProjectionMatrix,
    SpectralDecomposition,
    TailDescriptor,
    TailType,
    TruncatedOperator,
)
from spectra_sect.utils import hermitian_defect, opnorm, symmetrize

logger = logging.getLogger(__name__)

# Residual norm of a Gram-Schmidt candidate that still counts as a new direction.
_PIVOT_THRESHOLD = 1e-6
_PHASE_THRESHOLD = 1e-8
_ARC_TOLERANCE = 1e-9


def bounded_scalar(x):
    """f(x) = x / sqrt(1 + x^2)"""
    x = np.asarray(x, dtype=np.float64)
    return x / np.sqrt(1.0 + x * x)


def inverse_bounded_scalar(a):
    a = np.asarray(a, dtype=np.float64)
    return a / np.sqrt(1.0 - a * a)


def cayley_scalar(x):
    """kappa(x) = (x - i) / (x + i)"""
    x = np.asarray(x, dtype=np.float64)
    return (x - 1j) / (x + 1j)


def kat(a):
    """
    The map a -> (a - i sqrt(1 - a^2))^2 from [-1, 1] onto the unit circle.

    It satisfies kappa = kat o f.

    Args:
        a (float | np.ndarray): Values in [-1, 1].

    Raises:
        PreconditionError: If some |a| exceeds 1.

    Returns:
        complex | np.ndarray: Points on the unit circle.
    """
    values = np.asarray(a, dtype=np.float64)
    if np.any(np.abs(values) > 1 + 1e-12):
        raise PreconditionError(
            "kat is defined on [-1, 1]",
            {"max_abs": float(np.max(np.abs(values)))},
        )
    root = np.sqrt(np.clip(1.0 - values * values, 0.0, None))
    result = (values - 1j * root) ** 2
    return complex(result) if result.ndim == 0 else result


def phi(z):
    """
    phi(e^{it}) = cos(t / 2) on the lower arc t in [-pi, 0].

    Args:
        z (complex | np.ndarray): Points of the lower unit half-circle.

    Raises:
        PreconditionError: If a point is off the arc by more than 1e-9.

    Returns:
        float | np.ndarray: Values in [0, 1].
    """
    points = np.asarray(z, dtype=np.complex128)
    radial = np.abs(np.abs(points) - 1.0)
    if np.any(radial > _ARC_TOLERANCE) or np.any(points.imag > _ARC_TOLERANCE):
        raise PreconditionError(
            "phi is defined on the lower unit arc",
            {
                "radial_defect": float(np.max(radial)),
                "max_imag": float(np.max(points.imag)),
            },
        )
    angle = -np.abs(np.angle(points))
    result = np.cos(angle / 2)
    return float(result) if result.ndim == 0 else result


def _canonical_basis(block: np.ndarray) -> np.ndarray:
    """
    Basis of span(block) obtained by Gram-Schmidt on its projections of e_0, e_1, ...

    The result depends only on the subspace, not on the basis the solver returned.
    """
    n, m = block.shape
    proj = block @ block.conj().T
    basis: list[np.ndarray] = []
    for k in range(n):
        w = proj[:, k].copy()
        # two passes keep the basis orthonormal for pivots near the threshold
        for _ in range(2):
            for b in basis:
                w -= b * (b.conj() @ w)
        norm = np.linalg.norm(w)
        if norm > _PIVOT_THRESHOLD:
            basis.append(w / norm)
            if len(basis) == m:
                break
    if len(basis) < m:
        return block
    return np.column_stack(basis)


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    for j in range(vectors.shape[1]):
        column = vectors[:, j]
        pivot = int(np.argmax(np.abs(column) > _PHASE_THRESHOLD))
        c = column[pivot]
        vectors[:, j] = column * (np.conj(c) / abs(c))
    return vectors


def decompose_matrix(
    matrix: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> SpectralDecomposition:
    """
    Canonical eigendecomposition of a Hermitian matrix.

    Eigenvalues are ascending. Inside a cluster of eigenvalues closer than the gap
    tolerance (relative to 1 + |A|) the basis is re-orthonormalized from the
    coordinate vectors, then every eigenvector is rotated so its first nonzero
    component is real positive.

    Args:
        matrix (np.ndarray): A Hermitian matrix.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        InvariantViolationError: If the reconstruction residual exceeds 1e-8 (1 + |A|).

    Returns:
        SpectralDecomposition: The canonical decomposition.
    """
    matrix = symmetrize(np.asarray(matrix, dtype=np.complex128))
    values, vectors = scipy.linalg.eigh(matrix)
    vectors = np.array(vectors, dtype=np.complex128)
    scale = 1.0 + float(np.max(np.abs(values)))

    start = 0
    for stop in range(1, len(values) + 1):
        split = stop == len(values)
        if not split:
            split = values[stop] - values[stop - 1] > tolerances.gap * scale
        if split:
            if stop - start > 1:
                logger.debug("canonicalizing eigenspace of size %d", stop - start)
                vectors[:, start:stop] = _canonical_basis(vectors[:, start:stop])
            start = stop
    vectors = _fix_phases(vectors)

    residual = float(np.max(np.abs(matrix - (vectors * values) @ vectors.conj().T)))
    if residual > 1e-8 * scale:
        raise InvariantViolationError(
            "eigendecomposition does not reconstruct the input",
            {"residual": residual},
        )
    return SpectralDecomposition(eigenvalues=values, eigenvectors=vectors)


def eig(
    operator: TruncatedOperator, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> SpectralDecomposition:
    """
    Canonical eigendecomposition of a truncated operator.

    Args:
        operator (TruncatedOperator): The operator.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        HermiticityError: If the entries are not Hermitian within tolerance.

    Returns:
        SpectralDecomposition: Ascending eigenvalues with the canonical eigenbasis.
    """
    defect = hermitian_defect(operator.entries)
    if defect > tolerances.hermiticity:
        raise HermiticityError(
            f"operator is not Hermitian, measured defect {defect:.3e}",
            {"defect": defect},
        )
    return decompose_matrix(operator.entries, tolerances)


def functional_calculus(
    operator: TruncatedOperator,
    fn: Callable[[np.ndarray], np.ndarray],
    spectrum: SpectralDecomposition | None = None,
) -> np.ndarray:
    """
    U fn(lambda) U* for a vectorized scalar function fn.

    Args:
        operator (TruncatedOperator): The operator.
        fn (Callable): Scalar function applied to the eigenvalues.
        spectrum (SpectralDecomposition | None): Precomputed decomposition.

    Returns:
        np.ndarray: The matrix fn(A).
    """
    if spectrum is None:
        spectrum = eig(operator)
    return spectrum.apply(fn(spectrum.eigenvalues))


def bounded_transform(
    operator: TruncatedOperator, spectrum: SpectralDecomposition | None = None
) -> np.ndarray:
    return functional_calculus(operator, bounded_scalar, spectrum)


def inverse_bounded_transform(
    a: np.ndarray,
    tail: TailDescriptor | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> TruncatedOperator:
    """
    f^{-1}(a) = a (1 - a^2)^{-1/2} for a Hermitian contraction a.

    Args:
        a (np.ndarray): Hermitian matrix with spectral radius below 1.
        tail (TailDescriptor | None): Tail of the resulting operator.
        tolerances (Tolerances): Numerical thresholds, margin bounds the radius.

    Raises:
        HermiticityError: If a is not Hermitian.
        SpectralRadiusError: If some eigenvalue has |lambda| >= 1 - margin, so that
                             1 - a^2 is not injective.

    Returns:
        TruncatedOperator: The operator whose bounded transform is a.
    """
    a = np.asarray(a, dtype=np.complex128)
    defect = hermitian_defect(a)
    if defect > tolerances.hermiticity:
        raise HermiticityError(
            f"matrix is not Hermitian, measured defect {defect:.3e}",
            {"defect": defect},
        )
    spectrum = decompose_matrix(a, tolerances)
    radius = float(np.max(np.abs(spectrum.eigenvalues)))
    if radius >= 1 - tolerances.margin:
        raise SpectralRadiusError(
            f"spectral radius {radius!r} is not below 1 - {tolerances.margin:.0e}: "
            "1 - a^2 is not injective",
            {"spectral_radius": radius},
        )
    entries = spectrum.apply(inverse_bounded_scalar(spectrum.eigenvalues))
    return TruncatedOperator(entries=entries, tail=tail or TailDescriptor())


def cayley(
    operator: TruncatedOperator, spectrum: SpectralDecomposition | None = None
) -> np.ndarray:
    """kappa(A) = (A - i)(A + i)^{-1}, a unitary matrix."""
    return functional_calculus(operator, cayley_scalar, spectrum)


def unitary_function(
    u: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """
    Applies fn spectrally to a normal matrix through its complex Schur form.

    Args:
        u (np.ndarray): A normal (typically unitary) matrix.
        fn (Callable): Vectorized function of the eigenvalues.

    Returns:
        np.ndarray: Z fn(diag T) Z*.
    """
    t, z = scipy.linalg.schur(np.asarray(u, dtype=np.complex128), output="complex")
    return (z * fn(np.diag(t))) @ z.conj().T


def interval_mask(
    values: np.ndarray,
    interval: IntervalSpec,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """
    Membership of eigenvalues in an interval.

    An eigenvalue within exact_hit * (1 + |e|) of a finite endpoint e is treated
    as lying on it and classified by the endpoint's closedness. One farther away
    but within the gap tolerance cannot be classified reliably.

    Args:
        values (np.ndarray): Eigenvalues.
        interval (IntervalSpec): The interval.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        EndpointCollisionError: If an eigenvalue sits within the gap tolerance of
                                a finite endpoint without hitting it exactly.

    Returns:
        np.ndarray: Boolean mask of the eigenvalues inside the interval.
    """
    mask = np.ones(len(values), dtype=bool)
    endpoints = (
        (interval.lower, interval.closed_lower, 1.0),
        (interval.upper, interval.closed_upper, -1.0),
    )
    for endpoint, closed, side in endpoints:
        if not math.isfinite(endpoint):
            continue
        offset = values - endpoint
        hit = np.abs(offset) <= tolerances.exact_hit * (1 + abs(endpoint))
        near = (np.abs(offset) <= tolerances.gap) & ~hit
        if np.any(near):
            worst = float(values[near][0])
            raise EndpointCollisionError(
                f"eigenvalue {worst!r} lies within {tolerances.gap:.0e} of the "
                f"endpoint {endpoint!r}; move the endpoint into the resolvent set",
                {"eigenvalue": worst, "endpoint": endpoint},
            )
        mask &= np.where(hit, closed, offset * side > 0)
    return mask


def tail_type_for(tail: TailDescriptor, interval: IntervalSpec) -> TailType:
    """
    Tail type of 1_J(A) for an operator with the given tail.

    Args:
        tail (TailDescriptor): Tail of the operator.
        interval (IntervalSpec): The interval J.

    Returns:
        TailType: Identity when J holds every tail eigenvalue, Zero when it holds
                  none, and the signed part otherwise.
    """
    signs = tail.signs()
    included = {s for s in signs if interval.contains_infinity(s)}
    if included == signs:
        return TailType.IDENTITY
    if not included:
        return TailType.ZERO
    return TailType.POSITIVE_PART if included == {1} else TailType.NEGATIVE_PART


def spectral_projection(
    operator: TruncatedOperator,
    interval: IntervalSpec,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    spectrum: SpectralDecomposition | None = None,
) -> ProjectionMatrix:
    """
    The spectral projection 1_J(A) = sum over lambda_k in J of u_k u_k*.

    Args:
        operator (TruncatedOperator): The operator A.
        interval (IntervalSpec): The interval J.
        tolerances (Tolerances): Numerical thresholds.
        spectrum (SpectralDecomposition | None): Precomputed decomposition of A.

    Raises:
        EndpointCollisionError: If an eigenvalue is too close to a finite endpoint.

    Returns:
        ProjectionMatrix: The projection with its tail type.
    """
    if spectrum is None:
        spectrum = eig(operator, tolerances)
    mask = interval_mask(spectrum.eigenvalues, interval, tolerances)
    return ProjectionMatrix(
        entries=spectrum.project(mask),
        tail_type=tail_type_for(operator.tail, interval),
        tolerance=tolerances.idempotency,
    )


def chi_plus(
    operator: TruncatedOperator,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    spectrum: SpectralDecomposition | None = None,
) -> ProjectionMatrix:
    """
    chi+(A) = 1_[0, inf)(A), counting eigenvalues within the gap tolerance of 0
    as kernel.
    """
    if spectrum is None:
        spectrum = eig(operator, tolerances)
    mask = spectrum.eigenvalues >= -tolerances.gap
    return ProjectionMatrix(
        entries=spectrum.project(mask),
        tail_type=tail_type_for(operator.tail, IntervalSpec.at_least(0.0)),
        tolerance=tolerances.idempotency,
    )


def _check_comparable(a: TruncatedOperator, b: TruncatedOperator):
    if a.dim != b.dim:
        raise PreconditionError(
            f"operators have different dimensions {a.dim} and {b.dim}",
            {"dims": [a.dim, b.dim]},
        )
    if a.tail != b.tail:
        raise TailMismatchError(
            "distance is undefined between operators with different tails",
            {"tails": [a.tail.kind.value, b.tail.kind.value]},
        )


def riesz_distance(a: TruncatedOperator, b: TruncatedOperator) -> float:
    """
    |f(A) - f(B)|, the metric of the Riesz topology.

    Args:
        a (TruncatedOperator): First operator.
        b (TruncatedOperator): Second operator with the same dim and tail.

    Raises:
        PreconditionError: If the dimensions differ.
        TailMismatchError: If the tails differ.

    Returns:
        float: The operator-norm distance of the bounded transforms.
    """
    _check_comparable(a, b)
    return opnorm(bounded_transform(a) - bounded_transform(b))


def graph_distance(a: TruncatedOperator, b: TruncatedOperator) -> float:
    """
    |kappa(A) - kappa(B)|, the Cayley metric of the graph topology.

    Raises the same errors as riesz_distance.
    """
    _check_comparable(a, b)
    return opnorm(cayley(a) - cayley(b))


def cayley_factorization_defect(operator: TruncatedOperator) -> float:
    """|kappa(A) - kat(f(A))| with kat applied spectrally."""
    spectrum = eig(operator)
    via_kat = spectrum.apply(kat(bounded_scalar(spectrum.eigenvalues)))
    return opnorm(cayley(operator, spectrum) - via_kat)


def riesz_graph_identity_defect(
    operator: TruncatedOperator,
    lower: float = 0.0,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """
    |f(B) - phi(kappa(B))| for B = A - lower, with phi applied to the unitary.

    For operators bounded below by `lower` the two agree, which is why graph and
    Riesz topologies coincide on such operators.

    Args:
        operator (TruncatedOperator): The operator A.
        lower (float): A lower bound of A.
        tolerances (Tolerances): Numerical thresholds.

    Raises:
        PreconditionError: If A - lower has a negative eigenvalue.

    Returns:
        float: The operator-norm defect.
    """
    shifted = operator.with_entries(operator.entries - lower * np.eye(operator.dim))
    spectrum = eig(shifted, tolerances)
    if spectrum.eigenvalues[0] < -tolerances.gap:
        raise PreconditionError(
            f"operator is not bounded below by {lower!r}",
            {"min_eigenvalue": float(spectrum.eigenvalues[0]) + lower},
        )
    u = cayley(shifted, spectrum)
    return opnorm(bounded_transform(shifted, spectrum) - unitary_function(u, phi))


def grading_basis(grading: Grading) -> np.ndarray:
    """
    Canonical eigenbasis of a grading, +1 eigenvectors first.

    Args:
        grading (Grading): The grading.

    Returns:
        np.ndarray: Unitary V with V* sigma V = diag(1_plus, -1_minus).
    """
    spectrum = decompose_matrix(grading.sigma)
    vectors = spectrum.eigenvectors
    positive = spectrum.eigenvalues > 0
    return np.concatenate([vectors[:, positive], vectors[:, ~positive]], axis=1)
