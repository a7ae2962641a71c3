import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from spectra_sect.config import DEFAULT_TOLERANCES
from spectra_sect.errors import (
    ConstructionError,
    EndpointCollisionError,
    HermiticityError,
    PreconditionError,
    ProjectionDistanceError,
    SingularOperatorError,
    TailMismatchError,
)
from spectra_sect.opcore import chi_plus, inverse_bounded_scalar
from spectra_sect.schema import (
    Grading,
    ProjectionMatrix,
    SampledFamily,
    TailDescriptor,
    TailType,
    TruncatedOperator,
)
from spectra_sect.sections import (
    SectionCertificate,
    TrivializerRecord,
    candidate_cutoffs,
    compact_weights,
    construct_section,
    deform_to_invertible,
    ess_sa_unitary,
    gamma,
    homotopy_projections,
    is_generalized_section,
    is_spectral_section,
    is_trivializer,
    linear_ramp,
    mix_trivializers,
    relatively_compact_section,
    smoothstep,
    t_average,
    tau,
    trivializing_family,
    verify_certificate,
)
from spectra_sect.utils import min_abs_eigenvalue


def _projection(diagonal, tail_type=TailType.IDENTITY) -> ProjectionMatrix:
    return ProjectionMatrix(entries=np.diag(diagonal), tail_type=tail_type)


def _line_projection(degrees: float) -> ProjectionMatrix:
    v = np.array([np.cos(np.radians(degrees)), np.sin(np.radians(degrees))])
    return ProjectionMatrix(entries=np.outer(v, v))


def _unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, _ = np.linalg.qr(z)
    return q


def _rotation(rng: np.random.Generator, basis: np.ndarray, angle: float):
    """exp(i angle H) for a random unit-norm Hermitian H living on span(basis)."""
    m = basis.shape[1]
    z = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    h = (z + z.conj().T) / 2
    h /= np.linalg.norm(h, 2)
    return scipy.linalg.expm(1j * angle * basis @ h @ basis.conj().T)


def _perturbed_family(
    seed: int, dim: int, samples: int = 21
) -> tuple[SampledFamily, list[ProjectionMatrix]]:
    """
    A family A_x = U diag(lambda(x)) U* with a generalized section near chi+(A_x).

    The lowest quarter of the modes moves with x inside (-0.9, 0.9), the other
    modes stay in [1.5, 4] in absolute value. The generalized section is chi+(A_x)
    rotated by a fixed unitary that acts on the moving modes only.

    Args:
        seed (int): Seed of the random data.
        dim (int): Dimension of the operators.
        samples (int): Number of grid points in [-1, 1].

    Returns:
        The family and one generalized section per sample.
    """
    rng = np.random.default_rng(seed)
    u = _unitary(rng, dim)
    low = dim // 4
    offsets = rng.uniform(-0.5, 0.5, size=low)
    signs = rng.choice([-1.0, 1.0], size=dim - low)
    high = signs * rng.uniform(1.5, 4.0, size=dim - low)
    rotation = _rotation(rng, u[:, :low], 0.2)

    grid = [float(x) for x in np.linspace(-1.0, 1.0, samples)]
    operators, gss = [], []
    for x in grid:
        values = np.concatenate([offsets + 0.4 * x, high])
        operator = TruncatedOperator(entries=(u * values) @ u.conj().T)
        chi = chi_plus(operator)
        operators.append(operator)
        gss.append(
            ProjectionMatrix(
                entries=rotation @ chi.entries @ rotation.conj().T,
                tail_type=chi.tail_type,
            )
        )
    family = SampledFamily(
        label=f"perturbed-{seed}",
        grid=grid,
        operators=operators,
        tail_rule=TailDescriptor(),
    )
    return family, gss


@pytest.fixture
def crossing_family() -> SampledFamily:
    """One eigenvalue of diag(-2, x, 3) crosses 0 as x runs over the grid."""
    grid = [-0.6, -0.2, 0.2, 0.6]
    return SampledFamily(
        label="crossing",
        grid=grid,
        operators=[TruncatedOperator(entries=np.diag([-2.0, x, 3.0])) for x in grid],
        tail_rule=TailDescriptor(),
    )


@pytest.fixture
def crossing_certificate(crossing_family) -> SectionCertificate:
    reference = TruncatedOperator(entries=np.diag([-2.0, -1.0, 3.0]))
    return relatively_compact_section(reference, crossing_family, delta=0.25)


def test_profiles():
    assert smoothstep(-1.0) == 1.0
    assert smoothstep(0.5) == pytest.approx(0.5)
    assert smoothstep(2.0) == 0.0
    assert linear_ramp(0.25) == pytest.approx(0.75)


def test_is_spectral_section(diagonal_operator):
    assert is_spectral_section(diagonal_operator, _projection([0, 0, 1, 1]), 1.0)
    assert is_spectral_section(diagonal_operator, _projection([0, 1, 1, 1]), 1.0)
    assert is_spectral_section(diagonal_operator, _projection([0, 0, 0, 1]), 1.0)

    check = is_spectral_section(diagonal_operator, _projection([1, 0, 1, 1]), 1.0)
    assert not check.passed
    assert check.upper_violation == pytest.approx(1.0)
    assert check.violation == pytest.approx(1.0)

    missing_top = is_spectral_section(
        diagonal_operator, _projection([0, 0, 1, 0]), 1.0
    )
    assert missing_top.lower_violation == pytest.approx(1.0)


def test_is_spectral_section_checks_tail_type(diagonal_operator):
    check = is_spectral_section(
        diagonal_operator, _projection([0, 0, 1, 1], TailType.ZERO), 1.0
    )
    assert not check.passed
    assert not check.tail_consistent
    assert check.violation == 0.0


def test_is_spectral_section_rejects_bad_cutoffs(diagonal_operator):
    p = _projection([0, 0, 1, 1])
    with pytest.raises(PreconditionError, match="cut-off must be positive"):
        is_spectral_section(diagonal_operator, p, 0.0)
    with pytest.raises(EndpointCollisionError):
        is_spectral_section(diagonal_operator, p, 0.5 + 1e-10)


def test_is_generalized_section(diagonal_operator):
    assert is_generalized_section(diagonal_operator, _projection([0, 1, 1, 1]))
    assert not is_generalized_section(
        diagonal_operator, _projection([0, 1, 1, 1]), rank_budget=0
    )
    assert not is_generalized_section(
        diagonal_operator, _projection([0, 1, 1, 1], TailType.ZERO)
    )
    assert not is_generalized_section(diagonal_operator, _projection([1, 0]))


def test_candidate_cutoffs():
    values = np.array([-2.0, -0.5, 0.5, 3.0])
    assert np.allclose(candidate_cutoffs(values), [0.25, 1.25, 2.5])


def test_t_average_keeps_window_part(diagonal_operator):
    p = _projection([0, 1, 0, 0], TailType.ZERO)
    t = t_average(diagonal_operator, p, 1.0)
    assert np.allclose(t, np.diag([0, 1, 0, 1]))


def test_construct_section_on_crossing_family(crossing_family, crossing_certificate):
    """
    Test that a constant reference section is turned into a verified section.

    Assert:
        The eigenvalue crossing 0 stays outside every section, every cut-off
        exceeds it in magnitude and the sections vary continuously.
    """
    cert = crossing_certificate

    assert cert.verified
    assert cert.max_violation <= 1e-8
    for q in cert.projections:
        assert np.allclose(q.entries, np.diag([0, 0, 1]), atol=1e-10)
        assert q.tail_type == TailType.IDENTITY
    assert all(0.6 < r < 2.0 for r in cert.cutoffs)
    assert cert.delta == 0.25
    assert max(cert.proximity) < 0.25
    assert max(cert.adjacent_distances) < 1e-10
    assert cert.lipschitz >= 0.0
    assert all(check.passed for check in verify_certificate(crossing_family, cert))


def test_construct_section_threads_match_sequential(crossing_family):
    gss = [chi_plus(TruncatedOperator(entries=np.diag([-2.0, -1.0, 3.0])))] * 4
    sequential = construct_section(crossing_family, gss, 0.25)
    threaded = construct_section(crossing_family, gss, 0.25, jobs=3)
    assert threaded.cutoffs == sequential.cutoffs
    assert threaded.model_dump(mode="json") == sequential.model_dump(mode="json")


@pytest.mark.parametrize("delta", [0.0, 0.5, 0.7])
def test_construct_section_rejects_delta(crossing_family, delta):
    gss = [chi_plus(op) for op in crossing_family.operators]
    with pytest.raises(PreconditionError) as exc_info:
        construct_section(crossing_family, gss, delta)
    assert exc_info.value.details["delta"] == delta


def test_construct_section_rejects_non_generalized_input(crossing_family):
    gss = [_projection([0, 0, 0])] * 4
    with pytest.raises(PreconditionError, match="not a generalized spectral section"):
        construct_section(crossing_family, gss, 0.25)


def test_construct_section_gss_too_far():
    family = SampledFamily(
        grid=[0.0],
        operators=[TruncatedOperator(entries=np.diag([-1.0, 1.0]))],
        tail_rule=TailDescriptor(),
    )
    tilted = ProjectionMatrix(
        entries=np.full((2, 2), 0.5), tail_type=TailType.IDENTITY
    )
    with pytest.raises(ConstructionError) as exc_info:
        construct_section(family, [tilted], 0.25, rank_budget=2)
    assert exc_info.value.reason == "gss_too_far"
    assert exc_info.value.exit_code == 1
    assert exc_info.value.details["r_max"] == pytest.approx(1.0)


@pytest.mark.parametrize("delta", [0.05, 0.1, 0.2])
@pytest.mark.parametrize("seed, dim", [(11, 16), (23, 32), (37, 48), (53, 64)])
def test_construct_section_on_perturbed_families(seed, dim, delta):
    """
    Test the construction on random families with a rotated chi+ as input.

    Args:
        seed (int): Seed of the family.
        dim (int): Dimension of the operators.
        delta (float): Covering tolerance.

    Assert:
        Every sample is verified without inclusion defect, Q_x stays within
        3 delta of P_x and gamma yields a passing trivializer at every sample.
    """
    family, gss = _perturbed_family(seed, dim)

    cert = construct_section(family, gss, delta)

    assert cert.verified
    assert cert.max_violation <= DEFAULT_TOLERANCES.inclusion
    assert max(cert.proximity) < 3 * delta
    assert all(q.rank() == p.rank() for q, p in zip(cert.projections, gss))

    record = trivializing_family(family, cert)
    assert record.passed
    assert record.norm_margin > 0
    for check in record.checks:
        assert check.norm < check.bound
        assert check.min_abs_eigenvalue > check.invertibility_threshold
        assert check.window_defect <= DEFAULT_TOLERANCES.inclusion
        assert check.agreement_defect <= DEFAULT_TOLERANCES.inclusion


def test_certificate_must_align():
    with pytest.raises(ValidationError) as exc_info:
        SectionCertificate(
            grid=[0.0, 1.0],
            projections=[_projection([1.0])],
            cutoffs=[1.0],
            verified=True,
            max_violation=0.0,
            lipschitz=0.0,
        )
    assert "one projection and one cut-off per sample" in str(exc_info.value)


def test_certificate_json_round_trip(crossing_certificate):
    again = SectionCertificate.model_validate(
        crossing_certificate.model_dump(mode="json")
    )
    assert again.cutoffs == crossing_certificate.cutoffs
    assert np.allclose(
        again.projections[0].entries, crossing_certificate.projections[0].entries
    )


def test_homotopy_projections_bisects_lines():
    p0, p1 = _line_projection(0.0), _line_projection(30.0)

    middle = homotopy_projections(p0, p1, 0.5)

    assert np.allclose(middle.entries, _line_projection(15.0).entries, atol=1e-10)
    assert homotopy_projections(p0, p1, 0.0) is p0
    assert homotopy_projections(p0, p1, 1.0) is p1


def test_homotopy_projections_preconditions():
    p0 = _projection([1, 0], TailType.ZERO)
    with pytest.raises(ProjectionDistanceError) as exc_info:
        homotopy_projections(p0, _projection([0, 1], TailType.ZERO), 0.5)
    assert exc_info.value.details["distance"] == pytest.approx(1.0)
    with pytest.raises(TailMismatchError):
        homotopy_projections(p0, _projection([1, 0]), 0.5)
    with pytest.raises(PreconditionError, match="t must lie in"):
        homotopy_projections(p0, p0, 1.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_homotopy_stays_a_section(seed):
    rng = np.random.default_rng(seed)
    dim, width = 12, 4
    u = _unitary(rng, dim)
    signs = rng.choice([-1.0, 1.0], size=dim - width)
    values = np.concatenate(
        [
            rng.uniform(-0.8, 0.8, size=width),
            signs * rng.uniform(1.5, 4.0, size=dim - width),
        ]
    )
    operator = TruncatedOperator(entries=(u * values) @ u.conj().T)
    tail_type = chi_plus(operator).tail_type

    window = u[:, :width]
    upper = u[:, width:][:, signs > 0]
    rank = int(rng.integers(1, width))
    frame, _ = np.linalg.qr(window @ rng.normal(size=(width, rank)))
    start = upper @ upper.conj().T + frame @ frame.conj().T
    rotation = _rotation(rng, window, float(rng.uniform(0.0, 0.3)))
    p0 = ProjectionMatrix(entries=start, tail_type=tail_type)
    p1 = ProjectionMatrix(
        entries=rotation @ start @ rotation.conj().T, tail_type=tail_type
    )

    for t in np.linspace(0.0, 1.0, 11):
        q = homotopy_projections(p0, p1, float(t))
        assert is_spectral_section(operator, q, 1.0).passed
        assert q.rank() == p0.rank()


def test_gamma_hand_example(diagonal_operator):
    """
    Test gamma on diag(-2, -1/2, 1/2, 3) with P = chi+ and r = 1.

    Assert:
        The window eigenvalues are pushed out to -1 and 1, and chi+(A + C) = P.
    """
    p = _projection([0, 0, 1, 1])

    c = gamma(diagonal_operator, p, 1.0)

    assert np.allclose(c, np.diag([0.0, -0.5, 0.5, 0.0]))
    check = is_trivializer(diagonal_operator, c, 1.0, p)
    assert check.passed
    assert check.agreement_defect == pytest.approx(0.0, abs=1e-12)
    assert check.min_abs_eigenvalue == pytest.approx(1.0)

    section, cutoff = tau(diagonal_operator, c, 1.0)
    assert cutoff == 1.0
    assert np.allclose(section.entries, p.entries)
    assert section.tail_type == TailType.IDENTITY


def test_gamma_requires_a_section(diagonal_operator):
    with pytest.raises(PreconditionError, match="not an r-spectral section"):
        gamma(diagonal_operator, _projection([1, 0, 1, 1]), 1.0)


def test_tau_preconditions(diagonal_operator):
    with pytest.raises(PreconditionError) as exc_info:
        tau(diagonal_operator, np.diag([1.0, 0.0, 0.0, 0.0]), 1.0)
    assert exc_info.value.details["window_defect"] == pytest.approx(1.0)

    with pytest.raises(SingularOperatorError):
        tau(diagonal_operator, np.diag([0.0, 0.5, -0.5, 0.0]), 1.0)

    skew = np.zeros((4, 4))
    skew[1, 2] = 0.1
    with pytest.raises(HermiticityError):
        tau(diagonal_operator, skew, 1.0)


def test_trivializers_are_convex(diagonal_operator):
    p = _projection([0, 0, 1, 1])
    c0 = gamma(diagonal_operator, p, 1.5, smoothstep)
    c1 = gamma(diagonal_operator, p, 1.5, linear_ramp)
    assert not np.allclose(c0, c1)

    for t in (0.0, 0.3, 0.5, 1.0):
        mixed = mix_trivializers(c0, c1, t)
        assert is_trivializer(diagonal_operator, mixed, 1.5, p).passed

    with pytest.raises(PreconditionError):
        mix_trivializers(c0, c1, 2.0)


@pytest.mark.parametrize("seed", [3, 17, 29])
def test_random_trivializer_mixtures(seed):
    """
    Test convexity of trivializers on a random 6 x 6 operator.

    The section is chi+ of the large modes plus a random line in the window
    (-1, 1), so A does not commute with it.

    Assert:
        100 random mixtures of the smoothstep and linear gamma are all
        1-trivializers agreeing with the section.
    """
    rng = np.random.default_rng(seed)
    u = _unitary(rng, 6)
    values = np.array([-3.0, -1.5, -0.5, 0.5, 2.0, 4.0])
    operator = TruncatedOperator(entries=(u * values) @ u.conj().T)
    # <line, A line> = cos(2 angle) / 2 > 0, where the two profiles differ
    angle, phase = rng.uniform(0.1, 0.6), rng.uniform(0.0, 2 * np.pi)
    line = np.cos(angle) * u[:, 3] + np.exp(1j * phase) * np.sin(angle) * u[:, 2]
    upper = u[:, 4:]
    section = ProjectionMatrix(
        entries=upper @ upper.conj().T + np.outer(line, line.conj()),
        tail_type=chi_plus(operator).tail_type,
    )

    c0 = gamma(operator, section, 1.0, smoothstep)
    c1 = gamma(operator, section, 1.0, linear_ramp)
    assert not np.allclose(c0, c1)

    for t in rng.uniform(0.0, 1.0, size=100):
        check = is_trivializer(
            operator, mix_trivializers(c0, c1, float(t)), 1.0, section
        )
        assert check.passed, check


def test_trivializing_family(crossing_family, crossing_certificate):
    record = trivializing_family(crossing_family, crossing_certificate, jobs=2)

    assert record.passed
    assert record.label == "crossing"
    assert record.norm_margin > 0
    assert len(record.corrections) == len(crossing_family)

    again = TrivializerRecord.model_validate(record.model_dump(mode="json"))
    assert np.allclose(again.corrections[3], record.corrections[3])


def test_trivializer_record_enforces_bound():
    with pytest.raises(ValidationError) as exc_info:
        TrivializerRecord(corrections=[2 * np.eye(2)], cutoffs=[1.0], norm_margin=0.0)
    assert "every correction must satisfy" in str(exc_info.value)


def test_compact_weights():
    assert np.allclose(compact_weights(3), np.diag([1 / 2, 1 / 3, 1 / 4]))
    graded = compact_weights(2, Grading.standard(1, 1))
    assert np.allclose(graded, np.diag([1 / 2, 1 / 3]))


def test_deform_to_invertible():
    """
    Test the deformation on a singular and an invertible sample.

    Assert:
        The first slice is the input, the last one is f^{-1}((1 - K)(2P - 1)(1 - K))
        and both endpoints are invertible.
    """
    operators = [
        TruncatedOperator(entries=np.zeros((2, 2))),
        TruncatedOperator(entries=np.diag([1.0, -1.0])),
    ]
    family = SampledFamily(
        label="deform", grid=[0.0, 1.0], operators=operators, tail_rule=TailDescriptor()
    )
    gss = [chi_plus(op) for op in operators]

    table = deform_to_invertible(family, gss, steps=5)

    assert table.times == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert table.slices[0][0] is operators[0]
    assert np.allclose(
        table.slices[-1][0].entries,
        np.diag(inverse_bounded_scalar(np.array([1 / 4, 4 / 9]))),
    )
    assert np.allclose(
        table.slices[-1][1].entries,
        np.diag(inverse_bounded_scalar(np.array([1 / 4, -4 / 9]))),
    )
    assert table.endpoint_min_abs == pytest.approx([0.25, 0.25])
    assert table.invertible
    assert max(table.spectral_radii) < 1


def test_deform_to_invertible_preconditions(crossing_family):
    gss = [chi_plus(op) for op in crossing_family.operators]
    with pytest.raises(PreconditionError, match="at least two time steps"):
        deform_to_invertible(crossing_family, gss, steps=1)
    with pytest.raises(PreconditionError, match="one generalized section per sample"):
        deform_to_invertible(crossing_family, gss[:2])


@pytest.mark.parametrize("seed", range(20))
def test_deform_random_families(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(2, 9))
    z0 = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    z1 = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    grid = [-1.0, -0.5, 0.0, 0.5, 1.0]
    operators = [
        TruncatedOperator(entries=(z0 + z0.conj().T + x * (z1 + z1.conj().T)) / 2)
        for x in grid
    ]
    family = SampledFamily(
        label=f"random-{seed}",
        grid=grid,
        operators=operators,
        tail_rule=TailDescriptor(),
    )
    gss = [chi_plus(op) for op in operators]

    table = deform_to_invertible(family, gss)

    assert len(table.slices) == 11
    assert all(len(row) == len(grid) for row in table.slices)
    assert all(a is b for a, b in zip(table.slices[0], operators))
    assert table.invertible
    assert max(table.spectral_radii) < 1
    # |(1 - K) T (1 - K)| is bounded below by the smallest weight (1/2)^2
    assert min(table.endpoint_min_abs) >= 0.25 - 1e-12
    for end in table.slices[-1]:
        assert min_abs_eigenvalue(end.entries) >= 0.25 - 1e-12


def test_ess_sa_unitary():
    result = ess_sa_unitary(np.diag([0.6, -0.8]))

    assert np.allclose(result.unitary, np.diag([0.6 + 0.8j, -0.8 + 0.6j]))
    assert result.deformation_norm == pytest.approx(0.8)
    assert result.bound == pytest.approx(0.8)
    assert result.unitarity_defect < 1e-12

    with pytest.raises(PreconditionError, match="must be a contraction"):
        ess_sa_unitary(2 * np.eye(2))
