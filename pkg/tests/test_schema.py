import math

import numpy as np
import pytest
from pydantic import ValidationError

from spectra_sect.config import Tolerances
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
    matrix_from_json,
)


def test_operator_must_be_hermitian():
    with pytest.raises(ValidationError) as exc_info:
        TruncatedOperator(entries=[[0.0, 1.0], [0.0, 0.0]])
    assert "entries must be Hermitian" in str(exc_info.value)


def test_operator_must_be_square():
    with pytest.raises(ValidationError) as exc_info:
        TruncatedOperator(entries=[[1.0, 0.0, 0.0]])
    assert "expected a square matrix" in str(exc_info.value)


def test_operator_hermiticity_tolerance_from_context():
    data = {"re": [[0.0, 1.0], [1.0 + 1e-7, 0.0]], "dim": 2}
    with pytest.raises(ValidationError):
        TruncatedOperator.model_validate(data)

    loose = Tolerances(hermiticity=1e-6)
    operator = TruncatedOperator.model_validate(
        data, context={"tolerances": loose}
    )
    assert np.allclose(operator.entries, operator.entries.conj().T, atol=0)


def test_operator_json_layout():
    operator = TruncatedOperator.model_validate(
        {
            "dim": 2,
            "re": [[1.0, 0.0], [0.0, -1.0]],
            "im": [[0.0, 0.5], [-0.5, 0.0]],
            "tail": {"kind": "NegativeGrowth", "exponent": 2.0},
        }
    )
    assert operator.dim == 2
    assert operator.entries[0, 1] == 0.5j
    assert operator.tail.kind == TailKind.NEGATIVE_GROWTH

    dumped = operator.model_dump()
    assert dumped["dim"] == 2
    assert dumped["im"][1][0] == -0.5
    assert dumped["tail"]["kind"] == "NegativeGrowth"


def test_operator_dim_must_match():
    with pytest.raises(ValidationError) as exc_info:
        TruncatedOperator.model_validate({"dim": 3, "re": [[1.0]]})
    assert "does not match matrix shape" in str(exc_info.value)


def test_operator_entries_are_read_only():
    operator = TruncatedOperator(entries=np.eye(2))
    with pytest.raises(ValueError):
        operator.entries[0, 0] = 5.0


def test_tail_descriptor_signs(mixed_tail):
    assert TailDescriptor().signs() == {1}
    assert TailDescriptor(kind=TailKind.NEGATIVE_GROWTH).signs() == {-1}
    assert mixed_tail.signs() == {-1, 1}
    assert mixed_tail.sign(4) == 1
    assert mixed_tail.sign(5) == -1
    assert TailDescriptor(exponent=2.0, scale=3.0).magnitude(2) == 12.0


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"exponent": 0.0}, "must be positive and finite"),
        ({"scale": -1.0}, "must be positive and finite"),
        ({"kind": TailKind.MIXED_SIGNED}, "need a sign_pattern with both signs"),
        (
            {"kind": TailKind.MIXED_SIGNED, "sign_pattern": [1, 1]},
            "need a sign_pattern with both signs",
        ),
        ({"sign_pattern": [1, -1]}, "only allowed for MixedSigned"),
        (
            {"kind": TailKind.MIXED_SIGNED, "sign_pattern": [1, 0]},
            "nonempty list of +1/-1",
        ),
    ],
)
def test_tail_descriptor_rejects_invalid(kwargs, message):
    with pytest.raises(ValidationError) as exc_info:
        TailDescriptor(**kwargs)
    assert message in str(exc_info.value)


def test_projection_must_be_idempotent():
    with pytest.raises(ValidationError) as exc_info:
        ProjectionMatrix(entries=np.diag([0.5, 1.0]))
    assert "entries must be a projection" in str(exc_info.value)


def test_projection_rank_and_complement():
    p = ProjectionMatrix(
        entries=np.diag([0.0, 1.0, 1.0]), tail_type=TailType.POSITIVE_PART
    )
    q = p.complement()

    assert p.rank() == 2
    assert q.rank() == 1
    assert q.tail_type == TailType.NEGATIVE_PART
    assert np.allclose(p.entries + q.entries, np.eye(3))
    assert ProjectionMatrix(entries=np.eye(2)).complement().tail_type == (
        TailType.IDENTITY
    )


def test_projection_json_round_trip_keeps_tail_type():
    p = ProjectionMatrix(entries=[[1.0, 0.0], [0.0, 0.0]], tail_type="Identity")
    again = ProjectionMatrix.model_validate(p.model_dump())
    assert again.tail_type == TailType.IDENTITY
    assert np.array_equal(again.entries, p.entries)


def test_interval_constructors():
    assert IntervalSpec.open(-1.0, 1.0).closed_lower is False
    assert IntervalSpec.above(0.0).contains_infinity(1)
    assert not IntervalSpec.above(0.0).contains_infinity(-1)
    assert IntervalSpec.at_most(2.0).lower == -math.inf
    assert IntervalSpec.at_most(2.0).contains_infinity(-1)


def test_interval_must_be_ordered():
    with pytest.raises(ValidationError) as exc_info:
        IntervalSpec.closed(1.0, 0.0)
    assert "lower must not exceed upper" in str(exc_info.value)


def test_grading_infers_dims_from_trace():
    grading = Grading.model_validate({"sigma": np.diag([1.0, 1.0, -1.0])})
    assert (grading.plus_dim, grading.minus_dim) == (2, 1)
    assert grading.dim == 3


def test_grading_must_be_a_symmetry():
    with pytest.raises(ValidationError) as exc_info:
        Grading(sigma=np.diag([1.0, 2.0]), plus_dim=1, minus_dim=1)
    assert "sigma must be a symmetry" in str(exc_info.value)


def test_odd_operator_must_anticommute():
    grading = Grading.standard(1, 1)
    odd = OddOperator(
        base=TruncatedOperator(entries=[[0.0, 2.0], [2.0, 0.0]]), grading=grading
    )
    assert odd.dim == 2

    with pytest.raises(ValidationError) as exc_info:
        OddOperator(base=TruncatedOperator(entries=np.eye(2)), grading=grading)
    assert "must anticommute with the grading" in str(exc_info.value)


def test_symbol_sample_is_linear_in_xi():
    coefficients = np.zeros((1, 2, 2, 2))
    coefficients[0, 0] = [[0.0, 1.0], [1.0, 0.0]]
    coefficients[0, 1] = [[1.0, 0.0], [0.0, -1.0]]
    symbol = SymbolSample.model_validate({"coefficients": coefficients})

    assert symbol.tags == ["p0"]
    assert symbol.n_vars == 2
    expected = 2.0 * coefficients[0, 0] - 3.0 * coefficients[0, 1]
    assert np.allclose(symbol.evaluate(0, [2.0, -3.0]), expected)


def test_symbol_sample_must_be_4d():
    with pytest.raises(ValidationError) as exc_info:
        SymbolSample(tags=["a"], coefficients=np.zeros((1, 2, 2)))
    assert "coefficients must have shape" in str(exc_info.value)


def test_matrix_from_json_accepts_both_layouts():
    plain = matrix_from_json([[1.0, 2.0]])
    split = matrix_from_json({"re": [[1.0, 2.0]], "im": [[0.0, -1.0]]})
    assert plain.dtype == np.complex128
    assert split[0, 1] == 2.0 - 1.0j


def _identity_family(grid, **kwargs):
    operators = [TruncatedOperator(entries=np.eye(2)) for _ in grid]
    return SampledFamily(
        grid=grid, operators=operators, tail_rule=TailDescriptor(), **kwargs
    )


def test_family_grid_must_increase():
    with pytest.raises(ValidationError) as exc_info:
        _identity_family([0.0, 0.0])
    assert "grid must be strictly increasing" in str(exc_info.value)


def test_family_tails_must_match_rule():
    operators = [
        TruncatedOperator(entries=np.eye(2)),
        TruncatedOperator(
            entries=np.eye(2), tail=TailDescriptor(kind=TailKind.NEGATIVE_GROWTH)
        ),
    ]
    with pytest.raises(ValidationError) as exc_info:
        SampledFamily(grid=[0.0, 1.0], operators=operators, tail_rule=TailDescriptor())
    assert "all operators must share tail_rule" in str(exc_info.value)


def test_family_graph_adjacency():
    family = _identity_family([0.0, 1.0, 2.0], edges=[(2, 0), (0, 1)])
    assert family.adjacent_pairs() == [(0, 1), (0, 2)]
    assert family.neighbors(0) == [1, 2]
    assert family.neighbors(2) == [0]

    with pytest.raises(ValidationError) as exc_info:
        _identity_family([0.0, 1.0], edges=[(0, 0)])
    assert "invalid edge" in str(exc_info.value)


def test_family_at_infinity():
    family = _identity_family([0.0, 1.0, 2.0], at_infinity=True)
    assert family.finite_indices() == [0, 1]
    assert len(family) == 3
