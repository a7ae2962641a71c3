import math
from enum import StrEnum
from typing import Any, Literal

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationInfo,
    field_validator,
    model_serializer,
    model_validator,
)
from pydantic_core import PydanticCustomError

from spectra_sect.config import DEFAULT_TOLERANCES, Tolerances
from spectra_sect.utils import as_square_matrix, hermitian_defect, opnorm, symmetrize


def _context_tolerances(info: ValidationInfo) -> Tolerances:
    """
    Reads tolerances passed with model_validate(..., context={"tolerances": ...}).

    Args:
        info (ValidationInfo): The pydantic validation info.

    Returns:
        Tolerances: The tolerances from the context, or the defaults.
    """
    if isinstance(info.context, dict):
        tolerances = info.context.get("tolerances")
        if isinstance(tolerances, Tolerances):
            return tolerances
    return DEFAULT_TOLERANCES


def _frozen(matrix: np.ndarray) -> np.ndarray:
    matrix.flags.writeable = False
    return matrix


def _split_complex(data: dict[str, Any], key: str = "entries") -> dict[str, Any]:
    """
    Rebuilds a complex array from the {"re": ..., "im": ...} JSON layout.

    Args:
        data (dict): Raw input mapping, left untouched.
        key (str): Name of the field that receives the complex array.

    Raises:
        ValueError: If "dim" is given and disagrees with the matrix shape.

    Returns:
        dict: A copy of data with "re"/"im" replaced by the combined array.
    """
    data = dict(data)
    real = np.asarray(data.pop("re"), dtype=np.float64)
    imag = data.pop("im", None)
    combined = real + 0j
    if imag is not None:
        combined = combined + 1j * np.asarray(imag, dtype=np.float64)
    dim = data.pop("dim", None)
    if dim is not None and combined.shape[:1] != (dim,):
        raise ValueError(f"dim {dim} does not match matrix shape {combined.shape}")
    data[key] = combined
    return data


def matrix_to_json(matrix: np.ndarray) -> dict[str, Any]:
    return {"re": matrix.real.tolist(), "im": matrix.imag.tolist()}


def matrix_from_json(value) -> np.ndarray:
    """
    Accepts either the {"re": ..., "im": ...} layout or a plain nested list.

    Args:
        value: Raw matrix data.

    Returns:
        np.ndarray: A read-only complex array.
    """
    if isinstance(value, dict) and "re" in value:
        value = _split_complex(value, key="matrix")["matrix"]
    return _frozen(np.array(value, dtype=np.complex128))


class TailKind(StrEnum):
    POSITIVE_GROWTH = "PositiveGrowth"
    NEGATIVE_GROWTH = "NegativeGrowth"
    MIXED_SIGNED = "MixedSigned"


class TailType(StrEnum):
    """Which tail modes a projection contains."""

    ZERO = "Zero"
    IDENTITY = "Identity"
    POSITIVE_PART = "PositivePart"
    NEGATIVE_PART = "NegativePart"


class TailDescriptor(BaseModel):
    """
    Asymptotic spectrum beyond the truncation window.

    Tail mode n (1-based, n > dim) has the eigenvalue sign(n) * scale * n**exponent.

    Attributes:
        kind (TailKind): Sign behavior of the tail eigenvalues.
        rate (str): Growth law of the magnitudes, only "polynomial" is supported.
        exponent (float): Growth exponent, positive so magnitudes diverge.
        scale (float): Positive prefactor.
        sign_pattern (list[int] | None): Periodic signs for MixedSigned tails.
    """

    model_config = ConfigDict(frozen=True)

    kind: TailKind = TailKind.POSITIVE_GROWTH
    rate: Literal["polynomial"] = "polynomial"
    exponent: float = 1.0
    scale: float = 1.0
    sign_pattern: list[int] | None = None

    @field_validator("exponent", "scale")
    def growth_must_be_positive(cls, v):
        """
        Validates that magnitudes are strictly increasing and unbounded.

        Args:
            v (float): The exponent or scale to be validated.

        Raises:
            ValueError: If the value is not strictly positive.

        Returns:
            float: The validated value.
        """
        if not v > 0 or not math.isfinite(v):
            raise ValueError("tail exponent and scale must be positive and finite")
        return v

    @field_validator("sign_pattern")
    def sign_pattern_must_hold_signs(cls, v):
        if v is not None and (not v or any(s not in (-1, 1) for s in v)):
            raise ValueError("sign_pattern must be a nonempty list of +1/-1")
        return v

    @model_validator(mode="after")
    def sign_pattern_matches_kind(self):
        if self.kind == TailKind.MIXED_SIGNED:
            if self.sign_pattern is None or set(self.sign_pattern) != {-1, 1}:
                raise ValueError(
                    "MixedSigned tails need a sign_pattern with both signs"
                )
        elif self.sign_pattern is not None:
            raise ValueError("sign_pattern is only allowed for MixedSigned tails")
        return self

    def magnitude(self, n: int) -> float:
        return self.scale * float(n) ** self.exponent

    def sign(self, n: int) -> int:
        if self.kind == TailKind.POSITIVE_GROWTH:
            return 1
        if self.kind == TailKind.NEGATIVE_GROWTH:
            return -1
        assert self.sign_pattern is not None
        return self.sign_pattern[n % len(self.sign_pattern)]

    def signs(self) -> set[int]:
        """Signs that occur among the tail eigenvalues."""
        if self.kind == TailKind.POSITIVE_GROWTH:
            return {1}
        if self.kind == TailKind.NEGATIVE_GROWTH:
            return {-1}
        return {-1, 1}


class TruncatedOperator(BaseModel):
    """
    Finite Hermitian model of a self-adjoint operator with compact resolvents.

    JSON layout: {"dim": int, "re": [[...]], "im": [[...]], "tail": {...}}.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    entries: np.ndarray
    tail: TailDescriptor = Field(default_factory=TailDescriptor)

    @model_validator(mode="before")
    @classmethod
    def accept_json_layout(cls, data):
        if isinstance(data, dict) and "re" in data:
            return _split_complex(data)
        return data

    @field_validator("entries", mode="before")
    @classmethod
    def entries_must_be_hermitian(cls, v, info: ValidationInfo):
        """
        Validates that the entries form a Hermitian matrix.

        Args:
            v: The matrix to be validated.
            info (ValidationInfo): Carries optional tolerances in its context.

        Raises:
            PydanticCustomError: If the Hermitian defect exceeds the tolerance.

        Returns:
            np.ndarray: The symmetrized, read-only matrix.
        """
        matrix = as_square_matrix(v)
        tol = _context_tolerances(info).hermiticity
        defect = hermitian_defect(matrix)
        if defect > tol:
            raise PydanticCustomError(
                "non_hermitian",
                f"entries must be Hermitian, measured defect {defect:.3e} "
                f"exceeds tolerance {tol:.1e}",
            )
        return _frozen(symmetrize(matrix))

    @model_serializer
    def to_json_layout(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "re": self.entries.real.tolist(),
            "im": self.entries.imag.tolist(),
            "tail": self.tail.model_dump(mode="json", exclude_none=True),
        }

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    def norm(self) -> float:
        return opnorm(self.entries)

    def with_entries(self, matrix: np.ndarray) -> "TruncatedOperator":
        """Returns an operator with new entries and the same tail."""
        return TruncatedOperator(entries=matrix, tail=self.tail)


class ProjectionMatrix(BaseModel):
    """
    Hermitian idempotent on the truncation window plus its tail behavior.

    Attributes:
        entries (np.ndarray): The N x N matrix.
        tail_type (TailType): Which tail modes lie in the range.
        tolerance (float): Accepted defect of P^2 - P and P - P*.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    entries: np.ndarray
    tail_type: TailType = TailType.ZERO
    tolerance: float = DEFAULT_TOLERANCES.idempotency

    @model_validator(mode="before")
    @classmethod
    def accept_json_layout(cls, data):
        if isinstance(data, dict) and "re" in data:
            return _split_complex(data)
        return data

    @field_validator("entries", mode="before")
    @classmethod
    def entries_must_be_square(cls, v):
        return _frozen(as_square_matrix(v))

    @model_validator(mode="after")
    def must_be_a_projection(self):
        """
        Validates that the entries are Hermitian and idempotent.

        Raises:
            PydanticCustomError: If either defect exceeds the tolerance.

        Returns:
            ProjectionMatrix: The validated projection.
        """
        p = self.entries
        herm = hermitian_defect(p)
        idem = float(np.max(np.abs(p @ p - p)))
        if herm > self.tolerance or idem > self.tolerance:
            raise PydanticCustomError(
                "not_a_projection",
                f"entries must be a projection, Hermitian defect {herm:.3e} and "
                f"idempotency defect {idem:.3e} exceed tolerance {self.tolerance:.1e}",
            )
        return self

    @model_serializer
    def to_json_layout(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "re": self.entries.real.tolist(),
            "im": self.entries.imag.tolist(),
            "tail_type": self.tail_type.value,
            "tolerance": self.tolerance,
        }

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    def rank(self) -> int:
        return int(round(float(np.trace(self.entries).real)))

    def complement(self) -> "ProjectionMatrix":
        """Returns 1 - P with the complementary tail type."""
        flipped = {
            TailType.ZERO: TailType.IDENTITY,
            TailType.IDENTITY: TailType.ZERO,
            TailType.POSITIVE_PART: TailType.NEGATIVE_PART,
            TailType.NEGATIVE_PART: TailType.POSITIVE_PART,
        }
        return ProjectionMatrix(
            entries=np.eye(self.dim) - self.entries,
            tail_type=flipped[self.tail_type],
            tolerance=self.tolerance,
        )


class IntervalSpec(BaseModel):
    """
    A real interval with optional infinite endpoints.
    """

    model_config = ConfigDict(frozen=True)

    lower: float = -math.inf
    upper: float = math.inf
    closed_lower: bool = True
    closed_upper: bool = True

    @model_validator(mode="after")
    def lower_must_not_exceed_upper(self):
        if self.lower > self.upper:
            raise ValueError("lower must not exceed upper")
        if self.lower == math.inf or self.upper == -math.inf:
            raise ValueError("interval must contain real numbers")
        return self

    @classmethod
    def closed(cls, lower: float, upper: float) -> "IntervalSpec":
        return cls(lower=lower, upper=upper)

    @classmethod
    def open(cls, lower: float, upper: float) -> "IntervalSpec":
        return cls(lower=lower, upper=upper, closed_lower=False, closed_upper=False)

    @classmethod
    def at_least(cls, lower: float) -> "IntervalSpec":
        """[lower, +inf)"""
        return cls(lower=lower)

    @classmethod
    def above(cls, lower: float) -> "IntervalSpec":
        """(lower, +inf)"""
        return cls(lower=lower, closed_lower=False)

    @classmethod
    def at_most(cls, upper: float) -> "IntervalSpec":
        """(-inf, upper]"""
        return cls(upper=upper)

    def contains_infinity(self, sign: int) -> bool:
        return self.upper == math.inf if sign > 0 else self.lower == -math.inf


class SpectralDecomposition(BaseModel):
    """
    Ascending eigenvalues with an orthonormal eigenbasis in the columns.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @field_validator("eigenvalues", mode="before")
    @classmethod
    def eigenvalues_must_be_sorted(cls, v):
        values = np.array(v, dtype=np.float64)
        if values.ndim != 1 or np.any(np.diff(values) < 0):
            raise ValueError("eigenvalues must be a 1-d ascending vector")
        return _frozen(values)

    @field_validator("eigenvectors", mode="before")
    @classmethod
    def eigenvectors_must_be_orthonormal(cls, v, info: ValidationInfo):
        vectors = as_square_matrix(v)
        tol = _context_tolerances(info).unitarity
        gram = vectors.conj().T @ vectors
        defect = float(np.max(np.abs(gram - np.eye(len(vectors)))))
        if defect > tol:
            raise ValueError(f"eigenvectors must be orthonormal, defect {defect:.3e}")
        return _frozen(vectors)

    @model_validator(mode="after")
    def shapes_must_agree(self):
        if self.eigenvalues.shape[0] != self.eigenvectors.shape[0]:
            raise ValueError("eigenvalue count must match the eigenbasis size")
        return self

    def project(self, mask: np.ndarray) -> np.ndarray:
        """Sum of u_k u_k* over the selected eigenvectors."""
        block = self.eigenvectors[:, mask]
        return block @ block.conj().T

    def apply(self, values: np.ndarray) -> np.ndarray:
        """U diag(values) U*."""
        return (self.eigenvectors * values) @ self.eigenvectors.conj().T


class Grading(BaseModel):
    """
    A symmetry sigma (Hermitian, sigma^2 = 1) splitting the model space.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sigma: np.ndarray
    plus_dim: int
    minus_dim: int

    @model_validator(mode="before")
    @classmethod
    def accept_json_layout(cls, data):
        if isinstance(data, dict) and "re" in data:
            data = _split_complex(data, key="sigma")
        if isinstance(data, dict) and "sigma" in data and "plus_dim" not in data:
            sigma = as_square_matrix(data["sigma"])
            trace = int(round(float(np.trace(sigma).real)))
            data = {
                **data,
                "plus_dim": (len(sigma) + trace) // 2,
                "minus_dim": (len(sigma) - trace) // 2,
            }
        return data

    @field_validator("sigma", mode="before")
    @classmethod
    def sigma_must_be_a_symmetry(cls, v, info: ValidationInfo):
        """
        Validates that sigma is Hermitian with sigma^2 = 1.

        Args:
            v: The candidate symmetry.
            info (ValidationInfo): Carries optional tolerances in its context.

        Raises:
            PydanticCustomError: If either defect exceeds 1e-10.

        Returns:
            np.ndarray: The read-only symmetry.
        """
        sigma = as_square_matrix(v)
        tol = _context_tolerances(info).hermiticity
        herm = hermitian_defect(sigma)
        square = opnorm(sigma @ sigma - np.eye(len(sigma)))
        if herm > tol or square > tol:
            raise PydanticCustomError(
                "not_a_symmetry",
                f"sigma must be a symmetry, Hermitian defect {herm:.3e}, "
                f"|sigma^2 - 1| = {square:.3e}",
            )
        return _frozen(symmetrize(sigma))

    @model_validator(mode="after")
    def dims_must_match_sigma(self):
        n = self.sigma.shape[0]
        dims = (self.plus_dim, self.minus_dim)
        if min(dims) < 0 or sum(dims) != n:
            raise ValueError("plus_dim + minus_dim must equal the dimension of sigma")
        trace = float(np.trace(self.sigma).real)
        if abs(trace - (self.plus_dim - self.minus_dim)) > 1e-6:
            raise ValueError("plus_dim - minus_dim must equal the trace of sigma")
        return self

    @model_serializer
    def to_json_layout(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "re": self.sigma.real.tolist(),
            "im": self.sigma.imag.tolist(),
            "plus_dim": self.plus_dim,
            "minus_dim": self.minus_dim,
        }

    @property
    def dim(self) -> int:
        return int(self.sigma.shape[0])

    @classmethod
    def standard(cls, k: int, k_prime: int) -> "Grading":
        """diag(1_k, -1_k')"""
        sigma = np.diag(np.concatenate([np.ones(k), -np.ones(k_prime)]))
        return cls(sigma=sigma, plus_dim=k, minus_dim=k_prime)

    def anticommutator(self, matrix: np.ndarray) -> float:
        return opnorm(self.sigma @ matrix + matrix @ self.sigma)


class OddOperator(BaseModel):
    """
    A truncated operator anticommuting with a grading.
    """

    model_config = ConfigDict(frozen=True)

    base: TruncatedOperator
    grading: Grading

    @model_validator(mode="after")
    def must_anticommute(self):
        """
        Validates |sigma A + A sigma| <= 1e-8 (1 + |A|).

        Raises:
            PydanticCustomError: If the operator is not odd.

        Returns:
            OddOperator: The validated operator.
        """
        if self.base.dim != self.grading.dim:
            raise ValueError("operator and grading dimensions differ")
        defect = self.grading.anticommutator(self.base.entries)
        if defect > 1e-8 * (1 + self.base.norm()):
            raise PydanticCustomError(
                "not_odd",
                f"operator must anticommute with the grading, defect {defect:.3e}",
            )
        return self

    @property
    def entries(self) -> np.ndarray:
        return self.base.entries

    @property
    def sigma(self) -> np.ndarray:
        return self.grading.sigma

    @property
    def dim(self) -> int:
        return self.base.dim


class SymbolSample(BaseModel):
    """
    A linear symbol d sampled at base points.

    coefficients[p, j] is the k x k' matrix of d at point p on the j-th cotangent
    coordinate, so d(xi) = sum_j xi_j * coefficients[p, j] is linear by
    construction.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tags: list[str]
    coefficients: np.ndarray

    @model_validator(mode="before")
    @classmethod
    def accept_json_layout(cls, data):
        if isinstance(data, dict) and "re" in data:
            data = _split_complex(data, key="coefficients")
        if isinstance(data, dict) and "tags" not in data and "coefficients" in data:
            count = len(data["coefficients"])
            data = {**data, "tags": [f"p{i}" for i in range(count)]}
        return data

    @field_validator("coefficients", mode="before")
    @classmethod
    def coefficients_must_be_4d(cls, v):
        coefficients = np.array(v, dtype=np.complex128)
        if coefficients.ndim != 4 or 0 in coefficients.shape:
            raise ValueError(
                "coefficients must have shape (points, variables, rows, columns)"
            )
        return _frozen(coefficients)

    @model_validator(mode="after")
    def tags_must_match_points(self):
        if len(self.tags) != self.coefficients.shape[0]:
            raise ValueError("one tag per base point is required")
        return self

    @model_serializer
    def to_json_layout(self) -> dict[str, Any]:
        return {
            "tags": list(self.tags),
            "re": self.coefficients.real.tolist(),
            "im": self.coefficients.imag.tolist(),
        }

    @property
    def n_points(self) -> int:
        return int(self.coefficients.shape[0])

    @property
    def n_vars(self) -> int:
        return int(self.coefficients.shape[1])

    def evaluate(self, point: int, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=np.float64)
        return np.tensordot(xi, self.coefficients[point], axes=1)


class SampledFamily(BaseModel):
    """
    One truncated operator per node of a parameter grid.

    Attributes:
        label (str): Human-readable name of the family.
        grid (list[float]): Parameter value per node; strictly increasing unless
                            edges are given.
        operators (list[TruncatedOperator]): One operator per node.
        tail_rule (TailDescriptor | None): Tail shared by every operator, None for
                                           families whose tail changes kind.
        edges (list[tuple[int, int]] | None): Adjacency of a finite graph of
                                              samples, None for an interval grid.
        at_infinity (bool): Whether the last node stands for the point at infinity.
    """

    model_config = ConfigDict(frozen=True)

    label: str = ""
    grid: list[float]
    operators: list[TruncatedOperator]
    tail_rule: TailDescriptor | None
    edges: list[tuple[int, int]] | None = None
    at_infinity: bool = False

    @model_validator(mode="after")
    def samples_must_be_consistent(self):
        """
        Validates grid, dimensions, tails and adjacency.

        Raises:
            ValueError: If any family invariant fails.

        Returns:
            SampledFamily: The validated family.
        """
        if not self.operators or len(self.grid) != len(self.operators):
            raise ValueError("grid and operators must be nonempty and of equal length")
        if len({op.dim for op in self.operators}) != 1:
            raise ValueError("all operators must share dim")
        if self.tail_rule is not None and any(
            op.tail != self.tail_rule for op in self.operators
        ):
            raise ValueError("all operators must share tail_rule")
        if self.edges is None:
            if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
                raise ValueError("grid must be strictly increasing")
        else:
            n = len(self.grid)
            for i, j in self.edges:
                if not (0 <= i < n and 0 <= j < n) or i == j:
                    raise ValueError(f"invalid edge ({i}, {j})")
        if self.at_infinity and len(self.grid) < 2:
            raise ValueError("a point at infinity needs at least one finite sample")
        return self

    def __len__(self) -> int:
        return len(self.operators)

    @property
    def dim(self) -> int:
        return self.operators[0].dim

    def adjacent_pairs(self) -> list[tuple[int, int]]:
        if self.edges is None:
            return [(i, i + 1) for i in range(len(self.grid) - 1)]
        return sorted({(min(i, j), max(i, j)) for i, j in self.edges})

    def neighbors(self, index: int) -> list[int]:
        found = set()
        for i, j in self.adjacent_pairs():
            if i == index:
                found.add(j)
            elif j == index:
                found.add(i)
        return sorted(found)

    def finite_indices(self) -> list[int]:
        n = len(self.grid)
        return list(range(n - 1)) if self.at_infinity else list(range(n))
