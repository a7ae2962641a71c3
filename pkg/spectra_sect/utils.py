import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def as_square_matrix(data) -> np.ndarray:
    """
    Converts array-like input to a complex square matrix.

    Args:
        data: Nested lists or an array.

    Raises:
        ValueError: If the input is not a nonempty square matrix or is not finite.

    Returns:
        np.ndarray: A complex128 copy of the input.
    """
    matrix = np.array(data, dtype=np.complex128)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    if matrix.shape[0] < 1:
        raise ValueError("dim must be at least 1")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix entries must be finite")
    return matrix


def opnorm(matrix: np.ndarray) -> float:
    """
    Operator norm, computed as the largest singular value.

    Args:
        matrix (np.ndarray): Any 2-d array.

    Returns:
        float: The spectral norm, 0 for empty input.
    """
    if matrix.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(matrix)[0])


def hermitian_defect(matrix: np.ndarray) -> float:
    """Largest entry of |M - M*|."""
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(matrix - matrix.conj().T)))


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.conj().T) / 2


def hermitian_function(
    matrix: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """
    Applies a scalar function spectrally to a Hermitian matrix.

    Args:
        matrix (np.ndarray): A Hermitian matrix.
        fn (Callable): Vectorized scalar function of the eigenvalues.

    Returns:
        np.ndarray: U fn(lambda) U*.
    """
    values, vectors = scipy.linalg.eigh(symmetrize(matrix))
    return (vectors * fn(values)) @ vectors.conj().T


def psd_sqrt(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """
    Square root of a positive semidefinite matrix with eigenvalue clamping.

    Args:
        matrix (np.ndarray): A Hermitian matrix that should be positive semidefinite.

    Returns:
        tuple[np.ndarray, float]: The root and the magnitude of the most negative
                                  eigenvalue that was clipped to 0.
    """
    values, vectors = scipy.linalg.eigh(symmetrize(matrix))
    defect = float(max(0.0, -values.min()))
    root = np.sqrt(np.maximum(values, 0.0))
    return (vectors * root) @ vectors.conj().T, defect


def min_abs_eigenvalue(matrix: np.ndarray) -> float:
    values = scipy.linalg.eigvalsh(symmetrize(matrix))
    return float(np.min(np.abs(values)))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """
    Maps fn over items with a thread pool, keeping input order.

    The returned list is complete before this function returns, so callers can
    use it as a barrier between an independent per-item phase and a sequential one.

    Args:
        fn (Callable): Pure function applied to every item.
        items (Iterable): Work items.
        jobs (int): Number of worker threads, 1 runs in the calling thread.

    Returns:
        list: fn(item) for every item, in order.
    """
    work = list(items)
    if jobs <= 1 or len(work) <= 1:
        return [fn(item) for item in work]

    logger.debug("mapping %d items over %d threads", len(work), jobs)
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, work))
