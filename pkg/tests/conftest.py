import os
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from spectra_sect.schema import TailDescriptor, TailKind, TruncatedOperator


@pytest.fixture
def setup_env(tmp_path: Path) -> Generator[Path, None, None]:
    """
    Fixture to set up the test environment by changing the current working directory.

    Args:
        tmp_path: Temporary directory path provided by pytest.

    Yields:
        The temporary directory path.
    """
    original_dir = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(original_dir)


@pytest.fixture
def setup_config_file(setup_env) -> Path:
    """
    Fixture to set up the path of a temporary config file.
    """
    config_dir = setup_env / "config"
    config_dir.mkdir(exist_ok=True)
    return config_dir / "config.json"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def random_operator(rng) -> TruncatedOperator:
    """
    Fixture to create a random 6 x 6 Hermitian operator with a positive tail.

    Returns:
        A TruncatedOperator whose eigenvalues avoid 0.
    """
    z = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    values = np.array([-3.0, -1.5, -0.5, 0.5, 2.0, 4.0])
    q, _ = np.linalg.qr(z)
    return TruncatedOperator(entries=(q * values) @ q.conj().T)


@pytest.fixture
def diagonal_operator() -> TruncatedOperator:
    """Fixture for diag(-2, -0.5, 0.5, 3) with the default positive tail."""
    return TruncatedOperator(entries=np.diag([-2.0, -0.5, 0.5, 3.0]))


@pytest.fixture
def mixed_tail() -> TailDescriptor:
    return TailDescriptor(kind=TailKind.MIXED_SIGNED, sign_pattern=[1, -1])
