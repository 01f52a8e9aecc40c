"""
Beacon Privacy Defense - Pytest Configuration and Fixtures.

Global fixtures: the canonical two-member instance, a seeded random
instance factory, matrix files and temporary directories.
"""

import math
import os
import tempfile
from pathlib import Path
from typing import Callable, Generator

import numpy as np
import pytest
from loguru import logger

from src.core.dataset import AafVector, GenotypeMatrix, save_matrix
from src.core.instance import BeaconInstance
from src.core.verify import f1_instance, random_instance


# ==========================================
# Environment Setup
# ==========================================

@pytest.fixture(scope="session", autouse=True)
def setup_test_environment():
    """
    Keep tests independent of the caller's BEACON_* environment.

    Runs once per session.
    """
    for key in list(os.environ):
        if key.startswith("BEACON_"):
            del os.environ[key]
    os.environ["BEACON_LOG_LEVEL"] = "WARNING"
    yield


# ==========================================
# Temporary Directory Fixtures
# ==========================================

@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """
    Create a temporary directory for tests.

    Yields:
        Path: Path to temporary directory.
    """
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def output_dir(temp_dir: Path) -> Path:
    """Output directory for CLI runs."""
    path = temp_dir / "out"
    path.mkdir()
    return path


# ==========================================
# Instance Fixtures
# ==========================================

F1_BEACON = [[1, 0, 1, 0], [1, 1, 0, 0]]
F1_REFERENCE = [[1, 1, 0, 0], [0, 0, 1, 0]]
F1_AAF = [0.1, 0.2, 0.3, 0.25]
F1_DELTA = 0.1


def f1_closed_form():
    """A_j, B_j from the closed form with plain floats (n = 2, δ = 0.1)."""
    n, d = 2, F1_DELTA
    A, B = [], []
    for f in F1_AAF:
        Dn = (1 - f) ** (2 * n)
        Dn1 = (1 - f) ** (2 * n - 2)
        A.append(math.log((1 - Dn) / (1 - d * Dn1)))
        B.append(math.log(Dn / (d * Dn1)))
    return A, B


@pytest.fixture
def f1() -> BeaconInstance:
    """
    The canonical instance: 2 members, 2 references, 4 SNVs, δ = 0.1.

    x = [1, 1, 1, 0]; η = (-1.207262, -1.443750).
    """
    return f1_instance()


@pytest.fixture
def f1_closed():
    """(A, B) recomputed with math.log."""
    return f1_closed_form()


@pytest.fixture
def f1_matrix_file(temp_dir: Path) -> Path:
    """F1 written as a matrix file; reference ids start with "r"."""
    g = GenotypeMatrix.from_dense(F1_BEACON + F1_REFERENCE, ids=["b0", "b1", "r0", "r1"])
    return save_matrix(g, AafVector(np.array(F1_AAF)), temp_dir / "f1.matrix")


@pytest.fixture
def make_instance() -> Callable[..., BeaconInstance]:
    """
    Seeded random instance factory.

    Example:
        >>> def test_something(make_instance):
        ...     inst = make_instance(3, delta=0.2)
    """
    return random_instance


# ==========================================
# Logging Fixtures
# ==========================================

@pytest.fixture
def log_messages() -> Generator[list, None, None]:
    """Collect loguru messages at DEBUG and above."""
    messages: list = []
    handler_id = logger.add(lambda m: messages.append(m.record["message"]), level="DEBUG")
    yield messages
    logger.remove(handler_id)
