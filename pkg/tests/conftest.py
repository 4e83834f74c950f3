"""
Pytest configuration and shared fixtures.
"""

import json
import tempfile
from pathlib import Path

import pytest

from pbchernoff.cgf import SubGaussianPsi
from pbchernoff.config import reset_settings
from pbchernoff.posterior import FiniteModelClass, ModelEntry


@pytest.fixture
def temp_dir():
    """Create a temporary working directory for testing."""
    with tempfile.TemporaryDirectory(prefix="test-pbc-") as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """Point run logs at a temp dir and reload settings for every test."""
    monkeypatch.setenv("PBC_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("PBC_WORKERS", "2")
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def two_model_class():
    """Two models, uniform prior, n=2, psi(., 1) = (0.1, 0.0)."""
    return FiniteModelClass(
        (
            ModelEntry(0.2, 0.5, SubGaussianPsi(0.2)),
            ModelEntry(0.4, 0.5, SubGaussianPsi(0.0)),
        ),
        n=2,
    )


@pytest.fixture
def three_model_class():
    """emp risks (0.1, 0.2, 0.3), uniform prior, sub-Gaussian sigma^2 = 0.25, n = 101."""
    return FiniteModelClass(
        tuple(ModelEntry(r, 1.0 / 3.0, SubGaussianPsi(0.25)) for r in (0.1, 0.2, 0.3)),
        n=101,
    )


@pytest.fixture
def write_json(temp_dir):
    """Write a JSON document into the temp dir and return its path."""
    def _write(name, document):
        path = temp_dir / name
        path.write_text(json.dumps(document))
        return path
    return _write
