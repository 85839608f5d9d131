"""Shared fixtures for the SSD-Net test suite."""

import numpy as np
import pytest

from src.model.config import ModelConfig
from src.services.synth import DegradationPolicy, make_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """The smallest model the gradient check and the end-to-end tests use."""
    return ModelConfig(width=4, cascade_depth=1, ast_depth=1, heads=2)


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    """Keep a developer's .env out of the tests."""
    for name in ("SSDNET_THREADS", "SSDNET_LOG_LEVEL", "SSDNET_HISTORY_DB"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def small_dataset(tmp_path):
    """Four training and two test pairs at 16×16."""
    return make_dataset(4, 2, seed=7, policy=DegradationPolicy(), out_dir=tmp_path / "data", size=(16, 16))
