"""
Shared fixtures: a small RIS/DMA system that keeps every solver fast.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / 'scripts'))
sys.path.insert(0, str(ROOT))

from model_core import (H1Spec, LinkBudget, SarConstraint, SystemDims,  # noqa: E402
                        default_statistics, generate_channels)


@pytest.fixture
def small_dims():
    return SystemDims(K=2, N=2, N_R=8, S=2, L=4)


@pytest.fixture
def small_stats(small_dims):
    return default_statistics(small_dims)


@pytest.fixture
def small_channels(small_stats, small_dims):
    return generate_channels(small_stats, small_dims, H1Spec(), seed=3)


@pytest.fixture
def small_link(small_dims):
    return LinkBudget.from_dbm(20.0, small_dims.K)


@pytest.fixture
def small_constraints(small_dims):
    return SarConstraint.uniform(small_dims, 0.8)


@pytest.fixture
def selector(small_dims):
    """First S columns of I_M: an orthonormal V1tilde."""
    return np.eye(small_dims.M, dtype=complex)[:, :small_dims.S]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_psd(rng):
    """Factory for random Hermitian PSD matrices."""
    def make(n, scale=1.0):
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        return scale * (A @ A.conj().T) / n
    return make
