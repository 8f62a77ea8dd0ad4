"""
Tests for det_equiv: the gamma/psi fixed point and the derived matrices.
"""

import numpy as np
import pytest

import det_equiv as de
from model_core import TransmitCovariances, monte_carlo_ergodic_se, sample_h2_batch


@pytest.fixture
def covariances():
    return TransmitCovariances((0.02 * np.eye(2), 0.01 * np.eye(2)))


class TestFixedPoint:

    def test_self_consistent(self, small_stats, small_channels, small_link, selector, covariances):
        state = de.de_fixed_point(covariances, small_stats, small_channels.H1, np.ones(8), selector,
                                  small_link.sigma2, de.DeConfig(eps=1e-20, max_iter=5000))
        assert de.de_residual(state, covariances, small_stats) <= 1e-8
        assert all(np.all(g >= 0) for g in state.gamma)
        assert all(np.all(p >= 0) for p in state.psi)

    def test_no_scattering_gives_zero(self, small_stats, small_channels, small_link, selector, covariances):
        stats = small_stats.scaled(0.0)
        state = de.de_fixed_point(covariances, stats, small_channels.H1, np.ones(8), selector, small_link.sigma2)
        assert de.de_se(state, covariances, small_link.sigma2) == pytest.approx(0.0, abs=1e-12)

    def test_zero_covariance_gives_zero(self, small_stats, small_channels, small_link, selector, small_dims):
        Q = TransmitCovariances.zeros(small_dims)
        state = de.de_fixed_point(Q, small_stats, small_channels.H1, np.ones(8), selector, small_link.sigma2)
        assert de.de_se(state, Q, small_link.sigma2) == pytest.approx(0.0, abs=1e-12)

    def test_increases_with_power(self, small_stats, small_channels, small_link, selector, covariances):
        values = []
        for factor in (1.0, 4.0):
            Q = covariances.scaled(factor)
            state = de.de_fixed_point(Q, small_stats, small_channels.H1, np.ones(8), selector, small_link.sigma2)
            values.append(de.de_se(state, Q, small_link.sigma2))
        assert 0 < values[0] < values[1]

    def test_invariant_to_common_noise_and_power_scaling(self, small_stats, small_channels, small_link, selector,
                                                         covariances):
        values = []
        for factor in (1.0, 4.0):
            Q = covariances.scaled(factor)
            sigma2 = factor * small_link.sigma2
            state = de.de_fixed_point(Q, small_stats, small_channels.H1, np.ones(8), selector, sigma2,
                                      de.DeConfig(eps=1e-20, max_iter=5000))
            values.append(de.de_se(state, Q, sigma2))
        assert values[1] == pytest.approx(values[0], rel=1e-7)

    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            de.DeConfig(eps=0.0)

    @pytest.mark.slow
    def test_tracks_monte_carlo(self, small_stats, small_channels, small_link, selector, covariances):
        state = de.de_fixed_point(covariances, small_stats, small_channels.H1, np.ones(8), selector,
                                  small_link.sigma2)
        approx = de.de_se(state, covariances, small_link.sigma2)
        mc = monte_carlo_ergodic_se(small_stats, covariances, np.ones(8), selector, small_link.sigma2,
                                    2000, 0, small_channels.H1)
        assert abs(approx - mc.mean) / mc.mean < 0.15


class TestDerivedMatrices:

    def test_effective_matrices_are_psd(self, small_stats, small_channels, small_link, selector, covariances):
        state = de.de_fixed_point(covariances, small_stats, small_channels.H1, np.ones(8), selector,
                                  small_link.sigma2)
        for M in (de.effective_p_tilde(state, small_stats),
                  de.effective_s_tilde(state, small_stats, small_channels.H1, np.ones(8))):
            assert np.allclose(M, M.conj().T)
            assert np.linalg.eigvalsh(M).min() >= -1e-12 * np.abs(M).max()

    def test_expected_ris_covariance_matches_samples(self, small_stats, covariances):
        rng = np.random.default_rng(99)
        batch = sample_h2_batch(small_stats, rng, 4000)
        empirical = sum(np.mean(H @ q @ np.conj(np.swapaxes(H, -1, -2)), axis=0)
                        for H, q in zip(batch, covariances))
        expected = de.expected_ris_covariance(small_stats, covariances)
        assert np.linalg.norm(empirical - expected) / np.linalg.norm(expected) < 0.1

    def test_expected_smat_scaling(self, small_stats, small_channels, small_link, covariances):
        S1 = de.expected_smat(small_stats, small_channels.H1, np.ones(8), covariances, small_link.sigma2)
        S2 = de.expected_smat(small_stats, small_channels.H1, np.ones(8), covariances.scaled(2.0),
                              small_link.sigma2)
        assert np.allclose(S2, 2 * S1)
