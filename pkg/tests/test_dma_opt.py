"""
Tests for dma_opt: feasible-set projections, the unconstrained optimum and
the constrained fit.
"""

import numpy as np
import pytest

import dma_opt
from model_core import TransmitCovariances, block_mask


@pytest.fixture
def smat(random_psd):
    return random_psd(8, scale=3.0)


class TestProjection:

    def test_unconstrained_is_identity(self):
        T = np.array([1 + 2j, -3j])
        assert np.array_equal(dma_opt.project(T, dma_opt.FeasibleSet('UC')), T)

    def test_amplitude_only_clips_real_part(self):
        out = dma_opt.project(np.array([5 + 1j, -1j, 0.5 - 2j]), dma_opt.FeasibleSet('AO'))
        assert np.allclose(out, [2.0, 0.001, 0.5])

    def test_binary_amplitude(self):
        out = dma_opt.project(np.array([0.2, 0.04 + 1j, 0.06, -1.0]), dma_opt.FeasibleSet('BA'))
        assert np.allclose(out, [0.1, 0.0, 0.1, 0.0])

    def test_lorentzian_circle(self, rng):
        fs = dma_opt.FeasibleSet('LP')
        T = rng.standard_normal(50) + 1j * rng.standard_normal(50)
        out = dma_opt.project(T, fs)
        assert np.allclose(np.abs(out - 0.5j), 0.5)
        circle = 0.5j + 0.5 * np.exp(1j * np.linspace(0, 2 * np.pi, 721))
        for t, p in zip(T, out):
            assert abs(p - t) <= np.abs(circle - t).min() + 1e-12

    def test_lorentzian_center_maps_to_fixed_point(self):
        assert dma_opt.project_entry(0.5j, dma_opt.FeasibleSet('LP')) == pytest.approx(0.5 + 0.5j)

    def test_binary_tie_goes_to_level(self):
        fs = dma_opt.FeasibleSet('BA')
        assert dma_opt.project_entry(0.05, fs) == fs.level
        assert dma_opt.project_entry(0.05 + 0.3j, fs) == fs.level

    def test_binary_matches_brute_force(self, rng):
        fs = dma_opt.FeasibleSet('BA')
        T = 0.2 * (rng.standard_normal(1000) + 1j * rng.standard_normal(1000))
        out = dma_opt.project(T, fs)
        best = np.minimum(np.abs(T), np.abs(T - fs.level))
        assert np.allclose(np.abs(out - T), best)

    def test_reference_points(self):
        assert dma_opt.project_entry(1j, dma_opt.FeasibleSet('LP')) == pytest.approx(1j)
        ao = dma_opt.FeasibleSet('AO')
        assert dma_opt.project_entry(5 + 3j, ao) == 2.0
        assert dma_opt.project_entry(-1.0, ao) == 0.001

    @pytest.mark.parametrize("tag", dma_opt.SET_TAGS)
    def test_projection_is_idempotent(self, rng, tag):
        fs = dma_opt.FeasibleSet(tag)
        T = rng.standard_normal(200) + 1j * rng.standard_normal(200)
        once = dma_opt.project(T, fs)
        assert np.allclose(dma_opt.project(once, fs), once, atol=1e-12)

    def test_unknown_set_rejected(self):
        with pytest.raises(ValueError):
            dma_opt.FeasibleSet('XX')
        with pytest.raises(ValueError):
            dma_opt.FeasibleSet('AO', low=1.0, high=0.5)


class TestUnconstrained:

    def test_top_eigenvectors(self, smat):
        V = dma_opt.unconstrained_v1(smat, 3)
        assert np.allclose(V.conj().T @ V, np.eye(3))
        top = np.sort(np.linalg.eigvalsh(smat))[::-1][:3]
        assert np.allclose(np.sort(np.linalg.eigvalsh(V.conj().T @ smat @ V))[::-1], top)

    def test_procrustes_is_unitary(self, rng):
        Xi = rng.standard_normal((3, 6)) + 1j * rng.standard_normal((3, 6))
        T1 = rng.standard_normal((3, 6)) + 1j * rng.standard_normal((3, 6))
        U = dma_opt.procrustes_u1(Xi, T1)
        assert np.allclose(U.conj().T @ U, np.eye(3))
        best = np.linalg.norm(Xi - U @ T1)
        for _ in range(10):
            W, _ = np.linalg.qr(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
            assert best <= np.linalg.norm(Xi - W @ T1) + 1e-12

    def test_diagonal_scaling_of_own_factor(self, smat):
        V = dma_opt.unconstrained_v1(smat, 3)
        assert np.allclose(np.diag(dma_opt.diagonal_xi(V, V, 1e-6)), 1.0)
        assert np.allclose(np.diag(dma_opt.diagonal_xi(-V, V, 1e-6)), 1e-6)

    def test_diagonal_scaling_is_floored_least_squares(self, rng):
        T2 = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        V = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        delta = 1e-3
        diag = np.diag(dma_opt.diagonal_xi(T2, V, delta))
        grid = np.linspace(delta, 5.0, 20001)
        for s in range(3):
            cost = np.linalg.norm(T2[:, s][None, :] - grid[:, None] * V[:, s][None, :], axis=1) ** 2
            chosen = np.linalg.norm(T2[:, s] - diag[s] * V[:, s]) ** 2
            assert diag[s] >= delta
            assert chosen <= cost.min() + 1e-9


class TestConstrainedFit:

    @pytest.mark.parametrize("tag", dma_opt.SET_TAGS)
    def test_residual_is_nonincreasing(self, smat, tag):
        V1 = dma_opt.unconstrained_v1(smat, 2)
        report = dma_opt.fit_constrained(V1, dma_opt.FeasibleSet(tag), 4)
        trace = report.residual_trace[:3 * report.iterations]
        assert all(b <= a + 1e-9 * max(1.0, a) for a, b in zip(trace, trace[1:]))

    @pytest.mark.parametrize("tag", dma_opt.SET_TAGS)
    def test_weights_are_feasible(self, smat, tag):
        fs = dma_opt.FeasibleSet(tag)
        weights, report = dma_opt.optimize_dma(smat, fs, 2, 4)
        Xi = weights.Xi
        on_block = Xi[block_mask(2, 4)]
        assert np.all(Xi[~block_mask(2, 4)] == 0)
        if tag == 'AO':
            assert np.allclose(on_block.imag, 0.0)
            assert np.all((on_block.real >= fs.low - 1e-12) & (on_block.real <= fs.high + 1e-12))
        elif tag == 'BA':
            assert np.all(np.isclose(on_block, 0.0) | np.isclose(on_block, fs.level))
        elif tag == 'LP':
            assert np.allclose(np.abs(on_block - 0.5j), 0.5)

        assert np.allclose(weights.V1tilde.conj().T @ weights.V1tilde, np.eye(2))
        assert np.allclose(weights.U1 @ weights.XiTilde @ weights.V1tilde.conj().T, Xi)

    def test_rank_guard_activates_empty_rows(self, smat):
        fs = dma_opt.FeasibleSet('BA', level=10.0)
        V1 = dma_opt.unconstrained_v1(smat, 2)
        report = dma_opt.fit_constrained(V1, fs, 4)
        assert report.guarded_rows == (0, 1)
        assert len(report.residual_trace) == 3 * report.iterations + 1
        assert report.residual_trace[-1] > report.residual_trace[-2]
        assert np.count_nonzero(report.Xi_opt.Xi) == 2
        assert np.all(report.Xi_opt.Xi[report.Xi_opt.Xi != 0] == 10.0)

    def test_wrong_row_count(self, smat):
        V1 = dma_opt.unconstrained_v1(smat, 2)
        with pytest.raises(ValueError):
            dma_opt.fit_constrained(V1, dma_opt.FeasibleSet('UC'), 3)

    def test_full_csi_matrix(self, small_channels, small_link):
        Q = TransmitCovariances((0.01 * np.eye(2), 0.01 * np.eye(2)))
        S = dma_opt.full_csi_smat(small_channels, np.ones(8), Q, small_link.sigma2)
        assert S.shape == (8, 8)
        assert np.allclose(S, S.conj().T)
        assert np.linalg.eigvalsh(S).min() >= -1e-10 * np.abs(S).max()
