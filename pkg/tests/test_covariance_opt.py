"""
Tests for covariance_opt: modified water-filling, dual solvers and the
multiuser full/partial CSI loops.
"""

import numpy as np
import pytest

import covariance_opt as co
from det_equiv import DeConfig
from model_core import NumericalError, SarConstraint, constraint_audit, sar_matrix


def _psd_gain(rng, n, top=20.0):
    U, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    w = np.linspace(top, top / 10, n)
    return (U * w) @ U.conj().T


def _objective(prob, Q):
    return co.inner_logdet(prob.gain, Q)


class TestWaterFill:

    def test_scalar_closed_form(self):
        Q, p = co.water_fill(np.array([[4.0]]), np.array([[0.5]]))
        assert p[0] == pytest.approx(8.0)
        assert Q[0, 0].real == pytest.approx(1 / 0.5 - 1 / 4.0)

    def test_scalar_below_water_level(self):
        Q, _ = co.water_fill(np.array([[0.2]]), np.array([[1.0]]))
        assert Q[0, 0] == pytest.approx(0.0)

    def test_maximizes_lagrangian(self, rng, random_psd):
        gain = random_psd(4, scale=5.0)
        Kmat = 0.3 * np.eye(4) + 0.05 * sar_matrix(4)
        Q, _ = co.water_fill(gain, Kmat)
        best = co.lagrangian_value(gain, Q, Kmat)
        for _ in range(20):
            trial = random_psd(4, scale=rng.uniform(0.01, 3.0))
            assert co.lagrangian_value(gain, trial, Kmat) <= best + 1e-10

    @pytest.mark.parametrize("instance", range(20))
    def test_no_psd_perturbation_improves_lagrangian(self, instance, random_psd):
        rng = np.random.default_rng(500 + instance)
        gain = _psd_gain(rng, 4, top=rng.uniform(1.0, 50.0))
        Kmat = rng.uniform(0.05, 1.0) * np.eye(4) + rng.uniform(0.0, 0.2) * sar_matrix(4)
        Q, _ = co.water_fill(gain, Kmat)
        best = co.lagrangian_value(gain, Q, Kmat)
        for step in (1e-4, 1e-2, 1.0):
            for _ in range(10):
                trial = Q + random_psd(4, scale=step)
                assert co.lagrangian_value(gain, trial, Kmat) <= best + 1e-8

    def test_singular_dual_matrix_rejected(self):
        with pytest.raises(NumericalError):
            co.water_fill(np.eye(2), np.zeros((2, 2)))


class TestDualSolvers:

    def test_invalid_method(self):
        with pytest.raises(ValueError):
            co.DualConfig(method='newton')

    @pytest.mark.parametrize("pmax, expected", [(1.0, 0.1), (0.05, 0.05)])
    def test_scalar_sar_or_power_limited(self, pmax, expected):
        # one antenna, r = 8, D = 0.8: q* = min(Pmax, D / r)
        prob = co.UserProblem(np.array([[50.0]]), pmax, (np.array([[8.0]]),), (0.8,))
        sol = co.solve_user(prob)
        assert sol.Q[0, 0].real == pytest.approx(expected, rel=1e-6)
        assert sol.converged

    def test_power_only_uses_full_budget(self, rng):
        prob = co.UserProblem(_psd_gain(rng, 3), 2.0)
        report = co.dual_ascent([prob])
        assert report.Q_opt.traces()[0] == pytest.approx(2.0, rel=1e-8)
        assert report.duals.lam == ((),)
        assert report.converged

    def test_sar_saturation_at_high_power(self, rng):
        gain = _psd_gain(rng, 4, top=1e3)
        R = sar_matrix(4)
        values = []
        for pmax_dbm in (50.0, 60.0):
            prob = co.UserProblem(gain, 10 ** ((pmax_dbm - 30) / 10), (R,), (0.8,))
            sol = co.solve_user(prob)
            assert np.real(np.trace(sol.Q)) < 0.8 / np.linalg.eigvalsh(R)[0] + 1e-9
            values.append(_objective(prob, sol.Q))
        assert values[0] == pytest.approx(values[1], rel=1e-6)

    def test_kkt_products_vanish(self, rng):
        R = sar_matrix(4)
        problems = [co.UserProblem(_psd_gain(rng, 4), 1.0, (R,), (0.8,)),
                    co.UserProblem(_psd_gain(rng, 4), 0.01, (R,), (0.8,))]
        report = co.dual_ascent(problems)
        assert max(abs(r) for r in report.kkt_residuals) < 1e-6
        assert report.iterations['dual'] >= 2

    def test_subgradient_never_beats_bisection(self, rng):
        prob = co.UserProblem(_psd_gain(rng, 4), 1.0, (sar_matrix(4),), (0.8,))
        exact = co.solve_user(prob)
        approx = co.solve_user(prob, co.DualConfig(method='subgradient', subgradient_iter=2000))
        assert _objective(prob, approx.Q) <= _objective(prob, exact.Q) + 1e-9
        assert np.real(np.trace(approx.Q)) <= 1.0 + 1e-12
        assert approx.dual_trace == sorted(approx.dual_trace, reverse=True)

    def test_dual_methods_agree_on_scalar_sar_problem(self):
        prob = co.UserProblem(np.array([[50.0]]), 1.0, (np.array([[8.0]]),), (0.8,))
        exact = co.solve_user(prob)
        approx = co.solve_user(prob, co.DualConfig(method='subgradient', subgradient_iter=20000))
        assert approx.converged
        assert approx.Q[0, 0].real == pytest.approx(exact.Q[0, 0].real, abs=1e-6)

    def test_dual_methods_agree_on_power_only_problem(self, rng):
        prob = co.UserProblem(_psd_gain(rng, 3), 2.0)
        exact = co.solve_user(prob)
        approx = co.solve_user(prob, co.DualConfig(method='subgradient', subgradient_iter=20000))
        assert _objective(prob, approx.Q) == pytest.approx(_objective(prob, exact.Q), rel=1e-5)

    def test_clamp_feasible(self):
        prob = co.UserProblem(np.eye(2), 1.0, (sar_matrix(2),), (0.8,))
        Q = co.clamp_feasible(prob, np.eye(2))
        assert np.real(np.trace(sar_matrix(2) @ Q)) == pytest.approx(0.8)


class TestMultiuser:

    def test_full_csi_sweeps_are_monotone(self, small_channels, small_constraints, small_link, selector):
        report = co.solve_full_csi(small_channels, np.ones(8), selector, small_constraints, small_link)
        trace = report.objective_trace
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
        assert trace[-1] > 0
        assert set(report.iterations) == {'dual', 'sweeps'}

        audit = constraint_audit(report.Q_opt, small_constraints, small_link.Pmax)
        assert (audit['slack'] >= -1e-9 * audit['budget']).all()

    def test_full_csi_sar_free_uses_power(self, small_channels, small_dims, small_link, selector):
        report = co.solve_full_csi(small_channels, np.ones(8), selector, SarConstraint.power_only(small_dims.K),
                                   small_link)
        assert np.allclose(report.Q_opt.traces(), small_link.Pmax, rtol=1e-6)

    def test_partial_csi_refreshes_are_monotone(self, small_stats, small_channels, small_constraints,
                                                small_link, selector):
        report, state = co.solve_partial_csi(small_stats, small_channels.H1, np.ones(8), selector,
                                             small_constraints, small_link, DeConfig())
        trace = report.objective_trace
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
        assert set(report.iterations) == {'dual', 'inner'}
        assert len(state.Gamma) == 2

        audit = constraint_audit(report.Q_opt, small_constraints, small_link.Pmax)
        assert (audit['slack'] >= -1e-9 * audit['budget']).all()
