"""
Tests for ao_driver: the alternating optimization and the reference
pipelines. Full AO runs are marked slow.
"""

from types import SimpleNamespace

import numpy as np
import pytest

import ao_driver
from model_core import (LinkBudget, NumericalError, StageError, TransmitCovariances, constraint_audit,
                        sar_matrix)


@pytest.fixture
def fast_config():
    return ao_driver.AoConfig(max_outer=4, eps6=1e-4, max_bcd=20, max_dma=100, seed=2)


def _feasible(trace, constraints, link):
    audit = constraint_audit(trace.Q, constraints, link.Pmax)
    return bool((audit['slack'] >= -1e-9 * audit['budget']).all())


def _monotone(values, tol=1e-9):
    return all(b >= a - tol * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


class TestHelpers:

    def test_initial_covariances_feasible(self, small_dims, small_constraints, small_link):
        Q = ao_driver.initial_covariances(small_dims, small_constraints, small_link)
        audit = constraint_audit(Q, small_constraints, small_link.Pmax)
        assert (audit['slack'] >= -1e-12).all()
        assert np.allclose(Q[0], Q[0][0, 0] * np.eye(2))

    def test_initial_phase_is_seeded(self, fast_config):
        a = ao_driver.initial_phase(8, fast_config)
        b = ao_driver.initial_phase(8, fast_config)
        assert np.array_equal(a, b)
        assert np.allclose(np.abs(a), 1.0)
        ones = ao_driver.initial_phase(8, ao_driver.AoConfig(phase_init='ones'))
        assert np.array_equal(ones, np.ones(8))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ao_driver.AoConfig(eps6=0.0)
        with pytest.raises(ValueError):
            ao_driver.AoConfig(csi_mode='none')

    def test_worst_case_factors(self, small_dims, small_constraints):
        low = LinkBudget.from_dbm(0.0, small_dims.K)
        assert ao_driver.worst_case_backoff_factors(small_constraints, low) == (1.0, 1.0)

        high = LinkBudget.from_dbm(30.0, small_dims.K)
        expected = 0.8 / np.linalg.eigvalsh(sar_matrix(2))[-1]
        assert ao_driver.worst_case_backoff_factors(small_constraints, high) == pytest.approx((expected, expected))

    def test_complexity_grows_with_iterations(self, small_dims):
        base = {'outer': 2, 'dual': 4, 'inner': 0, 'bcd': 6, 'mm': 30, 'dma': 10}
        more = dict(base, bcd=12, mm=60)
        low = ao_driver.complexity_estimate(small_dims, base)
        assert low > 0
        assert ao_driver.complexity_estimate(small_dims, more) > low


class TestFullCsi:

    def test_trace_is_monotone_and_feasible(self, small_channels, small_dims, small_constraints, small_link,
                                            fast_config):
        trace = ao_driver.ao_full_csi(small_channels, small_dims, small_constraints, small_link, fast_config)
        assert _monotone(trace.se_trace)
        assert trace.final_se == trace.se_trace[-1] > 0
        assert 1 <= trace.iterations <= fast_config.max_outer
        assert _feasible(trace, small_constraints, small_link)
        assert trace.dma is not None and trace.dma.set_tag == 'LP'
        assert trace.counts['outer'] == trace.iterations

    def test_rejected_stage_is_counted(self, small_channels, small_dims, small_constraints, small_link,
                                       fast_config, monkeypatch):
        def zero_power(ch, phi, V1, constraints, link, config, Q0=None):
            Q = TransmitCovariances(tuple(np.zeros_like(q) for q in Q0))
            return SimpleNamespace(Q_opt=Q, iterations={'dual': 0, 'sweeps': 0})

        monkeypatch.setattr(ao_driver.covariance_opt, 'solve_full_csi', zero_power)
        cfg = ao_driver.AoConfig(max_outer=2, max_bcd=5, max_dma=50)
        trace = ao_driver.ao_full_csi(small_channels, small_dims, small_constraints, small_link, cfg)
        assert trace.rejected['covariance'] >= 1
        assert trace.Q.traces().sum() > 0

    def test_stage_failure_is_wrapped(self, small_channels, small_dims, small_constraints, small_link,
                                      fast_config, monkeypatch):
        def broken(*args, **kwargs):
            raise NumericalError("synthetic failure")

        monkeypatch.setattr(ao_driver.ris_opt, 'optimize_phase', broken)
        with pytest.raises(StageError) as info:
            ao_driver.ao_full_csi(small_channels, small_dims, small_constraints, small_link, fast_config)
        assert info.value.stage == 'phase'

    def test_no_ris_keeps_unit_phases(self, small_channels, small_dims, small_constraints, small_link,
                                      fast_config):
        trace = ao_driver.no_ris_reference(small_channels, small_dims, small_constraints, small_link, fast_config)
        assert np.array_equal(trace.phi, np.ones(8))
        assert trace.variant == 'no_ris'
        assert trace.counts['bcd'] == 0

    def test_conventional_uses_every_antenna(self, small_channels, small_dims, small_constraints, small_link,
                                             fast_config):
        trace = ao_driver.conventional_reference(small_channels, small_dims, small_constraints, small_link,
                                                 fast_config)
        assert np.array_equal(trace.V1tilde, np.eye(8))
        assert trace.dma is None
        assert trace.counts['dma'] == 0

    @pytest.mark.slow
    def test_sar_saturates_power(self, small_channels, small_dims, small_constraints, fast_config):
        values = []
        for pmax_dbm in (50.0, 60.0):
            link = LinkBudget.from_dbm(pmax_dbm, small_dims.K)
            values.append(ao_driver.ao_full_csi(small_channels, small_dims, small_constraints, link,
                                                fast_config).final_se)
        assert values[0] == pytest.approx(values[1], rel=1e-3)

    @pytest.mark.slow
    def test_proposed_beats_worst_case(self, small_channels, small_dims, small_constraints, fast_config):
        link = LinkBudget.from_dbm(30.0, small_dims.K)
        proposed = ao_driver.ao_full_csi(small_channels, small_dims, small_constraints, link, fast_config)
        worst = ao_driver.baseline_worst_case(small_channels, small_dims, small_constraints, link, fast_config)
        assert worst.backoff[0] < 1.0
        assert proposed.final_se > worst.final_se
        assert _feasible(worst, small_constraints, link)

    @pytest.mark.slow
    def test_adaptive_backoff_is_feasible(self, small_channels, small_dims, small_constraints, fast_config):
        link = LinkBudget.from_dbm(30.0, small_dims.K)
        trace = ao_driver.baseline_adaptive(small_channels, small_dims, small_constraints, link, fast_config)
        assert _feasible(trace, small_constraints, link)
        assert all(0 < r <= 1 for r in trace.backoff)
        assert trace.final_se <= trace.se_trace[-1] + 1e-12


@pytest.mark.slow
class TestPartialCsi:

    def test_trace_is_monotone_and_feasible(self, small_stats, small_channels, small_dims, small_constraints,
                                            small_link, fast_config):
        trace = ao_driver.ao_partial_csi(small_stats, small_channels.H1, small_dims, small_constraints,
                                         small_link, fast_config)
        assert trace.csi_mode == 'partial'
        assert _monotone(trace.se_trace)
        assert trace.final_se > 0
        assert _feasible(trace, small_constraints, small_link)
        assert trace.counts['inner'] >= 1

    def test_worst_case_accepts_statistics(self, small_stats, small_channels, small_dims, small_constraints,
                                           fast_config):
        link = LinkBudget.from_dbm(30.0, small_dims.K)
        cfg = ao_driver.AoConfig(max_outer=2, max_bcd=10, max_dma=50, csi_mode='partial')
        trace = ao_driver.baseline_worst_case((small_stats, small_channels.H1), small_dims, small_constraints,
                                              link, cfg)
        assert trace.variant == 'worst_case'
        assert _feasible(trace, small_constraints, link)

    def test_conventional_scores_with_statistics(self, small_stats, small_channels, small_dims, small_constraints,
                                                 small_link):
        cfg = ao_driver.AoConfig(max_outer=2, max_bcd=10, max_dma=50, csi_mode='partial')
        trace = ao_driver.conventional_reference((small_stats, small_channels.H1), small_dims, small_constraints,
                                                 small_link, cfg)
        assert (trace.variant, trace.csi_mode) == ('conventional', 'partial')
        assert np.array_equal(trace.V1tilde, np.eye(8))
        assert trace.dma is None
        assert trace.final_se > 0
        assert _monotone(trace.se_trace, tol=1e-7)
        assert _feasible(trace, small_constraints, small_link)
