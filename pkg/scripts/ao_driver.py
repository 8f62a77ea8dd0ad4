"""
ao_driver.py

Overall alternating optimization of (Q, phi, Xi) for full and partial
CSI, plus the reference pipelines: worst-case and adaptive power backoff,
no-RIS (phi pinned to ones) and the conventional fully-digital array.

Stage order is fixed: covariances -> RIS phases -> DMA weights. A stage
result is kept only if the tracked objective (SE under full CSI, DE
objective under partial CSI) does not drop; rejected stages are logged
and counted.

Project: EM-Exposure-Aware Uplink Optimization
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

import config
import covariance_opt
import det_equiv
import dma_opt
import ris_opt
from model_core import (LN2, NumericalError, DimensionError, PhaseShifts, SarConstraint, StageError,
                        TransmitCovariances, constraint_audit, evaluate_se_full, ris_covariance)

logger = logging.getLogger(__name__)

STAGES = ('covariance', 'phase', 'dma')
ACCEPT_TOL = 1e-12


@dataclass(frozen=True)
class AoConfig:
    """
    Thresholds eps1..eps6 (BCD, MM, DMA fit, DE, inner refresh, overall AO),
    iteration caps, seed and modes.
    """
    eps1: float = config.EPS_BCD
    eps2: float = config.EPS_MM
    eps3: float = config.EPS_DMA
    eps4: float = config.EPS_DE
    eps5: float = config.EPS_INNER
    eps6: float = config.EPS_AO
    max_outer: int = config.MAX_OUTER
    max_bcd: int = 100
    max_mm: int = 200
    max_dma: int = 500
    max_de: int = 2000
    max_sweeps: int = 100
    max_inner: int = 50
    dual_method: str = 'bisection'
    seed: int = 0
    csi_mode: str = 'full'
    dma_set: dma_opt.FeasibleSet = field(default_factory=lambda: dma_opt.FeasibleSet('LP'))
    phase_init: str = 'random'

    def __post_init__(self):
        for name in ('eps1', 'eps2', 'eps3', 'eps4', 'eps5', 'eps6'):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.csi_mode not in ('full', 'partial'):
            raise ValueError(f"csi_mode must be 'full' or 'partial' (got '{self.csi_mode}')")
        if self.phase_init not in ('random', 'ones'):
            raise ValueError(f"phase_init must be 'random' or 'ones' (got '{self.phase_init}')")

    def dual_config(self):
        return covariance_opt.DualConfig(method=self.dual_method, sweep_tol=self.eps5, inner_tol=self.eps5,
                                         max_sweeps=self.max_sweeps, max_inner=self.max_inner)

    def phase_config(self):
        return ris_opt.PhaseConfig(eps_bcd=self.eps1, eps_mm=self.eps2, max_bcd=self.max_bcd, max_mm=self.max_mm)

    def fit_config(self):
        return dma_opt.FitConfig(eps=self.eps3, max_iter=self.max_dma)

    def de_config(self):
        return det_equiv.DeConfig(eps=self.eps4, max_iter=self.max_de)


@dataclass(eq=False)
class AoTrace:
    """
    se_trace holds the tracked objective per outer iteration in bits/s/Hz
    (index 0 is the initial point). final_se is the reported value; it
    differs from se_trace[-1] only for the adaptive backoff baseline.
    """
    se_trace: list
    final_se: float
    converged: bool
    Q: TransmitCovariances
    phi: np.ndarray
    V1tilde: np.ndarray
    dma: object = None
    variant: str = 'proposed'
    csi_mode: str = 'full'
    rejected: dict = field(default_factory=lambda: {s: 0 for s in STAGES})
    counts: dict = field(default_factory=dict)
    backoff: tuple = None
    timings: dict = field(default_factory=dict, compare=False)

    @property
    def iterations(self):
        return len(self.se_trace) - 1


# ---------------------------------------------------------------------------
# Initial point
# ---------------------------------------------------------------------------

def initial_covariances(dims, constraints, link):
    """Q_k = t I with t = min(Pmax / N_k, min_i D_i / tr R_i); feasible by construction."""
    mats = []
    for k, n in enumerate(dims.N):
        t = link.Pmax[k] / n
        for r, d in zip(constraints.R[k], constraints.D[k]):
            t = min(t, d / float(np.real(np.trace(r))))
        mats.append(t * np.eye(n, dtype=complex))
    return TransmitCovariances(tuple(mats))


def initial_phase(n, cfg):
    if cfg.phase_init == 'ones':
        return PhaseShifts.ones(n).phi
    return PhaseShifts.random(n, np.random.default_rng([int(cfg.seed) % (2 ** 64), 2])).phi


def complexity_estimate(dims, counts, csi_mode='full', x=3, sar_per_user=1):
    """
    Operation-count estimate of one AO run from its iteration counts.

    I_AO (I_W (I_A sum N_k^3 + (K + sum A_k)^x) + I_B (N_R^3 + I_M N_R^2) + I_O S^3),
    with per-outer-iteration averages and I_A = 1 under full CSI.
    """
    outer = max(int(counts.get('outer', 0)), 1)
    per = {key: counts.get(key, 0) / outer for key in ('dual', 'inner', 'bcd', 'dma')}
    i_a = max(per['inner'], 1.0) if csi_mode == 'partial' else 1.0
    i_m = counts.get('mm', 0) / max(counts.get('bcd', 0), 1)
    n3 = sum(n ** 3 for n in dims.N)
    duals = (dims.K + dims.K * sar_per_user) ** x
    cost = (per['dual'] * (i_a * n3 + duals)
            + per['bcd'] * (dims.N_R ** 3 + i_m * dims.N_R ** 2)
            + per['dma'] * dims.S ** 3)
    return float(outer * cost)


# ---------------------------------------------------------------------------
# Shared pipeline
# ---------------------------------------------------------------------------

class _Pipeline:
    """State and stage bodies for one AO run."""

    def __init__(self, dims, constraints, link, cfg, ch=None, stats=None, H1=None,
                 optimize_phase=True, optimize_dma=True, fixed_V1=None, variant='proposed'):
        self.dims, self.constraints, self.link, self.cfg = dims, constraints, link, cfg
        self.ch, self.stats = ch, stats
        self.H1 = ch.H1 if ch is not None else H1
        self.partial = cfg.csi_mode == 'partial'
        self.do_phase, self.do_dma = optimize_phase, optimize_dma and fixed_V1 is None
        self.variant = variant
        self.counts = {'outer': 0, 'dual': 0, 'inner': 0, 'sweeps': 0, 'bcd': 0, 'mm': 0, 'dma': 0}
        self.rejected = {s: 0 for s in STAGES}
        self.timings = {s: 0.0 for s in STAGES}

        self.Q = initial_covariances(dims, constraints, link)
        self.phi = initial_phase(dims.N_R, cfg) if optimize_phase else PhaseShifts.ones(dims.N_R).phi
        self.dma = None
        if fixed_V1 is not None:
            self.V1 = fixed_V1
        else:
            try:
                self.dma, _ = self._fit_dma(self._smat())
            except (NumericalError, DimensionError, np.linalg.LinAlgError) as e:
                raise StageError('dma', e) from e
            self.V1 = self.dma.V1tilde
        self.value = self.objective(self.Q, self.phi, self.V1)

    # objective ----------------------------------------------------------
    def objective(self, Q, phi, V1):
        """Tracked objective in nats."""
        if self.partial:
            state = det_equiv.de_fixed_point(Q, self.stats, self.H1, phi, V1, self.link.sigma2, self.cfg.de_config())
            return det_equiv.de_se_nats(state, Q, self.link.sigma2)
        return evaluate_se_full(Q, phi, V1, self.ch, self.link.sigma2) * LN2

    def _smat(self):
        if self.partial:
            return det_equiv.expected_smat(self.stats, self.H1, self.phi, self.Q, self.link.sigma2)
        return dma_opt.full_csi_smat(self.ch, self.phi, self.Q, self.link.sigma2)

    def _fit_dma(self, Smat):
        weights, report = dma_opt.optimize_dma(Smat, self.cfg.dma_set, self.dims.S, self.dims.L, self.cfg.fit_config())
        self.counts['dma'] += report.iterations
        return weights, report

    def _de_state(self):
        return det_equiv.de_fixed_point(self.Q, self.stats, self.H1, self.phi, self.V1,
                                        self.link.sigma2, self.cfg.de_config())

    # stages -------------------------------------------------------------
    def covariance_stage(self):
        dcfg = self.cfg.dual_config()
        if self.partial:
            report, _ = covariance_opt.solve_partial_csi(self.stats, self.H1, self.phi, self.V1, self.constraints,
                                                         self.link, self.cfg.de_config(), dcfg, Q0=self.Q)
            self.counts['inner'] += report.iterations['inner']
        else:
            report = covariance_opt.solve_full_csi(self.ch, self.phi, self.V1, self.constraints, self.link,
                                                   dcfg, Q0=self.Q)
            self.counts['sweeps'] += report.iterations['sweeps']
        self.counts['dual'] += report.iterations['dual']
        return {'Q': report.Q_opt}

    def phase_stage(self):
        if self.partial:
            P = det_equiv.effective_p_tilde(self._de_state(), self.stats)
        else:
            P = ris_covariance(self.ch, self.Q)
        phi, trace = ris_opt.optimize_phase(P, self.H1, self.V1, self.link.sigma2, self.phi, self.cfg.phase_config())
        self.counts['bcd'] += trace.bcd_iterations
        self.counts['mm'] += trace.mm_steps
        return {'phi': phi}

    def dma_stage(self):
        if self.partial:
            Smat = det_equiv.effective_s_tilde(self._de_state(), self.stats, self.H1, self.phi)
        else:
            Smat = self._smat()
        weights, _ = self._fit_dma(Smat)
        return {'dma': weights, 'V1': weights.V1tilde}

    def run_stage(self, name, body):
        start = time.perf_counter()
        try:
            update = body()
            candidate = {'Q': self.Q, 'phi': self.phi, 'V1': self.V1}
            candidate.update({k: v for k, v in update.items() if k in candidate})
            value = self.objective(candidate['Q'], candidate['phi'], candidate['V1'])
        except (NumericalError, DimensionError, np.linalg.LinAlgError) as e:
            raise StageError(name, e) from e
        finally:
            self.timings[name] += time.perf_counter() - start

        if value + ACCEPT_TOL * max(1.0, abs(self.value)) < self.value:
            self.rejected[name] += 1
            logger.warning(f"{name} stage lowered the objective ({self.value / LN2:.9f} -> {value / LN2:.9f} "
                           f"bits/s/Hz); keeping the previous block")
            return
        self.Q, self.phi, self.V1 = candidate['Q'], candidate['phi'], candidate['V1']
        if 'dma' in update:
            self.dma = update['dma']
        self.value = value

    def run(self):
        trace = [self.value / LN2]
        converged = False
        for it in range(1, self.cfg.max_outer + 1):
            self.run_stage('covariance', self.covariance_stage)
            if self.do_phase:
                self.run_stage('phase', self.phase_stage)
            if self.do_dma:
                self.run_stage('dma', self.dma_stage)
            self.counts['outer'] = it
            trace.append(self.value / LN2)
            logger.debug(f"AO {it} ({self.variant}, {self.cfg.csi_mode} CSI): {trace[-1]:.9f} bits/s/Hz")
            if abs(trace[-1] - trace[-2]) <= self.cfg.eps6:
                converged = True
                break

        if not converged:
            logger.warning(f"AO ({self.variant}) hit the cap of {self.cfg.max_outer} outer iterations")
        return AoTrace(se_trace=trace, final_se=trace[-1], converged=converged, Q=self.Q, phi=self.phi,
                       V1tilde=self.V1, dma=self.dma, variant=self.variant, csi_mode=self.cfg.csi_mode,
                       rejected=dict(self.rejected), counts=dict(self.counts), timings=dict(self.timings))


def _audit(trace, constraints, link, tol=1e-6):
    table = constraint_audit(trace.Q, constraints, link.Pmax)
    worst = float(-table['slack'].min()) if len(table) else 0.0
    if worst > tol * max(1.0, float(table['budget'].max())):
        logger.warning(f"Constraint audit ({trace.variant}): violation {worst:.3e}")
    return table


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------

def ao_full_csi(ch, dims, constraints, link, config=AoConfig(), optimize_phase=True, variant='proposed'):
    """
    Alternate covariance, phase and DMA updates on one channel realization
    until the SE changes by at most eps6.
    """
    ch.validate(dims)
    if config.csi_mode != 'full':
        config = _with(config, csi_mode='full')
    trace = _Pipeline(dims, constraints, link, config, ch=ch, optimize_phase=optimize_phase, variant=variant).run()
    _audit(trace, constraints, link)
    return trace


def ao_partial_csi(stats, H1, dims, constraints, link, config=AoConfig(), optimize_phase=True, variant='proposed'):
    """Same alternation on the deterministic-equivalent objective."""
    stats.validate(dims)
    if config.csi_mode != 'partial':
        config = _with(config, csi_mode='partial')
    trace = _Pipeline(dims, constraints, link, config, stats=stats, H1=H1,
                      optimize_phase=optimize_phase, variant=variant).run()
    _audit(trace, constraints, link)
    return trace


def _with(cfg, **changes):
    return replace(cfg, **changes)


def _run(source, dims, constraints, link, cfg, **kwargs):
    if cfg.csi_mode == 'partial':
        stats, H1 = source
        return ao_partial_csi(stats, H1, dims, constraints, link, cfg, **kwargs)
    return ao_full_csi(source, dims, constraints, link, cfg, **kwargs)


def worst_case_backoff_factors(constraints, link):
    """rho1_k = min(1, min_i D_i / (Pmax_k lambda_max(R_i)))."""
    factors = []
    for k, pmax in enumerate(link.Pmax):
        rho = 1.0
        for r, d in zip(constraints.R[k], constraints.D[k]):
            worst = pmax * float(np.linalg.eigvalsh(r)[-1])
            rho = min(rho, d / worst)
        factors.append(rho)
    return tuple(factors)


def baseline_worst_case(source, dims, constraints, link, config=AoConfig()):
    """
    Shrink every budget to rho1 Pmax so that no covariance can exceed the
    SAR budget, then optimize with power constraints only.

    source is a ChannelSet (full CSI) or a (ChannelStatistics, H1) pair.
    """
    rho = worst_case_backoff_factors(constraints, link)
    logger.info(f"Worst-case backoff factors: {', '.join(f'{r:.4g}' for r in rho)}")
    trace = _run(source, dims, SarConstraint.power_only(dims.K), link.scaled(rho), config, variant='worst_case')
    trace.backoff = rho
    _audit(trace, constraints, link)
    return trace


def baseline_adaptive(source, dims, constraints, link, config=AoConfig()):
    """
    Optimize with power constraints only, then scale each user's covariance
    by rho2_k = min(1, min_i D_i / tr(R_i Q_k)) and re-evaluate.
    """
    trace = _run(source, dims, SarConstraint.power_only(dims.K), link, config, variant='adaptive')
    rho = []
    for k, q in enumerate(trace.Q):
        factor = 1.0
        for r, d in zip(constraints.R[k], constraints.D[k]):
            sar = float(np.real(np.trace(r @ q)))
            if sar > 0:
                factor = min(factor, d / sar)
        rho.append(factor)
    trace.Q = trace.Q.scaled(rho)
    trace.backoff = tuple(rho)

    if config.csi_mode == 'partial':
        stats, H1 = source
        state = det_equiv.de_fixed_point(trace.Q, stats, H1, trace.phi, trace.V1tilde, link.sigma2, config.de_config())
        trace.final_se = det_equiv.de_se(state, trace.Q, link.sigma2)
    else:
        trace.final_se = evaluate_se_full(trace.Q, trace.phi, trace.V1tilde, source, link.sigma2)
    _audit(trace, constraints, link)
    return trace


def no_ris_reference(source, dims, constraints, link, config=AoConfig()):
    """Same pipeline with phi pinned to ones (Phi = I) and the phase stage skipped."""
    return _run(source, dims, constraints, link, config, optimize_phase=False, variant='no_ris')


def conventional_reference(source, dims, constraints, link, config=AoConfig()):
    """
    Fully-digital M-antenna array: V1tilde = I_M and the DMA stage skipped.

    source is a ChannelSet (full CSI) or a (ChannelStatistics, H1) pair; with
    partial CSI the run is scored by the deterministic equivalent of the
    ergodic SE of the full array.
    """
    eye = np.eye(dims.M, dtype=complex)
    if config.csi_mode == 'partial':
        stats, H1 = source
        stats.validate(dims)
        pipeline = _Pipeline(dims, constraints, link, config, stats=stats, H1=H1, fixed_V1=eye,
                             variant='conventional')
    else:
        source.validate(dims)
        pipeline = _Pipeline(dims, constraints, link, config, ch=source, fixed_V1=eye, variant='conventional')
    trace = pipeline.run()
    _audit(trace, constraints, link)
    return trace
