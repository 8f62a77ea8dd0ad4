"""
dma_opt.py

DMA weight design: the unconstrained optimum (top-S eigenvectors of the
received-signal matrix) followed by a constrained fit that alternates
elementwise projection onto the feasible set, an orthogonal Procrustes
rotation and a positive diagonal scaling.

Feasible sets for the on-block weights:
  UC - unconstrained complex
  AO - real amplitude in [low, high]
  BA - binary amplitude {0, level}
  LP - Lorentzian phase circle (j + e^{j theta}) / 2

Project: EM-Exposure-Aware Uplink Optimization
"""

import logging
from dataclasses import dataclass, field

import numpy as np

import config
from model_core import DmaWeights, block_mask, compact_svd_right_factor, hermitian, ris_covariance

logger = logging.getLogger(__name__)

SET_TAGS = ('UC', 'AO', 'BA', 'LP')
LP_CENTER = 0.5j
LP_DEGENERATE = 0.5 + 0.5j


@dataclass(frozen=True)
class FeasibleSet:
    tag: str
    low: float = 0.001
    high: float = 2.0
    level: float = 0.1

    def __post_init__(self):
        if self.tag not in SET_TAGS:
            raise ValueError(f"unknown DMA feasible set '{self.tag}' (expected one of {', '.join(SET_TAGS)})")
        if self.tag == 'AO' and not 0 < self.low < self.high:
            raise ValueError(f"AO interval needs 0 < low < high (got [{self.low}, {self.high}])")
        if self.tag == 'BA' and self.level <= 0:
            raise ValueError(f"BA level must be positive (got {self.level})")


@dataclass(frozen=True)
class FitConfig:
    eps: float = config.EPS_DMA
    max_iter: int = 500
    delta: float = config.DMA_DELTA


@dataclass(frozen=True, eq=False)
class DmaFitReport:
    Xi_opt: DmaWeights
    residual_trace: tuple
    iterations: int
    converged: bool
    guarded_rows: tuple = field(default_factory=tuple)


def project(T, fs):
    """Nearest point of the feasible set, entrywise."""
    T = np.asarray(T, dtype=complex)
    if fs.tag == 'UC':
        return T.copy()
    if fs.tag == 'AO':
        return np.clip(T.real, fs.low, fs.high).astype(complex)
    if fs.tag == 'BA':
        return np.where(np.abs(T - fs.level) <= np.abs(T), fs.level, 0.0).astype(complex)
    d = T - LP_CENTER
    mag = np.abs(d)
    safe = np.where(mag > 0, mag, 1.0)
    return np.where(mag > 0, LP_CENTER + 0.5 * d / safe, LP_DEGENERATE)


def project_entry(t, fs):
    return complex(project(np.array([t]), fs)[0])


def _activation_value(fs):
    return {'UC': 1.0, 'AO': fs.high, 'BA': fs.level, 'LP': 1j}[fs.tag]


def unconstrained_v1(Smat, S):
    """Top-S eigenvectors of Smat, eigenvalues descending, ties kept in eigh order."""
    w, V = np.linalg.eigh(hermitian(Smat))
    order = np.argsort(-w, kind='stable')
    return V[:, order[:S]]


def procrustes_u1(Xi, T1):
    """Unitary U1 minimizing ||Xi - U1 T1||_F."""
    U, _, Vh = np.linalg.svd(Xi @ T1.conj().T)
    return U @ Vh


def diagonal_xi(T2, V1tilde, delta=config.DMA_DELTA):
    """Per-column least squares of t2_s on v1_s, floored at delta."""
    num = np.real(np.sum(T2.conj() * V1tilde, axis=0))
    den = np.sum(np.abs(V1tilde) ** 2, axis=0)
    return np.diag(np.maximum(num / den, delta))


def fit_residual(Xi, U1, XiTilde, V1tilde):
    return float(np.linalg.norm(Xi - U1 @ XiTilde @ V1tilde.conj().T) ** 2)


def fit_constrained(V1tilde, fs, L, config=FitConfig()):
    """
    Fit block-structured Xi to U1 XiTilde V1tilde^H.

    The residual is logged after each of the three updates, so
    residual_trace is nonincreasing over the loop. A microstrip left with
    no active element after the loop gets its strongest element switched
    on; the residual of the returned Xi is then appended as the last entry.
    """
    M, S = V1tilde.shape
    if M != S * L:
        raise ValueError(f"V1tilde has {M} rows, expected S * L = {S * L}")
    mask = block_mask(S, L)
    U1 = np.eye(S, dtype=complex)
    XiTilde = np.eye(S)
    Xi = np.zeros((S, M), dtype=complex)
    trace = []
    converged = False

    it = 0
    for it in range(1, config.max_iter + 1):
        previous = Xi
        T = U1 @ XiTilde @ V1tilde.conj().T
        Xi = np.where(mask, project(T, fs), 0.0)
        trace.append(fit_residual(Xi, U1, XiTilde, V1tilde))

        U1 = procrustes_u1(Xi, XiTilde @ V1tilde.conj().T)
        trace.append(fit_residual(Xi, U1, XiTilde, V1tilde))

        XiTilde = diagonal_xi(Xi.conj().T @ U1, V1tilde, config.delta)
        trace.append(fit_residual(Xi, U1, XiTilde, V1tilde))

        if np.linalg.norm(Xi - previous) ** 2 <= config.eps:
            converged = True
            break

    if not converged:
        logger.warning(f"DMA fit ({fs.tag}) hit the cap of {config.max_iter} iterations")

    guarded = []
    T = U1 @ XiTilde @ V1tilde.conj().T
    for s in range(S):
        if not np.any(Xi[s]):
            block = slice(s * L, (s + 1) * L)
            col = s * L + int(np.argmax(T[s, block].real))
            Xi[s, col] = _activation_value(fs)
            guarded.append(s)
    if guarded:
        logger.warning(f"DMA fit ({fs.tag}): activated one element on empty microstrips {guarded}")
        trace.append(fit_residual(Xi, U1, XiTilde, V1tilde))

    U, Xt, V = compact_svd_right_factor(Xi)
    weights = DmaWeights(Xi=Xi, set_tag=fs.tag, U1=U, XiTilde=Xt, V1tilde=V)
    return DmaFitReport(weights, tuple(trace), it, converged, tuple(guarded))


def full_csi_smat(ch, phi, Q, sigma2):
    """S = H1 Phi (sum_k H2 Q H2^H) Phi^H H1^H / sigma2 (M x M)."""
    HP = ch.H1 * np.asarray(getattr(phi, 'phi', phi))[None, :]
    return hermitian(HP @ ris_covariance(ch, Q) @ HP.conj().T / sigma2)


def optimize_dma(Smat, fs, S, L, config=FitConfig()):
    """
    Unconstrained V1 from Smat, then the constrained fit.

    Returns:
        tuple: (DmaWeights, DmaFitReport)
    """
    V1 = unconstrained_v1(Smat, S)
    report = fit_constrained(V1, fs, L, config)
    logger.debug(f"DMA fit ({fs.tag}): {report.iterations} iterations, "
                 f"residual {report.residual_trace[-1]:.3e}")
    return report.Xi_opt, report
