"""
det_equiv.py

Deterministic equivalent of the ergodic SE when only the Weichselberger
statistics of the user->RIS channels are known.

The gamma / psi fixed point is iterated jointly over users; the converged
parameters give the DE objective and the effective matrices P~ (RIS
phase stage) and S~ (DMA stage).

Project: EM-Exposure-Aware Uplink Optimization
"""

import logging
from dataclasses import dataclass

import numpy as np

import config
from model_core import LN2, TransmitCovariances, hermitian, logdet_pd, psd_sqrt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeConfig:
    """
    eps bounds ||psi_new - psi||^2 relative to max(1, ||psi||^2); psi
    scales like 1/sigma2, so an absolute bound would never trigger.
    """
    eps: float = config.EPS_DE
    max_iter: int = 2000
    damping_after: int = 200

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("DE tolerance must be positive")


@dataclass(frozen=True, eq=False)
class DeState:
    gamma: tuple
    psi: tuple
    Gamma: tuple
    Psi: tuple
    U_G: tuple
    omega: tuple
    sigma2: float
    iterations: int = 0
    converged: bool = True


def _covs(Q):
    return Q.Q if isinstance(Q, TransmitCovariances) else tuple(np.asarray(q) for q in Q)


def _phase(phi):
    return getattr(phi, 'phi', np.asarray(phi, dtype=complex).ravel())


def u_g_matrices(stats, H1, phi, V1tilde):
    """U_G[k] = V1tilde^H H1 Phi U2[k] (S x N_R)."""
    front = V1tilde.conj().T @ (H1 * _phase(phi)[None, :])
    return tuple(front @ U for U in stats.U2)


def _update(psi, Q_half, U_G, stats, sigma2):
    """One pass through the four parameter maps, starting from psi."""
    Psi = tuple(hermitian((ug * (om @ ps)[None, :]) @ ug.conj().T)
                for ug, om, ps in zip(U_G, stats.Omega2, psi))
    T = np.eye(U_G[0].shape[0], dtype=complex) + sum(Psi)

    gamma, Gamma, psi_new = [], [], []
    for ug, om, V, qh in zip(U_G, stats.Omega2, stats.V2, Q_half):
        g = np.clip(np.real(np.sum(ug.conj() * np.linalg.solve(T, ug), axis=0)), 0.0, None)
        Gk = hermitian((V * (om.T @ g)[None, :]) @ V.conj().T)
        n = V.shape[0]
        inner = qh @ np.linalg.solve(sigma2 * np.eye(n) + qh @ Gk @ qh, qh)
        p = np.clip(np.real(np.sum(V.conj() * (inner @ V), axis=0)), 0.0, None)
        gamma.append(g)
        Gamma.append(Gk)
        psi_new.append(p)
    return tuple(gamma), tuple(Gamma), Psi, tuple(psi_new)


def de_fixed_point(Q, stats, H1, phi, V1tilde, sigma2, config=DeConfig()):
    """
    Iterate the gamma / psi equations from psi = 1 until psi settles.

    After config.damping_after iterations the update is averaged with the
    previous psi. The returned Gamma, Psi and gamma are recomputed from
    the final psi, so all four families are mutually consistent.

    Returns:
        DeState
    """
    Q = _covs(Q)
    U_G = u_g_matrices(stats, H1, phi, V1tilde)
    Q_half = tuple(psd_sqrt(q) for q in Q)
    psi = tuple(np.ones(V.shape[0]) for V in stats.V2)

    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        new = _update(psi, Q_half, U_G, stats, sigma2)[3]
        if it > config.damping_after:
            new = tuple((a + b) / 2 for a, b in zip(new, psi))
        diff = sum(float(np.sum((a - b) ** 2)) for a, b in zip(new, psi))
        size = sum(float(np.sum(a ** 2)) for a in new)
        psi = new
        if diff <= config.eps * max(1.0, size):
            converged = True
            break

    if not converged:
        logger.warning(f"DE fixed point did not settle in {config.max_iter} iterations")
    elif it > config.damping_after:
        logger.debug(f"DE fixed point needed damping ({it} iterations)")

    gamma, Gamma, Psi, _ = _update(psi, Q_half, U_G, stats, sigma2)
    return DeState(gamma=gamma, psi=psi, Gamma=Gamma, Psi=Psi, U_G=U_G,
                   omega=stats.Omega2, sigma2=float(sigma2), iterations=it, converged=converged)


def de_residual(state, Q, stats):
    """Largest relative change of (gamma, psi) when the state is pushed through the maps once more."""
    Q_half = tuple(psd_sqrt(q) for q in _covs(Q))
    gamma, _, _, psi = _update(state.psi, Q_half, state.U_G, stats, state.sigma2)
    worst = 0.0
    for old, new in list(zip(state.gamma, gamma)) + list(zip(state.psi, psi)):
        worst = max(worst, float(np.linalg.norm(new - old) / max(np.linalg.norm(old), np.finfo(float).tiny)))
    return worst


def de_se_nats(state, Q, sigma2):
    total = 0.0
    for Gk, q in zip(state.Gamma, _covs(Q)):
        qh = psd_sqrt(q)
        total += logdet_pd(np.eye(q.shape[0]) + qh @ Gk @ qh / sigma2, "I + Gamma Q / sigma2")
    total += logdet_pd(np.eye(state.Psi[0].shape[0]) + sum(state.Psi), "I + sum Psi")
    total -= sum(float(g @ om @ p) for g, om, p in zip(state.gamma, state.omega, state.psi))
    return total


def de_se(state, Q, sigma2):
    """DE approximation of the ergodic SE in bits/s/Hz."""
    return de_se_nats(state, Q, sigma2) / LN2


def effective_p_tilde(state, stats):
    """P~ = sigma2 sum_k U2[k] diag(Omega2[k] psi[k]) U2[k]^H; replaces P in the phase stage."""
    P = sum((U * (om @ p)[None, :]) @ U.conj().T for U, om, p in zip(stats.U2, stats.Omega2, state.psi))
    return hermitian(state.sigma2 * P)


def effective_s_tilde(state, stats, H1, phi):
    """S~ = sum_k H1 Phi U2[k] diag(Omega2[k] psi[k]) U2[k]^H Phi^H H1^H; replaces S in the DMA stage."""
    HP = H1 * _phase(phi)[None, :]
    inner = sum((U * (om @ p)[None, :]) @ U.conj().T for U, om, p in zip(stats.U2, stats.Omega2, state.psi))
    return hermitian(HP @ inner @ HP.conj().T)


def expected_ris_covariance(stats, Q):
    """E[sum_k H2[k] Q[k] H2[k]^H] under the Weichselberger law."""
    total = 0
    for U, V, om, q in zip(stats.U2, stats.V2, stats.Omega2, _covs(Q)):
        load = np.real(np.diag(V.conj().T @ q @ V))
        total = total + (U * (om @ load)[None, :]) @ U.conj().T
    return hermitian(total)


def expected_smat(stats, H1, phi, Q, sigma2):
    """Average of the full-CSI DMA matrix S over the user->RIS channels."""
    HP = H1 * _phase(phi)[None, :]
    return hermitian(HP @ expected_ris_covariance(stats, Q) @ HP.conj().T / sigma2)
