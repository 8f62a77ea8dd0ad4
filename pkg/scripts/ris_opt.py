"""
ris_opt.py

RIS phase-shift design through the WMMSE reformulation.

Outer loop: block coordinate descent over (phi, Ue, We). Inner loop:
majorization-minimization on the unit-modulus quadratic
    g(phi) = phi^H Delta phi - 2 Re{phi^H b*}
with the closed-form step phi = exp(j arg c), c = (lambda_max I - Delta) phi + b*.

P is the covariance seen at the RIS: sum_k H2 Q H2^H under full CSI,
or P~ from the deterministic equivalent under partial CSI.

Project: EM-Exposure-Aware Uplink Optimization
"""

import logging
from dataclasses import dataclass, field

import numpy as np

import config
from model_core import NumericalError, hermitian, psd_sqrt

logger = logging.getLogger(__name__)

EIGH_LIMIT = 256


@dataclass(frozen=True)
class PhaseConfig:
    eps_bcd: float = config.EPS_BCD
    eps_mm: float = config.EPS_MM
    max_bcd: int = 100
    max_mm: int = 200


@dataclass(frozen=True, eq=False)
class WmmseState:
    We: np.ndarray
    Ue: np.ndarray
    h_value: float


@dataclass(frozen=True, eq=False)
class MmWorkspace:
    Delta: np.ndarray
    lambda_max: float
    b: np.ndarray
    g_value: float = float('nan')


@dataclass(eq=False)
class PhaseTrace:
    h_values: list = field(default_factory=list)
    mm_steps: int = 0
    bcd_iterations: int = 0
    converged: bool = False


def _equivalent_channel(phi, P, H1, V1tilde):
    """Heq = V1tilde^H H1 Phi P^1/2 (S x N_R)."""
    return V1tilde.conj().T @ (H1 * phi[None, :]) @ psd_sqrt(P)


def update_ue(phi, P, H1, V1tilde, sigma2):
    """MMSE receiver Ue = (sigma2 I + Heq Heq^H)^-1 Heq."""
    if sigma2 <= 0:
        raise NumericalError("sigma2 must be positive")
    Heq = _equivalent_channel(phi, P, H1, V1tilde)
    S = Heq.shape[0]
    return np.linalg.solve(hermitian(sigma2 * np.eye(S) + Heq @ Heq.conj().T), Heq)


def mse_matrix(Ue, phi, P, H1, V1tilde, sigma2):
    """E_e = sigma2 Ue^H Ue + (Ue^H Heq - I)(Ue^H Heq - I)^H."""
    Heq = _equivalent_channel(phi, P, H1, V1tilde)
    err = Ue.conj().T @ Heq - np.eye(Heq.shape[1])
    return hermitian(sigma2 * Ue.conj().T @ Ue + err @ err.conj().T)


def update_we(Ue, phi, P, H1, V1tilde, sigma2):
    """We = E_e^-1."""
    if sigma2 <= 0:
        raise NumericalError("sigma2 must be positive")
    return hermitian(np.linalg.inv(mse_matrix(Ue, phi, P, H1, V1tilde, sigma2)))


def h_objective(We, Ue, phi, P, H1, V1tilde, sigma2):
    """WMMSE objective tr(We E_e) - ln det We."""
    E = mse_matrix(Ue, phi, P, H1, V1tilde, sigma2)
    sign, logdet = np.linalg.slogdet(We)
    return float(np.real(np.trace(We @ E)) - logdet)


def _largest_eigenvalue(Delta, tol=1e-10, max_iter=10000):
    if Delta.shape[0] <= EIGH_LIMIT:
        return float(np.linalg.eigvalsh(Delta)[-1])
    v = np.ones(Delta.shape[0], dtype=complex) / np.sqrt(Delta.shape[0])
    value = 0.0
    for _ in range(max_iter):
        w = Delta @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        new_value = float(np.real(np.vdot(v, w)))
        v = w / norm
        if abs(new_value - value) <= tol * max(1.0, abs(new_value)):
            return new_value
        value = new_value
    logger.warning("Power iteration for lambda_max did not converge")
    return value


def build_quadratic(We, Ue, P, H1, V1tilde):
    """
    Assemble Delta = A (.) P^T, b = diag(B) and lambda_max(Delta), where
    A = H1^H V1 Ue We Ue^H V1^H H1 and B = P^1/2 We Ue^H V1^H H1.
    """
    X = Ue.conj().T @ V1tilde.conj().T @ H1
    A = hermitian(X.conj().T @ We @ X)
    B = psd_sqrt(P) @ We @ X
    Delta = hermitian(A * P.T)
    return MmWorkspace(Delta=Delta, lambda_max=_largest_eigenvalue(Delta), b=np.diag(B).copy())


def g_objective(ws, phi):
    return float(np.real(np.vdot(phi, ws.Delta @ phi)) - 2.0 * np.real(np.vdot(phi, ws.b.conj())))


def majorizer(ws, phi, phi0):
    """Surrogate of g at phi0, valid for unit-modulus phi."""
    n = phi0.size
    resid = ws.lambda_max * phi0 - ws.Delta @ phi0
    return float(2.0 * ws.lambda_max * n
                 - np.real(np.vdot(phi0, ws.Delta @ phi0))
                 - 2.0 * np.real(np.vdot(phi, resid))
                 - 2.0 * np.real(np.vdot(phi, ws.b.conj())))


def mm_step(ws, phi):
    """Minimize the surrogate; entries with c_n = 0 keep their phase."""
    c = ws.lambda_max * phi - ws.Delta @ phi + ws.b.conj()
    mag = np.abs(c)
    out = phi.copy()
    active = mag > 0
    out[active] = c[active] / mag[active]
    return out


def optimize_phase(P, H1, V1tilde, sigma2, phi0, config=PhaseConfig()):
    """
    Alternate phi (MM), Ue and We until the WMMSE objective settles.

    Ue and We start from their closed forms at phi0.

    Returns:
        tuple: (phi, PhaseTrace); trace.h_values is nonincreasing
    """
    phi = np.asarray(getattr(phi0, 'phi', phi0), dtype=complex).copy()
    P = hermitian(P)
    Ue = update_ue(phi, P, H1, V1tilde, sigma2)
    We = update_we(Ue, phi, P, H1, V1tilde, sigma2)
    h = h_objective(We, Ue, phi, P, H1, V1tilde, sigma2)
    trace = PhaseTrace(h_values=[h])

    for it in range(1, config.max_bcd + 1):
        ws = build_quadratic(We, Ue, P, H1, V1tilde)
        g = g_objective(ws, phi)
        for _ in range(config.max_mm):
            phi = mm_step(ws, phi)
            trace.mm_steps += 1
            g_new = g_objective(ws, phi)
            done = abs(g - g_new) <= config.eps_mm * max(1.0, abs(g))
            g = g_new
            if done:
                break

        Ue = update_ue(phi, P, H1, V1tilde, sigma2)
        We = update_we(Ue, phi, P, H1, V1tilde, sigma2)
        h_new = h_objective(We, Ue, phi, P, H1, V1tilde, sigma2)
        trace.h_values.append(h_new)
        trace.bcd_iterations = it
        logger.debug(f"BCD {it}: h = {h_new:.9f}")
        if abs(h - h_new) <= config.eps_bcd:
            trace.converged = True
            break
        h = h_new

    if not trace.converged:
        logger.warning(f"Phase optimization hit the cap of {config.max_bcd} BCD iterations")
    return phi, trace
