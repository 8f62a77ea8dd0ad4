"""
covariance_opt.py

Transmit-covariance design under power and SAR budgets.

Each user's covariance solves
    max ln det(I + M Q) - tr(K Q),   K = mu I + sum_i lambda_i R_i
in closed form (modified water-filling), while the duals (mu, lambda)
are found by minimizing the Lagrange dual. Full CSI couples the users
through Gauss-Seidel sweeps; partial CSI alternates deterministic-
equivalent refreshes with per-user dual solves.

Project: EM-Exposure-Aware Uplink Optimization
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

import config
import det_equiv
from model_core import (NumericalError, TransmitCovariances, effective_channels,
                        hermitian, sar_value, se_nats)

logger = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-16


@dataclass(frozen=True)
class DualConfig:
    """
    Dual solver settings.

    method is "bisection" (exact coordinate-wise dual minimization by
    nested root finding) or "subgradient" (projected, step a/sqrt(t)).
    """
    method: str = 'bisection'
    tol: float = 1e-6
    max_iter: int = 100
    subgradient_iter: int = 5000
    step_scale: float = 1.0
    mu_floor: float = config.MU_FLOOR
    sweep_tol: float = config.EPS_INNER
    max_sweeps: int = 100
    inner_tol: float = config.EPS_INNER
    max_inner: int = 50

    def __post_init__(self):
        if self.method not in ('bisection', 'subgradient'):
            raise ValueError(f"unknown dual method '{self.method}'")
        if self.mu_floor <= 0:
            raise ValueError("mu_floor must be positive")


@dataclass(frozen=True)
class DualState:
    mu: tuple
    lam: tuple

    def __post_init__(self):
        assert all(m >= 0 for m in self.mu), "power duals must be nonnegative"
        assert all(l >= 0 for lk in self.lam for l in lk), "SAR duals must be nonnegative"


@dataclass(frozen=True, eq=False)
class UserProblem:
    """max ln det(I + gain Q) s.t. tr Q <= pmax, tr(R_i Q) <= D_i."""
    gain: np.ndarray
    pmax: float
    R: tuple = ()
    D: tuple = ()


@dataclass(eq=False)
class UserSolution:
    Q: np.ndarray
    mu: float
    lam: np.ndarray
    passes: int
    converged: bool
    dual_trace: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class WaterFillReport:
    Q_opt: TransmitCovariances
    duals: DualState
    kkt_residuals: tuple
    iterations: dict
    objective_trace: tuple
    converged: bool
    dual_trace: tuple = ()


# ---------------------------------------------------------------------------
# Closed-form inner solution
# ---------------------------------------------------------------------------

def water_fill(gain, Kmat):
    """
    Maximize ln det(I + gain Q) - tr(Kmat Q) over Hermitian PSD Q.

    Returns:
        tuple: (Q, p) where p are the eigenvalues of K^-1/2 gain K^-1/2
    """
    w, V = np.linalg.eigh(hermitian(Kmat))
    if w.min() <= 0:
        raise NumericalError("K is singular; keep the power dual above the floor (mu >= 1e-12)")
    k_inv_half = (V / np.sqrt(w)) @ V.conj().T
    p, U = np.linalg.eigh(hermitian(k_inv_half @ gain @ k_inv_half))
    level = np.where(p > 1.0, 1.0 - 1.0 / np.where(p > 1.0, p, 1.0), 0.0)
    B = k_inv_half @ U
    return hermitian((B * level) @ B.conj().T), p


def dual_matrix(mu, lam, R, n):
    Kmat = mu * np.eye(n, dtype=complex)
    for l, r in zip(lam, R):
        Kmat = Kmat + l * r
    return Kmat


def inner_logdet(gain, Q):
    """ln det(I + gain Q) through the Hermitian form I + Q^1/2 gain Q^1/2."""
    w, V = np.linalg.eigh(hermitian(Q))
    half = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T
    sign, value = np.linalg.slogdet(np.eye(Q.shape[0]) + half @ gain @ half)
    return float(value)


def lagrangian_value(gain, Q, Kmat):
    return inner_logdet(gain, Q) - float(np.real(np.trace(Kmat @ Q)))


def optimal_q_given_duals_full(k, duals, G, Q, sigma2, constraints, solver=water_fill):
    """
    User k's water-filling covariance given the duals and the other users' covariances.

    C_ipn = sigma2 I + sum_{j != k} G_j Q_j G_j^H is the interference-plus-noise
    covariance; the user sees gain G_k^H C_ipn^-1 G_k.
    """
    mu = max(duals.mu[k], config.MU_FLOOR)
    gain = full_csi_gain(k, G, Q, sigma2)
    Kmat = dual_matrix(mu, duals.lam[k], constraints.R[k], gain.shape[0])
    return solver(gain, Kmat)[0]


def full_csi_gain(k, G, Q, sigma2):
    S = G[k].shape[0]
    C = sigma2 * np.eye(S, dtype=complex)
    for j, (g, q) in enumerate(zip(G, Q)):
        if j != k:
            C = C + g @ q @ g.conj().T
    return hermitian(G[k].conj().T @ np.linalg.solve(hermitian(C), G[k]))


# ---------------------------------------------------------------------------
# Dual minimization
# ---------------------------------------------------------------------------

def _power(solver, prob, mu, base):
    Q = solver(prob.gain, mu * np.eye(prob.gain.shape[0]) + base)[0]
    return float(np.real(np.trace(Q))), Q


def _solve_mu(prob, lam, cfg, solver):
    """Power dual for fixed SAR duals: floor when power is slack, else root of tr Q = Pmax."""
    n = prob.gain.shape[0]
    base = dual_matrix(0.0, lam, prob.R, n)
    power, Q = _power(solver, prob, cfg.mu_floor, base)
    if power <= prob.pmax:
        return cfg.mu_floor, Q

    lo, hi = np.log(cfg.mu_floor), 0.0
    for _ in range(400):
        if _power(solver, prob, np.exp(hi), base)[0] <= prob.pmax:
            break
        lo, hi = hi, hi + 4.0 * np.log(2.0)
    else:
        raise NumericalError("could not bracket the power dual")

    t = brentq(lambda t: _power(solver, prob, np.exp(t), base)[0] - prob.pmax,
               lo, hi, xtol=1e-12, rtol=1e-14)
    mu = float(np.exp(t))
    return mu, _power(solver, prob, mu, base)[1]


def _dual_value(prob, Q, mu, lam):
    Kmat = dual_matrix(mu, lam, prob.R, prob.gain.shape[0])
    return lagrangian_value(prob.gain, Q, Kmat) + mu * prob.pmax + float(np.dot(lam, prob.D))


def _bisection(prob, cfg, solver):
    A = len(prob.R)
    lam = np.zeros(A)
    mu, Q = _solve_mu(prob, lam, cfg, solver)
    trace = [_dual_value(prob, Q, mu, lam)]
    if A == 0:
        return UserSolution(Q, mu, lam, 1, True, trace)

    def slack(i, value):
        trial = lam.copy()
        trial[i] = value
        mu_i, Q_i = _solve_mu(prob, trial, cfg, solver)
        return sar_value(Q_i, prob.R[i]) - prob.D[i]

    converged = False
    passes = 0
    for passes in range(1, cfg.max_iter + 1):
        previous = lam.copy()
        for i in range(A):
            if slack(i, 0.0) <= 0:
                lam[i] = 0.0
                continue
            lo, hi = np.log(LAMBDA_FLOOR), 0.0
            if slack(i, np.exp(lo)) <= 0:
                lam[i] = np.exp(lo)
                continue
            for _ in range(400):
                if slack(i, np.exp(hi)) <= 0:
                    break
                lo, hi = hi, hi + 4.0 * np.log(2.0)
            else:
                raise NumericalError(f"could not bracket SAR dual {i}")
            lam[i] = float(np.exp(brentq(lambda t: slack(i, np.exp(t)), lo, hi, xtol=1e-12, rtol=1e-14)))

        mu, Q = _solve_mu(prob, lam, cfg, solver)
        trace.append(_dual_value(prob, Q, mu, lam))
        if A == 1 or np.max(np.abs(lam - previous) / np.maximum(1.0, np.abs(lam))) <= cfg.tol:
            converged = True
            break

    return UserSolution(Q, mu, lam, passes, converged, trace)


def _subgradient(prob, cfg, solver):
    n = prob.gain.shape[0]
    A = len(prob.R)
    top = max(float(np.linalg.eigvalsh(prob.gain).max()), np.finfo(float).tiny)
    scale = top / (1.0 + top * prob.pmax / n)
    r_scale = np.array([scale / float(np.linalg.eigvalsh(r).max()) for r in prob.R])

    mu, lam = scale, np.zeros(A)
    best = np.inf
    trace = []
    converged = False
    t = 0
    for t in range(1, cfg.subgradient_iter + 1):
        Q = solver(prob.gain, dual_matrix(mu, lam, prob.R, n))[0]
        s_p = (prob.pmax - float(np.real(np.trace(Q)))) / prob.pmax
        s_i = np.array([(d - sar_value(Q, r)) / d for r, d in zip(prob.R, prob.D)])

        best = min(best, _dual_value(prob, Q, mu, lam))
        trace.append(best)

        violation = max([0.0, -s_p] + list(-s_i))
        complementary = max([mu * abs(s_p) / scale] + list(lam * np.abs(s_i) / np.maximum(r_scale, 1e-300)))
        if violation < cfg.tol and complementary < cfg.tol:
            converged = True
            break

        step = cfg.step_scale * scale / np.sqrt(t)
        mu = max(cfg.mu_floor, mu - step * s_p)
        lam = np.maximum(0.0, lam - step * s_i * r_scale / scale)

    if not converged:
        logger.debug(f"Subgradient dual hit its cap of {cfg.subgradient_iter} iterations")
    return UserSolution(Q, mu, lam, t, converged, trace)


def clamp_feasible(prob, Q):
    """Scale Q down so every budget holds exactly."""
    factor = 1.0
    power = float(np.real(np.trace(Q)))
    if power > prob.pmax:
        factor = min(factor, prob.pmax / power)
    for r, d in zip(prob.R, prob.D):
        sar = sar_value(Q, r)
        if sar > d:
            factor = min(factor, d / sar)
    return Q * factor


def solve_user(prob, cfg=DualConfig(), solver=water_fill):
    run = _bisection if cfg.method == 'bisection' else _subgradient
    sol = run(prob, cfg, solver)
    sol.Q = clamp_feasible(prob, hermitian(sol.Q))
    return sol


def _kkt_residuals(prob, sol):
    residuals = [sol.mu * (prob.pmax - float(np.real(np.trace(sol.Q))))]
    for l, r, d in zip(sol.lam, prob.R, prob.D):
        residuals.append(float(l) * (d - sar_value(sol.Q, r)))
    return residuals


def dual_ascent(problems, solver=water_fill, config=DualConfig()):
    """
    Solve independent per-user problems by dual minimization.

    Args:
        problems: list of UserProblem with fixed gains
        solver: inner closed-form maximizer (water_fill)
        config: DualConfig

    Returns:
        WaterFillReport: covariances, duals, KKT products and iteration counts
    """
    solutions = [solve_user(p, config, solver) for p in problems]
    converged = all(s.converged for s in solutions)
    if not converged:
        logger.warning("Dual minimization reached its iteration cap for at least one user")

    objective = sum(inner_logdet(p.gain, s.Q) for p, s in zip(problems, solutions))
    return WaterFillReport(
        Q_opt=TransmitCovariances.from_matrices([s.Q for s in solutions]),
        duals=DualState(tuple(float(s.mu) for s in solutions), tuple(tuple(float(l) for l in s.lam) for s in solutions)),
        kkt_residuals=tuple(r for p, s in zip(problems, solutions) for r in _kkt_residuals(p, s)),
        iterations={'dual': int(sum(s.passes for s in solutions))},
        objective_trace=(objective,),
        converged=converged,
        dual_trace=tuple(tuple(s.dual_trace) for s in solutions),
    )


# ---------------------------------------------------------------------------
# Multiuser solvers
# ---------------------------------------------------------------------------

def _user_problem(gain, k, constraints, link):
    return UserProblem(gain, link.Pmax[k], constraints.R[k], constraints.D[k])


def solve_full_csi(ch, phi, V1tilde, constraints, link, config=DualConfig(), Q0=None, solver=water_fill):
    """
    Gauss-Seidel sweeps over users with exact per-user dual solves.

    The sum SE (nats) is nondecreasing across sweeps: a user's candidate is
    kept only if it does not lower its own objective given the others.
    """
    G = effective_channels(ch, phi, V1tilde)
    K = len(G)
    Q = [np.zeros((g.shape[1],) * 2, dtype=complex) for g in G] if Q0 is None else [np.array(q) for q in Q0]
    mu = [0.0] * K
    lam = [tuple(0.0 for _ in constraints.R[k]) for k in range(K)]
    residuals = [None] * K

    se = se_nats(G, Q, link.sigma2)
    trace = [se]
    dual_iters = 0
    converged = False
    sweeps = 0
    for sweeps in range(1, config.max_sweeps + 1):
        for k in range(K):
            prob = _user_problem(full_csi_gain(k, G, Q, link.sigma2), k, constraints, link)
            sol = solve_user(prob, config, solver)
            dual_iters += sol.passes
            if inner_logdet(prob.gain, sol.Q) >= inner_logdet(prob.gain, Q[k]):
                Q[k] = sol.Q
                mu[k], lam[k] = float(sol.mu), tuple(float(l) for l in sol.lam)
                residuals[k] = _kkt_residuals(prob, sol)
            else:
                logger.debug(f"User {k}: water-filling candidate did not improve, keeping previous covariance")

        new_se = se_nats(G, Q, link.sigma2)
        trace.append(new_se)
        logger.debug(f"Sweep {sweeps}: SE {new_se / np.log(2):.6f} bits/s/Hz")
        if abs(new_se - se) <= config.sweep_tol:
            converged = True
            break
        se = new_se

    if not converged:
        logger.warning(f"Full-CSI covariance sweeps hit the cap of {config.max_sweeps}")

    return WaterFillReport(
        Q_opt=TransmitCovariances.from_matrices(Q),
        duals=DualState(tuple(mu), tuple(lam)),
        kkt_residuals=tuple(r for res in residuals if res is not None for r in res),
        iterations={'dual': dual_iters, 'sweeps': sweeps},
        objective_trace=tuple(trace),
        converged=converged,
    )


def solve_partial_csi(stats, H1, phi, V1tilde, constraints, link, de_config=None,
                      config=DualConfig(), Q0=None, solver=water_fill):
    """
    Alternate deterministic-equivalent refreshes with per-user dual solves.

    With Gamma_k fixed, user k's problem is max ln det(I + Gamma_k Q / sigma2)
    under its budgets. Stops when the DE objective changes by at most
    config.inner_tol (nats).

    Returns:
        tuple: (WaterFillReport, DeState at the returned covariances)
    """
    de_config = de_config or det_equiv.DeConfig()
    K = stats.K
    if Q0 is None:
        Q = TransmitCovariances(tuple(np.zeros((V.shape[0],) * 2, dtype=complex) for V in stats.V2))
    else:
        Q = TransmitCovariances.from_matrices(Q0)

    try:
        state = det_equiv.de_fixed_point(Q, stats, H1, phi, V1tilde, link.sigma2, de_config)
    except NumericalError as e:
        raise NumericalError(f"deterministic equivalent failed at the initial covariances: {e}") from e
    value = det_equiv.de_se_nats(state, Q, link.sigma2)

    trace = [value]
    dual_iters = 0
    accepted = None
    converged = False
    refreshes = 0
    for refreshes in range(1, config.max_inner + 1):
        problems = [_user_problem(hermitian(state.Gamma[k] / link.sigma2), k, constraints, link) for k in range(K)]
        report = dual_ascent(problems, solver, config)
        dual_iters += report.iterations['dual']

        try:
            new_state = det_equiv.de_fixed_point(report.Q_opt, stats, H1, phi, V1tilde, link.sigma2, de_config)
        except NumericalError as e:
            raise NumericalError(f"deterministic equivalent failed in refresh {refreshes}: {e}") from e
        new_value = det_equiv.de_se_nats(new_state, report.Q_opt, link.sigma2)

        if new_value < value - 1e-12 * max(1.0, abs(value)):
            logger.debug(f"DE refresh {refreshes} lowered the objective; keeping previous covariances")
            converged = True
            break
        Q, state, accepted = report.Q_opt, new_state, report
        trace.append(new_value)
        if abs(new_value - value) <= config.inner_tol:
            converged = True
            break
        value = new_value

    if not converged:
        logger.warning(f"Partial-CSI refresh loop hit the cap of {config.max_inner}")

    if accepted is None:
        duals = DualState(tuple(0.0 for _ in range(K)), tuple(tuple(0.0 for _ in constraints.R[k]) for k in range(K)))
        residuals = ()
    else:
        duals, residuals = accepted.duals, accepted.kkt_residuals

    final = WaterFillReport(
        Q_opt=Q,
        duals=duals,
        kkt_residuals=residuals,
        iterations={'dual': dual_iters, 'inner': refreshes},
        objective_trace=tuple(trace),
        converged=converged,
    )
    return final, state
