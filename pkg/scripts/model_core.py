"""
model_core.py

Domain types, synthetic channel generation, spectral-efficiency evaluators
and SAR metrics for the RIS and DMA assisted multiuser uplink.

All log-determinants are computed in nats; evaluators that report SE
divide by ln 2 and return bits/s/Hz.

Project: EM-Exposure-Aware Uplink Optimization
"""

import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import block_diag, dft, toeplitz

sys.path.append(str(Path(__file__).resolve().parents[1]))
import config  # noqa: E402

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)
HERMITIAN_TOL = 1e-10


class DimensionError(ValueError):
    """A matrix does not have the shape the system dimensions call for."""

    def __init__(self, matrix, message):
        self.matrix = matrix
        super().__init__(f"{matrix}: {message}")


class NumericalError(ValueError):
    """An input breaks a numerical precondition (PSD, rank, invertibility)."""


class ConfigError(ValueError):
    """Invalid experiment configuration, optionally tied to a source line."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class StageError(RuntimeError):
    """A stage of the alternating optimization failed."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage} stage failed: {cause}")


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------

def dbm_to_watts(dbm):
    """Convert dBm to watts."""
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(watts):
    """Convert watts to dBm."""
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


def hermitian(A):
    """Return the Hermitian part (A + A^H) / 2."""
    A = np.asarray(A)
    return (A + A.conj().T) / 2


def is_hermitian(A, tol=HERMITIAN_TOL):
    A = np.asarray(A)
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    return A.ndim == 2 and A.shape[0] == A.shape[1] and np.allclose(A, A.conj().T, rtol=0, atol=tol * scale)


def clip_psd(A, tol=HERMITIAN_TOL, name="matrix"):
    """
    Symmetrize A and clip tiny negative eigenvalues to zero.

    Args:
        A: square matrix expected to be Hermitian PSD up to rounding
        tol: relative tolerance on negative eigenvalues
        name: label used in the error message

    Returns:
        np.ndarray: Hermitian PSD matrix
    """
    A = hermitian(A)
    w, V = np.linalg.eigh(A)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -tol * scale:
        raise NumericalError(f"{name} is not PSD (smallest eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return hermitian((V * w) @ V.conj().T)


def psd_sqrt(A):
    """Principal square root of a Hermitian PSD matrix."""
    w, V = np.linalg.eigh(hermitian(A))
    return hermitian((V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T)


def logdet_pd(A, name="logdet argument"):
    """
    Natural log-determinant of a Hermitian positive definite matrix.

    Raises NumericalError instead of returning NaN.
    """
    try:
        L = np.linalg.cholesky(hermitian(A))
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"{name} is not positive definite") from e
    return float(2.0 * np.sum(np.log(np.real(np.diag(L)))))


def complex_gaussian(rng, shape):
    """Circularly-symmetric standard complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def block_mask(S, L):
    """Boolean S x (S*L) mask of the microstrip blocks."""
    return np.kron(np.eye(S, dtype=bool), np.ones((1, L), dtype=bool))


def _seed_entropy(seed):
    return int(seed) % (2 ** 64)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemDims:
    """User, RIS and DMA dimensions. M = S * L is derived."""
    K: int
    N: tuple
    N_R: int
    S: int
    L: int

    def __post_init__(self):
        N = self.N
        if np.isscalar(N):
            N = (int(N),) * int(self.K)
        object.__setattr__(self, 'N', tuple(int(n) for n in N))

        for label, value in (('K', self.K), ('N_R', self.N_R), ('S', self.S), ('L', self.L)):
            if int(value) < 1:
                raise DimensionError(label, f"must be >= 1 (got {value})")
        if len(self.N) != self.K:
            raise DimensionError('N', f"expected {self.K} per-user antenna counts, got {len(self.N)}")
        if any(n < 1 for n in self.N):
            raise DimensionError('N', "every user needs at least one antenna")

    @property
    def M(self):
        return self.S * self.L

    @classmethod
    def reference(cls):
        return cls(K=config.NUM_USERS, N=config.USER_ANTENNAS, N_R=config.RIS_ELEMENTS,
                   S=config.MICROSTRIPS, L=config.ELEMENTS_PER_MICROSTRIP)


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """One realization: RIS->BS channel H1 (M x N_R) and user->RIS channels H2[k] (N_R x N_k)."""
    H1: np.ndarray
    H2: tuple

    def __post_init__(self):
        object.__setattr__(self, 'H2', tuple(np.asarray(h) for h in self.H2))
        if not np.all(np.isfinite(self.H1)):
            raise NumericalError("H1 has non-finite entries")
        for k, h in enumerate(self.H2):
            if not np.all(np.isfinite(h)):
                raise NumericalError(f"H2[{k}] has non-finite entries")

    def validate(self, dims):
        if self.H1.shape != (dims.M, dims.N_R):
            raise DimensionError('H1', f"expected {(dims.M, dims.N_R)}, got {self.H1.shape}")
        if len(self.H2) != dims.K:
            raise DimensionError('H2', f"expected {dims.K} user channels, got {len(self.H2)}")
        for k, h in enumerate(self.H2):
            if h.shape != (dims.N_R, dims.N[k]):
                raise DimensionError(f'H2[{k}]', f"expected {(dims.N_R, dims.N[k])}, got {h.shape}")


@dataclass(frozen=True, eq=False)
class ChannelStatistics:
    """Weichselberger statistics: H2[k] = U2[k] (sqrt(Omega2[k]) * W) V2[k]^H."""
    U2: tuple
    V2: tuple
    Omega2: tuple

    def __post_init__(self):
        for label in ('U2', 'V2', 'Omega2'):
            object.__setattr__(self, label, tuple(np.asarray(m) for m in getattr(self, label)))
        if not len(self.U2) == len(self.V2) == len(self.Omega2):
            raise DimensionError('ChannelStatistics', "U2, V2 and Omega2 need one entry per user")
        for k in range(len(self.U2)):
            for label, U in ((f'U2[{k}]', self.U2[k]), (f'V2[{k}]', self.V2[k])):
                n = U.shape[0]
                if U.ndim != 2 or U.shape[1] != n:
                    raise DimensionError(label, f"must be square, got {U.shape}")
                if not np.allclose(U.conj().T @ U, np.eye(n), rtol=0, atol=1e-10):
                    raise NumericalError(f"{label} is not unitary")
            if self.Omega2[k].shape != (self.U2[k].shape[0], self.V2[k].shape[0]):
                raise DimensionError(f'Omega2[{k}]', f"expected {(self.U2[k].shape[0], self.V2[k].shape[0])}, "
                                     f"got {self.Omega2[k].shape}")
            if np.any(self.Omega2[k] < 0):
                raise NumericalError(f"Omega2[{k}] has negative entries")

    @property
    def K(self):
        return len(self.U2)

    def scaled(self, factor):
        return ChannelStatistics(self.U2, self.V2, tuple(factor * om for om in self.Omega2))

    def validate(self, dims):
        if self.K != dims.K:
            raise DimensionError('U2', f"expected {dims.K} users, got {self.K}")
        for k in range(dims.K):
            if self.U2[k].shape[0] != dims.N_R:
                raise DimensionError(f'U2[{k}]', f"expected {dims.N_R} x {dims.N_R}, got {self.U2[k].shape}")
            if self.V2[k].shape[0] != dims.N[k]:
                raise DimensionError(f'V2[{k}]', f"expected {dims.N[k]} x {dims.N[k]}, got {self.V2[k].shape}")


@dataclass(frozen=True, eq=False)
class TransmitCovariances:
    """Per-user Hermitian PSD transmit covariances."""
    Q: tuple

    def __post_init__(self):
        mats = tuple(np.asarray(q, dtype=complex) for q in self.Q)
        for k, q in enumerate(mats):
            if not is_hermitian(q):
                raise NumericalError(f"Q[{k}] is not Hermitian")
            w = np.linalg.eigvalsh(hermitian(q))
            if w.size and w.min() < -HERMITIAN_TOL * max(1.0, float(np.abs(w).max())):
                raise NumericalError(f"Q[{k}] is not PSD (smallest eigenvalue {w.min():.3e})")
        object.__setattr__(self, 'Q', mats)

    @classmethod
    def from_matrices(cls, mats):
        """Build from raw matrices, symmetrizing and clipping rounding noise."""
        return cls(tuple(clip_psd(q, name=f"Q[{k}]") for k, q in enumerate(mats)))

    @classmethod
    def zeros(cls, dims):
        return cls(tuple(np.zeros((n, n), dtype=complex) for n in dims.N))

    def __len__(self):
        return len(self.Q)

    def __getitem__(self, k):
        return self.Q[k]

    def traces(self):
        return np.array([float(np.real(np.trace(q))) for q in self.Q])

    def scaled(self, factors):
        factors = np.broadcast_to(np.asarray(factors, dtype=float), (len(self.Q),))
        return TransmitCovariances(tuple(f * q for f, q in zip(factors, self.Q)))

    def replaced(self, k, Qk):
        mats = list(self.Q)
        mats[k] = Qk
        return TransmitCovariances(tuple(mats))

    def block_diag(self):
        return block_diag(*self.Q)


@dataclass(frozen=True, eq=False)
class PhaseShifts:
    """Unit-modulus RIS reflection coefficients."""
    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=complex).ravel()
        if not np.allclose(np.abs(phi), 1.0, rtol=0, atol=1e-10):
            raise NumericalError("RIS phase shifts must have unit modulus")
        object.__setattr__(self, 'phi', phi)

    @classmethod
    def ones(cls, n):
        return cls(np.ones(n, dtype=complex))

    @classmethod
    def random(cls, n, rng):
        return cls(np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, n)))

    @property
    def matrix(self):
        return np.diag(self.phi)


@dataclass(frozen=True, eq=False)
class DmaWeights:
    """
    Block-structured DMA weights with their compact SVD.

    Xi (S x M) is nonzero only on the microstrip blocks; f is the common
    element response (scalar, it cancels in the projection SE form).
    """
    Xi: np.ndarray
    set_tag: str
    U1: np.ndarray
    XiTilde: np.ndarray
    V1tilde: np.ndarray
    f: complex = 1.0

    def __post_init__(self):
        S, M = self.Xi.shape
        if M % S:
            raise DimensionError('Xi', f"column count {M} is not a multiple of row count {S}")
        mask = block_mask(S, M // S)
        if np.any(self.Xi[~mask] != 0):
            raise DimensionError('Xi', "nonzero entries outside the microstrip blocks")

    @property
    def S(self):
        return self.Xi.shape[0]

    @property
    def L(self):
        return self.Xi.shape[1] // self.Xi.shape[0]

    def fit_residual(self):
        return float(np.linalg.norm(self.Xi - self.U1 @ self.XiTilde @ self.V1tilde.conj().T))


@dataclass(frozen=True, eq=False)
class SarConstraint:
    """
    SAR matrices R[k][i] (kg^-1) and budgets D[k][i] (W/kg).

    A user may carry zero SAR constraints (power-only problems).
    """
    R: tuple
    D: tuple

    def __post_init__(self):
        R = tuple(tuple(np.asarray(r, dtype=complex) for r in Rk) for Rk in self.R)
        D = tuple(tuple(float(d) for d in Dk) for Dk in self.D)
        if len(R) != len(D):
            raise DimensionError('SarConstraint', "R and D need one entry per user")
        for k, (Rk, Dk) in enumerate(zip(R, D)):
            if len(Rk) != len(Dk):
                raise DimensionError(f'R[{k}]', f"{len(Rk)} matrices but {len(Dk)} budgets")
            for i, r in enumerate(Rk):
                if not is_hermitian(r):
                    raise NumericalError(f"R[{k}][{i}] is not Hermitian")
                w = np.linalg.eigvalsh(hermitian(r))
                if w.min() < -HERMITIAN_TOL * max(1.0, float(np.abs(w).max())):
                    raise NumericalError(f"R[{k}][{i}] is not PSD")
            if any(d <= 0 for d in Dk):
                raise NumericalError(f"SAR budgets for user {k} must be positive")
        object.__setattr__(self, 'R', R)
        object.__setattr__(self, 'D', D)

    @property
    def K(self):
        return len(self.R)

    @classmethod
    def uniform(cls, dims, budget=config.SAR_BUDGET, R=None):
        """Same SAR matrix (default: the reference 4x4 pattern) and budget for every user."""
        mats = tuple((sar_matrix(n) if R is None else np.asarray(R),) for n in dims.N)
        return cls(mats, tuple((budget,) for _ in dims.N))

    @classmethod
    def power_only(cls, K):
        return cls(tuple(() for _ in range(K)), tuple(() for _ in range(K)))


@dataclass(frozen=True)
class LinkBudget:
    """Per-user power budgets (W), noise variance (W) and path-loss split (dB)."""
    Pmax: tuple
    sigma2: float
    pathloss_db: float = config.PATHLOSS_DB
    hop1_db: float = config.HOP1_DB

    def __post_init__(self):
        object.__setattr__(self, 'Pmax', tuple(float(p) for p in np.atleast_1d(self.Pmax)))
        if any(p <= 0 for p in self.Pmax):
            raise NumericalError("Pmax must be positive")
        if self.sigma2 <= 0:
            raise NumericalError("sigma2 must be positive")

    @property
    def hop2_db(self):
        return self.pathloss_db - self.hop1_db

    @classmethod
    def from_dbm(cls, pmax_dbm, K, noise_dbm=config.NOISE_DBM,
                 pathloss_db=config.PATHLOSS_DB, hop1_db=config.HOP1_DB):
        pmax = float(dbm_to_watts(pmax_dbm))
        return cls((pmax,) * K, float(dbm_to_watts(noise_dbm)), pathloss_db, hop1_db)

    def scaled(self, factors):
        factors = np.broadcast_to(np.asarray(factors, dtype=float), (len(self.Pmax),))
        return LinkBudget(tuple(f * p for f, p in zip(factors, self.Pmax)),
                          self.sigma2, self.pathloss_db, self.hop1_db)


@dataclass(frozen=True)
class H1Spec:
    """
    RIS->BS channel law: i.i.d. CN(0, 1) scaled by the hop-1 attenuation.

    When seed is None the channel seed is used, so H1 changes with it.
    """
    hop1_db: float = config.HOP1_DB
    seed: int = None


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int


# ---------------------------------------------------------------------------
# Channels and statistics
# ---------------------------------------------------------------------------

def sar_matrix(n):
    """
    Reference SAR matrix for an n-antenna handset (kg^-1).

    The 4 x 4 Toeplitz pattern is truncated for n < 4 and repeated
    block-diagonally for n > 4.
    """
    row = np.asarray(config.SAR_FIRST_ROW, dtype=complex)
    base = toeplitz(row.conj(), row)
    if n <= base.shape[0]:
        return base[:n, :n].copy()
    blocks = [base] * (n // 4)
    if n % 4:
        blocks.append(base[:n % 4, :n % 4])
    return block_diag(*blocks)


def default_statistics(dims, decay=config.OMEGA_DECAY, hop2_db=None):
    """
    DFT eigenbases with an exponentially decaying coupling profile.

    Each user's profile is rotated by k * (N_R // K) rows so the users
    illuminate different RIS eigenmodes. The profile sums to N_R * N_k
    before the hop-2 attenuation is applied.
    """
    if hop2_db is None:
        hop2_db = config.PATHLOSS_DB - config.HOP1_DB
    gain = 10.0 ** (-hop2_db / 10.0)
    U2, V2, Omega2 = [], [], []
    r = np.arange(dims.N_R)
    for k, n_k in enumerate(dims.N):
        shift = (r + k * (dims.N_R // dims.K)) % dims.N_R
        profile = np.exp(-decay * (shift[:, None] + np.arange(n_k)[None, :]))
        profile *= dims.N_R * n_k / profile.sum()
        U2.append(dft(dims.N_R, scale='sqrtn'))
        V2.append(dft(n_k, scale='sqrtn'))
        Omega2.append(gain * profile)
    return ChannelStatistics(tuple(U2), tuple(V2), tuple(Omega2))


def sample_h2_batch(stats, rng, n):
    """
    Draw n independent user->RIS channel sets.

    Returns:
        list: per user, an array of shape (n, N_R, N_k)
    """
    batch = []
    for U, V, Om in zip(stats.U2, stats.V2, stats.Omega2):
        W = complex_gaussian(rng, (n,) + Om.shape)
        batch.append(U @ (np.sqrt(Om) * W) @ V.conj().T)
    return batch


def generate_h1(dims, h1_spec, seed):
    h1_seed = seed if h1_spec.seed is None else h1_spec.seed
    rng = np.random.default_rng([_seed_entropy(h1_seed), 0])
    return 10.0 ** (-h1_spec.hop1_db / 20.0) * complex_gaussian(rng, (dims.M, dims.N_R))


def generate_channels(stats, dims, h1_spec, seed):
    """
    Draw one ChannelSet; a pure function of (stats, dims, h1_spec, seed).
    """
    stats.validate(dims)
    H1 = generate_h1(dims, h1_spec, seed)
    rng = np.random.default_rng([_seed_entropy(seed), 1])
    H2 = tuple(b[0] for b in sample_h2_batch(stats, rng, 1))
    return ChannelSet(H1, H2)


# ---------------------------------------------------------------------------
# Spectral efficiency
# ---------------------------------------------------------------------------

def _matrices(Q):
    return Q.Q if isinstance(Q, TransmitCovariances) else tuple(np.asarray(q) for q in Q)


def _phase(phi):
    return phi.phi if isinstance(phi, PhaseShifts) else np.asarray(phi, dtype=complex).ravel()


def effective_channels(ch, phi, V1tilde):
    """G[k] = V1tilde^H H1 Phi H2[k]."""
    front = V1tilde.conj().T @ (ch.H1 * _phase(phi)[None, :])
    return [front @ h for h in ch.H2]


def ris_covariance(ch, Q):
    """P = sum_k H2[k] Q[k] H2[k]^H (N_R x N_R)."""
    return hermitian(sum(h @ q @ h.conj().T for h, q in zip(ch.H2, _matrices(Q))))


def se_nats(G, Q, sigma2):
    """ln det(I + (1/sigma2) sum_k G[k] Q[k] G[k]^H)."""
    S = G[0].shape[0]
    A = np.eye(S, dtype=complex) + sum(g @ q @ g.conj().T for g, q in zip(G, _matrices(Q))) / sigma2
    return logdet_pd(A, "I + received covariance")


def _check_orthonormal(V, tol=1e-8):
    if not np.allclose(V.conj().T @ V, np.eye(V.shape[1]), rtol=0, atol=tol):
        raise NumericalError("V1tilde columns are not orthonormal")


def evaluate_se_full(Q, phi, V1tilde, ch, sigma2):
    """SE in bits/s/Hz after the DMA combiner with orthonormal columns V1tilde."""
    _check_orthonormal(V1tilde)
    return se_nats(effective_channels(ch, phi, V1tilde), Q, sigma2) / LN2


def evaluate_se_projection_form(Q, phi, Xi, ch, sigma2):
    """
    SE evaluated directly through the projection Xi^H (Xi Xi^H)^-1 Xi.

    Independent of the SVD route, so it serves as a cross-check for
    evaluate_se_full.
    """
    Xi = np.asarray(Xi)
    gram = Xi @ Xi.conj().T
    if np.linalg.matrix_rank(gram) < Xi.shape[0]:
        raise NumericalError("Xi Xi^H is rank deficient; regularized combiners are not supported")
    proj = hermitian(Xi.conj().T @ np.linalg.solve(gram, Xi))
    HP = ch.H1 * _phase(phi)[None, :]
    T = hermitian(HP @ ris_covariance(ch, Q) @ HP.conj().T)
    A = np.eye(Xi.shape[1], dtype=complex) + proj @ T @ proj / sigma2
    return logdet_pd(A, "projected received covariance") / LN2


def evaluate_se_conventional(Q, phi, ch, sigma2):
    """Fully-digital M-antenna reference (no DMA projection)."""
    return evaluate_se_full(Q, phi, np.eye(ch.H1.shape[0], dtype=complex), ch, sigma2)


def _mc_chunk(stats, H1, Q, phi, V1tilde, sigma2, seed, chunk, n):
    rng = np.random.default_rng([_seed_entropy(seed), chunk])
    batch = sample_h2_batch(stats, rng, n)
    front = V1tilde.conj().T @ (H1 * phi[None, :])
    A = np.broadcast_to(np.eye(front.shape[0], dtype=complex), (n,) + (front.shape[0],) * 2).copy()
    for H2, q in zip(batch, Q):
        G = front @ H2
        A += G @ q @ np.conj(np.swapaxes(G, -1, -2)) / sigma2
    A = (A + np.conj(np.swapaxes(A, -1, -2))) / 2
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as e:
        raise NumericalError("Monte Carlo draw produced a non-PD covariance") from e
    return 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1) / LN2


def monte_carlo_ergodic_se(stats, Q, phi, V1tilde, sigma2, n_samples, seed, H1, jobs=1):
    """
    Ergodic SE by sampling H2 around a fixed H1.

    Chunk c of config.MC_CHUNK draws uses default_rng([seed, c]), so the
    estimate does not depend on the worker count.

    Returns:
        McEstimate: mean and standard error in bits/s/Hz
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    _check_orthonormal(V1tilde)
    Q = _matrices(Q)
    phi = _phase(phi)
    sizes = [min(config.MC_CHUNK, n_samples - start) for start in range(0, n_samples, config.MC_CHUNK)]

    if jobs == 1:
        parts = [_mc_chunk(stats, H1, Q, phi, V1tilde, sigma2, seed, c, n) for c, n in enumerate(sizes)]
    else:
        parts = Parallel(n_jobs=jobs)(
            delayed(_mc_chunk)(stats, H1, Q, phi, V1tilde, sigma2, seed, c, n) for c, n in enumerate(sizes)
        )
    values = np.concatenate(parts)
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return McEstimate(float(values.mean()), stderr, int(values.size))


# ---------------------------------------------------------------------------
# SAR
# ---------------------------------------------------------------------------

def sar_value(Qk, Rki):
    """SAR = tr(R Q) in W/kg."""
    Qk, Rki = np.asarray(Qk), np.asarray(Rki)
    if Qk.shape != Rki.shape:
        raise DimensionError('R', f"shape {Rki.shape} does not match Q {Qk.shape}")
    if not is_hermitian(Qk) or not is_hermitian(Rki):
        raise NumericalError("sar_value needs Hermitian Q and R")
    value = np.sum(Rki * Qk.T)
    assert abs(value.imag) <= HERMITIAN_TOL * max(1.0, abs(value.real)), \
        f"SAR has imaginary residue {value.imag:.3e}"
    return float(value.real)


def constraint_audit(Q, constraints, pmax):
    """
    Tabulate power and SAR usage per user.

    Returns:
        pd.DataFrame: columns user, kind, index, value, budget, slack
    """
    rows = []
    for k, q in enumerate(_matrices(Q)):
        power = float(np.real(np.trace(q)))
        rows.append({'user': k, 'kind': 'power', 'index': 0, 'value': power,
                     'budget': float(pmax[k]), 'slack': float(pmax[k]) - power})
        for i, (r, d) in enumerate(zip(constraints.R[k], constraints.D[k])):
            sar = sar_value(q, r)
            rows.append({'user': k, 'kind': 'sar', 'index': i, 'value': sar,
                         'budget': d, 'slack': d - sar})
    return pd.DataFrame(rows, columns=['user', 'kind', 'index', 'value', 'budget', 'slack'])


# ---------------------------------------------------------------------------
# DMA factors
# ---------------------------------------------------------------------------

def compact_svd_right_factor(Xi):
    """
    Compact SVD Xi = U1 diag(s) V1tilde^H with s descending.

    The first nonzero entry of every right singular vector is made real
    positive; the matching left vector absorbs the phase.
    """
    Xi = np.asarray(Xi)
    U, s, Vh = np.linalg.svd(Xi, full_matrices=False)
    S = Xi.shape[0]
    if s.size < S or s[-1] <= 1e-12 * max(s[0], np.finfo(float).tiny):
        raise NumericalError(f"Xi has rank < {S}; cannot factor")
    V = Vh.conj().T
    for i in range(S):
        col = V[:, i]
        pivot = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        phase = col[pivot] / abs(col[pivot])
        V[:, i] = col * np.conj(phase)
        U[:, i] = U[:, i] * np.conj(phase)
    return U, np.diag(s), V
