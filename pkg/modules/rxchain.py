"""
Receiver chain: 4-QAM mapping, pilot channel estimation, MMSE and one-tap
equalization, QR precoding, the frequency-domain (IDFZT) system with its
modulo-banded channel matrix and the conjugate gradient solver.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, cho_factor, cho_solve, qr, solve

from modules.channel import EffectiveChannel, Window, read_taps
from modules.grid import DDArray, GridParams
from modules.transforms import idfzt_matrix
from utils.error_handler import InvalidParameterError, SolverError
from utils.logger import log_function_call

logger = logging.getLogger(__name__)

ILL_CONDITIONED = 1e12
_QAM_SCALE = 1.0 / np.sqrt(2.0)


def qam_map(bits) -> np.ndarray:
    """
    Gray 4-QAM: bit pair (b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2).

    Raises:
        InvalidParameterError: If the bit count is odd
    """
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    if bits.size % 2:
        raise InvalidParameterError(f"4-QAM needs an even number of bits, got {bits.size}")
    pairs = bits.reshape(-1, 2)
    return ((1 - 2 * pairs[:, 0]) + 1j * (1 - 2 * pairs[:, 1])) * _QAM_SCALE


def qam_demap(symbols) -> np.ndarray:
    """Hard-decision inverse of qam_map."""
    symbols = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    return np.column_stack([symbols.real < 0, symbols.imag < 0]).astype(np.int64).reshape(-1)


def qam_slice(symbols) -> np.ndarray:
    """Nearest 4-QAM constellation points."""
    return qam_map(qam_demap(symbols))


def mmse_equalize(H: np.ndarray, y: np.ndarray, sigma2: float) -> np.ndarray:
    """
    x_hat = (H^H H + sigma2 I)^-1 H^H y via a Cholesky solve.

    Raises:
        SolverError: If the normal-equation matrix is singular
    """
    if sigma2 < 0:
        raise InvalidParameterError(f"sigma2 must be non-negative, got {sigma2}")
    gram = H.conj().T @ H + sigma2 * np.eye(H.shape[1])
    rhs = H.conj().T @ y
    try:
        factor = cho_factor(gram, lower=True)
    except LinAlgError as e:
        raise SolverError(f"MMSE normal equations are singular: {e}") from e
    diag = np.abs(np.diag(factor[0]))
    if diag.min() == 0:
        raise SolverError("MMSE normal equations are singular")
    cond_estimate = (diag.max() / diag.min()) ** 2
    if cond_estimate > ILL_CONDITIONED:
        logger.warning(f"Ill-conditioned MMSE solve (condition >= {cond_estimate:.2e})")
    return cho_solve(factor, rhs)


def one_tap_equalize(h_f, y_f, sigma2: float) -> np.ndarray:
    """Per-entry MMSE: conj(h) y / (|h|^2 + sigma2); zero where both vanish."""
    h_f = np.asarray(h_f, dtype=np.complex128)
    y_f = np.asarray(y_f, dtype=np.complex128)
    denom = np.abs(h_f) ** 2 + sigma2
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, np.conj(h_f) * y_f / safe, 0.0)


@dataclass(frozen=True)
class QRPrecoder:
    """H^H = Q R."""
    q_mat: np.ndarray
    r_mat: np.ndarray


def qr_precode(H: np.ndarray) -> QRPrecoder:
    """Factor the Hermitian of the channel matrix."""
    q_mat, r_mat = qr(H.conj().T)
    return QRPrecoder(q_mat, r_mat)


def apply_precoder(q_mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """x' = Q x."""
    return q_mat @ x


def combiner_matrix(r_mat: np.ndarray, sigma2: float) -> np.ndarray:
    """W = (R R^H + sigma2 I)^-1 R."""
    gram = r_mat @ r_mat.conj().T + sigma2 * np.eye(r_mat.shape[0])
    try:
        return solve(gram, r_mat, assume_a='her')
    except LinAlgError as e:
        raise SolverError(f"Combiner system is singular: {e}") from e


def rx_combine(r_mat: np.ndarray, y: np.ndarray, sigma2: float) -> np.ndarray:
    """y' = W y."""
    return combiner_matrix(r_mat, sigma2) @ y


@dataclass(frozen=True)
class BandedFDMatrix:
    """
    Modulo-banded storage: diagonals[o + b][i] = H[i, (i + o) mod MN] for |o| <= b.
    """

    grid: GridParams
    half_bandwidth: int
    diagonals: np.ndarray

    @classmethod
    def from_dense(cls, H: np.ndarray, grid: GridParams, half_bandwidth: int) -> Tuple["BandedFDMatrix", float]:
        """
        Compress a dense matrix to its modulo band.

        Returns:
            (banded matrix, fraction of Frobenius energy discarded)
        """
        MN = grid.MN
        b = min(int(half_bandwidth), (MN - 1) // 2)
        rows = np.arange(MN)
        offsets = np.arange(-b, b + 1)
        diagonals = np.stack([H[rows, np.mod(rows + o, MN)] for o in offsets])
        total = float(np.sum(np.abs(H) ** 2))
        kept = float(np.sum(np.abs(diagonals) ** 2))
        discarded = 0.0 if total == 0 else max(0.0, 1.0 - kept / total)
        return cls(grid, b, diagonals), discarded

    def to_dense(self) -> np.ndarray:
        MN = self.grid.MN
        H = np.zeros((MN, MN), dtype=np.complex128)
        rows = np.arange(MN)
        for idx, o in enumerate(range(-self.half_bandwidth, self.half_bandwidth + 1)):
            H[rows, np.mod(rows + o, MN)] = self.diagonals[idx]
        return H

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """H v in O(MN (2b + 1))."""
        out = np.zeros(self.grid.MN, dtype=np.complex128)
        for idx, o in enumerate(range(-self.half_bandwidth, self.half_bandwidth + 1)):
            out += self.diagonals[idx] * np.roll(v, -o)
        return out

    def rmatvec(self, u: np.ndarray) -> np.ndarray:
        """H^H u."""
        out = np.zeros(self.grid.MN, dtype=np.complex128)
        for idx, o in enumerate(range(-self.half_bandwidth, self.half_bandwidth + 1)):
            out += np.roll(np.conj(self.diagonals[idx]) * u, o)
        return out


def band_energy_fraction(H: np.ndarray, grid: GridParams, half_bandwidth: int) -> float:
    """Share of ||H||_F^2 inside the modulo band."""
    _, discarded = BandedFDMatrix.from_dense(H, grid, half_bandwidth)
    return 1.0 - discarded


def default_half_bandwidth(grid: GridParams, nu_max: float) -> int:
    """b = ceil(nu_max T) + 1."""
    return int(np.ceil(nu_max * grid.T)) + 1


@dataclass
class FDSystem:
    """r = H_FD s + w, with H_FD = R H R^H and r = R y (R the IDFZT matrix)."""
    h_fd: np.ndarray
    r: np.ndarray
    banded: Optional[BandedFDMatrix] = None
    discarded_fraction: float = 0.0


def to_fd_system(H_dd: np.ndarray, y_dd: np.ndarray, grid: GridParams,
                 half_bandwidth: Optional[int] = None) -> FDSystem:
    """
    Move a DD system to the frequency domain through the IDFZT.

    With ``half_bandwidth`` the FD matrix is also compressed to modulo-banded
    storage and the discarded energy is reported.
    """
    R = idfzt_matrix(grid)
    h_fd = R @ H_dd @ R.conj().T
    system = FDSystem(h_fd, R @ y_dd)
    if half_bandwidth is not None:
        system.banded, system.discarded_fraction = BandedFDMatrix.from_dense(h_fd, grid, half_bandwidth)
        if system.discarded_fraction > 0.01:
            logger.warning(f"Band truncation discards {system.discarded_fraction:.2%} of H_FD energy")
    return system


def fd_to_dd(s: np.ndarray, grid: GridParams) -> np.ndarray:
    """R^H s."""
    return idfzt_matrix(grid).conj().T @ s


class NoiseMode(str, Enum):
    WHITE = "white"
    EXPLICIT = "explicit"


class CgmConfig(BaseModel):
    """Conjugate gradient settings."""

    model_config = ConfigDict(frozen=True)

    max_iters: int = Field(default=250, ge=1)
    tolerance: float = Field(default=1e-6, gt=0.0)
    half_bandwidth: Optional[int] = Field(default=None, ge=0)
    noise_mode: NoiseMode = NoiseMode.WHITE


@dataclass
class CgmResult:
    s: np.ndarray
    converged: bool
    iterations: int
    residual_history: List[float] = field(default_factory=list)


@log_function_call()
def cgm_solve(H: Union[BandedFDMatrix, np.ndarray], r: np.ndarray, sigma2: float,
              cfg: CgmConfig = CgmConfig(),
              noise_covariance: Optional[np.ndarray] = None) -> CgmResult:
    """
    Conjugate gradient on (H^H H + R_n) s = H^H r, step by step:

        b = H^H r;  c = b - H^H H s - R_n s;  p = c
        a_p = H^H H p + R_n p;  alpha = c_norm / p^H a_p
        s += alpha p;  c -= alpha a_p;  beta = c_norm_new / c_norm;  p = c + beta p

    stopping when c_norm < tolerance^2 or after max_iters.

    Args:
        H: Banded or dense channel matrix
        r: Received vector
        sigma2: Noise variance (R_n = sigma2 I in white mode)
        cfg: Solver settings
        noise_covariance: R_n in explicit mode

    Returns:
        CgmResult; converged is False when max_iters ran out
    """
    if isinstance(H, BandedFDMatrix):
        matvec, rmatvec = H.matvec, H.rmatvec
    else:
        matvec, rmatvec = (lambda v: H @ v), (lambda u: H.conj().T @ u)

    if cfg.noise_mode == NoiseMode.EXPLICIT:
        if noise_covariance is None:
            raise InvalidParameterError("Explicit noise mode needs a covariance matrix")
        noise = lambda v: noise_covariance @ v  # noqa: E731
    else:
        noise = lambda v: sigma2 * v  # noqa: E731

    b = rmatvec(np.asarray(r, dtype=np.complex128))
    s = np.zeros_like(b)
    c = b - rmatvec(matvec(s)) - noise(s)
    p = c.copy()
    c_norm = float(np.vdot(c, c).real)
    history = [c_norm]
    threshold = cfg.tolerance ** 2

    iterations = 0
    while c_norm >= threshold and iterations < cfg.max_iters:
        a_p = rmatvec(matvec(p)) + noise(p)
        curvature = np.vdot(p, a_p)
        if curvature == 0:
            break
        alpha = c_norm / curvature
        s = s + alpha * p
        c = c - alpha * a_p
        c_norm_new = float(np.vdot(c, c).real)
        beta = c_norm_new / c_norm
        p = c + beta * p
        c_norm = c_norm_new
        history.append(c_norm)
        iterations += 1

    converged = c_norm < threshold
    if not converged:
        logger.warning(f"CGM stopped after {iterations} iterations, c_norm={c_norm:.3e}")
    return CgmResult(s, converged, iterations, history)


def estimate_channel_pilot(y_dd: DDArray, pilot: Tuple[int, int], window: Window) -> EffectiveChannel:
    """
    Taps read from the cross-ambiguity of the received frame with the pilot
    pulsone over ``window`` (offsets relative to the pilot).

    Raises:
        InvalidParameterError: If the window exceeds the fundamental period
    """
    return read_taps(y_dd, pilot, window)


def count_bit_errors(sent, received) -> int:
    return int(np.count_nonzero(np.asarray(sent) != np.asarray(received)))
