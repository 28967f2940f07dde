"""
Frame-level signaling schemes.

- Differential communication: a pilot frame every ``pilot_period`` data
  frames, with the channel re-estimated from each detected data frame.
- MUB superposition: a full TCM-coded frame on the pulsone basis plus a
  sparse TCM-coded frame on the GDAFT-spread basis, detected by successive
  interference cancellation with optional turbo passes.
- The effective-rate model, the sparse-frame occupancy bound and ARQ
  throughput.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import erfc

from modules.ambiguity import cross_ambiguity, window_region
from modules.channel import (
    ChannelInstance,
    EffectiveChannel,
    PathSpec,
    SeedLike,
    Window,
    add_awgn,
    build_channel_matrix,
    check_window,
    pilot_position,
    probe_effective_channel,
    spawn_rngs,
    support_window,
    twisted_conv,
)
from modules.filters import FilterSpec
from modules.grid import DDArray, GridParams, TDSequence, dd_to_vector, vector_to_dd
from modules.rxchain import (
    count_bit_errors,
    estimate_channel_pilot,
    mmse_equalize,
    qam_demap,
    qam_map,
)
from modules.transforms import SymplecticParams, default_symplectic, idzt
from modules.waveforms import BasisFamily, basis_matrix, make_basis
from utils.error_handler import InvalidParameterError
from utils.logger import log_function_call

logger = logging.getLogger(__name__)

MUB_TOL = 1e-8
TCM_SCALE = np.sqrt(5.0)
DEFAULT_D_FREE = np.sqrt(20.0)
ARQ_RATE = 2.5


# --------------------------------------------------------------------------
# Trellis-coded modulation
# --------------------------------------------------------------------------

class TcmCodec:
    """
    Rate-1/2 4-state trellis code on a {-2, -1, 1, 2} real alphabet.

    Each input bit b_t produces one real value from the window
    w = [b_(t-2), b_(t-1), b_t] (newest bit last):

        s = ((-1)^(g11 . w) - 3 (-1)^(g12 . w)) / 2,  g11 = [0, 1, 0], g12 = [1, 1, 1]

    Even-indexed outputs go to I, odd-indexed to Q, and complex symbols are
    divided by sqrt(5) for unit average energy. Two zero bits terminate the
    trellis (plus one more when needed to fill the last symbol).
    """

    g11 = (0, 1, 0)
    g12 = (1, 1, 1)
    n_states = 4

    def __init__(self):
        states = np.arange(self.n_states)
        p2, p1 = states >> 1, states & 1
        b = np.array([0, 1])
        # state index = 2 b_(t-2) + b_(t-1)
        self.outputs = self._branch(p2[:, None], p1[:, None], b[None, :])
        self.next_state = 2 * p1[:, None] + b[None, :]

    @classmethod
    def _branch(cls, p2, p1, b):
        window = (p2, p1, b)
        first = sum(g * w for g, w in zip(cls.g11, window)) % 2
        second = sum(g * w for g, w in zip(cls.g12, window)) % 2
        return ((-1.0) ** first - 3.0 * (-1.0) ** second) / 2.0

    @staticmethod
    def info_bits(n_symbols: int) -> int:
        """Payload bits carried by n_symbols complex symbols."""
        return max(0, 2 * n_symbols - 2)

    def encode_real(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64).reshape(-1)
        tail = 2 + (bits.size % 2)
        padded = np.concatenate([np.zeros(2, dtype=np.int64), bits, np.zeros(tail, dtype=np.int64)])
        return self._branch(padded[:-2], padded[1:-1], padded[2:])

    def encode(self, bits) -> np.ndarray:
        """Bits to unit-energy complex symbols."""
        real = self.encode_real(bits)
        return (real[0::2] + 1j * real[1::2]) / TCM_SCALE

    def decode(self, symbols, sigma2: float = 1.0, n_bits: Optional[int] = None) -> np.ndarray:
        """
        Maximum-likelihood sequence detection on the 4-state trellis.

        Args:
            symbols: Noisy complex symbols (unit-energy scale)
            sigma2: Noise variance per complex symbol (scales the metric only)
            n_bits: Payload length; defaults to info_bits(len(symbols))

        Returns:
            Decoded payload bits
        """
        symbols = np.asarray(symbols, dtype=np.complex128).reshape(-1)
        if n_bits is None:
            n_bits = self.info_bits(symbols.size)
        real = np.empty(2 * symbols.size)
        real[0::2], real[1::2] = symbols.real, symbols.imag
        real *= TCM_SCALE
        weight = 1.0 / max(sigma2, 1e-300)

        ns = np.arange(self.n_states)
        # predecessors of next state ns: (2 p2 + (ns >> 1)) for p2 in {0, 1}, input ns & 1
        prev = np.stack([(ns >> 1), 2 + (ns >> 1)], axis=1)
        branch_out = self.outputs[prev, (ns & 1)[:, None]]

        metric = np.full(self.n_states, np.inf)
        metric[0] = 0.0
        choices = np.empty((real.size, self.n_states), dtype=np.int64)
        for t, r in enumerate(real):
            cand = metric[prev] + weight * (r - branch_out) ** 2
            pick = np.argmin(cand, axis=1)
            choices[t] = prev[ns, pick]
            metric = cand[ns, pick]

        state = 0
        decided = np.empty(real.size, dtype=np.int64)
        for t in range(real.size - 1, -1, -1):
            decided[t] = state & 1
            state = choices[t, state]
        return decided[:n_bits]

    def free_distance_sq(self, max_len: int = 12) -> float:
        """
        Minimum squared Euclidean distance between two trellis paths that
        diverge from a common state and remerge within ``max_len`` steps.
        """
        best = np.inf
        frontier: Dict[Tuple[int, int], float] = {}
        for s in range(self.n_states):
            d = (self.outputs[s, 0] - self.outputs[s, 1]) ** 2
            pair = (int(self.next_state[s, 0]), int(self.next_state[s, 1]))
            frontier[pair] = min(frontier.get(pair, np.inf), d)
        for _ in range(max_len - 1):
            nxt: Dict[Tuple[int, int], float] = {}
            for (s1, s2), dist in frontier.items():
                for b1 in (0, 1):
                    for b2 in (0, 1):
                        d = dist + (self.outputs[s1, b1] - self.outputs[s2, b2]) ** 2
                        pair = (int(self.next_state[s1, b1]), int(self.next_state[s2, b2]))
                        if pair[0] == pair[1]:
                            best = min(best, d)
                        elif d < best:
                            nxt[pair] = min(nxt.get(pair, np.inf), d)
            frontier = nxt
            if not frontier:
                break
        return float(best)


def tcm_encode(bits) -> np.ndarray:
    return TcmCodec().encode(bits)


def tcm_viterbi_decode(symbols, sigma2: float = 1.0, n_bits: Optional[int] = None) -> np.ndarray:
    return TcmCodec().decode(symbols, sigma2, n_bits)


# --------------------------------------------------------------------------
# MUB superposition
# --------------------------------------------------------------------------

class DetectOrder(str, Enum):
    FULL_FIRST = "full_first"
    SPARSE_FIRST = "sparse_first"


class MubConfig(BaseModel):
    """Power split, sparse-frame occupancy and detection schedule."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=0.9, gt=0.0, le=1.0, description="Power share of the full frame")
    delta: float = Field(default=0.25, ge=0.0, le=1.0, description="Occupancy of the sparse frame")
    turbo_iters: int = Field(default=2, ge=0)
    detect_order: DetectOrder = DetectOrder.FULL_FIRST
    symplectic: Optional[SymplecticParams] = None


@dataclass(frozen=True)
class MubSystem:
    """Basis pair S1 (pulsone) / S2 (spread) and the sparse-frame index set."""

    grid: GridParams
    cfg: MubConfig
    s1: np.ndarray
    s2: np.ndarray

    @property
    def n_sparse(self) -> int:
        return int(np.floor(self.cfg.delta * self.grid.MN))

    @property
    def occupied(self) -> np.ndarray:
        return np.arange(self.n_sparse)

    @property
    def beta1(self) -> float:
        return float(np.sqrt(self.cfg.alpha))

    @property
    def beta2(self) -> float:
        return float(np.sqrt(1.0 - self.cfg.alpha))


def mub_flatness(s1: np.ndarray, s2: np.ndarray) -> float:
    """max | |S1^H S2| sqrt(MN) - 1 |."""
    MN = s1.shape[0]
    return float(np.max(np.abs(np.abs(s1.conj().T @ s2) * np.sqrt(MN) - 1.0)))


def build_mub_system(grid: GridParams, cfg: MubConfig = MubConfig()) -> MubSystem:
    """
    Build the basis pair and verify mutual unbiasedness.

    Raises:
        InvalidParameterError: If the pair is not mutually unbiased on this grid
    """
    symplectic = cfg.symplectic or default_symplectic(grid)
    s1 = basis_matrix(make_basis(BasisFamily.ZAK_PULSONE, grid))
    s2 = basis_matrix(make_basis(BasisFamily.SPREAD_CAZAC, grid, symplectic=symplectic))
    deviation = mub_flatness(s1, s2)
    if deviation >= MUB_TOL:
        raise InvalidParameterError(
            f"Bases are not mutually unbiased for M={grid.M}, N={grid.N} (deviation {deviation:.2e})"
        )
    return MubSystem(grid, cfg.model_copy(update={'symplectic': symplectic}), s1, s2)


def mub_transmit(x1, x2, system: MubSystem, q_mat: Optional[np.ndarray] = None) -> TDSequence:
    """
    x' = sqrt(alpha) Q S1 x1 + sqrt(1 - alpha) Q S2 x2, with x2 on the first
    floor(delta MN) indices.

    Raises:
        InvalidParameterError: If the frame lengths do not match the system
    """
    MN = system.grid.MN
    x1 = np.asarray(x1, dtype=np.complex128).reshape(-1)
    x2 = np.asarray(x2, dtype=np.complex128).reshape(-1)
    if x1.size != MN:
        raise InvalidParameterError(f"Full frame needs {MN} symbols, got {x1.size}")
    if x2.size != system.n_sparse:
        raise InvalidParameterError(f"Sparse frame needs {system.n_sparse} symbols, got {x2.size}")
    frame = system.beta1 * (system.s1 @ x1)
    if x2.size:
        frame = frame + system.beta2 * (system.s2[:, system.occupied] @ x2)
    if q_mat is not None:
        frame = q_mat @ frame
    return TDSequence(system.grid, frame)


@dataclass
class MubDecision:
    bits1: np.ndarray
    bits2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray


@log_function_call()
def mub_detect(y_prime, system: MubSystem, sigma2: float,
               codec: Optional[TcmCodec] = None) -> MubDecision:
    """
    SIC detection of both TCM frames from the combined vector y'.

    Each pass projects onto one basis, Viterbi-decodes, re-encodes and
    subtracts before decoding the other frame; turbo_iters extra passes
    repeat the schedule with both estimates available.
    """
    codec = codec or TcmCodec()
    y = np.asarray(y_prime.samples if isinstance(y_prime, TDSequence) else y_prime, dtype=np.complex128)
    MN, n2 = system.grid.MN, system.n_sparse
    occ = system.occupied
    s2_occ = system.s2[:, occ]
    has_sparse = n2 > 0 and system.beta2 > 0

    x1_hat = np.zeros(MN, dtype=np.complex128)
    x2_hat = np.zeros(n2, dtype=np.complex128)
    bits1 = np.zeros(codec.info_bits(MN), dtype=np.int64)
    bits2 = np.zeros(codec.info_bits(n2), dtype=np.int64)

    def detect_full():
        residual = y - system.beta2 * (s2_occ @ x2_hat) if has_sparse else y
        z = system.s1.conj().T @ residual / system.beta1
        bits = codec.decode(z, sigma2 / system.cfg.alpha)
        return bits, codec.encode(bits)

    def detect_sparse():
        residual = y - system.beta1 * (system.s1 @ x1_hat)
        z = s2_occ.conj().T @ residual / system.beta2
        bits = codec.decode(z, sigma2 / (1.0 - system.cfg.alpha))
        return bits, codec.encode(bits)

    for _ in range(1 + system.cfg.turbo_iters):
        if system.cfg.detect_order == DetectOrder.SPARSE_FIRST and has_sparse:
            bits2, x2_hat = detect_sparse()
            bits1, x1_hat = detect_full()
        else:
            bits1, x1_hat = detect_full()
            if has_sparse:
                bits2, x2_hat = detect_sparse()
    return MubDecision(bits1, bits2, x1_hat, x2_hat)


def q_function(x) -> np.ndarray:
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / np.sqrt(2.0))


@dataclass(frozen=True)
class RateReport:
    r1: float
    r2: float
    r_eff: float
    sinr1: float
    sinr2: float


def effective_rate(alpha: float, delta: float, snr_linear: float, d_free: float = DEFAULT_D_FREE,
                   M: int = 31, N: int = 37) -> RateReport:
    """
    Rate model with unit signal power P and sigma^2 = 1 / snr:

        SINR1 = alpha / (sigma^2 + delta (1 - alpha) / MN)
        P_s1  = Q(sqrt(2 d_free SINR1))
        SINR2 = (1 - alpha) / (sigma^2 + alpha P_s1 / MN)
        R_eff = log2(1 + SINR1) + delta log2(1 + SINR2)
    """
    if not (0.0 <= alpha <= 1.0 and 0.0 <= delta <= 1.0):
        raise InvalidParameterError(f"alpha and delta must lie in [0, 1], got {alpha}, {delta}")
    if snr_linear <= 0:
        raise InvalidParameterError(f"SNR must be positive, got {snr_linear}")
    MN = M * N
    sigma2 = 1.0 / snr_linear
    sinr1 = alpha / (sigma2 + delta * (1.0 - alpha) / MN)
    p_s1 = float(q_function(np.sqrt(2.0 * d_free * sinr1)))
    sinr2 = (1.0 - alpha) / (sigma2 + alpha * p_s1 / MN)
    r1 = float(np.log2(1.0 + sinr1))
    r2 = float(delta * np.log2(1.0 + sinr2))
    return RateReport(r1, r2, r1 + r2, float(sinr1), float(sinr2))


def delta_bound(alpha: float, gamma: float, sigma2: float) -> float:
    """min(1, max(0, (alpha - gamma sigma^2) / (gamma (1 - alpha))))."""
    if gamma <= 1:
        raise InvalidParameterError(f"gamma must exceed 1, got {gamma}")
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    raw = (alpha - gamma * sigma2) / (gamma * (1.0 - alpha))
    return float(min(1.0, max(0.0, raw)))


def arq_throughput(ber: float, packet_bits: float, rate: float = ARQ_RATE) -> float:
    """T = R (1 - p_b)^L."""
    return float(rate * (1.0 - ber) ** packet_bits)


# --------------------------------------------------------------------------
# Differential communication
# --------------------------------------------------------------------------

def _scaled(h: EffectiveChannel, factor: complex) -> EffectiveChannel:
    return EffectiveChannel(h.grid, {p: v * factor for p, v in h.taps.items()})


def estimate_from_data(y: TDSequence, x_hat: TDSequence, window: Window) -> EffectiveChannel:
    """
    Taps from the cross-ambiguity of the received frame with a detected data
    frame, normalized by the frame energy ||x_hat||^2.

    Raises:
        InvalidParameterError: If x_hat is zero or the window exceeds one period
    """
    check_window(y.grid, window)
    energy = x_hat.norm() ** 2
    if energy == 0:
        raise InvalidParameterError("Detected frame has zero energy")
    surface = cross_ambiguity(y, x_hat, window_region(*window))
    taps = {(int(k), int(l)): complex(v) / energy for (k, l), v in zip(surface.region, surface.values)}
    return EffectiveChannel(y.grid, taps).pruned()


def path_responses(grid: GridParams, ch: ChannelInstance, window: Window,
                   w_tx: Optional[FilterSpec] = None) -> List[EffectiveChannel]:
    """
    Effective channel of each path at unit gain: on-grid taps without a
    filter, otherwise measured through the time-domain chain.
    """
    responses = []
    for path in ch.paths:
        unit = ChannelInstance((PathSpec(1.0, path.delay, path.doppler),))
        if w_tx is None:
            responses.append(EffectiveChannel.from_paths(grid, unit))
        else:
            responses.append(probe_effective_channel(grid, w_tx, unit, window=window))
    return responses


def drifting_channel(ch: ChannelInstance, responses: List[EffectiveChannel], frame: int) -> EffectiveChannel:
    """Path gains advanced by the Doppler phase exp(j2pi nu_i frame T)."""
    grid = responses[0].grid
    taps: Dict[Tuple[int, int], complex] = {}
    for path, resp in zip(ch.paths, responses):
        gain = path.gain * np.exp(2j * np.pi * path.doppler * frame * grid.T)
        for p, v in resp.taps.items():
            taps[p] = taps.get(p, 0j) + gain * v
    return EffectiveChannel(grid, taps)


def tap_nmse(estimate: EffectiveChannel, truth: EffectiveChannel, window: Window) -> float:
    ref = truth.as_array(window)
    denom = float(np.sum(np.abs(ref) ** 2))
    err = float(np.sum(np.abs(estimate.as_array(window) - ref) ** 2))
    return err / denom if denom > 0 else err


def _inject_errors(symbols: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    out = symbols.copy()
    count = int(round(rate * out.size))
    idx = rng.choice(out.size, size=count, replace=False)
    out[idx] = -out[idx]
    return out


@log_function_call()
def differential_run(grid: GridParams, ch: ChannelInstance, n_frames: int, pilot_period: int = 30,
                     snr_db: float = 20.0, rng_seed: SeedLike = None,
                     w_tx: Optional[FilterSpec] = None, window: Optional[Window] = None,
                     perfect_csi: bool = False,
                     error_injection: Optional[Tuple[int, float]] = None) -> pd.DataFrame:
    """
    Data-as-pilot pipeline: one pilot frame, then ``pilot_period`` data frames
    each detected with the latest estimate and used to re-estimate the channel.

    Path gains stay fixed across the run and advance by their Doppler phase
    from frame to frame.

    Args:
        grid: DD grid
        ch: Channel instance at frame 0
        n_frames: Number of data frames
        pilot_period: Data frames per pilot frame
        snr_db: Per-symbol SNR
        rng_seed: Master seed
        w_tx: Pulse-shaping filter; None uses on-grid taps
        window: Estimation window; defaults to support_window
        perfect_csi: Detect with the true channel instead of the estimate
        error_injection: (data frame index, symbol error rate) forced before re-estimation

    Returns:
        DataFrame with columns frame, kind, ber, tap_nmse
    """
    if n_frames < 0 or pilot_period < 1:
        raise InvalidParameterError("n_frames must be >= 0 and pilot_period >= 1")
    MN = grid.MN
    window = window or support_window(grid, ch)
    check_window(grid, window)
    responses = path_responses(grid, ch, window, w_tx)
    pilot = pilot_position(grid)
    sigma2 = 10.0 ** (-snr_db / 10.0)
    bit_rng, noise_rng, fault_rng = spawn_rngs(rng_seed, 3)

    rows = []
    estimate: Optional[EffectiveChannel] = None
    frame = 0
    data_index = 0
    while data_index < n_frames:
        truth = drifting_channel(ch, responses, frame)
        if data_index % pilot_period == 0 and (not rows or rows[-1]['kind'] == 'data'):
            X = DDArray.impulse(grid, *pilot, value=np.sqrt(MN))
            Y = add_awgn(twisted_conv(truth, X), snr_db, noise_rng)
            estimate = _scaled(estimate_channel_pilot(Y, pilot, window), 1.0 / np.sqrt(MN))
            rows.append({'frame': frame, 'kind': 'pilot', 'ber': np.nan,
                         'tap_nmse': tap_nmse(estimate, truth, window)})
            frame += 1
            continue

        bits = bit_rng.integers(0, 2, size=2 * MN)
        X = vector_to_dd(qam_map(bits), grid)
        Y = add_awgn(twisted_conv(truth, X), snr_db, noise_rng)
        H = build_channel_matrix(truth if perfect_csi else estimate)
        decided_bits = qam_demap(mmse_equalize(H, dd_to_vector(Y), sigma2))
        decided = qam_map(decided_bits)
        if error_injection is not None and error_injection[0] == data_index:
            decided = _inject_errors(decided, error_injection[1], fault_rng)

        estimate = estimate_from_data(idzt(Y), idzt(vector_to_dd(decided, grid)), window)
        rows.append({'frame': frame, 'kind': 'data',
                     'ber': count_bit_errors(bits, decided_bits) / bits.size,
                     'tap_nmse': tap_nmse(estimate, drifting_channel(ch, responses, frame), window)})
        logger.debug(f"frame {frame}: ber={rows[-1]['ber']:.3e} nmse={rows[-1]['tap_nmse']:.3e}")
        frame += 1
        data_index += 1
    return pd.DataFrame(rows, columns=['frame', 'kind', 'ber', 'tap_nmse'])
