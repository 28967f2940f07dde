"""
Doubly-selective channels and the oversampled time-domain chain.

The transmit chain realizes the separable DD filter in the time domain:
the Zak pulse train of X is weighted by the Doppler factor's transform (a
window centered on the frame [0, T)) and then convolved with the delay
factor (a band filter centered on [0, B)). The buffer spans ``periods``
frames of Q*MN samples at rate Fs = Q*B with t = 0 at the start of the
center frame.
"""

import json
import logging
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from modules.ambiguity import fast_cross_ambiguity_pulsone, window_region
from modules.filters import FilterSpec
from modules.grid import DDArray, GridParams, TDSequence
from modules.transforms import dzt, idzt
from modules.waveforms import dd_shift
from utils.error_handler import FileError, InvalidChannelError, InvalidParameterError

logger = logging.getLogger(__name__)

VEH_A_DELAYS_US = (0.0, 0.31, 0.71, 1.09, 1.73, 2.51)
VEH_A_POWERS_DB = (0.0, -1.0, -9.0, -10.0, -15.0, -20.0)
TAP_FLOOR = 1e-7
DEFAULT_Q = 16
DEFAULT_PERIODS = 3

Window = Tuple[int, int, int, int]
SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Generator from an int, SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_rngs(seed: SeedLike, count: int) -> List[np.random.Generator]:
    """
    Independent child generators: a Generator splits with its own spawn,
    ints, None and SeedSequences go through SeedSequence.spawn.
    """
    if isinstance(seed, np.random.Generator):
        return seed.spawn(count)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seed.spawn(count)]


@dataclass(frozen=True)
class PathSpec:
    """One propagation path: complex gain, delay (s) and Doppler (Hz)."""

    gain: complex
    delay: float
    doppler: float

    def __post_init__(self):
        if self.delay < 0:
            raise InvalidChannelError(f"Path delay must be non-negative, got {self.delay}")
        object.__setattr__(self, 'gain', complex(self.gain))
        object.__setattr__(self, 'delay', float(self.delay))
        object.__setattr__(self, 'doppler', float(self.doppler))

    def to_dict(self) -> dict:
        return {'gain_re': self.gain.real, 'gain_im': self.gain.imag,
                'delay_s': self.delay, 'doppler_hz': self.doppler}

    @classmethod
    def from_dict(cls, data: dict) -> "PathSpec":
        return cls(complex(data['gain_re'], data['gain_im']), data['delay_s'], data['doppler_hz'])

    @classmethod
    def on_grid(cls, grid: GridParams, gain: complex, k: int, l: int) -> "PathSpec":
        """Path at integer delay bin k and Doppler bin l."""
        return cls(gain, k / grid.B, l / grid.T)


@dataclass(frozen=True)
class ChannelInstance:
    """A set of paths; tau_max and nu_max are derived."""

    paths: Tuple[PathSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, 'paths', tuple(self.paths))

    @property
    def tau_max(self) -> float:
        return max((p.delay for p in self.paths), default=0.0)

    @property
    def nu_max(self) -> float:
        return max((abs(p.doppler) for p in self.paths), default=0.0)

    def to_json(self) -> str:
        return json.dumps({'paths': [p.to_dict() for p in self.paths]}, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ChannelInstance":
        try:
            data = json.loads(text)
            return cls(tuple(PathSpec.from_dict(p) for p in data['paths']))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise InvalidChannelError(f"Malformed channel document: {e}") from e

    def save(self, path: Union[str, Path]):
        try:
            Path(path).write_text(self.to_json(), encoding='utf-8')
        except OSError as e:
            raise FileError(f"Cannot write channel instance to {path}: {e}") from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ChannelInstance":
        try:
            return cls.from_json(Path(path).read_text(encoding='utf-8'))
        except OSError as e:
            raise FileError(f"Cannot read channel instance from {path}: {e}") from e

    def crystallization_ok(self, grid: GridParams) -> bool:
        """tau_max < tau_p and 2 nu_max < nu_p."""
        return self.tau_max < grid.tau_p and 2 * self.nu_max < grid.nu_p


def identity_channel() -> ChannelInstance:
    return ChannelInstance((PathSpec(1.0, 0.0, 0.0),))


def sample_veh_a(nu_max: float, rng_seed: SeedLike = None) -> ChannelInstance:
    """
    Draw a Veh-A realization.

    Gains are circular complex Gaussian with variances following the power
    profile (normalized to unit total); Dopplers are nu_max cos(theta) with
    theta uniform on [0, 2pi).

    Raises:
        InvalidChannelError: If nu_max is negative
    """
    if nu_max < 0:
        raise InvalidChannelError(f"nu_max must be non-negative, got {nu_max}")
    rng = make_rng(rng_seed)
    powers = 10.0 ** (np.asarray(VEH_A_POWERS_DB) / 10.0)
    powers = powers / powers.sum()
    count = len(powers)
    gains = np.sqrt(powers / 2) * (rng.standard_normal(count) + 1j * rng.standard_normal(count))
    theta = rng.uniform(0.0, 2 * np.pi, size=count)
    dopplers = nu_max * np.cos(theta)
    return ChannelInstance(tuple(
        PathSpec(g, d * 1e-6, nu) for g, d, nu in zip(gains, VEH_A_DELAYS_US, dopplers)
    ))


@dataclass(frozen=True)
class OversampledSignal:
    """Fine-rate buffer: ``periods`` frames of Q*MN samples at Fs = Q*B."""

    grid: GridParams
    q: int
    periods: int
    samples: np.ndarray

    @property
    def fs(self) -> float:
        return self.q * self.grid.B

    @property
    def first_symbol(self) -> int:
        """Index (in symbols, rate B) of the first buffer sample."""
        return -((self.periods - 1) // 2) * self.grid.MN

    @property
    def times(self) -> np.ndarray:
        start = self.first_symbol * self.q
        return (start + np.arange(self.samples.size)) / self.fs

    def with_samples(self, samples: np.ndarray) -> "OversampledSignal":
        return OversampledSignal(self.grid, self.q, self.periods, samples)


def _frame_center(grid: GridParams) -> float:
    return (grid.T - 1.0 / grid.B) / 2.0


def _band_center(grid: GridParams) -> float:
    return (grid.B - 1.0 / grid.T) / 2.0


def _symbol_window(grid: GridParams, spec: FilterSpec, symbols: np.ndarray) -> np.ndarray:
    """Doppler-factor time window at the symbol instants n/B."""
    u = (symbols / grid.B - _frame_center(grid)) / grid.T
    return spec.doppler_axis().spectrum(u)


def _band_response(grid: GridParams, spec: FilterSpec, length: int, fs: float) -> np.ndarray:
    f = np.fft.fftfreq(length, d=1.0 / fs)
    return spec.delay_axis().spectrum((f - _band_center(grid)) / grid.B)


def shape_and_modulate(X: DDArray, w_tx: FilterSpec, Q: int = DEFAULT_Q,
                       periods: int = DEFAULT_PERIODS) -> OversampledSignal:
    """
    Pulse-shape a DD frame into the oversampled transmit signal.

    Args:
        X: DD symbols
        w_tx: Transmit filter
        Q: Oversampling factor (>= 4)
        periods: Frames covered by the buffer (odd keeps band edges off the FFT bins)

    Returns:
        OversampledSignal of length periods * Q * MN

    Raises:
        InvalidParameterError: If Q < 4 or periods < 1
    """
    if Q < 4:
        raise InvalidParameterError(f"Oversampling factor must be >= 4, got {Q}")
    if periods < 1:
        raise InvalidParameterError(f"periods must be >= 1, got {periods}")
    grid = X.grid
    MN = grid.MN
    x = idzt(X).samples

    first = -((periods - 1) // 2) * MN
    symbols = first + np.arange(periods * MN)
    train = x[np.mod(symbols, MN)] * _symbol_window(grid, w_tx, symbols)

    length = periods * Q * MN
    upsampled = np.zeros(length, dtype=np.complex128)
    upsampled[::Q] = train
    fs = Q * grid.B
    shaped = np.fft.ifft(np.fft.fft(upsampled) * Q * _band_response(grid, w_tx, length, fs))
    return OversampledSignal(grid, Q, periods, shaped)


def _delay_samples(s: np.ndarray, shift: int, cyclic: bool) -> np.ndarray:
    if cyclic:
        return np.roll(s, shift)
    out = np.zeros_like(s)
    if shift < s.size:
        out[shift:] = s[:s.size - shift]
    return out


def apply_ltv(s: OversampledSignal, ch: ChannelInstance, cyclic: bool = True) -> OversampledSignal:
    """
    Apply a multipath LTV channel on the fine grid.

    y(t) = sum_i h_i s(t - tau_i) exp(j2pi nu_i (t - tau_i)), delays rounded
    to 1/Fs.

    Args:
        s: Oversampled transmit signal
        ch: Channel instance
        cyclic: Wrap delayed samples around the buffer (False zero-fills)

    Returns:
        Received oversampled signal

    Raises:
        InvalidChannelError: If a path delay exceeds the frame duration T
    """
    grid = s.grid
    t = s.times
    y = np.zeros_like(s.samples)
    for path in ch.paths:
        if path.delay > grid.T:
            raise InvalidChannelError(f"Path delay {path.delay:.3e}s exceeds frame duration {grid.T:.3e}s")
        shift = int(round(path.delay * s.fs))
        delayed = _delay_samples(s.samples, shift, cyclic)
        y += path.gain * delayed * np.exp(2j * np.pi * path.doppler * (t - shift / s.fs))
    return s.with_samples(y)


def receive_front_end(y: OversampledSignal, w_rx: FilterSpec) -> DDArray:
    """
    Matched filtering, sampling on the information grid and DZT.

    ``w_rx`` is the transmit filter; its matched counterpart is applied as
    the conjugate band response followed by the conjugate symbol window.
    Samples are folded modulo MN before the DZT.
    """
    grid = y.grid
    MN = grid.MN
    length = y.samples.size
    filtered = np.fft.ifft(np.fft.fft(y.samples) * np.conj(_band_response(grid, w_rx, length, y.fs)))
    symbols = y.first_symbol + np.arange(y.periods * MN)
    sampled = filtered[::y.q] * np.conj(_symbol_window(grid, w_rx, symbols))
    folded = sampled.reshape(y.periods, MN).sum(axis=0)
    return dzt(TDSequence(grid, folded))


def add_awgn(y, snr_db: float, rng_seed: SeedLike = None):
    """
    Add circular complex Gaussian noise of variance 10^(-snr_db/10) per sample.

    Works on DDArray, TDSequence or a plain array; snr_db = inf returns y.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return y
    rng = make_rng(rng_seed)
    sigma2 = 10.0 ** (-snr_db / 10.0)

    def noisy(values: np.ndarray) -> np.ndarray:
        noise = rng.standard_normal(values.shape) + 1j * rng.standard_normal(values.shape)
        return values + np.sqrt(sigma2 / 2) * noise

    if isinstance(y, DDArray):
        return DDArray(y.grid, noisy(y.core))
    if isinstance(y, TDSequence):
        return TDSequence(y.grid, noisy(y.samples))
    return noisy(np.asarray(y, dtype=np.complex128))


@dataclass(frozen=True)
class EffectiveChannel:
    """Sparse DD taps h_eff[k, l] with k, l signed offsets."""

    grid: GridParams
    taps: Dict[Tuple[int, int], complex] = field(default_factory=dict)

    def pruned(self, floor: float = TAP_FLOOR) -> "EffectiveChannel":
        if not self.taps:
            return self
        peak = max(abs(v) for v in self.taps.values())
        kept = {p: v for p, v in self.taps.items() if abs(v) >= floor * peak}
        return EffectiveChannel(self.grid, kept)

    @property
    def bounds(self) -> Optional[Window]:
        if not self.taps:
            return None
        ks = [k for k, _ in self.taps]
        ls = [l for _, l in self.taps]
        return (min(ks), max(ks), min(ls), max(ls))

    def energy(self) -> float:
        return float(sum(abs(v) ** 2 for v in self.taps.values()))

    def as_array(self, window: Window) -> np.ndarray:
        """Dense (k, l) array over an inclusive signed window."""
        k_min, k_max, l_min, l_max = window
        out = np.zeros((k_max - k_min + 1, l_max - l_min + 1), dtype=np.complex128)
        for (k, l), v in self.taps.items():
            if k_min <= k <= k_max and l_min <= l <= l_max:
                out[k - k_min, l - l_min] = v
        return out

    @classmethod
    def from_paths(cls, grid: GridParams, ch: ChannelInstance) -> "EffectiveChannel":
        """Taps for on-grid paths (delays/Dopplers rounded to bins)."""
        taps: Dict[Tuple[int, int], complex] = {}
        for p in ch.paths:
            key = (int(round(p.delay * grid.B)), int(round(p.doppler * grid.T)))
            taps[key] = taps.get(key, 0j) + p.gain
        return cls(grid, taps)


def twisted_conv(h: EffectiveChannel, X: DDArray) -> DDArray:
    """
    Discrete twisted convolution h *_sigma X reduced to the core.

    Y[k, l] = sum_(a, b) h[a, b] X~[k - a, l - b] exp(j2pi (k - a) b / MN),
    where X~ is the quasi-periodic extension; each term is dd_shift(X, a, b).
    """
    total = np.zeros_like(X.core)
    for (a, b), gain in h.taps.items():
        total += gain * dd_shift(X, a, b).core
    return DDArray(X.grid, total)


def build_channel_matrix(h: EffectiveChannel) -> np.ndarray:
    """
    MN x MN matrix H with H @ dd_to_vector(X) = dd_to_vector(twisted_conv(h, X)).

    Row k'N + l' receives, for each tap (a, b), the core entry
    ((k' - a) mod M, (l' - b) mod N) with the quasi-periodic phase
    exp(j2pi floor((k' - a)/M) l / N) and the twist exp(j2pi b (k' - a) / MN).
    """
    grid = h.grid
    M, N, MN = grid.M, grid.N, grid.MN
    H = np.zeros((MN, MN), dtype=np.complex128)
    kt, lt = np.meshgrid(np.arange(M), np.arange(N), indexing='ij')
    rows = (kt * N + lt).ravel()
    for (a, b), gain in h.taps.items():
        dk = kt - a
        ks, ls = np.mod(dk, M), np.mod(lt - b, N)
        wrap = np.floor_divide(dk, M)
        phase = np.mod(wrap * ls, N) / N + np.mod(b * dk, MN) / MN
        cols = (ks * N + ls).ravel()
        np.add.at(H, (rows, cols), (gain * np.exp(2j * np.pi * phase)).ravel())
    return H


def pilot_position(grid: GridParams) -> Tuple[int, int]:
    """Center pilot cell used for channel measurement."""
    return grid.M // 2, grid.N // 2


def check_window(grid: GridParams, window: Window):
    """
    Raises:
        InvalidParameterError: If the window is inverted or exceeds one period
    """
    k_min, k_max, l_min, l_max = window
    if k_max < k_min or l_max < l_min:
        raise InvalidParameterError(f"Inverted window {window}")
    if k_max - k_min + 1 > grid.M or l_max - l_min + 1 > grid.N:
        raise InvalidParameterError(
            f"Window {window} exceeds the fundamental period ({grid.M} x {grid.N})"
        )


def support_window(grid: GridParams, ch: ChannelInstance, margin: int = 4) -> Window:
    """Window covering the channel spread plus ``margin`` bins, clipped to one period."""
    spread = int(ceil(ch.tau_max * grid.B))
    k_margin = min(margin, max(0, (grid.M - 1 - spread) // 2))
    k_min = -k_margin
    k_max = min(spread + k_margin, k_min + grid.M - 1)
    l_half = min(int(ceil(ch.nu_max * grid.T)) + margin, (grid.N - 1) // 2)
    return (k_min, k_max, -l_half, l_half)


def read_taps(y: DDArray, pilot: Tuple[int, int], window: Window) -> EffectiveChannel:
    """Taps from the cross-ambiguity of a received frame with the pilot pulsone."""
    grid = y.grid
    check_window(grid, window)
    region = window_region(*window)
    surface = fast_cross_ambiguity_pulsone(idzt(y), pilot[0], pilot[1], region)
    taps = {(int(k), int(l)): complex(v) for (k, l), v in zip(surface.region, surface.values)}
    return EffectiveChannel(grid, taps).pruned()


def td_chain(X: DDArray, w_tx: FilterSpec, ch: ChannelInstance, Q: int = DEFAULT_Q,
             periods: int = DEFAULT_PERIODS, cyclic: bool = True) -> DDArray:
    """Noiseless shape_and_modulate -> apply_ltv -> receive_front_end."""
    s = shape_and_modulate(X, w_tx, Q, periods)
    return receive_front_end(apply_ltv(s, ch, cyclic), w_tx)


def probe_effective_channel(grid: GridParams, w_tx: FilterSpec, ch: ChannelInstance,
                            Q: int = DEFAULT_Q, window: Optional[Window] = None,
                            periods: int = DEFAULT_PERIODS) -> EffectiveChannel:
    """
    Measure h_eff by sending a noiseless point pilot through the TD chain.

    The pilot sits at (M//2, N//2); taps are read over ``window`` (offsets
    relative to the pilot) by cross-ambiguity against the pilot pulsone.

    Raises:
        InvalidParameterError: If the window exceeds the fundamental period
    """
    window = window or support_window(grid, ch)
    check_window(grid, window)
    if not ch.crystallization_ok(grid):
        logger.warning(
            f"Crystallization condition violated (tau_max={ch.tau_max:.3e}s, "
            f"nu_max={ch.nu_max:.1f}Hz, nu_p={grid.nu_p:.1f}Hz); measured taps may alias"
        )
    pilot = pilot_position(grid)
    received = td_chain(DDArray.impulse(grid, *pilot), w_tx, ch, Q, periods)
    return read_taps(received, pilot, window)

