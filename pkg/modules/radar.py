"""
Discrete delay-Doppler radar.

Images are cross-ambiguities of the echo against the transmitted waveform.
Waveforms come from crystallization-driven subgroup selection (pulsones,
line chirps, rotated pulsones) or from the phase-coded Zadoff-Chu baseline.
Dual-polarized scenes are illuminated with a pulsone on H and its GDAFT image on V
so that all four polarimetric channels are read from a single frame.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.ambiguity import (
    AmbiguitySurface,
    SupportSet,
    ambiguity_matrix,
    as_region,
    crystallization_check,
    cross_ambiguity,
    fast_cross_ambiguity_pulsone,
    search_compliant_line,
    window_region,
)
from modules.channel import (
    EffectiveChannel,
    PathSpec,
    SeedLike,
    Window,
    add_awgn,
    check_window,
    make_rng,
    spawn_rngs,
)
from modules.grid import GridParams, TDSequence
from modules.transforms import (
    SymplecticParams,
    gdaft,
    gdaft_inverse,
    gdaft_shift_covariant,
    gdaft_shift_map,
    symplectic_library,
)
from modules.waveforms import SubgroupKind, SubgroupSpec, pulsone, subgroup_eigenvector, subgroup_index_set
from utils.error_handler import InvalidParameterError, NotFoundError, ZakDDError
from utils.logger import log_function_call

logger = logging.getLogger(__name__)

DEFAULT_SCATTERERS = 64
SUPPORT_LEVEL = 0.5
POLARIZATIONS = ("H", "V")
ROTATION_CANDIDATES = 8


@dataclass(frozen=True)
class ClutterSpec:
    """Constant-gamma clutter: scatterers uniform over a DD box (bins)."""

    gamma_db: float
    box: Window
    n_scatterers: int = DEFAULT_SCATTERERS

    def __post_init__(self):
        if self.n_scatterers < 1:
            raise InvalidParameterError(f"n_scatterers must be >= 1, got {self.n_scatterers}")
        k_min, k_max, l_min, l_max = self.box
        if k_max < k_min or l_max < l_min:
            raise InvalidParameterError(f"Inverted clutter box {self.box}")


@dataclass(frozen=True)
class SceneSpec:
    """Targets (gain = reflectivity) and optional clutter."""

    targets: Tuple[PathSpec, ...] = ()
    clutter: Optional[ClutterSpec] = None

    def __post_init__(self):
        object.__setattr__(self, 'targets', tuple(self.targets))


def sample_clutter(grid: GridParams, clutter: ClutterSpec, rng_seed: SeedLike = None) -> List[PathSpec]:
    """
    Draw on-grid clutter scatterers with total power 10^(gamma_db/10).

    Delay bins below zero are clipped to the box part with non-negative delay.
    """
    rng = make_rng(rng_seed)
    k_min, k_max, l_min, l_max = clutter.box
    k_lo = max(0, k_min)
    if k_max < k_lo:
        raise InvalidParameterError(f"Clutter box {clutter.box} has no non-negative delays")
    n = clutter.n_scatterers
    ks = rng.integers(k_lo, k_max + 1, size=n)
    ls = rng.integers(l_min, l_max + 1, size=n)
    gains = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    gains *= np.sqrt(10.0 ** (clutter.gamma_db / 10.0) / np.sum(np.abs(gains) ** 2))
    return [PathSpec.on_grid(grid, g, int(k), int(l)) for g, k, l in zip(gains, ks, ls)]


def scene_paths(grid: GridParams, scene: SceneSpec, rng_seed: SeedLike = None) -> List[PathSpec]:
    paths = list(scene.targets)
    if scene.clutter is not None:
        paths.extend(sample_clutter(grid, scene.clutter, rng_seed))
    return paths


def delay_doppler_shift(x: TDSequence, k: int, l: float, cyclic: bool = False) -> TDSequence:
    """
    x[n - k] exp(j2pi l (n - k) / MN) with integer delay k and possibly
    fractional Doppler l; without ``cyclic`` the delayed-out samples are zero.
    """
    MN = x.grid.MN
    n = np.arange(MN)
    if cyclic:
        delayed = np.roll(x.samples, k)
    else:
        delayed = np.zeros(MN, dtype=np.complex128)
        if k < MN:
            delayed[k:] = x.samples[:MN - k]
    return TDSequence(x.grid, delayed * np.exp(2j * np.pi * l * (n - k) / MN))


def _apply_paths(x: TDSequence, paths: Iterable[Tuple[complex, PathSpec]], cyclic: bool) -> np.ndarray:
    grid = x.grid
    y = np.zeros(grid.MN, dtype=np.complex128)
    for gain, path in paths:
        if gain == 0:
            continue
        k = int(round(path.delay * grid.B))
        y += gain * delay_doppler_shift(x, k, path.doppler * grid.T, cyclic).samples
    return y


def simulate_echo(tx: TDSequence, scene: SceneSpec, snr_db: float = np.inf,
                  rng_seed: SeedLike = None, cyclic: bool = False) -> TDSequence:
    """
    Received radar frame: targets and clutter applied to ``tx`` at the
    information-grid rate, plus noise.
    """
    clutter_rng, noise_rng = spawn_rngs(rng_seed, 2)
    paths = scene_paths(tx.grid, scene, clutter_rng)
    echo = TDSequence(tx.grid, _apply_paths(tx, ((p.gain, p) for p in paths), cyclic))
    return add_awgn(echo, snr_db, noise_rng)


@dataclass(frozen=True)
class RadarWaveform:
    """A transmit sequence with the structure that enables fast imaging."""

    sequence: TDSequence
    pulsone_at: Optional[Tuple[int, int]] = None
    rotation: Optional[SymplecticParams] = None
    subgroup: Optional[SubgroupSpec] = None

    @classmethod
    def from_pulsone(cls, grid: GridParams, k0: int = 0, l0: int = 0) -> "RadarWaveform":
        sg = SubgroupSpec(kind=SubgroupKind.RECT_LATTICE)
        return cls(pulsone(grid, k0, l0), (k0, l0), None, sg)

    @classmethod
    def from_rotated_pulsone(cls, grid: GridParams, rotation: SymplecticParams,
                             k0: int = 0, l0: int = 0) -> "RadarWaveform":
        sg = SubgroupSpec(kind=SubgroupKind.ROTATED, rotation=rotation)
        return cls(gdaft(pulsone(grid, k0, l0), rotation), (k0, l0), rotation, sg)

    @property
    def is_plain_pulsone(self) -> bool:
        return self.pulsone_at is not None and self.rotation is None

    @property
    def has_fast_path(self) -> bool:
        """Plain pulsones, and rotated pulsones whose GDAFT kernel is shift covariant."""
        if self.pulsone_at is None:
            return False
        return self.rotation is None or gdaft_shift_covariant(self.rotation)


def radar_image(tx, rx: TDSequence, region) -> AmbiguitySurface:
    """
    Cross-ambiguity of the echo against the transmitted waveform.

    Pulsones take the DZT fast path. A rotated pulsone G p is imaged as
    gdaft_inverse(rx) against p at the points g^-1 (k, l), times the phase
    from gdaft_shift_map. Other waveforms are imaged directly.

    Args:
        tx: RadarWaveform or bare TDSequence
        rx: Received sequence
        region: Points to image
    """
    region = as_region(region)
    if isinstance(tx, RadarWaveform) and tx.has_fast_path:
        k0, l0 = tx.pulsone_at
        if tx.rotation is None:
            return fast_cross_ambiguity_pulsone(rx, k0, l0, region)
        points, factors = gdaft_shift_map(rx.grid, tx.rotation, region)
        inner = fast_cross_ambiguity_pulsone(gdaft_inverse(rx, tx.rotation), k0, l0, points)
        return AmbiguitySurface(rx.grid, region, factors * inner.values)
    sequence = tx.sequence if isinstance(tx, RadarWaveform) else tx
    return cross_ambiguity(rx, sequence, region)


def image_frame(surface: AmbiguitySurface, floor_db: float = -300.0) -> pd.DataFrame:
    """Heatmap rows k, l, magnitude_db."""
    mag = np.abs(surface.values)
    with np.errstate(divide='ignore'):
        db = np.maximum(20.0 * np.log10(mag), floor_db)
    return pd.DataFrame({'k': surface.region[:, 0], 'l': surface.region[:, 1], 'magnitude_db': db})


@dataclass(frozen=True)
class WaveformChoice:
    subgroup: SubgroupSpec
    waveform: RadarWaveform


def _compliant(sg: SubgroupSpec, C: SupportSet, grid: GridParams) -> bool:
    return crystallization_check(SupportSet.from_points(subgroup_index_set(sg, grid)), C, grid)


def select_waveform(C: SupportSet, grid: GridParams,
                    rotations: Sequence[SymplecticParams] = ()) -> WaveformChoice:
    """
    First subgroup whose translates of the clutter box do not overlap:
    the rectangular lattice, then line slopes, then rotated lattices.

    Raises:
        NotFoundError: If no candidate passes the crystallization check
    """
    rect = SubgroupSpec(kind=SubgroupKind.RECT_LATTICE)
    if _compliant(rect, C, grid):
        return WaveformChoice(rect, RadarWaveform.from_pulsone(grid))

    try:
        line = search_compliant_line(C, grid)
        return WaveformChoice(line, RadarWaveform(subgroup_eigenvector(line, grid), subgroup=line))
    except NotFoundError:
        logger.debug("No compliant line slope, trying rotated lattices")

    candidates = list(rotations)
    try:
        candidates.extend(symplectic_library(grid, ROTATION_CANDIDATES))
    except ZakDDError as e:
        logger.debug(f"Rotation library unavailable: {e}")
    for p in candidates:
        sg = SubgroupSpec(kind=SubgroupKind.ROTATED, rotation=p)
        if _compliant(sg, C, grid):
            return WaveformChoice(sg, RadarWaveform.from_rotated_pulsone(grid, p))
    raise NotFoundError(f"No compliant subgroup for clutter box {C.box} on M={grid.M}, N={grid.N}")


def ambiguity_support(x: TDSequence, level: float = SUPPORT_LEVEL) -> set:
    """Torus points where |A_x| exceeds ``level``."""
    amb = np.abs(ambiguity_matrix(x, x))
    ks, ls = np.nonzero(amb > level)
    return set(zip(ks.tolist(), ls.tolist()))


def waveform_library(template: TDSequence,
                     params: Sequence[Optional[SymplecticParams]]) -> List[TDSequence]:
    """
    GDAFT images of a template; a None entry keeps the template itself.

    Raises:
        InvalidParameterError: If a rotation belongs to another grid
    """
    return [template if p is None else gdaft(template, p) for p in params]


def papr(x: TDSequence) -> float:
    """Peak-to-average power ratio in dB."""
    power = np.abs(x.samples) ** 2
    mean = power.mean()
    if mean == 0:
        raise InvalidParameterError("PAPR of a zero sequence is undefined")
    return float(10.0 * np.log10(power.max() / mean))


def papr_ccdf(generator: Callable[[np.random.Generator], TDSequence], n_draws: int,
              thresholds_db: Sequence[float], rng_seed: SeedLike = None) -> pd.DataFrame:
    """
    Empirical P(PAPR > threshold) over ``n_draws`` generated frames.

    Returns:
        DataFrame with columns threshold_db, ccdf
    """
    if n_draws < 1:
        raise InvalidParameterError(f"n_draws must be >= 1, got {n_draws}")
    values = np.array([papr(generator(r)) for r in spawn_rngs(rng_seed, n_draws)])
    thresholds = np.asarray(thresholds_db, dtype=np.float64)
    ccdf = (values[None, :] > thresholds[:, None]).mean(axis=1)
    return pd.DataFrame({'threshold_db': thresholds, 'ccdf': ccdf})


def zadoff_chu(length: int, root: int) -> np.ndarray:
    """
    Zadoff-Chu sequence exp(-j pi u m (m + c) / L), c = L mod 2.

    Raises:
        InvalidParameterError: If gcd(root, length) != 1
    """
    if length < 1 or np.gcd(root, length) != 1:
        raise InvalidParameterError(f"ZC root {root} must be coprime to length {length}")
    m = np.arange(length, dtype=np.int64)
    phase = np.mod(root * m * (m + length % 2), 2 * length)
    return np.exp(-1j * np.pi * phase / length)


def phase_coded_waveform(grid: GridParams, code) -> TDSequence:
    """Rectangular chips of M samples carrying ``code`` (length N), unit norm."""
    code = np.asarray(code, dtype=np.complex128).reshape(-1)
    if code.size != grid.N:
        raise InvalidParameterError(f"Code length {code.size} does not match N={grid.N}")
    samples = np.repeat(code, grid.M)
    return TDSequence(grid, samples / np.linalg.norm(samples))


def phase_coded_baseline(grid: GridParams, root: int = 1) -> TDSequence:
    """ZC phase-coded rectangular-chip comparison waveform."""
    return phase_coded_waveform(grid, zadoff_chu(grid.N, root))


# --------------------------------------------------------------------------
# Polarimetry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PolTarget:
    """A scatterer with its 2x2 scattering matrix Sigma (rows rx, cols tx)."""

    path: PathSpec
    sigma: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=np.complex128))


@dataclass(frozen=True)
class PolChannel:
    """Targets seen through antenna couplings: H_p = C_RX Sigma_p C_TX."""

    grid: GridParams
    targets: Tuple[PolTarget, ...]
    c_tx: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=np.complex128))
    c_rx: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=np.complex128))

    def __post_init__(self):
        object.__setattr__(self, 'targets', tuple(self.targets))

    def response(self, target: PolTarget) -> np.ndarray:
        return self.c_rx @ np.asarray(target.sigma, dtype=np.complex128) @ self.c_tx

    def component(self, rx: str, tx: str) -> EffectiveChannel:
        """On-grid taps of the (rx, tx) channel."""
        j, i = POLARIZATIONS.index(rx), POLARIZATIONS.index(tx)
        taps: Dict[Tuple[int, int], complex] = {}
        for t in self.targets:
            key = (int(round(t.path.delay * self.grid.B)), int(round(t.path.doppler * self.grid.T)))
            taps[key] = taps.get(key, 0j) + t.path.gain * self.response(t)[j, i]
        return EffectiveChannel(self.grid, taps)


def dual_pol_simulate(x_h: TDSequence, x_v: TDSequence, pol: PolChannel, snr_db: float = np.inf,
                      rng_seed: SeedLike = None, cyclic: bool = False) -> Dict[str, TDSequence]:
    """
    y_j = sum_i sum_p g_p H_p[j, i] D_(k_p, l_p) x_i + noise_j for j in {H, V}.
    """
    tx = {'H': x_h, 'V': x_v}
    noise_rngs = spawn_rngs(rng_seed, 2)
    out = {}
    for j, rx in enumerate(POLARIZATIONS):
        total = np.zeros(pol.grid.MN, dtype=np.complex128)
        for i, tx_pol in enumerate(POLARIZATIONS):
            weighted = ((t.path.gain * pol.response(t)[j, i], t.path) for t in pol.targets)
            total += _apply_paths(tx[tx_pol], weighted, cyclic)
        out[rx] = add_awgn(TDSequence(pol.grid, total), snr_db, noise_rngs[j])
    return out


def instant_polarimetry(y: Dict[str, TDSequence], x: Dict[str, TDSequence],
                        window: Window) -> Dict[Tuple[str, str], EffectiveChannel]:
    """
    All four channel estimates from one frame: h^(j,i) = A_(y_j, x_i) over
    ``window``; taps are kept unpruned so leakage stays visible.
    """
    grid = y['H'].grid
    check_window(grid, window)
    region = window_region(*window)
    estimates = {}
    for rx in POLARIZATIONS:
        for tx in POLARIZATIONS:
            surface = cross_ambiguity(y[rx], x[tx], region)
            taps = {(int(k), int(l)): complex(v) for (k, l), v in zip(surface.region, surface.values)}
            estimates[(rx, tx)] = EffectiveChannel(grid, taps)
    return estimates


def estimate_peak(values: np.ndarray) -> Tuple[float, float]:
    """
    Fractional (row, col) of the magnitude peak of a 2-D array by separable
    parabolic interpolation; edge peaks are not refined along that axis.
    """
    mag = np.abs(np.asarray(values))
    r, c = np.unravel_index(int(np.argmax(mag)), mag.shape)

    def refine(left: float, center: float, right: float) -> float:
        denom = left - 2.0 * center + right
        return 0.0 if denom == 0 else 0.5 * (left - right) / denom

    dr = refine(mag[r - 1, c], mag[r, c], mag[r + 1, c]) if 0 < r < mag.shape[0] - 1 else 0.0
    dc = refine(mag[r, c - 1], mag[r, c], mag[r, c + 1]) if 0 < c < mag.shape[1] - 1 else 0.0
    return float(r + dr), float(c + dc)


def estimate_delay_doppler(h: EffectiveChannel, window: Window) -> Tuple[float, float]:
    """Fractional (delay bin, Doppler bin) of the strongest tap in ``window``."""
    r, c = estimate_peak(h.as_array(window))
    return window[0] + r, window[2] + c


# --------------------------------------------------------------------------
# Detection
# --------------------------------------------------------------------------

def _cell_statistic(tx, rx: TDSequence, cell: Tuple[int, int]) -> float:
    return float(np.abs(radar_image(tx, rx, [cell]).values[0]))


def detection_trial(tx, target: PathSpec, clutter: Optional[ClutterSpec], snr_db: float,
                    trial_seed: SeedLike, cyclic: bool = False) -> Tuple[float, float]:
    """
    One target-present and one target-absent draw sharing the clutter draw.

    Returns:
        (present statistic, absent statistic): |image| at the target cell
    """
    seq = tx.sequence if isinstance(tx, RadarWaveform) else tx
    grid = seq.grid
    clutter_seed, present_seed, absent_seed = spawn_rngs(trial_seed, 3)
    clutter_paths = sample_clutter(grid, clutter, clutter_seed) if clutter is not None else []
    cell = (int(round(target.delay * grid.B)), int(round(target.doppler * grid.T)))

    present = simulate_echo(seq, SceneSpec((target, *clutter_paths)), snr_db, present_seed, cyclic)
    absent = simulate_echo(seq, SceneSpec(tuple(clutter_paths)), snr_db, absent_seed, cyclic)
    return _cell_statistic(tx, present, cell), _cell_statistic(tx, absent, cell)


@log_function_call()
def detection_roc(tx, target: PathSpec, thresholds: Sequence[float], n_trials: int,
                  clutter: Optional[ClutterSpec] = None, snr_db: float = np.inf,
                  rng_seed: SeedLike = None, map_fn: Callable = map) -> pd.DataFrame:
    """
    P_d and P_fa from thresholding the image magnitude at the target cell.

    Args:
        tx: RadarWaveform or TDSequence
        target: Target path (on-grid cell is its rounded delay/Doppler bin)
        thresholds: Detection thresholds on |image|
        n_trials: Present/absent draw pairs
        clutter: Optional clutter model
        snr_db: Per-sample SNR
        rng_seed: Master seed; trial t uses child t of its SeedSequence
        map_fn: Map used over trials (an executor's map parallelizes them)

    Returns:
        DataFrame with columns threshold, pfa, pd
    """
    if n_trials < 1:
        raise InvalidParameterError(f"n_trials must be >= 1, got {n_trials}")
    seeds = spawn_rngs(rng_seed, n_trials)
    stats = np.array(list(map_fn(lambda s: detection_trial(tx, target, clutter, snr_db, s), seeds)))
    thr = np.asarray(thresholds, dtype=np.float64)
    pd_ = (stats[None, :, 0] > thr[:, None]).mean(axis=1)
    pfa = (stats[None, :, 1] > thr[:, None]).mean(axis=1)
    return pd.DataFrame({'threshold': thr, 'pfa': pfa, 'pd': pd_})
