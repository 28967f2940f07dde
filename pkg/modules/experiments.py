"""
Experiment runners behind ``zakdd run``.

Each runner turns a validated ExperimentConfig into one or more result
tables plus a summary dictionary. Monte Carlo trials draw their generators
from children of the master SeedSequence indexed by (point, trial), so the
output does not depend on the worker count.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from modules.ambiguity import AmbiguitySurface, SupportSet, ambiguity_matrix, core_region, full_region
from modules.channel import (
    EffectiveChannel,
    PathSpec,
    Window,
    build_channel_matrix,
    make_rng,
    probe_effective_channel,
    support_window,
)
from modules.filters import FilterFamily, cross_section, filter_metrics, make_filter
from modules.grid import GridParams, TDSequence, vector_to_dd
from modules.radar import (
    ClutterSpec,
    PolChannel,
    PolTarget,
    RadarWaveform,
    SceneSpec,
    detection_roc,
    dual_pol_simulate,
    estimate_delay_doppler,
    image_frame,
    instant_polarimetry,
    papr,
    papr_ccdf,
    phase_coded_baseline,
    radar_image,
    select_waveform,
    simulate_echo,
)
from modules.result_writer import metadata_path, write_csv, write_metadata
from modules.rxchain import (
    cgm_solve,
    count_bit_errors,
    default_half_bandwidth,
    fd_to_dd,
    mmse_equalize,
    qam_demap,
    qam_map,
    qr_precode,
    rx_combine,
    to_fd_system,
)
from modules.schemes import (
    TcmCodec,
    arq_throughput,
    build_mub_system,
    differential_run,
    effective_rate,
    mub_detect,
    mub_transmit,
)
from modules.transforms import default_symplectic, gdaft, idfzt_matrix, idzt
from modules.waveforms import SubgroupKind, SubgroupSpec, pulsone, subgroup_eigenvector
from utils.error_handler import InvalidParameterError, wrap_errors
from utils.logger import log_function_call
from utils.validator import Detector, ExperimentConfig, ExperimentKind, WaveformKind, feasibility_warnings

logger = logging.getLogger(__name__)

THREADS_ENV = "ZAKDD_THREADS"
UNIMODULAR_TOL = 1e-8
PAPR_THRESHOLDS_DB = np.round(np.arange(0.0, 15.01, 0.25), 2)
FILTER_PRESETS = {
    FilterFamily.SINC: {},
    FilterFamily.RRC: {'beta_tau': 0.6, 'beta_nu': 0.6},
    FilterFamily.GAUSSIAN: {},
    FilterFamily.GAUSSIAN_SINC: {},
    FilterFamily.HERMITE: {},
}
ARQ_PACKET_FACTOR = 2.5


@dataclass
class ExperimentResult:
    """Primary table, extra tables keyed by file suffix, and a summary."""
    table: pd.DataFrame
    extra: Dict[str, pd.DataFrame] = field(default_factory=dict)
    summary: Dict[str, object] = field(default_factory=dict)


def resolve_threads(threads: Optional[int] = None) -> int:
    """--threads, else ZAKDD_THREADS, else 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None:
            return 1
        try:
            threads = int(raw)
        except ValueError as e:
            raise InvalidParameterError(f"{THREADS_ENV} must be an integer, got {raw!r}") from e
    if threads < 1:
        raise InvalidParameterError(f"thread count must be >= 1, got {threads}")
    return threads


def trial_seeds(master: int, points: int, trials: int) -> List[List[np.random.SeedSequence]]:
    """Child seed for (point, trial); fixed by the master seed alone."""
    children = np.random.SeedSequence(master).spawn(points * trials)
    return [children[p * trials:(p + 1) * trials] for p in range(points)]


def parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    """Ordered map over items, threaded when threads > 1."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _awgn(shape, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    return np.sqrt(sigma2 / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _window(cfg: ExperimentConfig, grid: GridParams, ch) -> Window:
    return tuple(cfg.scheme.window) if cfg.scheme.window is not None else support_window(grid, ch)


# --------------------------------------------------------------------------
# Runners
# --------------------------------------------------------------------------

def _waveform(cfg: ExperimentConfig, grid: GridParams) -> TDSequence:
    kind = cfg.scheme.waveform
    if kind == WaveformKind.CHIRP:
        return subgroup_eigenvector(SubgroupSpec(kind=SubgroupKind.LINE, alpha=cfg.scheme.chirp_alpha), grid)
    if kind == WaveformKind.CAZAC:
        return gdaft(pulsone(grid, 0, 0), default_symplectic(grid))
    if kind == WaveformKind.ZC:
        return phase_coded_baseline(grid)
    return pulsone(grid, 0, 0)


@log_function_call()
def run_ambiguity(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Full-torus self-ambiguity heatmap of the configured waveform."""
    grid = cfg.grid.build()
    x = _waveform(cfg, grid)
    values = ambiguity_matrix(x, x)
    surface = AmbiguitySurface(grid, full_region(grid), values.ravel())
    mag = np.abs(values)
    summary = {
        'waveform': cfg.scheme.waveform,
        'unimodular_cells': int(np.count_nonzero(np.abs(mag - 1.0) < UNIMODULAR_TOL)),
        'zero_cells': int(np.count_nonzero(mag < UNIMODULAR_TOL)),
        'MN': grid.MN,
    }
    logger.info(f"Ambiguity of {cfg.scheme.waveform}: {summary['unimodular_cells']} unimodular cells")
    return ExperimentResult(image_frame(surface), summary=summary)


@log_function_call()
def run_filters(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Metrics and delay cross-sections for every filter family."""
    grid = cfg.grid.build()

    def measure(family: FilterFamily):
        spec = make_filter(family, grid, **FILTER_PRESETS[family])
        m = filter_metrics(spec)
        section = cross_section(spec)
        section.insert(0, 'family', family.value)
        row = {'family': family.value, 'orthogonality_residual': m.orthogonality_residual,
               'max_sidelobe_db': m.max_sidelobe_db, 'band_energy_fraction': m.band_energy_fraction,
               'time_energy_fraction': m.time_energy_fraction}
        return row, section

    results = parallel_map(measure, list(FILTER_PRESETS), threads)
    table = pd.DataFrame([r for r, _ in results])
    sections = pd.concat([s for _, s in results], ignore_index=True)
    return ExperimentResult(table, {'cross_section': sections})


def _ber_trial(cfg: ExperimentConfig, grid: GridParams, snr_db: float, seed) -> Dict[str, int]:
    channel_rng, bit_rng, noise_rng = (make_rng(s) for s in seed.spawn(3))
    w_tx = cfg.filter.build(grid)
    ch = cfg.channel.build(grid, channel_rng)
    h = probe_effective_channel(grid, w_tx, ch, cfg.scheme.oversampling, _window(cfg, grid, ch))
    H = build_channel_matrix(h)
    sigma2 = 10.0 ** (-snr_db / 10.0)
    bits = bit_rng.integers(0, 2, size=2 * grid.MN)
    y = H @ qam_map(bits) + _awgn(grid.MN, sigma2, noise_rng)

    errors = {}
    for det in cfg.scheme.detectors:
        if det == Detector.DD_MMSE:
            x_hat = mmse_equalize(H, y, sigma2)
        else:
            b = cfg.scheme.cgm.half_bandwidth
            if b is None:
                b = default_half_bandwidth(grid, cfg.channel.max_doppler(grid))
            system = to_fd_system(H, y, grid, b)
            x_hat = fd_to_dd(cgm_solve(system.banded, system.r, sigma2, cfg.scheme.cgm).s, grid)
        errors[det] = count_bit_errors(bits, qam_demap(x_hat))
    return errors


@log_function_call()
def run_ber(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """BER of DD-domain MMSE and FD-domain CGM over an SNR sweep."""
    grid = cfg.grid.build()
    snrs, trials = cfg.sweep.snr_db, cfg.sweep.trials
    rows = []
    for snr, seeds in zip(snrs, trial_seeds(cfg.seed, len(snrs), trials)):
        outcomes = parallel_map(lambda s: _ber_trial(cfg, grid, snr, s), seeds, threads)
        for det in cfg.scheme.detectors:
            bit_errors = sum(o[det] for o in outcomes)
            total = trials * 2 * grid.MN
            rows.append({'snr_db': snr, 'trials': trials, 'bits': total, 'bit_errors': bit_errors,
                         'ber': bit_errors / total, 'scheme': det, 'filter': cfg.filter.family,
                         'seed': cfg.seed})
        point = rows[-len(cfg.scheme.detectors):]
        logger.info(f"SNR {snr:g} dB: " + ", ".join(f"{r['scheme']}={r['ber']:.3e}" for r in point))
    return ExperimentResult(pd.DataFrame(rows))


@log_function_call()
def run_fde(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Share of FD channel energy inside the modulo band, per half-bandwidth."""
    grid = cfg.grid.build()
    R = idfzt_matrix(grid)
    w_tx = cfg.filter.build(grid)
    seeds = trial_seeds(cfg.seed, 1, cfg.sweep.trials)[0]
    b_default = cfg.scheme.cgm.half_bandwidth
    if b_default is None:
        b_default = default_half_bandwidth(grid, cfg.channel.max_doppler(grid))
    b_values = np.arange(0, (grid.MN - 1) // 2 + 1)

    def profile(seed) -> np.ndarray:
        ch = cfg.channel.build(grid, make_rng(seed))
        h = probe_effective_channel(grid, w_tx, ch, cfg.scheme.oversampling, _window(cfg, grid, ch))
        h_fd = R @ build_channel_matrix(h) @ R.conj().T
        offsets = np.subtract.outer(np.arange(grid.MN), np.arange(grid.MN))
        wrapped = np.abs((offsets + grid.MN // 2) % grid.MN - grid.MN // 2)
        energy = np.bincount(wrapped.ravel(), weights=(np.abs(h_fd) ** 2).ravel(), minlength=len(b_values))
        return np.cumsum(energy)[:len(b_values)] / energy.sum()

    fractions = np.array(parallel_map(profile, seeds, threads))
    table = pd.DataFrame({'half_bandwidth': b_values, 'mean_band_energy_fraction': fractions.mean(axis=0),
                          'min_band_energy_fraction': fractions.min(axis=0)})
    b_index = min(int(b_default), len(b_values) - 1)
    summary = {'default_half_bandwidth': int(b_default),
               'band_energy_fraction_at_default': float(fractions[:, b_index].min())}
    return ExperimentResult(table, summary=summary)


@log_function_call()
def run_diffcomm(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Per-frame BER and tap error of the data-as-pilot scheme against perfect CSI."""
    grid = cfg.grid.build()
    w_tx = cfg.filter.build(grid)
    snrs = cfg.sweep.snr_db
    seeds = trial_seeds(cfg.seed, len(snrs), 1)

    def one_point(args):
        snr, seed = args
        channel_seed, run_seed = seed.spawn(2)
        ch = cfg.channel.build(grid, make_rng(channel_seed))
        window = _window(cfg, grid, ch)
        common = dict(grid=grid, ch=ch, n_frames=cfg.scheme.n_frames, pilot_period=cfg.scheme.pilot_period,
                      snr_db=snr, w_tx=w_tx, window=window)
        run = differential_run(rng_seed=run_seed, **common)
        perfect = differential_run(rng_seed=run_seed, perfect_csi=True, **common)
        run['ber_perfect_csi'] = perfect['ber'].to_numpy()
        run.insert(0, 'snr_db', snr)
        return run

    frames = parallel_map(one_point, list(zip(snrs, (s[0] for s in seeds))), threads)
    return ExperimentResult(pd.concat(frames, ignore_index=True))


def _mub_trial(cfg: ExperimentConfig, grid: GridParams, system, snr_db: float, seed) -> Dict[str, int]:
    channel_rng, bit_rng, noise_rng = (make_rng(s) for s in seed.spawn(3))
    codec = TcmCodec()
    w_tx = cfg.filter.build(grid)
    ch = cfg.channel.build(grid, channel_rng)
    H = build_channel_matrix(probe_effective_channel(grid, w_tx, ch, cfg.scheme.oversampling,
                                                     _window(cfg, grid, ch)))
    pre = qr_precode(H)
    sigma2 = 10.0 ** (-snr_db / 10.0)
    bits1 = bit_rng.integers(0, 2, size=codec.info_bits(grid.MN))
    bits2 = bit_rng.integers(0, 2, size=codec.info_bits(system.n_sparse)) if system.n_sparse else np.zeros(0, int)
    x2 = codec.encode(bits2) if system.n_sparse else np.zeros(0, complex)
    frame = mub_transmit(codec.encode(bits1), x2, system, pre.q_mat)
    y = H @ frame.samples + _awgn(grid.MN, sigma2, noise_rng)
    decision = mub_detect(rx_combine(pre.r_mat, y, sigma2), system, sigma2, codec)
    return {'bits1': bits1.size, 'errors1': count_bit_errors(bits1, decision.bits1),
            'bits2': bits2.size, 'errors2': count_bit_errors(bits2, decision.bits2)}


@log_function_call()
def run_mub(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """TCM MUB superposition: per-frame BER, rate model and ARQ throughput."""
    grid = cfg.grid.build()
    system = build_mub_system(grid, cfg.scheme.mub)
    mub = system.cfg
    snrs, trials = cfg.sweep.snr_db, cfg.sweep.trials
    packet_bits = ARQ_PACKET_FACTOR * grid.MN
    rows = []
    for snr, seeds in zip(snrs, trial_seeds(cfg.seed, len(snrs), trials)):
        outcomes = parallel_map(lambda s: _mub_trial(cfg, grid, system, snr, s), seeds, threads)
        n1, e1 = sum(o['bits1'] for o in outcomes), sum(o['errors1'] for o in outcomes)
        n2, e2 = sum(o['bits2'] for o in outcomes), sum(o['errors2'] for o in outcomes)
        ber = (e1 + e2) / (n1 + n2)
        rate = effective_rate(mub.alpha, mub.delta, 10.0 ** (snr / 10.0), M=grid.M, N=grid.N)
        rows.append({'snr_db': snr, 'trials': trials, 'ber_full': e1 / n1,
                     'ber_sparse': e2 / n2 if n2 else np.nan, 'ber': ber,
                     'r_eff': rate.r_eff, 'throughput': arq_throughput(ber, packet_bits),
                     'alpha': mub.alpha, 'delta': mub.delta, 'seed': cfg.seed})
        logger.info(f"SNR {snr:g} dB: ber={ber:.3e} R_eff={rate.r_eff:.3f}")
    return ExperimentResult(pd.DataFrame(rows))


def _targets(cfg: ExperimentConfig, grid: GridParams) -> List[PathSpec]:
    return [PathSpec(complex(t.gain_re, t.gain_im), t.k / grid.B, t.l / grid.T) for t in cfg.scheme.targets]


def _radar_waveform(cfg: ExperimentConfig, grid: GridParams, clutter: Optional[ClutterSpec]):
    kind = cfg.scheme.waveform
    if kind == WaveformKind.AUTO:
        box = clutter.box if clutter is not None else (0, 0, 0, 0)
        return select_waveform(SupportSet.from_box(*box), grid).waveform
    if kind == WaveformKind.PULSONE:
        return RadarWaveform.from_pulsone(grid)
    if kind == WaveformKind.CAZAC:
        return RadarWaveform.from_rotated_pulsone(grid, default_symplectic(grid))
    return _waveform(cfg, grid)


@log_function_call()
def run_radar(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Core-region radar image of the configured scene and, with targets, a ROC."""
    grid = cfg.grid.build()
    c = cfg.scheme.clutter
    clutter = ClutterSpec(c.gamma_db, tuple(c.box), c.n_scatterers) if c is not None else None
    tx = _radar_waveform(cfg, grid, clutter)
    targets = _targets(cfg, grid)
    snr = cfg.sweep.snr_db[0]
    echo = simulate_echo(tx.sequence if isinstance(tx, RadarWaveform) else tx,
                         SceneSpec(tuple(targets), clutter), snr, cfg.seed)
    table = image_frame(radar_image(tx, echo, core_region(grid)))
    result = ExperimentResult(table)
    if targets:
        roc = detection_roc(tx, targets[0], cfg.scheme.thresholds, cfg.sweep.trials, clutter, snr, cfg.seed,
                            map_fn=lambda fn, items: parallel_map(fn, list(items), threads))
        result.extra['roc'] = roc
    result.summary = {'waveform': cfg.scheme.waveform, 'peak_db': float(table['magnitude_db'].max())}
    return result


@log_function_call()
def run_polarimetry(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """
    Doppler RMSE (bins of 1/T) of single- and dual-polarized estimation of a
    target with random fractional Doppler, plus noiseless cross-polar leakage.
    """
    grid = cfg.grid.build()
    if not cfg.scheme.targets:
        raise InvalidParameterError("polarimetry needs at least one target")
    tcfg = cfg.scheme.targets[0]
    sigma = np.eye(2, dtype=np.complex128) if tcfg.sigma is None else np.asarray(tcfg.sigma, dtype=np.complex128)
    x = {'H': pulsone(grid, 0, 0), 'V': gdaft(pulsone(grid, 0, 0), default_symplectic(grid))}
    half_l = (grid.N - 1) // 2
    window = tuple(cfg.scheme.window) if cfg.scheme.window is not None else (0, grid.M - 1, -half_l, half_l)

    def build(l_value: float) -> PolChannel:
        path = PathSpec(complex(tcfg.gain_re, tcfg.gain_im), tcfg.k / grid.B, l_value / grid.T)
        return PolChannel(grid, (PolTarget(path, sigma),))

    clean = instant_polarimetry(dual_pol_simulate(x['H'], x['V'], build(round(tcfg.l))), x, window)
    co_peak = max(abs(v) for v in clean[('H', 'H')].taps.values()) or 1.0
    leakage = max(abs(v) for v in clean[('H', 'V')].taps.values()) / co_peak * np.sqrt(grid.MN)

    def trial(args):
        snr, seed = args
        offset_rng, noise_seed = seed.spawn(2)
        l_true = tcfg.l + make_rng(offset_rng).uniform(-0.5, 0.5)
        est = instant_polarimetry(dual_pol_simulate(x['H'], x['V'], build(l_true), snr, noise_seed), x, window)
        combined = EffectiveChannel(grid, {p: np.sqrt(abs(est[('H', 'H')].taps[p]) ** 2
                                                      + abs(est[('V', 'V')].taps[p]) ** 2)
                                           for p in est[('H', 'H')].taps})
        _, l_single = estimate_delay_doppler(est[('H', 'H')], window)
        _, l_dual = estimate_delay_doppler(combined, window)
        return (l_single - l_true) ** 2, (l_dual - l_true) ** 2

    rows = []
    snrs = cfg.sweep.snr_db
    for snr, seeds in zip(snrs, trial_seeds(cfg.seed, len(snrs), cfg.sweep.trials)):
        errs = np.array(parallel_map(trial, [(snr, s) for s in seeds], threads))
        rows.append({'snr_db': snr, 'trials': cfg.sweep.trials,
                     'rmse_single_pol': float(np.sqrt(errs[:, 0].mean())),
                     'rmse_dual_pol': float(np.sqrt(errs[:, 1].mean())), 'seed': cfg.seed})
    return ExperimentResult(pd.DataFrame(rows), summary={'normalized_cross_polar_leakage': float(leakage)})


@log_function_call()
def run_papr(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """PAPR CCDF of random pulsone frames and their GDAFT images."""
    grid = cfg.grid.build()
    p = default_symplectic(grid)

    def pulsone_frame(rng: np.random.Generator) -> TDSequence:
        return idzt(vector_to_dd(qam_map(rng.integers(0, 2, size=2 * grid.MN)), grid))

    generators = {'pulsone': pulsone_frame, 'gdaft': lambda rng: gdaft(pulsone_frame(rng), p)}
    tables = []
    for name, gen in generators.items():
        ccdf = papr_ccdf(gen, cfg.scheme.n_draws, PAPR_THRESHOLDS_DB, cfg.seed)
        ccdf.insert(0, 'family', name)
        tables.append(ccdf)
    single = papr(pulsone(grid, 0, 0))
    spread = papr(gdaft(pulsone(grid, 0, 0), p))
    summary = {'pulsone_papr_db': single, 'gdaft_papr_db': spread, 'reduction_db': single - spread}
    return ExperimentResult(pd.concat(tables, ignore_index=True), summary=summary)


RUNNERS: Dict[str, Callable[[ExperimentConfig, int], ExperimentResult]] = {
    ExperimentKind.AMBIGUITY.value: run_ambiguity,
    ExperimentKind.FILTERS.value: run_filters,
    ExperimentKind.BER.value: run_ber,
    ExperimentKind.FDE.value: run_fde,
    ExperimentKind.DIFFCOMM.value: run_diffcomm,
    ExperimentKind.MUB.value: run_mub,
    ExperimentKind.RADAR.value: run_radar,
    ExperimentKind.POLARIMETRY.value: run_polarimetry,
    ExperimentKind.PAPR.value: run_papr,
}


def extra_path(base: Path, suffix: str) -> Path:
    return base.with_name(f"{base.stem}_{suffix}{base.suffix}")


@wrap_errors(stage="run")
def run(cfg: ExperimentConfig, threads: Optional[int] = None) -> List[Path]:
    """
    Run an experiment and write its outputs.

    Returns:
        Paths written (primary CSV first)
    """
    workers = resolve_threads(threads)
    for warning in feasibility_warnings(cfg):
        logger.warning(warning)
    kind = ExperimentKind(cfg.experiment).value
    logger.info(f"Running {kind} (seed={cfg.seed}, threads={workers})", extra={'extra': {
        'experiment': kind, 'seed': cfg.seed}})
    result = RUNNERS[kind](cfg, workers)

    base = Path(cfg.output.path)
    written = [write_csv(result.table, base, cfg)]
    for suffix, table in result.extra.items():
        written.append(write_csv(table, extra_path(base, suffix), cfg))
    if cfg.output.write_metadata:
        written.append(write_metadata(metadata_path(base), cfg, result.summary))
    return written
