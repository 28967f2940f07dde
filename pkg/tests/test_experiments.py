"""
Integration tests for the experiment runners and the command-line entry point.

Every run uses a small grid so the whole file stays fast.
"""

import json
import logging

import numpy as np
import pytest
import yaml

import main as cli
from modules import experiments
from modules.experiments import (
    THREADS_ENV,
    extra_path,
    parallel_map,
    resolve_threads,
    trial_seeds,
)
from modules.result_writer import read_results
from utils.error_handler import InvalidParameterError
from utils.validator import ExperimentConfig, ExperimentKind, parse_config


@pytest.fixture(autouse=True)
def restore_root_logger():
    """The CLI configures the root logger; put it back after each test."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        if handler not in handlers:
            handler.close()
            root.removeHandler(handler)
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


def _config(tmp_path, **overrides) -> ExperimentConfig:
    data = {
        'experiment': 'ambiguity',
        'seed': 7,
        'grid': {'M': 5, 'N': 7, 'nu_p': 30000.0},
        'sweep': {'snr_db': [15.0], 'trials': 2},
        'output': {'path': str(tmp_path / "out.csv")},
    }
    data.update(overrides)
    return ExperimentConfig.model_validate(data)


def _write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding='utf-8')
    return str(path)


class TestHelpers:
    """Test threading and seeding helpers."""

    def test_threads_from_argument(self, monkeypatch):
        """Test an explicit count wins over the environment."""
        monkeypatch.setenv(THREADS_ENV, "8")
        assert resolve_threads(2) == 2

    def test_threads_from_environment(self, monkeypatch):
        """Test ZAKDD_THREADS is used when no count is given."""
        monkeypatch.setenv(THREADS_ENV, "3")
        assert resolve_threads() == 3

    def test_threads_default(self, monkeypatch):
        """Test one worker without argument or environment."""
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert resolve_threads() == 1

    @pytest.mark.parametrize("raw", ["abc", "0"])
    def test_invalid_environment(self, monkeypatch, raw):
        """Test malformed or non-positive values are rejected."""
        monkeypatch.setenv(THREADS_ENV, raw)
        with pytest.raises(InvalidParameterError):
            resolve_threads()

    def test_trial_seeds(self):
        """Test the seed grid shape and its dependence on the master seed only."""
        seeds = trial_seeds(5, 3, 4)
        assert [len(row) for row in seeds] == [4, 4, 4]
        again = trial_seeds(5, 3, 4)
        assert seeds[2][1].generate_state(1)[0] == again[2][1].generate_state(1)[0]
        assert seeds[0][0].generate_state(1)[0] != seeds[0][1].generate_state(1)[0]

    def test_parallel_map_order(self):
        """Test threaded maps keep input order."""
        assert parallel_map(lambda v: v * v, list(range(20)), 4) == [v * v for v in range(20)]

    def test_extra_path(self, tmp_path):
        """Test extra tables sit next to the primary CSV."""
        assert extra_path(tmp_path / "run.csv", "roc").name == "run_roc.csv"


class TestRunners:
    """Test each runner on a small configuration."""

    def test_ambiguity(self, tmp_path):
        """Test a pulsone heatmap over the full torus with MN unit cells."""
        written = experiments.run(_config(tmp_path))
        table = read_results(written[0])
        assert list(table.columns) == ['k', 'l', 'magnitude_db']
        assert len(table) == 35 * 35
        summary = json.loads(written[-1].read_text())['summary']
        assert summary['unimodular_cells'] == 35
        assert summary['zero_cells'] == 35 * 35 - 35

    def test_filters(self, tmp_path):
        """Test one metrics row per family plus cross-sections."""
        written = experiments.run(_config(tmp_path, experiment='filters'))
        table = read_results(written[0])
        assert set(table['family']) == {'sinc', 'rrc', 'gaussian', 'gaussian_sinc', 'hermite'}
        sections = read_results(tmp_path / "out_cross_section.csv")
        assert list(sections.columns) == ['family', 'normalized_delay', 'magnitude', 'magnitude_db']

    def test_ber_threads_independent(self, tmp_path):
        """Test BER tables do not depend on the worker count."""
        cfg = _config(tmp_path, experiment='ber')
        one = read_results(experiments.run(cfg, threads=1)[0])
        other = cfg.model_copy(update={'output': cfg.output.model_copy(
            update={'path': str(tmp_path / "threaded.csv")})})
        two = read_results(experiments.run(other, threads=2)[0])
        assert one.equals(two)
        assert list(one.columns) == ['snr_db', 'trials', 'bits', 'bit_errors', 'ber', 'scheme', 'filter', 'seed']
        assert set(one['scheme']) == {'dd-mmse', 'fd-cgm'}
        assert (one['bits'] == 2 * 2 * 35).all()

    def test_fde(self, tmp_path):
        """Test the band energy profile rises to one."""
        table = read_results(experiments.run(_config(tmp_path, experiment='fde',
                                                     grid={'M': 3, 'N': 5, 'nu_p': 30000.0}))[0])
        fractions = table['mean_band_energy_fraction'].to_numpy()
        assert list(table['half_bandwidth']) == list(range(8))
        assert np.all(np.diff(fractions) >= -1e-12)
        assert fractions[-1] == pytest.approx(1.0)

    def test_diffcomm(self, tmp_path):
        """Test per-frame rows carry both estimated and perfect-CSI BER."""
        cfg = _config(tmp_path, experiment='diffcomm', scheme={'n_frames': 2, 'pilot_period': 2})
        table = read_results(experiments.run(cfg)[0])
        assert list(table.columns) == ['snr_db', 'frame', 'kind', 'ber', 'tap_nmse', 'ber_perfect_csi']
        assert list(table['kind']) == ['pilot', 'data', 'data']

    def test_mub(self, tmp_path):
        """Test rate and throughput columns on an unbiased grid."""
        cfg = _config(tmp_path, experiment='mub', sweep={'snr_db': [20.0], 'trials': 1})
        table = read_results(experiments.run(cfg)[0])
        assert list(table.columns) == ['snr_db', 'trials', 'ber_full', 'ber_sparse', 'ber', 'r_eff',
                                       'throughput', 'alpha', 'delta', 'seed']
        assert table['throughput'].iloc[0] <= 2.5

    def test_radar(self, tmp_path):
        """Test the image, ROC table and peak summary."""
        cfg = _config(tmp_path, experiment='radar', grid={'M': 13, 'N': 16, 'nu_p': 30000.0},
                      scheme={'waveform': 'pulsone', 'targets': [{'k': 2, 'l': 1}], 'thresholds': [0.5]},
                      sweep={'snr_db': [30.0], 'trials': 3})
        written = experiments.run(cfg)
        assert [p.name for p in written] == ['out.csv', 'out_roc.csv', 'out.json']
        image = read_results(written[0])
        peak = image.loc[image['magnitude_db'].idxmax()]
        assert (peak['k'], peak['l']) == (2, 1)
        roc = read_results(written[1])
        assert roc['pd'].iloc[0] == 1.0

    def test_polarimetry(self, tmp_path):
        """Test RMSE rows and the leakage summary."""
        cfg = _config(tmp_path, experiment='polarimetry', grid={'M': 13, 'N': 17, 'nu_p': 30000.0},
                      scheme={'targets': [{'k': 2, 'l': 1, 'sigma': [[1.0, 0.0], [0.0, 0.9]]}]},
                      sweep={'snr_db': [20.0], 'trials': 3})
        written = experiments.run(cfg)
        table = read_results(written[0])
        assert list(table.columns) == ['snr_db', 'trials', 'rmse_single_pol', 'rmse_dual_pol', 'seed']
        summary = json.loads(written[-1].read_text())['summary']
        assert summary['normalized_cross_polar_leakage'] <= 1.5

    def test_polarimetry_needs_target(self, tmp_path):
        """Test a scene without targets is rejected."""
        with pytest.raises(InvalidParameterError):
            experiments.run(_config(tmp_path, experiment='polarimetry'))

    def test_papr(self, tmp_path):
        """Test both families are tabulated and the spread frame is flatter."""
        cfg = _config(tmp_path, experiment='papr', scheme={'n_draws': 10})
        written = experiments.run(cfg)
        table = read_results(written[0])
        assert set(table['family']) == {'pulsone', 'gdaft'}
        summary = json.loads(written[-1].read_text())['summary']
        assert summary['pulsone_papr_db'] == pytest.approx(10 * np.log10(5))
        assert summary['reduction_db'] >= 5.0

    def test_no_metadata(self, tmp_path):
        """Test the sidecar can be switched off."""
        cfg = _config(tmp_path, output={'path': str(tmp_path / "a.csv"), 'write_metadata': False})
        assert [p.suffix for p in experiments.run(cfg)] == ['.csv']


class TestCli:
    """Test the zakdd command line."""

    def test_run_writes_outputs(self, config_file, tmp_path, capsys):
        """Test run prints the written paths and exits 0."""
        assert cli.main(['--no-log-file', 'run', config_file]) == 0
        out = capsys.readouterr().out.split()
        assert out[0].endswith("out.csv")
        assert (tmp_path / "results" / "out.json").exists()

    def test_rerun_is_byte_identical(self, config_file, tmp_path):
        """Test equal config and seed give identical bytes."""
        cli.main(['--no-log-file', 'run', config_file])
        first = (tmp_path / "results" / "out.csv").read_bytes()
        first_meta = (tmp_path / "results" / "out.json").read_bytes()
        cli.main(['--no-log-file', 'run', config_file, '--threads', '2'])
        assert (tmp_path / "results" / "out.csv").read_bytes() == first
        assert (tmp_path / "results" / "out.json").read_bytes() == first_meta

    def test_output_override(self, config_file, tmp_path):
        """Test --output replaces output.path."""
        target = tmp_path / "elsewhere.csv"
        assert cli.main(['--no-log-file', 'run', config_file, '--output', str(target)]) == 0
        assert target.exists()

    def test_validate_warnings(self, tmp_path, sample_config, capsys):
        """Test validate prints one warning line per problem."""
        sample_config['channel'] = {'model': 'veh_a', 'nu_max': 20000.0}
        assert cli.main(['--no-log-file', 'validate', _write(tmp_path, sample_config)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert any(line.startswith("warning: crystallization condition violated") for line in lines)

    def test_malformed_yaml(self, tmp_path, capsys):
        """Test syntax errors exit 1 with a positioned error line."""
        path = tmp_path / "bad.yaml"
        path.write_text("experiment: ber\ngrid: {M: 3\n", encoding='utf-8')
        assert cli.main(['--no-log-file', 'validate', str(path)]) == 1
        err = capsys.readouterr().err
        assert "error=ConfigError" in err
        assert "line=" in err

    def test_missing_config(self, tmp_path, capsys):
        """Test unreadable configs exit 1."""
        assert cli.main(['--no-log-file', 'run', str(tmp_path / "nope.yaml")]) == 1
        assert "error=FileError" in capsys.readouterr().err

    def test_runner_error(self, tmp_path, sample_config, capsys):
        """Test runner failures exit 1 with the error class."""
        sample_config['experiment'] = 'polarimetry'
        sample_config['output']['path'] = str(tmp_path / "p.csv")
        assert cli.main(['--no-log-file', 'run', _write(tmp_path, sample_config)]) == 1
        assert "error=InvalidParameterError" in capsys.readouterr().err

    def test_interrupt(self, config_file, mocker):
        """Test Ctrl-C exits 130."""
        mocker.patch('main.experiments.run', side_effect=KeyboardInterrupt)
        assert cli.main(['--no-log-file', 'run', config_file]) == 130

    def test_threads_environment(self, config_file, monkeypatch, mocker):
        """Test the worker count reaches the runner through ZAKDD_THREADS."""
        monkeypatch.setenv(THREADS_ENV, "3")
        spy = mocker.spy(experiments, 'resolve_threads')
        assert cli.main(['--no-log-file', 'run', config_file]) == 0
        assert spy.spy_return == 3

    def test_demo_stdout(self, capsys):
        """Test demo prints a canned config."""
        assert cli.main(['--no-log-file', 'demo', 'ber']) == 0
        assert "experiment: ber" in capsys.readouterr().out

    def test_demo_to_file(self, tmp_path):
        """Test demo --output writes the config."""
        target = tmp_path / "radar.yaml"
        assert cli.main(['--no-log-file', 'demo', 'radar', '--output', str(target)]) == 0
        assert "experiment: radar" in target.read_text()

    @pytest.mark.parametrize("kind", [k.value for k in ExperimentKind])
    def test_canned_configs_parse(self, kind):
        """Test every canned config validates."""
        assert parse_config(cli.demo_config(kind)).experiment == kind

    def test_log_files(self, config_file, tmp_path):
        """Test JSON logs are written under --log-dir."""
        log_dir = tmp_path / "logs"
        assert cli.main(['--log-dir', str(log_dir), 'run', config_file]) == 0
        assert (log_dir / "zakdd.log").exists()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
