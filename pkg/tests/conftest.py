"""
Pytest configuration and shared fixtures.
"""
import numpy as np
import pytest
import yaml

from modules.grid import make_grid


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo runs (deselect with -m 'not slow')")


@pytest.fixture
def small_grid():
    """8 x 8 grid used for exhaustive matrix checks."""
    return make_grid(8, 8, 30e3)


@pytest.fixture
def bed_grid():
    """13 x 16 grid (MN = 208)."""
    return make_grid(13, 16, 30e3)


@pytest.fixture
def odd_grid():
    """13 x 17 grid: N odd, 3 does not divide N, gcd(M, N) = 1."""
    return make_grid(13, 17, 30e3)


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(1234)


def random_unit(rng, size):
    v = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return v / np.linalg.norm(v)


@pytest.fixture
def sample_config():
    """Small, fast experiment configuration."""
    return {
        'experiment': 'ambiguity',
        'seed': 42,
        'grid': {'M': 5, 'N': 7, 'nu_p': 30000.0},
        'scheme': {'waveform': 'pulsone'},
        'sweep': {'snr_db': [10.0], 'trials': 2},
        'output': {'path': 'results/out.csv'},
    }


@pytest.fixture
def config_file(tmp_path, sample_config):
    """Writes sample_config to a temporary YAML file with outputs under tmp_path."""
    sample_config['output']['path'] = str(tmp_path / "results" / "out.csv")
    config_path = tmp_path / "test_config.yaml"
    with open(config_path, 'w', encoding='utf-8') as f:
        yaml.dump(sample_config, f)
    return str(config_path)
