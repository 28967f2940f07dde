"""
Unit tests for rxchain module.

Tests QAM mapping, MMSE and one-tap equalization, QR precoding, the
frequency-domain system and the conjugate gradient solver.
"""

import numpy as np
import pytest
from scipy.linalg import LinAlgError

from modules.channel import (
    EffectiveChannel,
    build_channel_matrix,
    pilot_position,
    probe_effective_channel,
    sample_veh_a,
    twisted_conv,
)
from modules.filters import FilterFamily, make_filter
from modules.grid import DDArray, make_grid
from modules.rxchain import (
    BandedFDMatrix,
    CgmConfig,
    NoiseMode,
    apply_precoder,
    band_energy_fraction,
    cgm_solve,
    combiner_matrix,
    count_bit_errors,
    default_half_bandwidth,
    estimate_channel_pilot,
    fd_to_dd,
    mmse_equalize,
    one_tap_equalize,
    qam_demap,
    qam_map,
    qam_slice,
    qr_precode,
    rx_combine,
    to_fd_system,
)
from utils.error_handler import InvalidParameterError, SolverError


def _random_channel(grid, rng, n_taps=4):
    taps = {}
    for _ in range(n_taps):
        key = (int(rng.integers(0, 3)), int(rng.integers(-2, 3)))
        taps[key] = 0.2 * np.exp(2j * np.pi * rng.random())
    taps[(0, 0)] = 1.0
    return EffectiveChannel(grid, taps)


class TestQam:
    """Test 4-QAM mapping."""

    def test_round_trip(self, rng):
        """Test demap(map(bits)) == bits."""
        bits = rng.integers(0, 2, size=1000)
        np.testing.assert_array_equal(qam_demap(qam_map(bits)), bits)

    def test_unit_energy(self):
        """Test every symbol has unit energy."""
        symbols = qam_map([0, 0, 0, 1, 1, 0, 1, 1])
        np.testing.assert_allclose(np.abs(symbols), 1.0)
        assert symbols[0] == pytest.approx((1 + 1j) / np.sqrt(2))

    def test_odd_bit_count(self):
        """Test odd bit counts are rejected."""
        with pytest.raises(InvalidParameterError):
            qam_map([0, 1, 1])

    def test_slice(self):
        """Test slicing returns the nearest point."""
        assert qam_slice([0.3 - 2j])[0] == pytest.approx((1 - 1j) / np.sqrt(2))

    def test_count_bit_errors(self):
        """Test differing positions are counted."""
        assert count_bit_errors([0, 1, 1, 0], [0, 0, 1, 1]) == 2


class TestEqualizers:
    """Test MMSE and one-tap equalization."""

    def test_mmse_noiseless(self, small_grid, rng):
        """Test MMSE with tiny sigma2 inverts the channel."""
        H = build_channel_matrix(_random_channel(small_grid, rng))
        x = qam_map(rng.integers(0, 2, size=128))
        np.testing.assert_allclose(mmse_equalize(H, H @ x, 1e-12), x, atol=1e-6)

    def test_mmse_singular(self, mocker):
        """Test Cholesky failure maps to SolverError."""
        mocker.patch('modules.rxchain.cho_factor', side_effect=LinAlgError("not positive definite"))
        with pytest.raises(SolverError):
            mmse_equalize(np.zeros((4, 4)), np.zeros(4), 0.0)

    def test_mmse_negative_variance(self):
        """Test negative sigma2 is rejected."""
        with pytest.raises(InvalidParameterError):
            mmse_equalize(np.eye(2), np.zeros(2), -1.0)

    def test_mmse_ill_conditioned_warning(self, caplog):
        """Test near-singular systems log a warning."""
        H = np.diag([1.0, 1e-7])
        mmse_equalize(H, np.ones(2), 0.0)
        assert "Ill-conditioned" in caplog.text

    def test_one_tap(self):
        """Test conj(h) y / (|h|^2 + sigma2) with zero where h and sigma2 vanish."""
        out = one_tap_equalize([2.0, 0.0], [4.0, 1.0], 0.0)
        assert out[0] == pytest.approx(2.0)
        assert out[1] == 0.0


class TestPrecoding:
    """Test QR precoding and the MMSE combiner."""

    def test_effective_channel_is_identity(self, small_grid, rng):
        """Test W H Q approaches the identity as sigma2 -> 0."""
        H = build_channel_matrix(_random_channel(small_grid, rng))
        pre = qr_precode(H)
        W = combiner_matrix(pre.r_mat, 1e-10)
        np.testing.assert_allclose(W @ H @ pre.q_mat, np.eye(64), atol=1e-6)

    def test_round_trip(self, small_grid, rng):
        """Test precode, channel and combine recover the symbols."""
        H = build_channel_matrix(_random_channel(small_grid, rng))
        pre = qr_precode(H)
        x = qam_map(rng.integers(0, 2, size=128))
        y = H @ apply_precoder(pre.q_mat, x)
        np.testing.assert_allclose(rx_combine(pre.r_mat, y, 1e-10), x, atol=1e-5)


class TestFrequencyDomain:
    """Test the FD system and its modulo-banded form."""

    def test_fd_system_preserves_solution(self, small_grid, rng):
        """Test solving in the FD domain and mapping back gives the DD solution."""
        H = build_channel_matrix(_random_channel(small_grid, rng))
        x = qam_map(rng.integers(0, 2, size=128))
        system = to_fd_system(H, H @ x, small_grid)
        s = np.linalg.solve(system.h_fd, system.r)
        np.testing.assert_allclose(fd_to_dd(s, small_grid), x, atol=1e-9)

    def test_banded_storage(self, odd_grid, rng):
        """Test matvec/rmatvec match the dense band and full bands lose nothing."""
        MN = odd_grid.MN
        H = rng.standard_normal((MN, MN)) + 1j * rng.standard_normal((MN, MN))
        banded, discarded = BandedFDMatrix.from_dense(H, odd_grid, 3)
        dense = banded.to_dense()
        v = rng.standard_normal(MN) + 1j * rng.standard_normal(MN)
        np.testing.assert_allclose(banded.matvec(v), dense @ v, atol=1e-10)
        np.testing.assert_allclose(banded.rmatvec(v), dense.conj().T @ v, atol=1e-10)
        assert 0 < discarded < 1
        _, none_lost = BandedFDMatrix.from_dense(H, odd_grid, 1000)
        assert none_lost == pytest.approx(0.0, abs=1e-12)

    def test_default_half_bandwidth(self):
        """Test b = ceil(nu_max T) + 1."""
        grid = make_grid(31, 37, 30e3)
        assert default_half_bandwidth(grid, 815.0) == int(np.ceil(815.0 * 37 / 30e3)) + 1

    def test_modulo_band_holds_veh_a_energy(self):
        """Test at least 99% of the FD channel energy lies in the modulo band."""
        grid = make_grid(3, 5, 30e3)
        w = make_filter(FilterFamily.RRC, grid, beta_tau=0.6, beta_nu=0.6)
        ch = sample_veh_a(815.0, 4)
        H = build_channel_matrix(probe_effective_channel(grid, w, ch, window=(0, 2, -2, 2)))
        system = to_fd_system(H, np.zeros(grid.MN), grid)
        assert band_energy_fraction(system.h_fd, grid, default_half_bandwidth(grid, 815.0)) >= 0.99


class TestCgm:
    """Test the conjugate gradient solver."""

    def test_matches_mmse(self, small_grid, rng):
        """Test CGM converges to the MMSE solution."""
        H = build_channel_matrix(_random_channel(small_grid, rng))
        x = qam_map(rng.integers(0, 2, size=128))
        y = H @ x
        sigma2 = 0.1
        result = cgm_solve(H, y, sigma2, CgmConfig(tolerance=1e-10, max_iters=500))
        assert result.converged
        np.testing.assert_allclose(result.s, mmse_equalize(H, y, sigma2), atol=1e-8)

    def test_residual_history(self, small_grid, rng):
        """Test the history starts at the initial residual and decreases overall."""
        H = build_channel_matrix(_random_channel(small_grid, rng))
        result = cgm_solve(H, H @ np.ones(64), 1.0)
        assert len(result.residual_history) == result.iterations + 1
        assert result.residual_history[-1] < result.residual_history[0]

    def test_banded_input(self, small_grid, rng):
        """Test the banded operator gives the same answer as its dense form."""
        H = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
        banded, _ = BandedFDMatrix.from_dense(H, small_grid, 2)
        r = rng.standard_normal(64) + 0j
        cfg = CgmConfig(tolerance=1e-10, max_iters=500)
        a = cgm_solve(banded, r, 0.5, cfg).s
        b = cgm_solve(banded.to_dense(), r, 0.5, cfg).s
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_iteration_cap(self, small_grid, rng):
        """Test hitting max_iters reports non-convergence."""
        H = build_channel_matrix(_random_channel(small_grid, rng))
        result = cgm_solve(H, H @ np.ones(64), 1e-3, CgmConfig(max_iters=1, tolerance=1e-12))
        assert not result.converged
        assert result.iterations == 1

    def test_explicit_noise(self, small_grid, rng):
        """Test explicit R_n = sigma2 I equals white mode."""
        H = build_channel_matrix(_random_channel(small_grid, rng))
        r = H @ np.ones(64)
        white = cgm_solve(H, r, 0.2, CgmConfig(tolerance=1e-10)).s
        explicit = cgm_solve(H, r, 0.0, CgmConfig(tolerance=1e-10, noise_mode=NoiseMode.EXPLICIT),
                             noise_covariance=0.2 * np.eye(64)).s
        np.testing.assert_allclose(white, explicit, atol=1e-8)

    def test_explicit_noise_needs_matrix(self):
        """Test explicit mode without R_n is rejected."""
        with pytest.raises(InvalidParameterError):
            cgm_solve(np.eye(2), np.ones(2), 0.1, CgmConfig(noise_mode=NoiseMode.EXPLICIT))


class TestPilotEstimation:
    """Test pilot-based channel estimation."""

    def test_recovers_taps(self, small_grid):
        """Test the pilot estimate equals the channel taps."""
        h = EffectiveChannel(small_grid, {(0, 0): 1.0, (2, 1): 0.4 - 0.2j})
        pilot = pilot_position(small_grid)
        Y = twisted_conv(h, DDArray.impulse(small_grid, *pilot))
        est = estimate_channel_pilot(Y, pilot, (0, 3, -2, 2))
        assert est.taps[(2, 1)] == pytest.approx(0.4 - 0.2j, abs=1e-9)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
