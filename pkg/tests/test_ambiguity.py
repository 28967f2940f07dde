"""
Unit tests for ambiguity module.

Tests bed-of-nails surfaces, the fast pulsone path, Moyal's identity and the
predictability and crystallization checks.
"""

import numpy as np
import pytest

from modules.ambiguity import (
    AmbiguitySurface,
    OpCounter,
    SupportSet,
    ambiguity_matrix,
    channel_support_kset,
    core_region,
    cross_ambiguity,
    crystallization_check,
    fast_cross_ambiguity_pulsone,
    full_region,
    moyal_check,
    predictability_check,
    search_compliant_line,
    window_region,
)
from modules.grid import TDSequence, make_grid
from modules.waveforms import (
    SubgroupKind,
    SubgroupSpec,
    heisenberg_shift,
    pulsone,
    subgroup_eigenvector,
    subgroup_index_set,
)
from tests.conftest import random_unit
from utils.error_handler import CoverageError, InvalidParameterError, NotFoundError


def _count_cells(values):
    mag = np.abs(values)
    unimodular = int(np.count_nonzero(np.abs(mag - 1.0) < 1e-8))
    zero = int(np.count_nonzero(mag < 1e-8))
    return unimodular, zero


class TestBedOfNails:
    """Test self-ambiguity of subgroup eigenvectors."""

    def test_pulsone(self, bed_grid):
        """Test a pulsone has exactly MN unit cells and zeros elsewhere."""
        x = pulsone(bed_grid, 0, 0)
        unimodular, zero = _count_cells(ambiguity_matrix(x, x))
        assert unimodular == 208
        assert unimodular + zero == 208 * 208

    def test_line_chirp(self):
        """Test a line-subgroup chirp with odd MN has the same structure."""
        grid = make_grid(13, 17, 30e3)
        x = subgroup_eigenvector(SubgroupSpec(kind=SubgroupKind.LINE, alpha=1), grid)
        unimodular, zero = _count_cells(ambiguity_matrix(x, x))
        assert unimodular == grid.MN
        assert unimodular + zero == grid.MN ** 2

    def test_matrix_matches_inner_product(self, small_grid, rng):
        """Test A[k, l] = <y, D_(k, l) x>."""
        x = TDSequence(small_grid, random_unit(rng, 64))
        y = TDSequence(small_grid, random_unit(rng, 64))
        A = ambiguity_matrix(y, x)
        assert A[5, 9] == pytest.approx(np.vdot(heisenberg_shift(x, 5, 9).samples, y.samples))

    def test_region_agrees_with_matrix(self, small_grid, rng):
        """Test cross_ambiguity over the full torus equals ambiguity_matrix."""
        x = TDSequence(small_grid, random_unit(rng, 64))
        y = TDSequence(small_grid, random_unit(rng, 64))
        surface = cross_ambiguity(x, y, full_region(small_grid))
        np.testing.assert_allclose(surface.values, ambiguity_matrix(x, y).ravel(), atol=1e-12)


class TestFastPulsonePath:
    """Test the DZT-based pulsone cross-ambiguity."""

    def test_matches_direct(self, bed_grid, rng):
        """Test fast and direct paths agree on 50 random inputs."""
        region = core_region(bed_grid)
        for trial in range(50):
            x = TDSequence(bed_grid, random_unit(rng, bed_grid.MN))
            k0, l0 = int(rng.integers(0, 13)), int(rng.integers(0, 16))
            fast = fast_cross_ambiguity_pulsone(x, k0, l0, region)
            direct = cross_ambiguity(x, pulsone(bed_grid, k0, l0), region)
            np.testing.assert_allclose(fast.values, direct.values, atol=1e-9)

    def test_signed_region(self, bed_grid, rng):
        """Test negative offsets are handled like their residues."""
        x = TDSequence(bed_grid, random_unit(rng, bed_grid.MN))
        region = window_region(-3, 3, -4, 4)
        fast = fast_cross_ambiguity_pulsone(x, 2, 1, region)
        direct = cross_ambiguity(x, pulsone(bed_grid, 2, 1), region)
        np.testing.assert_allclose(fast.values, direct.values, atol=1e-9)

    def test_multiply_count(self, bed_grid, rng):
        """Test the recorded cost over the core region stays within 8 MN log2 N."""
        counter = OpCounter()
        x = TDSequence(bed_grid, random_unit(rng, bed_grid.MN))
        fast_cross_ambiguity_pulsone(x, 0, 0, core_region(bed_grid), counter)
        assert counter.ffts == bed_grid.M
        assert 0 < counter.multiplies <= 8 * bed_grid.MN * np.log2(bed_grid.N)

    def test_count_follows_work(self, bed_grid, rng):
        """Test one region point costs one row FFT, its scaling and one product."""
        x = TDSequence(bed_grid, random_unit(rng, bed_grid.MN))
        single, pair = OpCounter(), OpCounter()
        fast_cross_ambiguity_pulsone(x, 0, 0, [(3, 5)], single)
        fast_cross_ambiguity_pulsone(x, 0, 0, [(3, 5), (3, 6)], pair)
        assert single.ffts == pair.ffts == 1
        assert single.multiplies == 16 // 2 * 4 + 16 + 1
        assert pair.multiplies == single.multiplies + 1

    def test_counter_accumulates(self, odd_grid, rng):
        """Test repeated calls add up and non-power-of-two N stays in bound."""
        counter = OpCounter()
        x = TDSequence(odd_grid, random_unit(rng, odd_grid.MN))
        fast_cross_ambiguity_pulsone(x, 1, 2, core_region(odd_grid), counter)
        once = counter.multiplies
        fast_cross_ambiguity_pulsone(x, 1, 2, core_region(odd_grid), counter)
        assert counter.multiplies == 2 * once
        assert once <= 8 * odd_grid.MN * np.log2(odd_grid.N)


class TestMoyal:
    """Test Moyal's identity."""

    def test_identity(self, bed_grid, rng):
        """Test (1/MN) <A_x, A_y> = |<x, y>|^2 for random unit pairs."""
        for _ in range(20):
            x = TDSequence(bed_grid, random_unit(rng, bed_grid.MN))
            y = TDSequence(bed_grid, random_unit(rng, bed_grid.MN))
            result = moyal_check(x, y)
            assert result.lhs == pytest.approx(result.rhs, abs=1e-8)


class TestSurface:
    """Test AmbiguitySurface bookkeeping."""

    def test_duplicate_points(self, small_grid):
        """Test points equal modulo MN are rejected."""
        with pytest.raises(InvalidParameterError):
            AmbiguitySurface(small_grid, [(0, 0), (64, 0)], [1.0, 1.0])

    def test_value_at_missing(self, small_grid):
        """Test lookups outside the region raise CoverageError."""
        surface = AmbiguitySurface(small_grid, [(0, 0)], [1.0])
        assert surface.value_at(64, -64) == 1.0
        with pytest.raises(CoverageError):
            surface.value_at(1, 0)

    def test_to_frame(self, small_grid):
        """Test the tabular view has the expected columns."""
        frame = AmbiguitySurface(small_grid, [(0, 0), (1, 2)], [1.0, 0.5j]).to_frame()
        assert list(frame.columns) == ['k', 'l', 're', 'im', 'abs']


class TestPredictability:
    """Test the predictability check."""

    def test_pulsone_predictable_for_small_support(self, bed_grid):
        """Test a pulsone is predictable when S fits inside one period."""
        S = SupportSet.from_box(0, 3, -2, 2)
        kset = channel_support_kset(S, bed_grid)
        x = pulsone(bed_grid, 0, 0)
        surface = cross_ambiguity(x, x, sorted(kset.points))
        assert predictability_check(surface, S)

    def test_kset_differences_reduced_mod_grid(self, bed_grid):
        """Test K_S holds every pairwise difference, reduced mod MN of the given grid."""
        MN = bed_grid.MN
        kset = channel_support_kset(SupportSet.from_points([(0, 0), (2, -1)]), bed_grid)
        assert kset.points == {(0, 0), (2, MN - 1), (MN - 2, 1)}

    def test_not_predictable_for_wide_support(self, bed_grid):
        """Test a support wider than M delay bins breaks predictability."""
        S = SupportSet.from_box(0, 13, 0, 0)
        x = pulsone(bed_grid, 0, 0)
        surface = cross_ambiguity(x, x, full_region(bed_grid))
        assert not predictability_check(surface, S)

    def test_coverage_error(self, bed_grid):
        """Test an incomplete region raises CoverageError."""
        x = pulsone(bed_grid, 0, 0)
        surface = cross_ambiguity(x, x, [(0, 0)])
        with pytest.raises(CoverageError):
            predictability_check(surface, SupportSet.from_box(0, 1, 0, 0))


class TestCrystallization:
    """Test crystallization and line search."""

    def test_lattice_compliant_box(self):
        """Test the rectangular lattice passes for a box inside one period."""
        grid = make_grid(31, 37, 30e3)
        S = SupportSet.from_points(subgroup_index_set(SubgroupSpec(kind=SubgroupKind.RECT_LATTICE), grid))
        assert crystallization_check(S, SupportSet.from_box(0, 8, -9, 9), grid)

    def test_lattice_fails_wide_box(self):
        """Test a delay extent of M bins or more overlaps lattice translates."""
        grid = make_grid(31, 37, 30e3)
        S = SupportSet.from_points(subgroup_index_set(SubgroupSpec(kind=SubgroupKind.RECT_LATTICE), grid))
        assert not crystallization_check(S, SupportSet.from_box(0, 31, 0, 0), grid)

    def test_box_required(self, small_grid):
        """Test point-only clutter supports are rejected."""
        with pytest.raises(InvalidParameterError):
            crystallization_check(SupportSet.from_points({(0, 0)}), SupportSet.from_points({(1, 1)}), small_grid)

    def test_line_search(self):
        """Test a compliant line is found for a long thin delay box."""
        grid = make_grid(31, 37, 30e3)
        C = SupportSet.from_box(0, 40, 0, 0)
        sg = search_compliant_line(C, grid)
        S = SupportSet.from_points(subgroup_index_set(sg, grid))
        assert crystallization_check(S, C, grid)

    def test_line_search_not_found(self, small_grid):
        """Test a box covering the torus admits no line."""
        with pytest.raises(NotFoundError):
            search_compliant_line(SupportSet.from_box(0, 63, 0, 63), small_grid)

    def test_inverted_box(self):
        """Test inverted bounds are rejected."""
        with pytest.raises(InvalidParameterError):
            SupportSet.from_box(3, 1, 0, 0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
