"""
Unit tests for waveforms module.

Tests carrier families, Heisenberg shifts and subgroup eigenvectors.
"""

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from modules.grid import DDArray, TDSequence, make_grid
from modules.transforms import default_symplectic, dzt, gdaft, gdaft_matrix, idzt, rotate_points
from modules.waveforms import (
    BasisFamily,
    SubgroupKind,
    SubgroupSpec,
    afdm_preset,
    basis_element,
    basis_matrix,
    chirp_permutation,
    dd_shift,
    eigen_check,
    heisenberg_shift,
    line_compatible_symplectic,
    make_basis,
    pulsone,
    subgroup_eigenvector,
    subgroup_index_set,
)
from tests.conftest import random_unit
from utils.error_handler import InvalidParameterError


class TestBasisFamilies:
    """Test every basis family is orthonormal."""

    @pytest.mark.parametrize("family", list(BasisFamily))
    def test_unitary(self, small_grid, family):
        """Test the basis matrix has orthonormal columns."""
        B = basis_matrix(make_basis(family, small_grid))
        np.testing.assert_allclose(B.conj().T @ B, np.eye(small_grid.MN), atol=1e-9)

    def test_pulsone_index_convention(self, small_grid):
        """Test element i of the pulsone family sits at (i mod M, i div M)."""
        spec = make_basis(BasisFamily.ZAK_PULSONE, small_grid)
        x = basis_element(spec, 3 + 2 * small_grid.M)
        X = dzt(x)
        assert abs(X.core[3, 2]) == pytest.approx(1.0)

    def test_index_out_of_range(self, small_grid):
        """Test indices outside [0, MN) are rejected."""
        with pytest.raises(InvalidParameterError):
            basis_element(make_basis(BasisFamily.OFDM, small_grid), small_grid.MN)

    def test_otsm_needs_power_of_two(self):
        """Test OTSM on N = 6 is rejected."""
        with pytest.raises(InvalidParameterError):
            make_basis(BasisFamily.OTSM, make_grid(4, 6, 1e3))

    def test_afdm_presets(self, small_grid):
        """Test the named AFDM parameter sets."""
        assert afdm_preset(small_grid, "ocdm").chirp_c1 == pytest.approx(0.5)
        assert afdm_preset(small_grid, "dft-p-fdma", spacing=3).chirp_c1 == pytest.approx(3.0)
        with pytest.raises(InvalidParameterError):
            afdm_preset(small_grid, "unknown")

    def test_spread_cazac_default_rotation(self, small_grid):
        """Test spread carriers default to (2, 1, 3, 2)."""
        spec = make_basis(BasisFamily.SPREAD_CAZAC, small_grid)
        assert spec.symplectic == default_symplectic(small_grid)

    def test_oddm_equals_pulsone(self, small_grid):
        """Test ODDM and Zak pulsone bases coincide element by element."""
        np.testing.assert_array_equal(basis_matrix(make_basis(BasisFamily.ODDM, small_grid)),
                                      basis_matrix(make_basis(BasisFamily.ZAK_PULSONE, small_grid)))


class TestShifts:
    """Test the time and DD Heisenberg shifts."""

    def test_shift_formula(self, small_grid, rng):
        """Test y[n] = x[n - k] exp(j2pi l (n - k)/MN)."""
        x = idzt(DDArray(small_grid, random_unit(rng, 64).reshape(8, 8)))
        y = heisenberg_shift(x, 5, 3)
        n = 20
        assert y.samples[n] == pytest.approx(x.samples[n - 5] * np.exp(2j * np.pi * 3 * (n - 5) / 64))

    @pytest.mark.parametrize("k,l", [(0, 0), (3, 2), (9, -4), (-7, 13)])
    def test_dd_shift_matches_time_shift(self, small_grid, rng, k, l):
        """Test dd_shift(X) == dzt(heisenberg_shift(idzt(X)))."""
        X = DDArray(small_grid, random_unit(rng, 64).reshape(8, 8))
        expected = dzt(heisenberg_shift(idzt(X), k, l)).core
        np.testing.assert_allclose(dd_shift(X, k, l).core, expected, atol=1e-12)

    def test_pulsone_moves_under_shift(self, small_grid):
        """Test shifting a pulsone by (k, l) moves its DD impulse."""
        y = heisenberg_shift(pulsone(small_grid, 1, 2), 2, 3)
        assert abs(dzt(y).core[3, 5]) == pytest.approx(1.0)

    def test_group_closure(self, odd_grid, rng):
        """Test D_(k1, l1) D_(k2, l2) = exp(j2pi l1 k2 / MN) D_(k1 + k2, l1 + l2)."""
        x = TDSequence(odd_grid, random_unit(rng, odd_grid.MN))
        for (k1, l1), (k2, l2) in [((3, 5), (7, -2)), ((100, 40), (150, 200)), ((-4, 9), (0, 13))]:
            composed = heisenberg_shift(heisenberg_shift(x, k2, l2), k1, l1).samples
            direct = heisenberg_shift(x, k1 + k2, l1 + l2).samples
            phase = np.exp(2j * np.pi * (l1 * k2) / odd_grid.MN)
            np.testing.assert_allclose(composed, phase * direct, atol=1e-12)

    def test_gdaft_rotates_shifts(self, odd_grid, rng):
        """Test gdaft(D_(k, l) x) is D_(g.(k, l)) gdaft(x) times a unimodular constant."""
        p = default_symplectic(odd_grid)
        x = TDSequence(odd_grid, random_unit(rng, odd_grid.MN))
        for k, l in [(1, 0), (0, 1), (5, 11), (30, 200)]:
            kr, lr = (int(v) for v in p.apply(k, l))
            lhs = gdaft(heisenberg_shift(x, k, l), p).samples
            rhs = heisenberg_shift(gdaft(x, p), kr, lr).samples
            phase = np.vdot(rhs, lhs)
            assert abs(phase) == pytest.approx(1.0, abs=1e-9)
            np.testing.assert_allclose(lhs, phase * rhs, atol=1e-9)


class TestSubgroups:
    """Test subgroup index sets and eigenvectors."""

    def test_spec_validation(self):
        """Test line needs alpha and rotated needs a rotation."""
        with pytest.raises(PydanticValidationError):
            SubgroupSpec(kind=SubgroupKind.LINE)
        with pytest.raises(PydanticValidationError):
            SubgroupSpec(kind=SubgroupKind.ROTATED)

    def test_index_sets_have_mn_points(self, odd_grid):
        """Test every subgroup has MN elements."""
        for sg in (SubgroupSpec(kind=SubgroupKind.RECT_LATTICE),
                   SubgroupSpec(kind=SubgroupKind.LINE, alpha=1),
                   SubgroupSpec(kind=SubgroupKind.ROTATED, rotation=default_symplectic(odd_grid))):
            assert len(subgroup_index_set(sg, odd_grid)) == odd_grid.MN

    def test_line_slope_must_be_unit(self, small_grid):
        """Test alpha sharing a factor with MN is rejected."""
        with pytest.raises(InvalidParameterError):
            subgroup_index_set(SubgroupSpec(kind=SubgroupKind.LINE, alpha=2), small_grid)

    def test_pulsone_is_lattice_eigenvector(self, small_grid):
        """Test a pulsone is a common eigenvector of the rectangular lattice."""
        sg = SubgroupSpec(kind=SubgroupKind.RECT_LATTICE)
        report = eigen_check(subgroup_eigenvector(sg, small_grid), sg)
        assert report.is_eigenvector
        assert len(report.eigenvalues) == small_grid.MN

    def test_chirp_is_line_eigenvector(self, odd_grid):
        """Test a chirp is a common eigenvector of the line subgroup."""
        sg = SubgroupSpec(kind=SubgroupKind.LINE, alpha=1)
        assert eigen_check(subgroup_eigenvector(sg, odd_grid), sg).is_eigenvector

    def test_rotated_pulsone_is_rotated_eigenvector(self, odd_grid):
        """Test gdaft(pulsone) is a common eigenvector of the rotated lattice."""
        sg = SubgroupSpec(kind=SubgroupKind.ROTATED, rotation=default_symplectic(odd_grid))
        assert eigen_check(subgroup_eigenvector(sg, odd_grid), sg).is_eigenvector

    def test_random_sequence_is_not_eigenvector(self, small_grid, rng):
        """Test a random sequence fails the check."""
        x = idzt(DDArray(small_grid, random_unit(rng, 64).reshape(8, 8)))
        assert not eigen_check(x, SubgroupSpec(kind=SubgroupKind.RECT_LATTICE)).is_eigenvector

    def test_pulsone_eigenvalues(self, small_grid):
        """Test D_(aM, bN) acts on pulsone (k0, l0) as exp(j2pi b k0/M) exp(-j2pi a l0/N)."""
        M, N = small_grid.M, small_grid.N
        k0, l0 = 3, 5
        x = pulsone(small_grid, k0, l0)
        np.testing.assert_allclose(heisenberg_shift(x, M, 0).samples,
                                   np.exp(-2j * np.pi * l0 / N) * x.samples, atol=1e-12)
        report = eigen_check(x, SubgroupSpec(kind=SubgroupKind.RECT_LATTICE))
        for a, b in [(1, 0), (0, 1), (2, 3), (5, 7)]:
            expected = np.exp(2j * np.pi * b * k0 / M) * np.exp(-2j * np.pi * a * l0 / N)
            assert report.eigenvalues[(a * M % small_grid.MN, b * N % small_grid.MN)] == \
                pytest.approx(expected, abs=1e-10)

    def test_otsm_is_not_lattice_eigenvector(self, small_grid):
        """Test a Walsh-coded OTSM element is not a lattice eigenvector."""
        x = basis_element(make_basis(BasisFamily.OTSM, small_grid), 2 + 3 * small_grid.M)
        assert not eigen_check(x, SubgroupSpec(kind=SubgroupKind.RECT_LATTICE)).is_eigenvector


class TestLineCompatibleRotation:
    """Test the rotation mapping the lattice onto a line."""

    def test_maps_lattice_to_line(self, odd_grid):
        """Test g.RectLattice equals the slope-2 alpha line."""
        p = line_compatible_symplectic(odd_grid, 1)
        lattice = subgroup_index_set(SubgroupSpec(kind=SubgroupKind.RECT_LATTICE), odd_grid)
        line = subgroup_index_set(SubgroupSpec(kind=SubgroupKind.LINE, alpha=1), odd_grid)
        assert rotate_points(lattice, p) == line

    def test_chirp_permutation_unit_overlap(self, odd_grid):
        """Test each rotated pulsone matches one chirp with unit overlap."""
        p = line_compatible_symplectic(odd_grid, 1)
        sigma = chirp_permutation(odd_grid, p, 1)
        assert len(set(sigma.tolist())) == odd_grid.MN
        G = gdaft_matrix(odd_grid, p)
        spread = G @ pulsone(odd_grid, 2, 1).samples
        chirps = basis_matrix(make_basis(BasisFamily.AFDM, odd_grid, chirp_c1=1.0))
        i = 2 + 1 * odd_grid.M
        assert abs(np.vdot(chirps[:, sigma[i]], spread)) == pytest.approx(1.0, abs=1e-8)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
