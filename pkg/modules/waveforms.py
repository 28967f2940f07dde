"""
Modulation basis families, discrete Heisenberg shifts and eigenvector checks.

Families: OFDM, AFDM, ODDM, OTSM, Zak-OTFS pulsones and spread (GDAFT)
carriers. Subgroups of the discrete Heisenberg-Weyl group are described by
SubgroupSpec: the rectangular lattice {(aM, bN)}, lines {(k, 2 alpha k)} and
symplectic rotations of the rectangular lattice.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from math import gcd
from typing import Dict, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from cache import get_cache
from modules.grid import DDArray, GridParams, TDSequence, quasi_extend
from modules.transforms import (
    SymplecticParams,
    default_symplectic,
    gdaft,
    gdaft_matrix,
    idzt,
    make_symplectic,
    rotate_points,
)
from utils.error_handler import InvalidParameterError, NotFoundError

logger = logging.getLogger(__name__)

EIGEN_TOL = 1e-8
OFF_SUBGROUP_SAMPLES = 128


class BasisFamily(str, Enum):
    """Supported modulation basis families."""
    OFDM = "ofdm"
    AFDM = "afdm"
    ODDM = "oddm"
    OTSM = "otsm"
    ZAK_PULSONE = "zak_pulsone"
    SPREAD_CAZAC = "spread_cazac"


class SubgroupKind(str, Enum):
    """Maximal commutative subgroup geometries."""
    RECT_LATTICE = "rect_lattice"
    LINE = "line"
    ROTATED = "rotated"


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class BasisSpec(BaseModel):
    """
    A basis family on a grid.

    AFDM chirp constants are given as numerators over MN: the element with
    index i is exp(j2pi (chirp_c1 n^2 + n i + chirp_c2 i^2) / MN) / sqrt(MN).
    """

    model_config = ConfigDict(frozen=True)

    family: BasisFamily
    grid: GridParams
    chirp_c1: float = 1.0
    chirp_c2: float = 0.0
    symplectic: Optional[SymplecticParams] = None

    @model_validator(mode='after')
    def check_family(self) -> "BasisSpec":
        if self.family == BasisFamily.OTSM and not _is_power_of_two(self.grid.N):
            raise ValueError(f"OTSM needs N a power of two, got N={self.grid.N}")
        if self.family == BasisFamily.SPREAD_CAZAC:
            if self.symplectic is None:
                raise ValueError("spread CAZAC basis needs symplectic parameters")
            if self.symplectic.modulus != self.grid.MN:
                raise ValueError("symplectic parameters belong to a different grid")
        return self

    def key(self) -> tuple:
        sym = self.symplectic.key() if self.symplectic is not None else None
        return (self.family.value,) + self.grid.key() + (self.chirp_c1, self.chirp_c2, sym)


def make_basis(family, grid: GridParams, **params) -> BasisSpec:
    """
    Build a BasisSpec, filling the default rotation for spread carriers.

    Raises:
        InvalidParameterError: If the family constraints fail
    """
    family = BasisFamily(family)
    if family == BasisFamily.SPREAD_CAZAC and params.get('symplectic') is None:
        params['symplectic'] = default_symplectic(grid)
    try:
        return BasisSpec(family=family, grid=grid, **params)
    except ValidationError as e:
        raise InvalidParameterError(f"Invalid {family.value} basis: {e}") from e


def afdm_preset(grid: GridParams, name: str, spacing: int = 1) -> BasisSpec:
    """
    Named AFDM parameter sets.

    - ``ocdm``: c1 = c2 = 1/(2MN)
    - ``dft-p-fdma``: c1 = spacing/MN, c2 = 0
    """
    if name == "ocdm":
        return make_basis(BasisFamily.AFDM, grid, chirp_c1=0.5, chirp_c2=0.5)
    if name == "dft-p-fdma":
        return make_basis(BasisFamily.AFDM, grid, chirp_c1=float(spacing), chirp_c2=0.0)
    raise InvalidParameterError(f"Unknown AFDM preset: {name}")


class SubgroupSpec(BaseModel):
    """Maximal commutative subgroup selector."""

    model_config = ConfigDict(frozen=True)

    kind: SubgroupKind
    alpha: Optional[int] = None
    rotation: Optional[SymplecticParams] = None

    @model_validator(mode='after')
    def check_kind(self) -> "SubgroupSpec":
        if self.kind == SubgroupKind.LINE and self.alpha is None:
            raise ValueError("line subgroup needs a slope alpha")
        if self.kind == SubgroupKind.ROTATED and self.rotation is None:
            raise ValueError("rotated subgroup needs symplectic parameters")
        return self


def pulsone(grid: GridParams, k0: int, l0: int) -> TDSequence:
    """Time realization of the DD impulse at (k0, l0)."""
    return idzt(DDArray.impulse(grid, k0, l0))


def chirp(grid: GridParams, beta: int, c1: float = 1.0, c2: float = 0.0) -> TDSequence:
    """AFDM chirp with linear index ``beta``."""
    MN = grid.MN
    n = np.arange(MN, dtype=np.float64)
    # integer parts reduced mod MN keep the phase accurate for large n
    quad = np.mod(c1 * np.mod(n * n, MN), MN) if float(c1).is_integer() else c1 * n * n
    phase = quad + np.mod(n * beta, MN) + c2 * beta * beta
    return TDSequence(grid, np.exp(2j * np.pi * phase / MN) / np.sqrt(MN))


def _otsm_element(grid: GridParams, i: int) -> np.ndarray:
    M, N = grid.M, grid.N
    n = np.arange(grid.MN)
    row, col = i // M, n // M
    signs = np.array([(-1) ** bin(row & c).count("1") for c in col], dtype=np.float64)
    return np.where(n % M == i % M, signs, 0.0) / np.sqrt(N)


def basis_element(spec: BasisSpec, i: int) -> TDSequence:
    """
    The i-th element of a basis family (unit norm).

    Args:
        spec: Basis family and grid
        i: Element index in [0, MN); pulsones use i = k0 + l0 M

    Returns:
        TDSequence

    Raises:
        InvalidParameterError: If i is out of range
    """
    grid = spec.grid
    M, N, MN = grid.M, grid.N, grid.MN
    if not 0 <= i < MN:
        raise InvalidParameterError(f"Basis index {i} outside [0, {MN})")

    family = spec.family
    if family in (BasisFamily.ZAK_PULSONE, BasisFamily.ODDM):
        return pulsone(grid, i % M, i // M)
    if family == BasisFamily.SPREAD_CAZAC:
        return gdaft(pulsone(grid, i % M, i // M), spec.symplectic)
    if family == BasisFamily.AFDM:
        return chirp(grid, i, spec.chirp_c1, spec.chirp_c2)
    if family == BasisFamily.OTSM:
        return TDSequence(grid, _otsm_element(grid, i))
    # OFDM: tone i mod M inside block i // M
    n = np.arange(MN)
    tone = np.exp(2j * np.pi * np.mod(i * n, M) / M) / np.sqrt(M)
    return TDSequence(grid, np.where(n // M == i // M, tone, 0.0))


def basis_matrix(spec: BasisSpec) -> np.ndarray:
    """MN x MN matrix whose columns are the basis elements (cached)."""
    def build() -> np.ndarray:
        if spec.family == BasisFamily.SPREAD_CAZAC:
            return gdaft_matrix(spec.grid, spec.symplectic) @ basis_matrix(
                spec.model_copy(update={'family': BasisFamily.ZAK_PULSONE, 'symplectic': None})
            )
        return np.column_stack([basis_element(spec, i).samples for i in range(spec.grid.MN)])

    return get_cache().get_or_compute(('basis',) + spec.key(), build)


def heisenberg_shift(x: TDSequence, k: int, l: int) -> TDSequence:
    """
    Discrete Heisenberg operator D_(k, l).

    y[n] = x[(n - k) mod MN] exp(j2pi l (n - k) / MN)
    """
    MN = x.grid.MN
    n = np.arange(MN, dtype=np.int64)
    shifted = np.roll(x.samples, int(k) % MN)
    phase = np.mod(int(l) * (n - int(k)), MN)
    return TDSequence(x.grid, shifted * np.exp(2j * np.pi * phase / MN))


def dd_shift(X: DDArray, k: int, l: int) -> DDArray:
    """
    DD-domain counterpart of heisenberg_shift.

    Y[k', l'] = quasi_extend(X, k' - k, l' - l) exp(j2pi l (k' - k) / MN);
    equals dzt(heisenberg_shift(idzt(X), k, l)).
    """
    grid = X.grid
    kk, ll = np.meshgrid(np.arange(grid.M), np.arange(grid.N), indexing='ij')
    dk = kk - int(k)
    values = quasi_extend(X, dk, ll - int(l))
    phase = np.mod(int(l) * dk, grid.MN)
    return DDArray(grid, values * np.exp(2j * np.pi * phase / grid.MN))


def subgroup_index_set(sg: SubgroupSpec, grid: GridParams) -> Set[Tuple[int, int]]:
    """
    Index set S of a maximal commutative subgroup (|S| = MN).

    Raises:
        InvalidParameterError: For a line slope with gcd(alpha, MN) != 1
    """
    M, N, MN = grid.M, grid.N, grid.MN
    if sg.kind == SubgroupKind.LINE:
        if gcd(sg.alpha, MN) != 1:
            raise InvalidParameterError(f"Line slope alpha={sg.alpha} not coprime to MN={MN}")
        k = np.arange(MN, dtype=np.int64)
        return set(zip(k.tolist(), np.mod(2 * sg.alpha * k, MN).tolist()))

    lattice = {(a * M, b * N) for a in range(N) for b in range(M)}
    if sg.kind == SubgroupKind.ROTATED:
        if sg.rotation.modulus != MN:
            raise InvalidParameterError("rotation belongs to a different grid")
        return rotate_points(lattice, sg.rotation)
    return lattice


def subgroup_eigenvector(sg: SubgroupSpec, grid: GridParams, index: int = 0) -> TDSequence:
    """A common eigenvector of the subgroup: pulsone, chirp or rotated pulsone."""
    if sg.kind == SubgroupKind.LINE:
        return chirp(grid, index, float(sg.alpha))
    base = pulsone(grid, index % grid.M, index // grid.M)
    if sg.kind == SubgroupKind.ROTATED:
        return gdaft(base, sg.rotation)
    return base


@dataclass
class EigenReport:
    """Outcome of eigen_check."""
    is_eigenvector: bool
    eigenvalues: Dict[Tuple[int, int], complex] = field(default_factory=dict)
    max_residual: float = 0.0
    max_off_subgroup: float = 0.0


def eigen_check(x: TDSequence, sg: SubgroupSpec, n_off_samples: int = OFF_SUBGROUP_SAMPLES,
                seed: int = 0) -> EigenReport:
    """
    Test whether a unit-norm x is a common eigenvector of the subgroup.

    Every (k, l) in S must satisfy ||D x - lambda x|| < 1e-8 with
    lambda = <D x, x>, and |<x, D x>| < 1e-8 at sampled points off S.

    Args:
        x: Unit-norm sequence
        sg: Subgroup
        n_off_samples: Number of off-subgroup shifts sampled
        seed: Seed for the off-subgroup sample

    Returns:
        EigenReport
    """
    grid = x.grid
    MN = grid.MN
    support = subgroup_index_set(sg, grid)

    eigenvalues: Dict[Tuple[int, int], complex] = {}
    max_residual = 0.0
    for k, l in sorted(support):
        shifted = heisenberg_shift(x, k, l).samples
        lam = complex(np.vdot(x.samples, shifted))
        residual = float(np.linalg.norm(shifted - lam * x.samples))
        max_residual = max(max_residual, residual)
        if residual < EIGEN_TOL:
            eigenvalues[(k, l)] = lam

    rng = np.random.default_rng(seed)
    max_off = 0.0
    checked = 0
    for _ in range(20 * n_off_samples):
        if checked >= n_off_samples:
            break
        k, l = (int(v) for v in rng.integers(0, MN, size=2))
        if (k, l) in support:
            continue
        overlap = abs(np.vdot(heisenberg_shift(x, k, l).samples, x.samples))
        max_off = max(max_off, float(overlap))
        checked += 1

    ok = max_residual < EIGEN_TOL and max_off < EIGEN_TOL
    logger.debug(f"eigen_check {sg.kind.value}: residual={max_residual:.2e} off={max_off:.2e}")
    return EigenReport(ok, eigenvalues, max_residual, max_off)


def line_compatible_symplectic(grid: GridParams, alpha: int) -> SymplecticParams:
    """
    Rotation g with g.RectLattice equal to the line of slope 2 alpha.

    Needs gcd(M, N) = 1 (the lattice is then cyclic, generated by (M, N)).
    Searches b = 1, 2, ... and a over Z_MN, solving d from ad - bc = 1.

    Raises:
        NotFoundError: If no such rotation exists
    """
    M, N, MN = grid.M, grid.N, grid.MN
    if gcd(M, N) != 1:
        raise NotFoundError(f"Rectangular lattice is not cyclic for M={M}, N={N}")
    c = np.arange(MN, dtype=np.int64)
    for b in range(1, MN):
        if gcd(b, MN) != 1:
            continue
        for a in range(1, MN):
            if gcd(a, MN) != 1:
                continue
            d = np.mod(pow(a, -1, MN) * (1 + b * c), MN)
            line_ok = np.mod(c * M + d * N - 2 * alpha * (a * M + b * N), MN) == 0
            hits = np.flatnonzero(line_ok)
            if hits.size:
                ci = int(hits[0])
                return make_symplectic(a, b, ci, int(d[ci]), grid)
    raise NotFoundError(f"No rotation maps the lattice onto slope alpha={alpha}")


def chirp_permutation(grid: GridParams, p: SymplecticParams, alpha: int) -> np.ndarray:
    """
    Index map sigma with |<gdaft(pulsone_i), chirp_sigma(i)>| maximal.

    For rotations from line_compatible_symplectic the maximum equals 1.
    """
    spread = gdaft_matrix(grid, p) @ basis_matrix(make_basis(BasisFamily.ZAK_PULSONE, grid))
    chirps = basis_matrix(make_basis(BasisFamily.AFDM, grid, chirp_c1=float(alpha)))
    return np.argmax(np.abs(chirps.conj().T @ spread), axis=0)
