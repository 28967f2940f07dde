"""
Unitary maps between the time, delay-Doppler and frequency representations.

- dzt / idzt: discrete Zak transform and its inverse
- idfzt / idfzt_adjoint: inverse discrete frequency Zak transform
- gdaft / gdaft_inverse: generalized discrete affine Fourier transform
- gdaft_shift_map: how Heisenberg shifts move through the GDAFT
- dft_matrix: unitary DFT matrix helper
"""

import logging
from dataclasses import dataclass
from math import gcd
from typing import Iterable, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.linalg import dft

from cache import get_cache
from modules.grid import DDArray, GridParams, TDSequence
from utils.error_handler import InvalidParameterError

logger = logging.getLogger(__name__)


class SymplecticParams(BaseModel):
    """
    Element g = [[a, b], [c, d]] of SL(2, Z_MN).

    ``modulus`` is MN of the grid the parameters belong to; a, b, c, d are
    stored reduced to [0, modulus).
    """

    model_config = ConfigDict(frozen=True)

    a: int
    b: int
    c: int
    d: int
    modulus: int = Field(..., ge=1)

    @model_validator(mode='before')
    @classmethod
    def reduce_entries(cls, data):
        if isinstance(data, dict) and data.get('modulus'):
            m = int(data['modulus'])
            for name in ('a', 'b', 'c', 'd'):
                if name in data:
                    data[name] = int(data[name]) % m
        return data

    @model_validator(mode='after')
    def check_group(self) -> "SymplecticParams":
        m = self.modulus
        if (self.a * self.d - self.b * self.c - 1) % m != 0:
            raise ValueError(f"ad - bc must be 1 mod {m}")
        if gcd(self.b, m) != 1:
            raise ValueError(f"b={self.b} must be coprime to MN={m}")
        return self

    @property
    def b_inverse(self) -> int:
        return pow(self.b, -1, self.modulus) if self.modulus > 1 else 0

    def apply(self, k, l) -> Tuple[np.ndarray, np.ndarray]:
        """Rotate DD points: g.(k, l) = (ak + bl, ck + dl) mod MN."""
        k = np.asarray(k, dtype=np.int64)
        l = np.asarray(l, dtype=np.int64)
        m = self.modulus
        return (np.mod(self.a * k + self.b * l, m), np.mod(self.c * k + self.d * l, m))

    def key(self) -> tuple:
        return (self.a, self.b, self.c, self.d, self.modulus)


def make_symplectic(a: int, b: int, c: int, d: int, grid: GridParams) -> SymplecticParams:
    """
    Validated symplectic parameters for ``grid``.

    Raises:
        InvalidParameterError: If ad - bc != 1 mod MN or gcd(b, MN) != 1
    """
    try:
        return SymplecticParams(a=a, b=b, c=c, d=d, modulus=grid.MN)
    except ValidationError as e:
        raise InvalidParameterError(f"Invalid symplectic parameters ({a}, {b}, {c}, {d}): {e}") from e


def default_symplectic(grid: GridParams) -> SymplecticParams:
    """(a, b, c, d) = (2, 1, 3, 2): kernel exp(j2pi (n^2 - nm + m^2)/MN)."""
    return make_symplectic(2, 1, 3, 2, grid)


def symplectic_library(grid: GridParams, count: int) -> list:
    """
    Rotations (2, b, 3 b^-1, 2) for the first ``count`` units b whose
    residues mod M are distinct.

    Raises:
        InvalidParameterError: If fewer than ``count`` such units exist
    """
    MN = grid.MN
    params, residues = [], set()
    for b in range(1, MN):
        if gcd(b, MN) != 1 or (b % grid.M) in residues:
            continue
        params.append(make_symplectic(2, b, 3 * pow(b, -1, MN), 2, grid))
        residues.add(b % grid.M)
        if len(params) == count:
            return params
    raise InvalidParameterError(f"Only {len(params)} distinct rotations available for MN={MN}")


@dataclass(frozen=True)
class FDSequence:
    """MN frequency-domain symbols."""

    grid: GridParams
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128).reshape(-1)
        if samples.size != self.grid.MN:
            raise InvalidParameterError(
                f"FD sequence length {samples.size} does not match MN={self.grid.MN}"
            )
        object.__setattr__(self, 'samples', samples)


def dzt(x: TDSequence) -> DDArray:
    """
    Discrete Zak transform.

    X[k, l] = (1/sqrt N) sum_p x[k + pM] exp(-j2pi pl/N)
    """
    grid = x.grid
    periods = x.samples.reshape(grid.N, grid.M)  # periods[p, k] = x[k + pM]
    return DDArray(grid, np.fft.fft(periods, axis=0, norm='ortho').T)


def idzt(X: DDArray) -> TDSequence:
    """Inverse discrete Zak transform."""
    periods = np.fft.ifft(X.core.T, axis=0, norm='ortho')
    return TDSequence(X.grid, periods.reshape(-1))


def _idfzt_twiddle(grid: GridParams) -> np.ndarray:
    k0 = np.arange(grid.M)[:, None]
    l = np.arange(grid.N)[None, :]
    return np.exp(-2j * np.pi * (k0 * l) / grid.MN)


def idfzt(X: DDArray) -> FDSequence:
    """
    Inverse discrete frequency Zak transform.

    s[i] = (1/sqrt M) sum_k0 X[k0, i mod N] exp(-j2pi i k0 / MN). Writing
    i = l + qN splits it into a twiddle and a length-M DFT per Doppler column.
    """
    grid = X.grid
    spectrum = np.fft.fft(X.core * _idfzt_twiddle(grid), axis=0, norm='ortho')
    return FDSequence(grid, spectrum.reshape(-1))  # spectrum[q, l] = s[l + qN]


def idfzt_adjoint(s: FDSequence) -> DDArray:
    """Adjoint (and inverse) of idfzt."""
    grid = s.grid
    columns = np.fft.ifft(s.samples.reshape(grid.M, grid.N), axis=0, norm='ortho')
    return DDArray(grid, columns * np.conj(_idfzt_twiddle(grid)))


def idfzt_matrix(grid: GridParams) -> np.ndarray:
    """
    IDFZT as an MN x MN matrix acting on dd_to_vector ordering (column kN + l).
    """
    def build() -> np.ndarray:
        eye = np.eye(grid.MN, dtype=np.complex128).reshape(grid.MN, grid.M, grid.N)
        spectra = np.fft.fft(eye * _idfzt_twiddle(grid)[None], axis=1, norm='ortho')
        return spectra.reshape(grid.MN, grid.MN).T

    return get_cache().get_or_compute(('idfzt',) + grid.key(), build)


def _check_params(grid: GridParams, p: SymplecticParams):
    if p.modulus != grid.MN:
        raise InvalidParameterError(
            f"Symplectic parameters built for MN={p.modulus}, grid has MN={grid.MN}"
        )
    if gcd(p.b, grid.MN) != 1:
        raise InvalidParameterError(f"b={p.b} is not coprime to MN={grid.MN}")


def gdaft_matrix(grid: GridParams, p: SymplecticParams) -> np.ndarray:
    """
    GDAFT matrix G[n, m] = exp(j pi b^-1 (d n^2 - 2nm + a m^2) / MN) / sqrt(MN).

    The exponent is reduced mod 2MN in integer arithmetic before it reaches
    the exponential.

    Raises:
        InvalidParameterError: If b is not coprime to MN
    """
    _check_params(grid, p)

    def build() -> np.ndarray:
        MN = grid.MN
        two_mn = 2 * MN
        n = np.arange(MN, dtype=np.int64)
        quad_n = np.mod(p.d * np.mod(n * n, two_mn), two_mn)
        quad_m = np.mod(p.a * np.mod(n * n, two_mn), two_mn)
        cross = np.mod(2 * np.outer(n, n), two_mn)
        exponent = np.mod(quad_n[:, None] - cross + quad_m[None, :], two_mn)
        exponent = np.mod(exponent * p.b_inverse, two_mn)
        return np.exp(1j * np.pi * exponent / MN) / np.sqrt(MN)

    return get_cache().get_or_compute(('gdaft',) + grid.key() + p.key(), build)


def gdaft(x: TDSequence, p: SymplecticParams) -> TDSequence:
    """
    Generalized discrete affine Fourier transform.

    Args:
        x: Input sequence
        p: Symplectic parameters with gcd(b, MN) = 1

    Returns:
        Transformed sequence (unitary map)

    Raises:
        InvalidParameterError: If b is not coprime to MN
    """
    return TDSequence(x.grid, gdaft_matrix(x.grid, p) @ x.samples)


def gdaft_inverse(y: TDSequence, p: SymplecticParams) -> TDSequence:
    """Adjoint of gdaft; inverts it exactly."""
    return TDSequence(y.grid, gdaft_matrix(y.grid, p).conj().T @ y.samples)


def gdaft_shift_covariant(p: SymplecticParams) -> bool:
    """
    True when the GDAFT kernel is MN-periodic in both indices; Heisenberg
    shifts then pass through it as a rotation times a phase.
    """
    beta = p.b_inverse
    return p.modulus % 2 == 0 or (beta * p.a % 2 == 0 and beta * p.d % 2 == 0)


def gdaft_shift_map(grid: GridParams, p: SymplecticParams, region) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rotated points and phases relating shifts before and after the GDAFT.

    D_(k, l) G = c G D_(g^-1 (k, l)) with conj(c) = sqrt(MN) G[k, k'], so

        A(y, gdaft(x))[k, l] = conj(c) A(gdaft_inverse(y), x)[g^-1 (k, l)]

    Args:
        grid: Grid the parameters belong to
        p: Symplectic parameters
        region: (R, 2) array of (k, l) points

    Returns:
        (points, factors): g^-1 applied to each point, reduced mod MN, and conj(c)

    Raises:
        InvalidParameterError: If the kernel is not shift covariant
    """
    _check_params(grid, p)
    if not gdaft_shift_covariant(p):
        raise InvalidParameterError(f"GDAFT kernel for {p.key()} is not MN-periodic")
    MN = grid.MN
    region = np.asarray(region, dtype=np.int64).reshape(-1, 2)
    k, l = region[:, 0], region[:, 1]
    k_rot = np.mod(p.d * k - p.b * l, MN)
    l_rot = np.mod(-p.c * k + p.a * l, MN)
    factors = np.sqrt(MN) * gdaft_matrix(grid, p)[np.mod(k, MN), k_rot]
    return np.column_stack([k_rot, l_rot]), factors


def dft_matrix(n: int) -> np.ndarray:
    """Unitary n-point DFT matrix."""
    return dft(n, scale='sqrtn')


def rotate_points(points: Iterable[Tuple[int, int]], p: SymplecticParams) -> set:
    """Apply g to a collection of DD points."""
    pts = np.array(sorted(points), dtype=np.int64).reshape(-1, 2)
    k, l = p.apply(pts[:, 0], pts[:, 1])
    return set(zip(k.tolist(), l.tolist()))
