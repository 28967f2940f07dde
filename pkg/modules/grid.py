"""
Delay-Doppler frame geometry and quasi-periodic array semantics.

All indices are 0-based. A DD array stores only its fundamental period
(M delay bins by N Doppler bins); values at any other index follow from the
quasi-periodicity rule

    X[k + nM, l + mN] = X[k, l] * exp(j2pi n l / N).

Time-domain sequences are one period of an MN-periodic sequence sampled at
the bandwidth B = M * nu_p.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from utils.error_handler import InvalidParameterError

logger = logging.getLogger(__name__)

IndexLike = Union[int, np.ndarray]


class GridParams(BaseModel):
    """DD frame geometry. Only M, N and the Doppler period are stored."""

    model_config = ConfigDict(frozen=True)

    M: int = Field(..., ge=1, description="Delay bins")
    N: int = Field(..., ge=1, description="Doppler bins")
    nu_p: float = Field(..., gt=0, description="Doppler period in Hz")

    @property
    def tau_p(self) -> float:
        """Delay period in seconds."""
        return 1.0 / self.nu_p

    @property
    def B(self) -> float:
        """Bandwidth in Hz."""
        return self.M * self.nu_p

    @property
    def T(self) -> float:
        """Frame duration in seconds."""
        return self.N / self.nu_p

    @property
    def MN(self) -> int:
        return self.M * self.N

    def key(self) -> tuple:
        """Hashable identity used by the matrix cache."""
        return (self.M, self.N)


def make_grid(M: int, N: int, nu_p: float) -> GridParams:
    """
    Build a grid, deriving tau_p, B and T from (M, N, nu_p).

    Args:
        M: Number of delay bins
        N: Number of Doppler bins
        nu_p: Doppler period in Hz

    Returns:
        GridParams instance

    Raises:
        InvalidParameterError: If M, N or nu_p is not positive
    """
    try:
        return GridParams(M=M, N=N, nu_p=nu_p)
    except ValidationError as e:
        raise InvalidParameterError(f"Invalid grid (M={M}, N={N}, nu_p={nu_p}): {e}") from e


@dataclass(frozen=True)
class DDArray:
    """M x N complex core of a quasi-periodic delay-Doppler array."""

    grid: GridParams
    core: np.ndarray

    def __post_init__(self):
        core = np.asarray(self.core, dtype=np.complex128)
        if core.shape != (self.grid.M, self.grid.N):
            raise InvalidParameterError(
                f"DD core shape {core.shape} does not match grid ({self.grid.M}, {self.grid.N})"
            )
        object.__setattr__(self, 'core', core)

    @classmethod
    def zeros(cls, grid: GridParams) -> "DDArray":
        return cls(grid, np.zeros((grid.M, grid.N), dtype=np.complex128))

    @classmethod
    def impulse(cls, grid: GridParams, k: int, l: int, value: complex = 1.0) -> "DDArray":
        """Unit impulse at (k, l) on the core, placed by the quasi-periodic rule."""
        core = np.zeros((grid.M, grid.N), dtype=np.complex128)
        # X[k, l] = v forces X[k mod M, l mod N] = v * exp(-j2pi floor(k/M) (l mod N)/N)
        n = k // grid.M
        core[k % grid.M, l % grid.N] = value * np.exp(-2j * np.pi * n * (l % grid.N) / grid.N)
        return cls(grid, core)

    def energy(self) -> float:
        return float(np.vdot(self.core, self.core).real)

    def __add__(self, other: "DDArray") -> "DDArray":
        return DDArray(self.grid, self.core + other.core)

    def __sub__(self, other: "DDArray") -> "DDArray":
        return DDArray(self.grid, self.core - other.core)

    def __mul__(self, scalar: complex) -> "DDArray":
        return DDArray(self.grid, self.core * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True)
class TDSequence:
    """One period of an MN-periodic complex sequence."""

    grid: GridParams
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128).reshape(-1)
        if samples.size != self.grid.MN:
            raise InvalidParameterError(
                f"Sequence length {samples.size} does not match MN={self.grid.MN}"
            )
        object.__setattr__(self, 'samples', samples)

    @classmethod
    def zeros(cls, grid: GridParams) -> "TDSequence":
        return cls(grid, np.zeros(grid.MN, dtype=np.complex128))

    def norm(self) -> float:
        return float(np.linalg.norm(self.samples))

    def __add__(self, other: "TDSequence") -> "TDSequence":
        return TDSequence(self.grid, self.samples + other.samples)

    def __mul__(self, scalar: complex) -> "TDSequence":
        return TDSequence(self.grid, self.samples * scalar)

    __rmul__ = __mul__


def quasi_extend(X: DDArray, k: IndexLike, l: IndexLike) -> Union[complex, np.ndarray]:
    """
    Value of the quasi-periodic extension of X at integer (k, l).

    Works elementwise when k and l are integer arrays.

    Args:
        X: DD array
        k: Delay index (any integer)
        l: Doppler index (any integer)

    Returns:
        X[k mod M, l mod N] * exp(j2pi floor(k/M) (l mod N) / N)
    """
    M, N = X.grid.M, X.grid.N
    k = np.asarray(k, dtype=np.int64)
    l = np.asarray(l, dtype=np.int64)
    kr, lr = np.mod(k, M), np.mod(l, N)
    n = np.floor_divide(k, M)
    value = X.core[kr, lr] * np.exp(2j * np.pi * np.mod(n * lr, N) / N)
    if value.ndim == 0:
        return complex(value)
    return value


def dd_to_vector(X: DDArray) -> np.ndarray:
    """Vectorize the core: v[kN + l] = X[k, l]."""
    return X.core.reshape(-1).copy()


def vector_to_dd(v: np.ndarray, grid: GridParams) -> DDArray:
    """
    Inverse of dd_to_vector.

    Raises:
        InvalidParameterError: If the vector length is not MN
    """
    v = np.asarray(v, dtype=np.complex128).reshape(-1)
    if v.size != grid.MN:
        raise InvalidParameterError(f"Vector length {v.size} does not match MN={grid.MN}")
    return DDArray(grid, v.reshape(grid.M, grid.N))


def wrap_signed(values: IndexLike, period: int) -> IndexLike:
    """Reduce to the signed range [-(period//2), period - period//2)."""
    half = period // 2
    return np.mod(np.asarray(values) + half, period) - half
