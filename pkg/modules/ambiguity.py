"""
Cross- and self-ambiguity functions on the MN x MN delay-Doppler torus.

A[k, l] = sum_n x[n] conj(y[(n - k) mod MN]) exp(-j2pi l (n - k) / MN)

Also holds the support-set predicates used by channel estimation and radar
waveform selection: predictability of a basis for a channel support and the
crystallization (non-overlap) test for subgroup translates of a clutter box.
"""

import logging
from dataclasses import dataclass, field
from math import gcd
from typing import FrozenSet, Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from modules.grid import GridParams, TDSequence
from modules.waveforms import SubgroupKind, SubgroupSpec, subgroup_index_set
from utils.error_handler import CoverageError, InvalidParameterError, NotFoundError

logger = logging.getLogger(__name__)

PREDICTABILITY_TOL = 1e-6

Box = Tuple[int, int, int, int]


def as_region(points: Iterable[Tuple[int, int]]) -> np.ndarray:
    """Region as an (R, 2) integer array."""
    return np.asarray(list(points), dtype=np.int64).reshape(-1, 2)


def core_region(grid: GridParams) -> np.ndarray:
    """All (k, l) with k in [0, M), l in [0, N)."""
    kk, ll = np.meshgrid(np.arange(grid.M), np.arange(grid.N), indexing='ij')
    return np.column_stack([kk.ravel(), ll.ravel()])


def full_region(grid: GridParams) -> np.ndarray:
    """Every point of the MN x MN torus."""
    MN = grid.MN
    kk, ll = np.meshgrid(np.arange(MN), np.arange(MN), indexing='ij')
    return np.column_stack([kk.ravel(), ll.ravel()])


def window_region(k_min: int, k_max: int, l_min: int, l_max: int) -> np.ndarray:
    """Signed rectangular window, bounds inclusive."""
    kk, ll = np.meshgrid(np.arange(k_min, k_max + 1), np.arange(l_min, l_max + 1), indexing='ij')
    return np.column_stack([kk.ravel(), ll.ravel()])


@dataclass(frozen=True)
class AmbiguitySurface:
    """Ambiguity values over a region (points kept as given, possibly signed)."""

    grid: GridParams
    region: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        region = as_region(self.region)
        reduced = np.mod(region, self.grid.MN)
        if len({(int(k), int(l)) for k, l in reduced}) != len(region):
            raise InvalidParameterError("Ambiguity region points must be distinct modulo MN")
        object.__setattr__(self, 'region', region)
        object.__setattr__(self, 'values', np.asarray(self.values, dtype=np.complex128))

    def lookup(self) -> dict:
        """Map from reduced (k, l) to value."""
        reduced = np.mod(self.region, self.grid.MN)
        return {(int(k), int(l)): v for (k, l), v in zip(reduced, self.values)}

    def value_at(self, k: int, l: int) -> complex:
        MN = self.grid.MN
        key = (k % MN, l % MN)
        table = self.lookup()
        if key not in table:
            raise CoverageError(f"Point ({k}, {l}) is not in the ambiguity region")
        return table[key]

    def to_frame(self) -> pd.DataFrame:
        """Columns k, l, re, im, abs."""
        return pd.DataFrame({
            'k': self.region[:, 0],
            'l': self.region[:, 1],
            're': self.values.real,
            'im': self.values.imag,
            'abs': np.abs(self.values),
        })


def _fft_multiplies(n: int) -> int:
    """Nominal complex multiplies of one length-n FFT, n/2 log2 n rounded up."""
    if n <= 1:
        return 0
    return int(np.ceil(n * np.log2(n) / 2))


@dataclass
class OpCounter:
    """Complex multiplies and FFTs recorded as the fast ambiguity path runs."""

    multiplies: int = 0
    ffts: int = 0

    def fft(self, a: np.ndarray, axis: int = 0) -> np.ndarray:
        n = a.shape[axis]
        transforms = a.size // n if n else 0
        self.ffts += transforms
        self.multiplies += transforms * _fft_multiplies(n)
        return np.fft.fft(a, axis=axis)

    def multiply(self, a, b) -> np.ndarray:
        out = np.multiply(a, b)
        self.multiplies += int(np.size(out))
        return out


def _ambiguity_values(x: np.ndarray, y: np.ndarray, region: np.ndarray, MN: int) -> np.ndarray:
    values = np.empty(len(region), dtype=np.complex128)
    ks = np.mod(region[:, 0], MN)
    ls = np.mod(region[:, 1], MN)
    y_conj = np.conj(y)
    for k in np.unique(ks):
        rows = np.flatnonzero(ks == k)
        spectrum = np.fft.fft(x * np.roll(y_conj, int(k)))
        phase = np.mod(ls[rows] * int(k), MN)
        values[rows] = spectrum[ls[rows]] * np.exp(2j * np.pi * phase / MN)
    return values


def cross_ambiguity(x: TDSequence, y: TDSequence, region) -> AmbiguitySurface:
    """
    Cross-ambiguity A_{x,y} over ``region``.

    Each distinct delay costs one length-MN FFT of x[n] conj(y[n - k]).

    Args:
        x: First sequence
        y: Second sequence
        region: Iterable or (R, 2) array of (k, l) points

    Returns:
        AmbiguitySurface
    """
    region = as_region(region)
    values = _ambiguity_values(x.samples, y.samples, region, x.grid.MN)
    return AmbiguitySurface(x.grid, region, values)


def ambiguity_matrix(x: TDSequence, y: TDSequence) -> np.ndarray:
    """Full MN x MN surface as a dense array indexed [k, l]."""
    MN = x.grid.MN
    n = np.arange(MN)
    k = np.arange(MN)[:, None]
    products = x.samples[None, :] * np.conj(y.samples[np.mod(n[None, :] - k, MN)])
    phase = np.mod(k * np.arange(MN)[None, :], MN)
    return np.fft.fft(products, axis=1) * np.exp(2j * np.pi * phase / MN)


def fast_cross_ambiguity_pulsone(x: TDSequence, k0: int, l0: int, region,
                                 counter: Optional[OpCounter] = None) -> AmbiguitySurface:
    """
    Cross-ambiguity of x against the pulsone at (k0, l0) in O(MN log N).

    With c = (k + k0) mod MN = r + sM and X = dzt(x):

        A[k, l] = exp(-j2pi l k0 / MN) exp(j2pi s (l + l0) / N) X[r, (l + l0) mod N]

    so the only transforms are the length-N FFTs of the DZT rows the region
    touches, at most M of them. ``counter`` records every FFT and product.

    Args:
        x: Received or reference sequence
        k0: Pulsone delay index
        l0: Pulsone Doppler index
        region: Points to evaluate
        counter: Optional multiply counter, incremented in place

    Returns:
        AmbiguitySurface equal to cross_ambiguity(x, pulsone(k0, l0), region)
    """
    grid = x.grid
    M, N, MN = grid.M, grid.N, grid.MN
    region = as_region(region)
    counter = counter if counter is not None else OpCounter()

    ls = np.mod(region[:, 1], MN)
    c = np.mod(region[:, 0] + k0, MN)
    r, s = c % M, c // M
    lp = ls + l0

    # DZT rows r only: X[r, :] = fft_p(x[r + pM]) / sqrt(N)
    rows, row_index = np.unique(r, return_inverse=True)
    periods = x.samples.reshape(N, M)[:, rows]
    spectra = counter.multiply(counter.fft(periods, axis=0), 1.0 / np.sqrt(N))

    phase = np.mod(-ls * k0, MN) / MN + np.mod(s * lp, N) / N
    values = counter.multiply(np.exp(2j * np.pi * phase), spectra[np.mod(lp, N), row_index])
    return AmbiguitySurface(grid, region, values)


@dataclass
class MoyalResult:
    lhs: float
    rhs: float


def moyal_check(x: TDSequence, y: TDSequence) -> MoyalResult:
    """
    Compare (1/MN) sum conj(A_x) A_y over the torus with |<x, y>|^2.
    """
    MN = x.grid.MN
    ax = ambiguity_matrix(x, x)
    ay = ambiguity_matrix(y, y)
    lhs = np.vdot(ax, ay) / MN
    rhs = abs(np.vdot(x.samples, y.samples)) ** 2
    return MoyalResult(lhs=float(lhs.real), rhs=float(rhs))


@dataclass(frozen=True)
class SupportSet:
    """
    DD support: explicit points and/or a rectangular box (inclusive bounds).
    """

    points: FrozenSet[Tuple[int, int]] = field(default_factory=frozenset)
    box: Optional[Box] = None

    @classmethod
    def from_points(cls, points: Iterable[Tuple[int, int]]) -> "SupportSet":
        return cls(frozenset((int(k), int(l)) for k, l in points))

    @classmethod
    def from_box(cls, k_min: int, k_max: int, l_min: int, l_max: int) -> "SupportSet":
        if k_max < k_min or l_max < l_min:
            raise InvalidParameterError("Box bounds are inverted")
        pts = {(k, l) for k in range(k_min, k_max + 1) for l in range(l_min, l_max + 1)}
        return cls(frozenset(pts), (k_min, k_max, l_min, l_max))

    def reduced(self, MN: int) -> FrozenSet[Tuple[int, int]]:
        return frozenset((k % MN, l % MN) for k, l in self.points)


def channel_support_kset(S: SupportSet, grid: GridParams) -> SupportSet:
    """K_S = {s1 - s2 : s1, s2 in S}, reduced mod MN."""
    MN = grid.MN
    pts = np.asarray(sorted(S.points), dtype=np.int64).reshape(-1, 2)
    diffs = np.mod(pts[:, None, :] - pts[None, :, :], MN).reshape(-1, 2)
    return SupportSet.from_points({(int(k), int(l)) for k, l in diffs})


def predictability_check(selfamb: AmbiguitySurface, S: SupportSet,
                         tol: float = PREDICTABILITY_TOL) -> bool:
    """
    A basis is predictable for support S when its self-ambiguity is 1 at the
    origin and vanishes on K_S minus the origin.

    Raises:
        CoverageError: If the surface does not cover K_S
    """
    kset = channel_support_kset(S, selfamb.grid)
    table = selfamb.lookup()
    missing = [p for p in kset.points if p not in table]
    if missing:
        raise CoverageError(f"Ambiguity region misses {len(missing)} points of K_S, e.g. {missing[0]}")
    if abs(table[(0, 0)] - 1.0) >= tol:
        return False
    return all(abs(table[p]) < tol for p in kset.points if p != (0, 0))


def _box_difference_mask(lo: int, hi: int, MN: int) -> np.ndarray:
    """Residues d mod MN reachable as c1 - c2 with c1, c2 in [lo, hi]."""
    width = hi - lo
    mask = np.zeros(MN, dtype=bool)
    if width >= MN - 1:
        mask[:] = True
        return mask
    mask[np.mod(np.arange(-width, width + 1), MN)] = True
    return mask


def crystallization_check(S: SupportSet, C: SupportSet, grid: GridParams) -> bool:
    """
    True iff the translates C + s (s in S) are pairwise disjoint on the torus.

    S is a subgroup index set, so S - S = S and the test reduces to: no
    nonzero s in S is a difference of two points of C.
    """
    if C.box is None:
        raise InvalidParameterError("Crystallization check needs a rectangular clutter box")
    MN = grid.MN
    k_min, k_max, l_min, l_max = C.box
    k_mask = _box_difference_mask(k_min, k_max, MN)
    l_mask = _box_difference_mask(l_min, l_max, MN)
    pts = np.asarray(sorted(S.reduced(MN)), dtype=np.int64).reshape(-1, 2)
    nonzero = pts[(pts[:, 0] != 0) | (pts[:, 1] != 0)]
    overlaps = k_mask[nonzero[:, 0]] & l_mask[nonzero[:, 1]]
    return not bool(overlaps.any())


def search_compliant_line(C: SupportSet, grid: GridParams, start: int = 1) -> SubgroupSpec:
    """
    First line slope alpha >= ``start`` (gcd(alpha, MN) = 1) whose subgroup
    passes the crystallization check against C.

    Raises:
        NotFoundError: If no slope qualifies
    """
    MN = grid.MN
    for alpha in range(start, max(MN, 2)):
        if gcd(alpha, MN) != 1:
            continue
        sg = SubgroupSpec(kind=SubgroupKind.LINE, alpha=alpha)
        if crystallization_check(SupportSet.from_points(subgroup_index_set(sg, grid)), C, grid):
            logger.debug(f"Compliant line slope alpha={alpha}")
            return sg
    raise NotFoundError("No compliant line subgroup")
