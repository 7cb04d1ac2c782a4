"""Free-fermion solution of the transverse-field Ising ring with an odd number of sites.

The ring Hamiltonian is

    H(J, h) = J sum_l sx_l sx_{l+1} - h sum_l sz_l,   sx_{N+1} = sx_1,

with J = +1 (antiferromagnetic, topologically frustrated) or J = -1
(ferromagnetic).  After Jordan-Wigner, Fourier and Bogoliubov transforms each
parity sector of Pi^z is a set of free modes:

* even sector (Pi^z = +1): q in {2 pi (n + 1/2) / N}, special mode q = pi
* odd sector  (Pi^z = -1): q in {2 pi n / N},         special mode q = 0

Energies here are in the units of the spin Hamiltonian above.  A mode with
dispersion ``Lambda(q)`` costs ``ENERGY_SCALE * Lambda(q)`` to occupy and a
zero-momentum pair (q, -q) costs twice that.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

EVEN = 1
ODD = -1

#: Ratio between spin-Hamiltonian energies and the ``Lambda(q)`` normalisation.
ENERGY_SCALE = 2.0

#: Degeneracy resolution used for deterministic sorting of level energies.
_SORT_DECIMALS = 12


class CapacityError(ValueError):
    """Requested size exceeds what an operation supports."""


def _check_parity(parity: int) -> int:
    if parity not in (EVEN, ODD):
        raise ValueError(f"parity must be EVEN (+1) or ODD (-1), got {parity!r}")
    return parity


def _check_size(N) -> int:
    if isinstance(N, bool) or int(N) != N:
        raise ValueError(f"N must be an integer, got {N!r}")
    N = int(N)
    if N < 3 or N % 2 == 0:
        raise ValueError(f"N must be odd and >= 3, got {N}")
    return N


@dataclass(frozen=True)
class ModelParams:
    """Coupling sign ``J``, transverse field ``h`` and odd ring size ``N``."""

    J: int
    h: float
    N: int

    def __post_init__(self):
        if self.J not in (1, -1):
            raise ValueError(f"J must be +1 or -1, got {self.J!r}")
        object.__setattr__(self, "N", _check_size(self.N))
        h = float(self.h)
        if not np.isfinite(h) or h < 0:
            raise ValueError(f"h must be finite and non-negative, got {self.h!r}")
        object.__setattr__(self, "h", h)

    @property
    def frustrated(self) -> bool:
        return self.J == 1

    @property
    def n_pairs(self) -> int:
        return (self.N - 1) // 2

    def with_field(self, h: float) -> "ModelParams":
        return ModelParams(self.J, h, self.N)


@dataclass(frozen=True, eq=False)
class MomentumGrid:
    parity: int
    momenta: np.ndarray

    @property
    def special(self) -> float:
        return special_momentum(self.parity)


@dataclass(frozen=True, eq=False)
class ModeData:
    q: float
    energy: float
    angle: float


@dataclass(frozen=True)
class OccupationPattern:
    """A zero-momentum eigenstate label.

    ``pairs`` is a bitmask over :func:`pair_momenta` of the sector: bit ``j``
    set means the pair ``(q_j, -q_j)`` is occupied.
    """

    parity: int
    pairs: int = 0
    special_occupied: bool = False

    def __post_init__(self):
        _check_parity(self.parity)
        if self.pairs < 0:
            raise ValueError("pair bitmask must be non-negative")

    @property
    def n_pairs_occupied(self) -> int:
        return bin(self.pairs).count("1")

    def occupied_momenta(self, N: int) -> np.ndarray:
        qs = pair_momenta(N, self.parity)
        return qs[[j for j in range(len(qs)) if self.pairs >> j & 1]]

    def validate(self, N: int) -> None:
        K = (N - 1) // 2
        if self.pairs >> K:
            raise ValueError(f"pair bitmask {self.pairs:#x} exceeds the {K} pair modes of N={N}")
        count = 2 * self.n_pairs_occupied + int(self.special_occupied)
        if (count % 2 == 0) != (self.parity == EVEN):
            raise ValueError("excitation count does not match the parity sector")


@dataclass(frozen=True)
class EigenLevel:
    pattern: OccupationPattern
    energy: float


def momentum_grid(N: int, parity: int) -> MomentumGrid:
    """Allowed momenta of a parity sector, ascending in [0, 2 pi)."""
    N = _check_size(N)
    shift = 0.5 if _check_parity(parity) == EVEN else 0.0
    return MomentumGrid(parity, 2 * np.pi * (np.arange(N) + shift) / N)


def special_momentum(parity: int) -> float:
    return np.pi if _check_parity(parity) == EVEN else 0.0


def pair_momenta(N: int, parity: int) -> np.ndarray:
    """Momenta of the sector lying strictly inside (0, pi), ascending."""
    N = _check_size(N)
    shift = 0.5 if _check_parity(parity) == EVEN else 0.0
    n = np.arange((N - 1) // 2) + (1 - shift if parity == ODD else shift)
    return 2 * np.pi * n / N


def dispersion(q, params: ModelParams):
    q = np.asarray(q, dtype=float)
    return np.sqrt((params.h + params.J * np.cos(q)) ** 2 + np.sin(q) ** 2)


def special_mode_energy(params: ModelParams) -> tuple[float, float]:
    """Signed energies ``(eps(0), eps(pi)) = (h + J, h - J)``."""
    return params.h + params.J, params.h - params.J


def _is_special(q) -> np.ndarray:
    q = np.mod(np.asarray(q, dtype=float), 2 * np.pi)
    return np.isclose(q, 0.0, atol=1e-12) | np.isclose(q, np.pi, atol=1e-12) | np.isclose(q, 2 * np.pi, atol=1e-12)


def bogoliubov_angle(q, params: ModelParams):
    """Bogoliubov angle ``theta_q``; zero on the special modes.

    The two-argument arctangent keeps ``Lambda(q) >= 0`` when
    ``h + J cos q < 0`` (fields past the band edge).
    """
    q = np.asarray(q, dtype=float)
    theta = 0.5 * np.arctan2(np.sin(q), params.h + params.J * np.cos(q))
    theta = np.where(_is_special(q), 0.0, theta)
    return float(theta) if theta.ndim == 0 else theta


def mode_data(params: ModelParams, parity: int) -> list[ModeData]:
    grid = momentum_grid(params.N, parity)
    eps0, epspi = special_mode_energy(params)
    out = []
    for q in grid.momenta:
        if _is_special(q):
            out.append(ModeData(q, eps0 if parity == ODD else epspi, 0.0))
        else:
            out.append(ModeData(q, float(dispersion(q, params)), bogoliubov_angle(q, params)))
    return out


def mode_energies(params: ModelParams, parity: int) -> np.ndarray:
    """Cost of occupying each single mode of the sector (special mode signed)."""
    grid = momentum_grid(params.N, parity)
    w = ENERGY_SCALE * dispersion(grid.momenta, params)
    eps0, epspi = special_mode_energy(params)
    idx = 0 if parity == ODD else (params.N - 1) // 2
    w[idx] = ENERGY_SCALE * (eps0 if parity == ODD else epspi)
    return w


def vacuum_energy(params: ModelParams, parity: int) -> float:
    """Energy of the Bogoliubov vacuum of a sector (each mode at -1/2)."""
    return float(-0.5 * mode_energies(params, _check_parity(parity)).sum())


def pair_energies(params: ModelParams, parity: int) -> np.ndarray:
    """Excitation energy of each zero-momentum pair, ordered like :func:`pair_momenta`."""
    return 2 * ENERGY_SCALE * dispersion(pair_momenta(params.N, parity), params)


def special_occupation_cost(params: ModelParams, parity: int) -> float:
    eps0, epspi = special_mode_energy(params)
    return ENERGY_SCALE * (eps0 if parity == ODD else epspi)


def ground_pattern(params: ModelParams) -> OccupationPattern:
    """Lowest of ``|vac+>`` and ``b_0^dag |vac->``; ties go to the even sector.

    Only defined for ``0 <= h < 1``.
    """
    if not 0 <= params.h < 1:
        raise ValueError(f"ground-state identification needs 0 <= h < 1, got h={params.h}")
    e_even = vacuum_energy(params, EVEN)
    e_odd = vacuum_energy(params, ODD) + special_occupation_cost(params, ODD)
    if e_odd < e_even - 1e-12 * max(1.0, abs(e_even)):
        return OccupationPattern(ODD, 0, True)
    return OccupationPattern(EVEN, 0, False)


def level_energy(pattern: OccupationPattern, params: ModelParams) -> float:
    pattern.validate(params.N)
    e = vacuum_energy(params, pattern.parity)
    if pattern.special_occupied:
        e += special_occupation_cost(params, pattern.parity)
    pe = pair_energies(params, pattern.parity)
    bits = (pattern.pairs >> np.arange(len(pe))) & 1
    return float(e + pe @ bits)


def mask_bits(n_modes: int) -> np.ndarray:
    """``(2**n_modes, n_modes)`` 0/1 matrix; row ``m`` holds the bits of mask ``m``."""
    m = np.arange(2**n_modes)[:, None]
    return ((m >> np.arange(n_modes)) & 1).astype(np.int8)


def subset_sums(values: np.ndarray) -> np.ndarray:
    """All ``2**K`` subset sums indexed by bitmask (bit ``j`` selects ``values[j]``)."""
    out = np.zeros(1)
    for v in values:
        out = np.concatenate([out, out + v])
    return out


@dataclass(frozen=True, eq=False)
class LevelTable:
    """Reachable levels as arrays: bitmasks and energies sorted ascending."""

    params: ModelParams
    ground: OccupationPattern
    masks: np.ndarray
    energies: np.ndarray

    def __len__(self):
        return len(self.masks)

    def pattern(self, i: int) -> OccupationPattern:
        return OccupationPattern(self.ground.parity, int(self.masks[i]), self.ground.special_occupied)


def sort_order(energies: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Ascending energy, ties broken by the pair bitmask."""
    return np.lexsort((masks, np.round(energies, _SORT_DECIMALS)))


def level_table(params: ModelParams, ground: OccupationPattern | None = None) -> LevelTable:
    """The ``2**((N-1)/2)`` zero-momentum levels reachable by pair excitations.

    ``ground`` fixes the sector and special-mode occupation; by default it is
    :func:`ground_pattern` of ``params``, which needs ``0 <= h < 1``.  Pass the
    ground pattern of another field to tabulate a quench-target Hamiltonian.
    """
    if ground is None:
        ground = ground_pattern(params)
    base = vacuum_energy(params, ground.parity)
    if ground.special_occupied:
        base += special_occupation_cost(params, ground.parity)
    energies = base + subset_sums(pair_energies(params, ground.parity))
    masks = np.arange(len(energies))
    order = sort_order(energies, masks)
    return LevelTable(params, ground, masks[order], energies[order])


def enumerate_levels(params: ModelParams, ground: OccupationPattern | None = None) -> list[EigenLevel]:
    table = level_table(params, ground)
    return [EigenLevel(table.pattern(i), float(e)) for i, e in enumerate(table.energies)]


def _ascending_subset_sums(costs: Sequence[float]) -> Iterator[tuple[float, int]]:
    """Yield ``(sum, size)`` of every subset of non-negative ``costs`` in ascending sum."""
    c = sorted(costs)
    yield 0.0, 0
    if not c:
        return
    heap = [(c[0], 0, 1)]
    while heap:
        s, i, n = heapq.heappop(heap)
        yield s, n
        if i + 1 < len(c):
            heapq.heappush(heap, (s + c[i + 1], i + 1, n + 1))
            heapq.heappush(heap, (s - c[i] + c[i + 1], i + 1, n))


def _sector_levels(params: ModelParams, parity: int) -> Iterator[float]:
    w = mode_energies(params, parity)
    neg = w < 0
    base = vacuum_energy(params, parity) + w[neg].sum()
    base_count = int(neg.sum())
    want = 0 if parity == EVEN else 1
    for s, n in _ascending_subset_sums(np.abs(w)):
        if (base_count + n) % 2 == want:
            yield base + s


class SpectrumLadder:
    """Lowest eigenvalues of the full ``2**N``-dimensional spectrum, generated lazily.

    Both parity sectors and every momentum are included.  The passive state of
    a battery fills these levels.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self._stream = heapq.merge(_sector_levels(params, EVEN), _sector_levels(params, ODD))
        self._cache: list[float] = []

    def levels(self, k: int) -> np.ndarray:
        k = int(k)
        if k > 2**self.params.N:
            raise ValueError(f"only {2 ** self.params.N} levels exist for N={self.params.N}")
        if len(self._cache) < k:
            self._cache.extend(itertools.islice(self._stream, k - len(self._cache)))
        return np.array(self._cache[:k])


_LADDERS: dict[ModelParams, SpectrumLadder] = {}


def lowest_levels(params: ModelParams, k: int) -> np.ndarray:
    """The ``k`` lowest eigenvalues of H(J, h), ascending."""
    ladder = _LADDERS.get(params)
    if ladder is None:
        if len(_LADDERS) > 64:
            _LADDERS.clear()
        ladder = _LADDERS[params] = SpectrumLadder(params)
    return ladder.levels(k)


def lowest_gap(params: ModelParams) -> float:
    """Gap between the two lowest eigenvalues of the whole spectrum."""
    e = lowest_levels(params, 2)
    return float(e[1] - e[0])


def gap_above_doublet(params: ModelParams) -> float:
    """Gap from the ground state to the third level (first one past a two-fold manifold)."""
    e = lowest_levels(params, 3)
    return float(e[2] - e[0])


def gap_leading_order(h: float, N: int) -> float:
    """Leading-order frustrated gap ``2|h| / (1 - |h|) * pi^2 / N^2`` as printed in the literature."""
    if abs(h) >= 1:
        raise ValueError("leading-order gap formula diverges for |h| >= 1")
    N = _check_size(N)
    return 2 * abs(h) / (1 - abs(h)) * np.pi**2 / N**2
