"""Brute-force exact diagonalization of the Ising ring in the 2**N spin basis.

Nothing here uses the free-fermion solution; it exists to check it.  Site 0 is
the most significant bit of a basis index and spin up (sz = +1) is bit 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.linalg

from .spectrum import CapacityError, ModelParams, ground_pattern

MAX_DENSE_SPINS = 15
AUX_FIELDS = (2.71, 0.37)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)


def cluster_tolerance(e: float) -> float:
    return 1e-9 * max(1.0, abs(e))


def energy_clusters(values: np.ndarray) -> list[np.ndarray]:
    """Index groups of ascending ``values`` that are degenerate within :func:`cluster_tolerance`."""
    groups, start = [], 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] - values[i - 1] > cluster_tolerance(values[i - 1]):
            groups.append(np.arange(start, i))
            start = i
    return groups


class DenseOperator:
    """Hermitian matrix with a cached eigendecomposition."""

    def __init__(self, matrix, *, check: bool = True):
        m = np.asarray(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        if check:
            err = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
            if err > 1e-10:
                raise ValueError(f"matrix is not Hermitian (max deviation {err:.3g})")
        self.matrix = m
        self._eig = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        if self._eig is None:
            self._eig = np.linalg.eigh(self.matrix)
        return self._eig

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eigh()[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.eigh()[1]

    def projectors(self) -> list[tuple[float, np.ndarray]]:
        """``(eigenvalue, Pi)`` for each degenerate eigenspace."""
        vals, vecs = self.eigh()
        out = []
        for g in energy_clusters(vals):
            v = vecs[:, g]
            out.append((float(vals[g].mean()), v @ v.conj().T))
        return out

    def expectation(self, rho) -> float:
        rho = rho.matrix if isinstance(rho, DenseOperator) else np.asarray(rho)
        return float(np.real(np.trace(self.matrix @ rho)))

    def __add__(self, other):
        return DenseOperator(self.matrix + _mat(other), check=False)

    def __matmul__(self, other):
        return self.matrix @ _mat(other)


def _mat(x):
    return x.matrix if isinstance(x, DenseOperator) else np.asarray(x)


def site_operator(op: np.ndarray, site: int, n_spins: int) -> np.ndarray:
    """``op`` acting on ``site`` of ``n_spins`` as a dense Kronecker product."""
    return reduce(np.kron, [op if k == site else ID2 for k in range(n_spins)])


def _check_capacity(n_spins: int, limit: int = MAX_DENSE_SPINS):
    if n_spins > limit:
        raise CapacityError(f"dense exact diagonalization is limited to {limit} spins, got {n_spins}")


def ising_terms(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Real matrices ``(sum sx_l sx_{l+1}, sum sz_l)`` on the ring, built from bit operations."""
    _check_capacity(N)
    dim = 2**N
    idx = np.arange(dim)
    bits = (idx[:, None] >> (N - 1 - np.arange(N))) & 1
    hz = np.diag((1 - 2 * bits).sum(axis=1).astype(float))
    hxx = np.zeros((dim, dim))
    for l in range(N):
        flip = (1 << (N - 1 - l)) | (1 << (N - 1 - (l + 1) % N))
        hxx[idx ^ flip, idx] += 1.0
    return hxx, hz


def build_ising(params: ModelParams) -> DenseOperator:
    hxx, hz = ising_terms(params.N)
    return DenseOperator(params.J * hxx - params.h * hz, check=False)


def build_ising_kron(params: ModelParams) -> DenseOperator:
    """Same Hamiltonian assembled term by term from Pauli Kronecker products."""
    N = params.N
    _check_capacity(N, 12)
    H = sum(params.J * site_operator(SX, l, N) @ site_operator(SX, (l + 1) % N, N) for l in range(N))
    H = H - params.h * sum(site_operator(SZ, l, N) for l in range(N))
    return DenseOperator(H)


def parity_diagonal(N: int) -> np.ndarray:
    """Eigenvalues of prod_l sz_l on the computational basis."""
    idx = np.arange(2**N)
    ones = np.array([bin(i).count("1") for i in idx])
    return np.where(ones % 2 == 0, 1, -1)


def translation_permutation(N: int) -> np.ndarray:
    """``perm`` with ``T|i> = |perm[i]>``: the spin on site l moves to site l + 1."""
    idx = np.arange(2**N)
    return (idx >> 1) | ((idx & 1) << (N - 1))


def translation_matrix(N: int) -> np.ndarray:
    perm = translation_permutation(N)
    T = np.zeros((2**N, 2**N))
    T[perm, np.arange(2**N)] = 1.0
    return T


@dataclass(frozen=True, eq=False)
class SymmetryLabels:
    """Symmetry-adapted eigenvectors of a Hamiltonian with their quantum numbers."""

    energies: np.ndarray
    vectors: np.ndarray
    parity: np.ndarray
    translation: np.ndarray

    @property
    def momentum(self) -> np.ndarray:
        return np.mod(np.angle(self.translation), 2 * np.pi)

    def zero_momentum(self, tol: float = 1e-9) -> np.ndarray:
        return np.abs(self.translation - 1) < tol


def symmetry_labels(H: DenseOperator, N: int) -> SymmetryLabels:
    """Rotate each degenerate eigenspace so translation and parity are diagonal too."""
    vals, vecs = H.eigh()
    P = parity_diagonal(N)
    perm = translation_permutation(N)
    out = np.zeros_like(vecs, dtype=complex)
    for g in energy_clusters(vals):
        v = vecs[:, g].astype(complex)
        Tv = np.zeros_like(v)
        Tv[perm] = v
        # generic complex mix separates every joint (T, P) eigenvalue pair
        A = v.conj().T @ (Tv + 0.5 * np.sqrt(2) * P[:, None] * v)
        _, Q = scipy.linalg.schur(A, output="complex")
        out[:, g] = v @ Q
    Tout = np.zeros_like(out)
    Tout[perm] = out
    tr = np.einsum("ij,ij->j", out.conj(), Tout)
    par = np.einsum("ij,ij->j", out.conj(), P[:, None] * out).real
    if np.max(np.abs(np.abs(tr) - 1)) > 1e-9 or np.max(np.abs(np.abs(par) - 1)) > 1e-9:
        raise RuntimeError("symmetry operators do not commute with H on this spectrum")
    return SymmetryLabels(vals, out, np.rint(par).astype(int), tr)


def propagate(state, H: DenseOperator, t: float):
    """``exp(-iHt)`` applied to a vector, or conjugating a density matrix."""
    vals, vecs = H.eigh()
    U = (vecs * np.exp(-1j * vals * t)) @ vecs.conj().T
    state = _mat(state)
    if state.ndim == 1:
        return U @ state
    return U @ state @ U.conj().T


def integrate_milburn_reference(rho, H: DenseOperator, nu: float, t: float) -> np.ndarray:
    """Milburn evolution on constant H written as an explicit double sum over eigenprojectors."""
    rho = _mat(rho)
    projs = H.projectors()
    out = np.zeros(rho.shape, dtype=complex)
    for ea, Pa in projs:
        left = Pa @ rho
        for eb, Pb in projs:
            d = ea - eb
            decay = 1.0 if np.isinf(nu) else np.exp(-(d**2) * t / (2 * nu))
            out += left @ Pb * decay * np.exp(-1j * d * t)
    return out


def ed_ground_state(params: ModelParams, parity: int | None = None, levels: int = 1):
    """Lowest eigenpair of H restricted to a parity sector (default: sector of the free-fermion ground).

    With ``levels > 1`` the first element is the array of that many lowest energies.
    """
    if parity is None:
        parity = ground_pattern(params).parity
    H = build_ising(params)
    sel = parity_diagonal(params.N) == parity
    vals, vecs = np.linalg.eigh(H.matrix[np.ix_(sel, sel)])
    psi = np.zeros(2**params.N)
    psi[sel] = vecs[:, 0]
    return (float(vals[0]) if levels == 1 else vals[:levels]), psi


def zero_momentum_basis(N: int, parity: int) -> np.ndarray:
    """Orthonormal columns spanning the translation-invariant states of one parity sector.

    One column per translation orbit: the normalized sum of its members.
    """
    perm = translation_permutation(N)
    P = parity_diagonal(N)
    seen = np.zeros(2**N, dtype=bool)
    cols = []
    for r in range(2**N):
        if seen[r] or P[r] != parity:
            continue
        orbit = [r]
        while (nxt := perm[orbit[-1]]) != r:
            orbit.append(nxt)
        seen[orbit] = True
        cols.append(orbit)
    B = np.zeros((2**N, len(cols)))
    for j, orbit in enumerate(cols):
        B[orbit, j] = 1 / np.sqrt(len(orbit))
    return B


@dataclass(frozen=True, eq=False)
class ReachableSector:
    """Eigenstates of H(h0) reachable from its ground state by any field quench."""

    params: ModelParams
    energies: np.ndarray
    vectors: np.ndarray  # columns in the full spin basis

    @property
    def ground(self) -> np.ndarray:
        return self.vectors[:, 0]


def reachable_sector(params: ModelParams) -> ReachableSector:
    """Eigenstates of H(h0) in the span explored by field quenches from its ground state.

    Quenches only ever apply ``sum sx sx`` and ``sum sz``, so that span is an
    invariant subspace of H(h) for every h.  An eigenvector of a generic
    auxiliary H(h) therefore lies either inside it or orthogonal to it; the
    ones inside are those overlapping the ground state.
    """
    parity = ground_pattern(params).parity
    B = zero_momentum_basis(params.N, parity)
    hxx, hz = ising_terms(params.N)
    hxx, hz = B.T @ hxx @ B, B.T @ hz @ B
    vals, vecs = np.linalg.eigh(params.J * hxx - params.h * hz)
    psi0 = vecs[:, 0]
    if vals[1] - vals[0] < 1e-8:
        # degenerate sector ground (h = 0): the limit from small positive fields
        psi0 = np.linalg.eigh(params.J * hxx - 1e-3 * hz)[1][:, 0]
    cols = []
    for h_aux in AUX_FIELDS:
        _, w = np.linalg.eigh(params.J * hxx - h_aux * hz)
        cols.append(w[:, np.abs(w.T @ psi0) ** 2 > 1e-20])
    V = np.column_stack(cols)
    u, sv, _ = np.linalg.svd(V, full_matrices=False)
    V = u[:, sv > 1e-6 * sv[0]]
    H = V.T @ (params.J * hxx - params.h * hz) @ V
    e, x = np.linalg.eigh((H + H.T) / 2)
    return ReachableSector(params, e, B @ (V @ x))


def ed_populations(params0: ModelParams, h1: float, tau: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Quench populations from dense propagation.

    Returns ``(energies, probs, leakage)`` over the reachable eigenstates of
    H(h0); ``leakage`` is the weight found outside that space.
    """
    sector = reachable_sector(params0)
    H1 = build_ising(params0.with_field(h1))
    psi = propagate(sector.ground.astype(complex), H1, tau)
    amp = sector.vectors.T @ psi
    probs = np.abs(amp) ** 2
    return sector.energies, probs, float(max(0.0, 1 - probs.sum()))


def ed_full_spectrum(params: ModelParams) -> np.ndarray:
    return np.linalg.eigvalsh(build_ising(params).matrix)


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    X = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = X @ X.conj().T
    return rho / np.trace(rho).real

