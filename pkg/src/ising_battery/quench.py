"""Charging by a sudden field quench h0 -> h1 and dephasing under the Milburn equation.

Each pair (q, -q) of the reachable sector is a two-level system spanned by
the Bogoliubov vacuum and the pair-occupied state, so the quench factorizes
into 2x2 rotations by ``Delta_q = theta_q(h1) - theta_q(h0)``.  Level vectors
are indexed by the pair bitmask used in :mod:`ising_battery.spectrum`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.signal import find_peaks

from .ed_oracle import DenseOperator, energy_clusters
from .spectrum import (
    CapacityError,
    EigenLevel,
    LevelTable,
    ModelParams,
    OccupationPattern,
    _is_special,
    bogoliubov_angle,
    dispersion,
    ground_pattern,
    level_table,
    pair_energies,
    pair_momenta,
    subset_sums,
)

UNITARY = math.inf
INSTANT_DEPHASE = 0.0

MAX_SLOW_N = 15


class MilburnIntegrationError(RuntimeError):
    pass


class NoPlateauError(ValueError):
    """No intermediate plateau in a coherence trace; ``tau1`` still holds the fast time."""

    def __init__(self, message: str, tau1: float):
        super().__init__(message)
        self.tau1 = tau1


@dataclass(frozen=True)
class ChargingProtocol:
    J: int
    N: int
    h0: float
    h1: float
    tau: float
    nu: float = UNITARY
    dephase_limit: bool = True

    def __post_init__(self):
        ModelParams(self.J, self.h0, self.N)
        ModelParams(self.J, self.h1, self.N)
        if not self.tau >= 0:
            raise ValueError(f"charging time must be >= 0, got {self.tau!r}")
        if not (self.nu == INSTANT_DEPHASE or self.nu > 0):
            raise ValueError(f"nu must be positive, UNITARY or INSTANT_DEPHASE, got {self.nu!r}")

    @property
    def params0(self) -> ModelParams:
        return ModelParams(self.J, self.h0, self.N)

    @property
    def params1(self) -> ModelParams:
        return ModelParams(self.J, self.h1, self.N)

    @property
    def dh(self) -> float:
        return self.h1 - self.h0

    def at(self, tau: float) -> "ChargingProtocol":
        return ChargingProtocol(self.J, self.N, self.h0, self.h1, tau, self.nu, self.dephase_limit)


class PopulationDistribution:
    """Probabilities over the reachable eigenstates of H(h0), ascending in energy."""

    def __init__(self, energies, probs, masks=None, params: ModelParams | None = None, *, check: bool = True):
        self.energies = np.asarray(energies, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if check:
            if probs.shape != self.energies.shape:
                raise ValueError("energies and probabilities differ in length")
            if np.any(np.diff(self.energies) < -1e-12):
                raise ValueError("energies must be ascending")
            if np.any(probs < -1e-12) or np.any(probs > 1 + 1e-12):
                raise ValueError("probabilities must lie in [0, 1]")
            if abs(probs.sum() - 1) > 1e-10:
                raise ValueError(f"probabilities sum to {probs.sum():.15g}, not 1")
        self.probs = np.clip(probs, 0.0, 1.0)
        self.masks = None if masks is None else np.asarray(masks)
        self.params = params

    def __len__(self):
        return len(self.probs)

    @property
    def excitations(self) -> np.ndarray:
        return self.energies - self.energies[0]

    @property
    def levels(self) -> list[EigenLevel]:
        g = ground_pattern(self.params)
        return [
            EigenLevel(OccupationPattern(g.parity, int(m), g.special_occupied), float(e))
            for m, e in zip(self.masks, self.energies)
        ]


@dataclass(frozen=True)
class ModeOverlapBlock:
    """``block[b, a] = <b (post-quench) | a (pre-quench)>`` with index 0 vacuum and 1 pair."""

    q: float
    delta: float

    @property
    def block(self) -> np.ndarray:
        c, s = math.cos(self.delta), math.sin(self.delta)
        return np.array([[c, -s], [s, c]])


def _deltas(params0: ModelParams, h1: float) -> np.ndarray:
    q = pair_momenta(params0.N, ground_pattern(params0).parity)
    return bogoliubov_angle(q, params0.with_field(h1)) - bogoliubov_angle(q, params0)


def mode_overlap_block(q: float, h0: float, h1: float, J: int) -> ModeOverlapBlock:
    if _is_special(q):
        raise ValueError(f"q = {q} is a special mode; it has no pair block")
    p0, p1 = ModelParams(J, h0, 3), ModelParams(J, h1, 3)
    return ModeOverlapBlock(float(q), float(bogoliubov_angle(q, p1) - bogoliubov_angle(q, p0)))


def overlap_blocks(protocol: ChargingProtocol) -> list[ModeOverlapBlock]:
    p0 = protocol.params0
    q = pair_momenta(p0.N, ground_pattern(p0).parity)
    return [ModeOverlapBlock(float(k), float(d)) for k, d in zip(q, _deltas(p0, protocol.h1))]


def state_overlap(P0: OccupationPattern, Q1: OccupationPattern, blocks: list[ModeOverlapBlock]) -> float:
    """``<Q1 | P0>`` between a post-quench and a pre-quench pattern."""
    if P0.parity != Q1.parity or P0.special_occupied != Q1.special_occupied:
        raise ValueError("patterns belong to different sectors")
    out = 1.0
    for j, b in enumerate(blocks):
        out *= b.block[Q1.pairs >> j & 1, P0.pairs >> j & 1]
    return out


def mode_amplitudes(protocol: ChargingProtocol, taus=None) -> np.ndarray:
    """Pre-quench basis amplitudes of each pair after unitary evolution under H(h1).

    Shape ``(len(taus), K, 2)``; column 0 is the vacuum, 1 the pair.  The
    special mode only contributes a global phase and is left out.
    """
    taus = np.atleast_1d(protocol.tau if taus is None else taus).astype(float)
    d = _deltas(protocol.params0, protocol.h1)
    q = pair_momenta(protocol.N, ground_pattern(protocol.params0).parity)
    w = 2 * 2.0 * dispersion(q, protocol.params1)  # pair excitation energy under H(h1)
    c, s = np.cos(d), np.sin(d)
    # start in the pre-quench vacuum: post-quench components are (c, s)
    phase = np.exp(-1j * w[None, :] * taus[:, None])
    post0, post1 = c[None, :], s[None, :] * phase
    # back to the pre-quench basis with the transposed block
    a0 = c * post0 + s * post1
    a1 = -s * post0 + c * post1
    return np.stack([a0, a1], axis=-1)


def pair_probabilities(protocol: ChargingProtocol, taus=None) -> np.ndarray:
    """Excitation probability of each pair, shape ``(len(taus), K)``."""
    return np.abs(mode_amplitudes(protocol, taus)[..., 1]) ** 2


def pattern_products(p: np.ndarray) -> np.ndarray:
    """``prod_j (p_j if bit j else 1 - p_j)`` for every bitmask, over the last axis of ``p``."""
    p = np.asarray(p, dtype=float)
    out = np.ones(p.shape[:-1] + (1,))
    for j in range(p.shape[-1]):
        pj = p[..., j : j + 1]
        out = np.concatenate([out * (1 - pj), out * pj], axis=-1)
    return out


def _reachable(protocol: ChargingProtocol) -> LevelTable:
    return level_table(protocol.params0)


def populations_fast(protocol: ChargingProtocol) -> PopulationDistribution:
    """Unitary-charge populations from the factorized pair amplitudes."""
    table = _reachable(protocol)
    p = pair_probabilities(protocol)[0]
    probs = pattern_products(p)[table.masks]
    return PopulationDistribution(table.energies, probs, table.masks, protocol.params0)


def overlap_matrix(protocol: ChargingProtocol) -> np.ndarray:
    """``U[l, k] = <eps_l | mu_k>`` over pre (rows) and post (columns) bitmasks."""
    blocks = overlap_blocks(protocol)
    if not blocks:
        return np.ones((1, 1))
    return reduce(np.kron, [b.block.T for b in reversed(blocks)])


def post_quench_energies(protocol: ChargingProtocol) -> np.ndarray:
    """H(h1) energies of the post-quench patterns by bitmask, up to a common constant."""
    parity = ground_pattern(protocol.params0).parity
    return subset_sums(pair_energies(protocol.params1, parity))


def _check_slow_capacity(N: int):
    if N > MAX_SLOW_N:
        raise CapacityError(f"dephased charging needs O(M^2) work; limited to N <= {MAX_SLOW_N}, got N={N}")


def slow_population_series(protocol: ChargingProtocol, taus, chunk: int = 64) -> np.ndarray:
    """Dephased-charge populations by bitmask, shape ``(len(taus), M)``.

    ``P[l] = sum_{k,k'} A[l,k] A[l,k'] exp(-D^2 tau / 2 nu) cos(D tau)`` with
    ``A = U diag(c)``, ``c = U[0]`` and ``D = mu_k - mu_k'``.
    """
    _check_slow_capacity(protocol.N)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    U = overlap_matrix(protocol)
    c = U[0]
    if protocol.nu == INSTANT_DEPHASE:
        P = (U**2) @ (c**2)
        return np.broadcast_to(P, (len(taus), len(P))).copy()
    A = U * c[None, :]
    mu = post_quench_energies(protocol)
    D = mu[:, None] - mu[None, :]
    D2 = D**2 / (2 * protocol.nu) if np.isfinite(protocol.nu) else np.zeros_like(D)
    out = np.empty((len(taus), len(mu)))
    for start in range(0, len(taus), chunk):
        t = taus[start : start + chunk, None, None]
        G = np.exp(-D2 * t) * np.cos(D * t)
        out[start : start + chunk] = np.einsum("tkl,lk->tl", G @ A.T, A)
    return out


def populations_slow(protocol: ChargingProtocol) -> PopulationDistribution:
    table = _reachable(protocol)
    P = slow_population_series(protocol, [protocol.tau])[0]
    return PopulationDistribution(table.energies, P[table.masks], table.masks, protocol.params0)


def charge(protocol: ChargingProtocol) -> PopulationDistribution:
    """Populations of the diagonal ensemble left by ``protocol``."""
    if protocol.nu == UNITARY:
        return populations_fast(protocol)
    return populations_slow(protocol)


def stored_energy(dist: PopulationDistribution) -> float:
    return float(max(0.0, dist.probs @ dist.excitations))


def _as_matrix(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, DenseOperator) else np.asarray(rho)


def _check_state(rho: np.ndarray, tol: float = 1e-8):
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real:.12g}, not 1")


def _eigensystem(H) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(H, DenseOperator):
        vals, vecs = H.eigh()
    elif isinstance(H, tuple):
        vals, vecs = H
    else:
        vals, vecs = np.linalg.eigh(np.asarray(H))
    vals = np.array(vals, dtype=float)
    for g in energy_clusters(vals):
        vals[g] = vals[g].mean()
    return vals, vecs


def dephasing_factors(energies: np.ndarray, t: float, nu: float) -> np.ndarray:
    D = energies[:, None] - energies[None, :]
    if nu == INSTANT_DEPHASE:
        return (D == 0).astype(complex)
    decay = 1.0 if np.isinf(nu) else np.exp(-(D**2) * t / (2 * nu))
    return decay * np.exp(-1j * D * t)


def dephase_evolve(rho, H, t: float, nu: float) -> DenseOperator:
    """Closed-form Milburn evolution for a time-independent ``H``.

    ``H`` may be a :class:`DenseOperator`, a Hermitian array, or an
    ``(energies, eigenvectors)`` pair.  Degenerate eigenvalues are merged so
    each eigenspace keeps its internal coherences.
    """
    rho = _as_matrix(rho)
    _check_state(rho)
    vals, vecs = _eigensystem(H)
    r = vecs.conj().T @ rho @ vecs
    r = r * dephasing_factors(vals, t, nu)
    return DenseOperator(vecs @ r @ vecs.conj().T, check=False)


def _milburn_rhs(H, H2, nu):
    if np.isinf(nu):
        return lambda r: -1j * (H @ r - r @ H)
    g = 1 / (2 * nu)

    def rhs(r):
        Hr, rH = H @ r, r @ H
        return -1j * (Hr - rH) - g * (H2 @ r - 2 * H @ rH + r @ H2)

    return rhs


def _rk4(rho, rhs, T, n):
    dt = T / n
    for _ in range(n):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


@dataclass(frozen=True, eq=False)
class MilburnTrajectory:
    times: np.ndarray
    states: list
    steps: list  # accepted step size per segment


def integrate_milburn(rho0, schedule, nu: float, dt: float = 0.01, tol: float = 1e-9, max_halvings: int = 16,
                      sample_times=None) -> MilburnTrajectory:
    """Fourth-order Runge-Kutta integration of the Milburn equation.

    ``schedule`` is a list of ``(H, duration)`` with constant ``H`` on each
    segment.  Every segment is integrated twice, with step ``h`` and ``h/2``;
    the step is halved until the two results agree within ``tol`` per unit
    time (max entry), otherwise :class:`MilburnIntegrationError` is raised.
    States are recorded at segment ends and at ``sample_times``.
    """
    if nu == INSTANT_DEPHASE:
        raise ValueError("the instant-dephasing limit has no differential equation; use dephase_evolve")
    rho = np.array(_as_matrix(rho0), dtype=complex)
    _check_state(rho)
    bounds = np.cumsum([0.0] + [float(T) for _, T in schedule])
    marks = set(bounds[1:].tolist())
    if sample_times is not None:
        marks |= {float(t) for t in sample_times if 0 < t <= bounds[-1]}
    times, states, steps = [0.0], [rho.copy()], []
    t_now = 0.0
    for (H, _), t0, t1 in zip(schedule, bounds[:-1], bounds[1:]):
        H = np.asarray(_as_matrix(H), dtype=complex)
        rhs = _milburn_rhs(H, H @ H, nu)
        h = dt
        for stop in sorted(m for m in marks if t0 < m <= t1):
            T = stop - t_now
            for _ in range(max_halvings):
                n = max(1, math.ceil(T / h - 1e-12))
                coarse = _rk4(rho, rhs, T, n)
                fine = _rk4(rho, rhs, T, 2 * n)
                err = np.max(np.abs(coarse - fine)) if np.all(np.isfinite(coarse)) else np.inf
                if err < tol * max(T, 1.0):
                    break
                h /= 2
            else:
                raise MilburnIntegrationError(
                    f"step-doubling error {err:.3g} above {tol:g} after {max_halvings} halvings (step {h:.3g})"
                )
            rho, t_now = fine, stop
            times.append(stop)
            states.append(rho.copy())
        steps.append(h)
    return MilburnTrajectory(np.array(times), states, steps)


def entropy(p: np.ndarray) -> float:
    """Shannon/von Neumann entropy in nats with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def relative_entropy_coherence(rho: np.ndarray) -> float:
    """Coherence of ``rho`` with respect to the basis it is written in."""
    rho = _as_matrix(rho)
    diag = np.clip(np.real(np.diag(rho)), 0, None)
    lam = np.clip(np.linalg.eigvalsh(rho), 0, None)
    return max(0.0, entropy(diag) - entropy(lam))


@dataclass(frozen=True, eq=False)
class CoherenceTrace:
    times: np.ndarray
    values: np.ndarray
    origin: float = 0.0  # time at which the reference Hamiltonian last changed


def coherence_trace(protocol: ChargingProtocol, times, decay_nu: float | None = None) -> CoherenceTrace:
    """Relative entropy of coherence along charge then free dephasing.

    On ``[0, tau]`` the state evolves under H(h1) with rate ``protocol.nu``;
    afterwards under H(h0) with rate ``decay_nu`` (default ``protocol.nu``).
    Coherence is measured in the eigenbasis of whichever Hamiltonian is
    acting.  Runs in the ``2**((N-1)/2)``-dimensional reachable sector.
    """
    _check_slow_capacity(protocol.N)
    decay_nu = protocol.nu if decay_nu is None else decay_nu
    times = np.asarray(times, dtype=float)
    U = overlap_matrix(protocol)
    mu = post_quench_energies(protocol)
    eps = subset_sums(pair_energies(protocol.params0, ground_pattern(protocol.params0).parity))
    c = U[0].astype(complex)
    rho_mu = np.outer(c, c)
    tau = protocol.tau
    rho_tau = U @ (rho_mu * dephasing_factors(mu, tau, protocol.nu)) @ U.T
    values = np.empty(len(times))
    for i, t in enumerate(times):
        if t < tau:
            r = rho_mu * dephasing_factors(mu, t, protocol.nu)
        else:
            r = rho_tau * dephasing_factors(eps, t - tau, decay_nu)
        values[i] = relative_entropy_coherence(r)
    return CoherenceTrace(times, values, origin=tau)


def _first_crossing(times, values, level) -> float:
    below = np.nonzero(values <= level)[0]
    if len(below) == 0:
        return math.nan
    i = below[0]
    if i == 0:
        return float(times[0])
    # linear interpolation inside the bracketing interval
    t0, t1, v0, v1 = times[i - 1], times[i], values[i - 1], values[i]
    return float(t0 + (level - v0) * (t1 - t0) / (v1 - v0)) if v1 != v0 else float(t1)


def extract_timescales(trace: CoherenceTrace, f1: float = math.exp(-1), f2: float = math.exp(-1),
                       plateau: str = "log-slope", prominence: float = 0.05) -> tuple[float, float]:
    """Fast and slow decoherence times from a coherence trace.

    Times are measured from ``trace.origin``.  With ``plateau="log-slope"``
    the decay rate ``g = -dC/d ln t`` is computed; its first peak is the fast
    decay, its next peak the slow one, and the plateau value is C where g is
    smallest between them.  Then ``tau1`` is when ``C - C_pl`` drops to ``f1``
    of ``C0 - C_pl`` and ``tau2`` when ``C`` drops to ``f2 * C_pl``.

    ``plateau="median"`` takes ``tau1`` as the drop to ``f1 * C0`` and the
    plateau as the median of C on ``[5 tau1, 20 tau1]``.

    Without a second decay :class:`NoPlateauError` is raised carrying
    ``tau1`` from the single-decay rule ``C <= f1 * C0``.
    """
    sel = trace.times >= trace.origin
    t = trace.times[sel] - trace.origin
    C = trace.values[sel]
    if len(t) < 4:
        raise ValueError("coherence trace too short")
    C0 = C[0]
    single_tau1 = _first_crossing(t, C, f1 * C0)
    if plateau == "median":
        tau1 = single_tau1
        window = (t >= 5 * tau1) & (t <= 20 * tau1)
        if not np.isfinite(tau1) or not window.any():
            raise NoPlateauError("no samples between 5 tau1 and 20 tau1", tau1)
        C_pl = float(np.median(C[window]))
        tau2 = _first_crossing(t, C, f2 * C_pl)
    elif plateau == "log-slope":
        pos = t > 0
        lt, Cp = np.log(t[pos]), C[pos]
        g = -np.gradient(Cp, lt)
        peaks, _ = find_peaks(g, prominence=prominence * max(C0, 1e-300))
        if len(peaks) < 2:
            raise NoPlateauError("coherence decays in a single step; no plateau", single_tau1)
        i_pl = peaks[0] + int(np.argmin(g[peaks[0] : peaks[1] + 1]))
        C_pl = float(Cp[i_pl])
        tau1 = _first_crossing(t, C - C_pl, f1 * (C0 - C_pl))
        tau2 = _first_crossing(t, C, f2 * C_pl)
    else:
        raise ValueError(f"unknown plateau rule {plateau!r}")
    if not np.isfinite(tau2):
        raise NoPlateauError("coherence never falls below the plateau fraction within the trace", tau1)
    return tau1, tau2
