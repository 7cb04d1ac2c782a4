"""Extractable work from the fully dephased battery and its dependence on charging time.

The dephased state is diagonal in the H(h0) eigenbasis with populations
``P_l`` on the reachable levels.  Its passive counterpart fills the lowest
levels of the whole spectrum with the populations sorted in decreasing order,
since work extraction may use any unitary on the ring.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .quench import (
    INSTANT_DEPHASE,
    UNITARY,
    ChargingProtocol,
    PopulationDistribution,
    charge,
    pair_probabilities,
    pattern_products,
    slow_population_series,
)
from .spectrum import ModelParams, level_table, lowest_levels, pair_energies, ground_pattern

#: Largest reachable-sector size handled by full enumeration at every charging time.
EXACT_LEVEL_LIMIT = 4096

#: Population mass that may be left out of the sorted head in the pruned engine.
PRUNE_RESIDUAL = 1e-12
PRUNE_MAX_KEPT = 1 << 20

DEFAULT_TAU_STEP = 0.01
DEFAULT_TAU_MAX = 50.0


@dataclass(frozen=True)
class ErgotropyReport:
    e_in: float
    w: float
    e_loss: float
    eta: float


def passive_populations(dist: PopulationDistribution) -> PopulationDistribution:
    """Same levels with probabilities sorted descending (ties keep their original order)."""
    order = np.argsort(-dist.probs, kind="stable")
    return PopulationDistribution(dist.energies, dist.probs[order], dist.masks, dist.params, check=False)


def passive_ladder(dist: PopulationDistribution, spectrum="auto") -> np.ndarray:
    """Energies, relative to the ground level, that the passive state fills.

    ``"reachable"`` uses the distribution's own levels; ``"full"`` the lowest
    levels of the complete H(h0) spectrum; an explicit array is taken as is.
    ``"auto"`` means full whenever the distribution knows its model.
    """
    if isinstance(spectrum, str):
        if spectrum == "auto":
            spectrum = "full" if dist.params is not None else "reachable"
        if spectrum == "reachable":
            return dist.excitations
        if spectrum == "full":
            return lowest_levels(dist.params, len(dist)) - dist.energies[0]
        raise ValueError(f"unknown passive spectrum {spectrum!r}")
    lad = np.asarray(spectrum, dtype=float)
    if len(lad) < len(dist):
        raise ValueError("passive ladder shorter than the distribution")
    return lad[: len(dist)]


def _report(e_in: float, passive_energy: float) -> ErgotropyReport:
    e_in = max(0.0, e_in)
    e_loss = min(max(0.0, passive_energy), e_in)
    w = e_in - e_loss
    eta = w / e_in if e_in > 0 else 0.0
    return ErgotropyReport(e_in, w, e_loss, eta)


def ergotropy_report(dist: PopulationDistribution, spectrum="auto") -> ErgotropyReport:
    lad = passive_ladder(dist, spectrum)
    e_in = float(dist.probs @ dist.excitations)
    e_loss = float(-np.sort(-dist.probs) @ lad)
    return _report(e_in, e_loss)


def first_local_max(taus, values) -> tuple[float, float] | None:
    """First interior grid maximum, refined by a parabola through its neighbours.

    Returns ``None`` when the samples have no interior local maximum.
    """
    taus = np.asarray(taus, dtype=float)
    v = np.asarray(values, dtype=float)
    idx = np.nonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:]))[0]
    if len(idx) == 0:
        return None
    i = idx[0] + 1
    y0, y1, y2 = v[i - 1], v[i], v[i + 1]
    denom = y0 - 2 * y1 + y2
    if denom >= 0:
        return float(taus[i]), float(y1)
    shift = 0.5 * (y0 - y2) / denom
    step = taus[i + 1] - taus[i]
    return float(taus[i] + shift * step), float(y1 - 0.25 * (y0 - y2) * shift)


def tau_grid(step: float = DEFAULT_TAU_STEP, tau_max: float = DEFAULT_TAU_MAX) -> np.ndarray:
    """Uniform grid on ``(0, tau_max]``."""
    n = int(round(tau_max / step))
    return step * np.arange(1, n + 1)


@dataclass(frozen=True, eq=False)
class ChargingSeries:
    """Stored energy, ergotropy and robustness of the dephased battery per charging time."""

    taus: np.ndarray
    e_in: np.ndarray
    w: np.ndarray
    residual: np.ndarray  # population mass left out by pruning (0 when exact)

    @property
    def eta(self) -> np.ndarray:
        safe = np.where(self.e_in > 0, self.e_in, 1.0)
        return np.where(self.e_in > 0, self.w / safe, 0.0)

    @property
    def e_loss(self) -> np.ndarray:
        return self.e_in - self.w

    def report(self, i: int) -> ErgotropyReport:
        return _report(float(self.e_in[i]), float(self.e_in[i] - self.w[i]))


def _sorted_passive_energy(P: np.ndarray, lad: np.ndarray) -> np.ndarray:
    return -np.sort(-P, axis=-1) @ lad


def _pruned_passive_energy(p: np.ndarray, params: ModelParams, e0: float) -> tuple[float, float]:
    """Passive energy of the product distribution over pair patterns, keeping only its head.

    Patterns are split into two halves whose sorted products are combined
    above a probability threshold chosen so the dropped mass is below
    :data:`PRUNE_RESIDUAL`.  The dropped mass is placed at the first unused
    level, its lowest possible position.
    """
    K = len(p)
    A = np.sort(pattern_products(p[: K // 2]))[::-1]
    B = np.sort(pattern_products(p[K // 2 :]))[::-1]
    cumB = np.concatenate([[0.0], np.cumsum(B)])
    negB = -B
    A = A[A > 0]

    def head(x):
        counts = np.searchsorted(negB, -x / A, side="right")
        return counts, float(A @ cumB[counts])

    def bisect(lo, hi, good):
        # largest log-threshold in [lo, hi] with good(); good(lo) holds
        for _ in range(100):
            if hi - lo < 1e-9:
                break
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if good(mid) else (lo, mid)
        return lo

    lo, hi = math.log(max(A[-1] * B[-1], 1e-300)) - 1.0, math.log(A[0] * B[0])
    x = hi if 1 - head(math.exp(hi))[1] <= PRUNE_RESIDUAL else bisect(lo, hi, lambda t: 1 - head(math.exp(t))[1] <= PRUNE_RESIDUAL)
    counts, mass = head(math.exp(x))
    if counts.sum() > PRUNE_MAX_KEPT:
        # too many patterns for the requested accuracy: keep the largest head that fits
        x = -bisect(-hi, -x, lambda t: head(math.exp(-t))[0].sum() <= PRUNE_MAX_KEPT)
        counts, mass = head(math.exp(x))
    kept = np.concatenate([a * B[:n] for a, n in zip(A, counts) if n])
    kept = -np.sort(-kept)
    lad = lowest_levels(params, len(kept) + 1) - e0
    residual = max(0.0, 1.0 - kept.sum())
    return float(kept @ lad[: len(kept)] + residual * lad[len(kept)]), residual


def charging_series(protocol: ChargingProtocol, taus=None, spectrum: str = "full", chunk_elems: int = 4_000_000) -> ChargingSeries:
    """E_in, W and eta of the dephased battery for every charging time in ``taus``.

    Unitary charging uses the factorized pair probabilities (pruned above
    :data:`EXACT_LEVEL_LIMIT` reachable levels); finite ``nu`` and the
    instant-dephasing limit use the dephased-charge populations.
    """
    taus = tau_grid() if taus is None else np.atleast_1d(np.asarray(taus, dtype=float))
    params0 = protocol.params0
    table = level_table(params0)
    e0 = table.energies[0]
    M = len(table)
    if spectrum == "full":
        lad = lowest_levels(params0, min(M, EXACT_LEVEL_LIMIT)) - e0
    elif spectrum == "reachable":
        lad = table.energies - e0
    else:
        raise ValueError(f"unknown passive spectrum {spectrum!r}")
    e_in = np.empty(len(taus))
    passive = np.empty(len(taus))
    residual = np.zeros(len(taus))
    if protocol.nu == UNITARY:
        pe = pair_energies(params0, ground_pattern(params0).parity)
        p = pair_probabilities(protocol, taus)
        e_in[:] = p @ pe
        if M <= EXACT_LEVEL_LIMIT:
            step = max(1, chunk_elems // M)
            for s in range(0, len(taus), step):
                passive[s : s + step] = _sorted_passive_energy(pattern_products(p[s : s + step]), lad)
        else:
            if spectrum != "full":
                raise ValueError("pruned engine only supports the full passive spectrum")
            for i in range(len(taus)):
                passive[i], residual[i] = _pruned_passive_energy(p[i], params0, e0)
    else:
        exc = (table.energies - e0)
        inv = np.empty(M, dtype=int)
        inv[table.masks] = np.arange(M)
        step = max(1, chunk_elems // (M * M)) if protocol.nu != INSTANT_DEPHASE else len(taus)
        for s in range(0, len(taus), step):
            P = slow_population_series(protocol, taus[s : s + step])
            e_in[s : s + step] = P[:, table.masks] @ exc
            passive[s : s + step] = _sorted_passive_energy(P, lad)
    e_in = np.maximum(e_in, 0.0)
    w = e_in - np.clip(passive, 0.0, e_in)
    return ChargingSeries(taus, e_in, w, residual)


@dataclass(frozen=True)
class EtaRow:
    value: float
    J: int
    tau: float
    e_in: float
    w: float
    eta: float


SCAN_AXES = ("h0", "dh", "N", "nu")


def _protocol_at(template: ChargingProtocol, axis: str, value, J: int) -> ChargingProtocol:
    h0, dh, N, nu = template.h0, template.dh, template.N, template.nu
    if axis == "h0":
        h0 = float(value)
    elif axis == "dh":
        dh = float(value)
    elif axis == "N":
        N = int(value)
    elif axis == "nu":
        nu = float(value)
    else:
        raise ValueError(f"scan axis must be one of {SCAN_AXES}, got {axis!r}")
    return ChargingProtocol(J, N, h0, h0 + dh, template.tau, nu)


def max_eta_point(protocol: ChargingProtocol, taus=None, value=None) -> EtaRow:
    """Charging time on the grid with the largest eta (first one on ties)."""
    s = charging_series(protocol, taus)
    i = int(np.argmax(s.eta))
    return EtaRow(value, protocol.J, float(s.taus[i]), float(s.e_in[i]), float(s.w[i]), float(s.eta[i]))


def first_peak_point(protocol: ChargingProtocol, taus=None, value=None) -> EtaRow | None:
    """Charging time at the first local maximum of E_in, with W and eta there."""
    s = charging_series(protocol, taus)
    peak = first_local_max(s.taus, s.e_in)
    if peak is None:
        return None
    i = int(np.argmin(np.abs(s.taus - peak[0])))
    return EtaRow(value, protocol.J, peak[0], float(s.e_in[i]), float(s.w[i]), float(s.eta[i]))


def scan_eta(axis: str, values: Iterable, template: ChargingProtocol, taus=None, couplings=(1, -1),
             target: str = "eta") -> list[EtaRow]:
    """One row per scan value and coupling sign.

    ``target="eta"`` maximizes eta over the charging times; ``"first-peak"``
    reads W at the first maximum of E_in.
    """
    fn = {"eta": max_eta_point, "first-peak": first_peak_point}[target]
    rows = []
    for v in values:
        for J in couplings:
            row = fn(_protocol_at(template, axis, v, J), taus, v)
            if row is not None:
                rows.append(row)
    return rows


def report_for(protocol: ChargingProtocol) -> ErgotropyReport:
    return ergotropy_report(charge(protocol))
