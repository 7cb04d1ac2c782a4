"""Discharging the dephased battery into a single ancilla spin.

The joint Hamiltonian on N + 1 spins (ancilla last) is

    H_W = J sum sx_k sx_{k+1} - h0 sum sz_k + lam (s+_1 s-_S + s-_1 s+_S) + omega sz_S

and the ancilla starts spin down.  The battery enters as the diagonal
ensemble left by a unitary charge, so the joint state is a mixture of pure
product states and each one is propagated exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ed_oracle import ID2, SX, SY, SZ, DenseOperator, ising_terms, reachable_sector
from .ergotropy import charging_series, first_local_max, tau_grid
from .quench import ChargingProtocol, populations_fast
from .spectrum import CapacityError, ModelParams

MAX_DISCHARGE_N = 11

#: Raising operator as written in the model, sx + i sy (no factor 1/2).
SIGMA_PLUS = {"printed": SX + 1j * SY, "standard": 0.5 * (SX + 1j * SY)}

FIG8_CAPTION = {"h0": 0.02, "h1": (1.72, 2.72, 3.72), "omega": 2.0, "lam": 0.02, "N": (5, 7, 9)}
FIG8_TEXT = {"h0": 0.018, "h1": (1.5,), "omega": 2.0, "lam": 0.02, "N": (5, 7, 9)}


@dataclass(frozen=True)
class DischargeSetup:
    N: int
    J: int
    h0: float
    h1: float
    tau: float | None = None  # None: first local maximum of eta
    omega: float = 2.0
    lam: float = 0.02
    t_max: float = 500.0
    dt: float = 0.5
    convention: str = "printed"

    def __post_init__(self):
        ModelParams(self.J, self.h0, self.N)
        if self.N > MAX_DISCHARGE_N:
            raise CapacityError(f"discharge runs dense on N + 1 spins; limited to N <= {MAX_DISCHARGE_N}")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if not self.t_max > 0 or not self.dt > 0:
            raise ValueError("t_max and dt must be positive")
        if self.convention not in SIGMA_PLUS:
            raise ValueError(f"convention must be one of {sorted(SIGMA_PLUS)}")

    @property
    def battery(self) -> ModelParams:
        return ModelParams(self.J, self.h0, self.N)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(int(round(self.t_max / self.dt)) + 1)


def _lift(op: np.ndarray, site: int, n: int) -> np.ndarray:
    # identity blocks on both sides of one site; cheaper than a full kron chain
    return np.kron(np.kron(np.eye(2**site), op), np.eye(2 ** (n - site - 1)))


def interaction_operator(N: int, convention: str = "printed") -> np.ndarray:
    sp = SIGMA_PLUS[convention]
    n = N + 1
    a, s = _lift(sp, 0, n), _lift(sp, N, n)
    return a @ s.conj().T + a.conj().T @ s


def build_composite(setup: DischargeSetup) -> DenseOperator:
    hxx, hz = ising_terms(setup.N)
    HB = np.kron(setup.J * hxx - setup.h0 * hz, ID2)
    HS = setup.omega * _lift(SZ, setup.N, setup.N + 1)
    return DenseOperator(HB + HS + setup.lam * interaction_operator(setup.N, setup.convention), check=False)


@dataclass(frozen=True, eq=False)
class BatteryState:
    """Diagonal ensemble of the charged battery: weights on H(h0) eigenvectors."""

    tau: float
    probs: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray  # columns in the 2**N spin basis

    @property
    def e_in(self) -> float:
        return float(self.probs @ (self.energies - self.energies[0]))

    def density(self) -> DenseOperator:
        v = self.vectors * np.sqrt(self.probs)
        return DenseOperator(v @ v.conj().T, check=False)


def charge_time(setup: DischargeSetup) -> float:
    """First local maximum of eta for the unitary charge h0 -> h1."""
    if setup.tau is not None:
        return float(setup.tau)
    s = charging_series(ChargingProtocol(setup.J, setup.N, setup.h0, setup.h1, 0.0), tau_grid())
    peak = first_local_max(s.taus, s.eta)
    if peak is None:
        raise ValueError("eta has no local maximum on the charging-time grid")
    return peak[0]


def prepare_battery_state(setup: DischargeSetup) -> BatteryState:
    tau = charge_time(setup)
    dist = populations_fast(ChargingProtocol(setup.J, setup.N, setup.h0, setup.h1, tau))
    sector = reachable_sector(setup.battery)
    if np.max(np.abs(sector.energies - dist.energies)) > 1e-9:
        raise RuntimeError("exact reachable levels do not match the free-fermion levels")
    return BatteryState(tau, dist.probs, sector.energies, sector.vectors)


def partial_trace_ancilla(rho) -> np.ndarray:
    """Reduced 2x2 state of the last spin."""
    rho = rho.matrix if isinstance(rho, DenseOperator) else np.asarray(rho)
    d = rho.shape[0]
    if rho.shape != (d, d) or d < 2 or d & (d - 1):
        raise ValueError(f"expected a 2**n square matrix, got shape {rho.shape}")
    r = rho.reshape(d // 2, 2, d // 2, 2)
    return np.einsum("isit->st", r)


def ancilla_ergotropy(rho_s: np.ndarray, omega: float) -> np.ndarray:
    """Ergotropy of (stacks of) 2x2 ancilla states for the local Hamiltonian ``omega sz``."""
    rho_s = np.asarray(rho_s)
    energy = omega * np.real(rho_s[..., 0, 0] - rho_s[..., 1, 1])
    r = np.linalg.eigvalsh(rho_s)
    passive = omega * (r[..., 0] - r[..., 1])
    return np.maximum(energy - passive, 0.0)


@dataclass(frozen=True, eq=False)
class DischargeTrace:
    times: np.ndarray
    e_s: np.ndarray  # ancilla energy above its ground state
    w_s: np.ndarray
    kappa: np.ndarray
    e_int: np.ndarray
    e_total: np.ndarray
    battery: BatteryState = field(repr=False)

    @property
    def kappa_max(self) -> float:
        return float(self.kappa.max())

    @property
    def t_kappa_max(self) -> float:
        return float(self.times[np.argmax(self.kappa)])


def evolve_and_measure(setup: DischargeSetup, battery: BatteryState | None = None, cutoff: float = 1e-14) -> DischargeTrace:
    battery = prepare_battery_state(setup) if battery is None else battery
    HW = build_composite(setup)
    E, V = HW.eigh()
    Hint = setup.lam * interaction_operator(setup.N, setup.convention)
    ts = setup.times
    phases = np.exp(-1j * np.outer(E, ts))
    down = np.array([0.0, 1.0])
    rho_s = np.zeros((len(ts), 2, 2), dtype=complex)
    e_int = np.zeros(len(ts))
    e_tot = np.zeros(len(ts))
    for p, vec in zip(battery.probs, battery.vectors.T):
        if p < cutoff:
            continue
        c = V.conj().T @ np.kron(vec, down)
        psi = V @ (phases * c[:, None])
        e_int += p * np.real(np.einsum("it,it->t", psi.conj(), Hint @ psi))
        e_tot += p * np.real(np.einsum("it,it->t", psi.conj(), HW.matrix @ psi))
        psi = psi.reshape(2**setup.N, 2, len(ts))
        rho_s += p * np.einsum("bst,but->tsu", psi, psi.conj())
    lam_min = np.linalg.eigvalsh(rho_s).min()
    if lam_min < -1e-9:
        raise FloatingPointError(f"ancilla state lost positivity (eigenvalue {lam_min:.3g})")
    e_s = setup.omega * (1 + np.real(rho_s[:, 0, 0] - rho_s[:, 1, 1]))
    w_s = ancilla_ergotropy(rho_s, setup.omega)
    return DischargeTrace(ts, e_s, w_s, w_s / (2 * setup.omega), e_int, e_tot, battery)


def kappa_window_check(setup: DischargeSetup) -> tuple[float, float]:
    """Maximum kappa over the configured window and over twice that window."""
    battery = prepare_battery_state(setup)
    short = evolve_and_measure(setup, battery).kappa_max
    long_setup = DischargeSetup(**{**setup.__dict__, "t_max": 2 * setup.t_max})
    return short, evolve_and_measure(long_setup, battery).kappa_max
