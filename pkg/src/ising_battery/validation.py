"""Self-test: free-fermion results against exact diagonalization on small rings."""
from __future__ import annotations

import numpy as np

from .ed_oracle import DenseOperator, build_ising, ed_populations, integrate_milburn_reference, random_density_matrix, reachable_sector
from .quench import ChargingProtocol, dephase_evolve, integrate_milburn, populations_fast, populations_slow
from .spectrum import ModelParams, level_table, lowest_levels


def run_checks(n_max: int = 5, seed: int = 0) -> list[tuple[str, float, float, bool]]:
    """Rows ``(check, max_error, tolerance, passed)`` for rings up to ``n_max`` spins."""
    rng = np.random.default_rng(seed)
    sizes = [n for n in range(3, n_max + 1, 2)]
    rows = []

    def add(name, err, tol):
        rows.append((name, float(err), tol, bool(err < tol)))

    err = 0.0
    for N in sizes:
        for J in (1, -1):
            for h in (0.0, 0.1, 0.5, 0.9):
                p = ModelParams(J, h, N)
                err = max(err, np.max(np.abs(reachable_sector(p).energies - level_table(p).energies)))
    add("reachable spectrum", err, 1e-10)

    err = 0.0
    for N in sizes:
        for J in (1, -1):
            p = ModelParams(J, 0.37, N)
            err = max(err, np.max(np.abs(np.linalg.eigvalsh(build_ising(p).matrix) - lowest_levels(p, 2**N))))
    add("full spectrum", err, 1e-10)

    err = 0.0
    for N in sizes:
        for J in (1, -1):
            for _ in range(5):
                h0, h1, tau = rng.uniform(0, 0.9), rng.uniform(0.05, 3), rng.uniform(0, 10)
                d = populations_fast(ChargingProtocol(J, N, h0, h1, tau))
                _, probs, leak = ed_populations(d.params, h1, tau)
                err = max(err, np.max(np.abs(probs - d.probs)), leak)
    add("quench populations", err, 1e-8)

    err = 0.0
    for N in sizes:
        pr = ChargingProtocol(1, N, 0.001, 0.5, 2.0, nu=1.0)
        sector = reachable_sector(pr.params0)
        H1 = DenseOperator(sector.vectors.T @ build_ising(pr.params1).matrix @ sector.vectors)
        rho = np.zeros((len(sector.energies),) * 2, dtype=complex)
        rho[0, 0] = 1
        ref = integrate_milburn_reference(rho, H1, pr.nu, pr.tau)
        err = max(err, np.max(np.abs(np.real(np.diag(ref)) - populations_slow(pr).probs)))
    add("dephased-charge populations", err, 1e-8)

    N = min(n_max, 5)
    H = build_ising(ModelParams(1, 0.4, N))
    rho = random_density_matrix(2**N, rng)
    closed = dephase_evolve(rho, H, 0.3, 1.0).matrix
    numeric = integrate_milburn(rho, [(H.matrix, 0.3)], 1.0, dt=0.005).states[-1]
    add("Milburn integrator", np.max(np.abs(closed - numeric)), 1e-6)
    return rows
