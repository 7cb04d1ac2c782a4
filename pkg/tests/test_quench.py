import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ising_battery.ed_oracle import (
    DenseOperator,
    build_ising,
    integrate_milburn_reference,
    propagate,
    random_density_matrix,
    reachable_sector,
)
from ising_battery.quench import (
    INSTANT_DEPHASE,
    UNITARY,
    ChargingProtocol,
    CoherenceTrace,
    MilburnIntegrationError,
    NoPlateauError,
    PopulationDistribution,
    charge,
    coherence_trace,
    dephase_evolve,
    extract_timescales,
    integrate_milburn,
    mode_overlap_block,
    overlap_matrix,
    pair_probabilities,
    pattern_products,
    populations_fast,
    populations_slow,
    relative_entropy_coherence,
    slow_population_series,
    state_overlap,
    overlap_blocks,
    stored_energy,
)
from ising_battery.spectrum import (
    EVEN,
    CapacityError,
    ModelParams,
    OccupationPattern,
    bogoliubov_angle,
    dispersion,
    level_table,
    pair_momenta,
)


def test_protocol_validation():
    with pytest.raises(ValueError):
        ChargingProtocol(1, 5, 0.1, 0.5, -1.0)
    with pytest.raises(ValueError):
        ChargingProtocol(1, 5, 0.1, 0.5, 1.0, nu=-2)
    with pytest.raises(ValueError):
        ChargingProtocol(1, 4, 0.1, 0.5, 1.0)
    p = ChargingProtocol(-1, 7, 0.2, 0.9, 1.0)
    assert p.dh == pytest.approx(0.7)
    assert p.at(3.0).tau == 3.0 and p.at(3.0).h1 == 0.9


def test_distribution_validation():
    with pytest.raises(ValueError):
        PopulationDistribution([0, 1], [0.5, 0.6])
    with pytest.raises(ValueError):
        PopulationDistribution([1, 0], [0.5, 0.5])
    with pytest.raises(ValueError):
        PopulationDistribution([0, 1], [1.5, -0.5])


def test_overlap_block_without_quench_is_identity():
    b = mode_overlap_block(2 * np.pi / 5, 0.3, 0.3, 1)
    assert np.allclose(b.block, np.eye(2))
    assert b.delta == 0


def test_overlap_block_rejects_special_modes():
    with pytest.raises(ValueError):
        mode_overlap_block(np.pi, 0.3, 0.6, 1)
    with pytest.raises(ValueError):
        mode_overlap_block(0.0, 0.3, 0.6, -1)


@settings(max_examples=100, deadline=None)
@given(q=st.floats(0.05, np.pi - 0.05), h0=st.floats(0, 0.95), h1=st.floats(0, 4), J=st.sampled_from([1, -1]))
def test_overlap_block_orthogonal_with_angle_difference(q, h0, h1, J):
    b = mode_overlap_block(q, h0, h1, J)
    assert np.allclose(b.block @ b.block.T, np.eye(2))
    d = bogoliubov_angle(q, ModelParams(J, h1, 3)) - bogoliubov_angle(q, ModelParams(J, h0, 3))
    assert abs(b.block[0, 0]) == pytest.approx(abs(math.cos(d)), abs=1e-12)


def test_state_overlap_examples():
    pr = ChargingProtocol(1, 7, 0.1, 0.6, 0.0)
    blocks = overlap_blocks(pr)
    c = np.array([b.block[0, 0] for b in blocks])
    s = np.array([b.block[1, 0] for b in blocks])
    vac = OccupationPattern(EVEN)
    assert state_overlap(vac, vac, blocks) == pytest.approx(np.prod(c))
    one = OccupationPattern(EVEN, 0b001)
    assert state_overlap(vac, one, blocks) == pytest.approx(s[0] * c[1] * c[2])
    U = overlap_matrix(pr)
    assert U[0, 0b001] == pytest.approx(state_overlap(vac, one, blocks))
    assert U[0b101, 0b011] == pytest.approx(state_overlap(OccupationPattern(EVEN, 0b101), OccupationPattern(EVEN, 0b011), blocks))


@pytest.mark.parametrize("N", [3, 5, 7, 9])
@pytest.mark.parametrize("J", [1, -1])
def test_overlap_matrix_matches_ed(N, J):
    pr = ChargingProtocol(J, N, 0.25, 0.85, 0.0)
    U = overlap_matrix(pr)
    assert np.allclose(U @ U.T, np.eye(len(U)))
    pre = reachable_sector(pr.params0)
    post = reachable_sector(pr.params1)
    i0 = level_table(pr.params0).masks
    i1 = level_table(pr.params1).masks
    Ued = np.zeros_like(U)
    Ued[np.ix_(i0, i1)] = pre.vectors.T @ post.vectors
    # eigenvector signs are arbitrary on the ED side: compare magnitudes and a gauge-invariant loop
    assert np.allclose(np.abs(U), np.abs(Ued), atol=1e-9)
    loop = U * U[0][None, :] * U[:, 0][:, None] * U[0, 0]
    loop_ed = Ued * Ued[0][None, :] * Ued[:, 0][:, None] * Ued[0, 0]
    assert np.allclose(loop, loop_ed, atol=1e-9)


def test_pattern_products_order_and_normalization():
    p = np.array([0.2, 0.7])
    np.testing.assert_allclose(pattern_products(p), [0.8 * 0.3, 0.2 * 0.3, 0.8 * 0.7, 0.2 * 0.7])
    batch = pattern_products(np.random.default_rng(0).uniform(size=(4, 6)))
    np.testing.assert_allclose(batch.sum(axis=1), 1)


def test_pair_probabilities_closed_form():
    pr = ChargingProtocol(1, 9, 0.1, 0.8, 0.0)
    taus = np.linspace(0, 5, 11)
    p = pair_probabilities(pr, taus)
    d = np.array([b.delta for b in overlap_blocks(pr)])
    lam1 = dispersion(pair_momenta(9, EVEN), pr.params1)
    expected = np.sin(2 * d) ** 2 * np.sin(2 * lam1 * taus[:, None]) ** 2
    np.testing.assert_allclose(p, expected, atol=1e-14)


def test_zero_time_leaves_ground_state():
    d = populations_fast(ChargingProtocol(1, 11, 0.2, 2.0, 0.0))
    assert d.probs[0] == pytest.approx(1.0)
    assert stored_energy(d) == pytest.approx(0.0, abs=1e-14)


def test_no_quench_stores_nothing():
    for nu in (UNITARY, 1.0, INSTANT_DEPHASE):
        d = charge(ChargingProtocol(-1, 7, 0.4, 0.4, 3.0, nu))
        assert d.probs[0] == pytest.approx(1.0)


@pytest.mark.parametrize("J", [1, -1])
def test_stored_energy_two_routes(J):
    # E_in from populations equals <psi(tau)|H0|psi(tau)> - E0 from dense evolution
    pr = ChargingProtocol(J, 7, 0.15, 1.1, 2.3)
    d = populations_fast(pr)
    s = reachable_sector(pr.params0)
    H0 = build_ising(pr.params0)
    psi = propagate(s.ground.astype(complex), build_ising(pr.params1), pr.tau)
    direct = np.real(psi.conj() @ H0.matrix @ psi) - s.energies[0]
    assert stored_energy(d) == pytest.approx(direct, abs=1e-10)


def test_slow_series_unitary_limit_is_exact():
    pr = ChargingProtocol(1, 9, 0.1, 0.7, 0.0, nu=UNITARY)
    taus = np.array([0.0, 0.4, 2.5])
    P = slow_population_series(pr, taus)
    np.testing.assert_allclose(P, pattern_products(pair_probabilities(pr, taus)), atol=1e-12)


def test_slow_series_large_nu_approaches_unitary():
    pr = ChargingProtocol(-1, 7, 0.1, 0.7, 0.5, nu=1e6)
    fast = populations_fast(pr.at(0.5)).probs
    slow = populations_slow(pr).probs
    # the deviation is first order in tau * (energy spread)^2 / nu
    assert np.max(np.abs(slow - fast)) < 1e-6


def test_instant_dephasing_formula():
    pr = ChargingProtocol(1, 7, 0.1, 0.9, 0.0, nu=INSTANT_DEPHASE)
    U = overlap_matrix(pr)
    P = slow_population_series(pr, [0.0, 5.0])
    np.testing.assert_allclose(P[0], (U**2) @ (U[0] ** 2))
    np.testing.assert_allclose(P[0], P[1])
    assert P[0].sum() == pytest.approx(1.0)


def test_instant_limit_is_long_time_limit():
    pr = ChargingProtocol(-1, 7, 0.1, 0.9, 0.0, nu=0.5)
    late = slow_population_series(pr, [1e4])[0]
    inst = slow_population_series(ChargingProtocol(-1, 7, 0.1, 0.9, 0.0, INSTANT_DEPHASE), [0.0])[0]
    np.testing.assert_allclose(late, inst, atol=1e-10)


def test_slow_populations_vs_projector_reference():
    pr = ChargingProtocol(1, 7, 0.05, 0.8, 1.7, nu=0.7)
    s = reachable_sector(pr.params0)
    H1 = DenseOperator(s.vectors.T @ build_ising(pr.params1).matrix @ s.vectors)
    rho = np.zeros((len(s.energies),) * 2, dtype=complex)
    rho[0, 0] = 1
    ref = np.real(np.diag(integrate_milburn_reference(rho, H1, pr.nu, pr.tau)))
    np.testing.assert_allclose(populations_slow(pr).probs, ref, atol=1e-10)


def test_slow_populations_vs_gaussian_time_average():
    # Milburn evolution of a pure state is unitary evolution averaged over a Gaussian
    # spread of times with variance tau / nu
    pr = ChargingProtocol(-1, 5, 0.1, 1.2, 1.5, nu=2.0)
    sigma = math.sqrt(pr.tau / pr.nu)
    s = np.linspace(pr.tau - 10 * sigma, pr.tau + 10 * sigma, 4001)
    w = np.exp(-((s - pr.tau) ** 2) / (2 * sigma**2))
    w /= np.trapezoid(w, s)
    sec = reachable_sector(pr.params0)
    H1 = build_ising(pr.params1)
    vals, vecs = H1.eigh()
    c = vecs.conj().T @ sec.ground
    rho = np.zeros((len(c), len(c)), dtype=complex)
    for si, wi in zip(s, w):
        psi = c * np.exp(-1j * vals * si)
        rho += wi * np.outer(psi, psi.conj())
    dx = s[1] - s[0]
    rho *= dx
    rho -= 0.5 * dx * (w[0] * np.outer(c * np.exp(-1j * vals * s[0]), (c * np.exp(-1j * vals * s[0])).conj())
                       + w[-1] * np.outer(c * np.exp(-1j * vals * s[-1]), (c * np.exp(-1j * vals * s[-1])).conj()))
    full = vecs @ rho @ vecs.conj().T
    P = np.real(np.einsum("il,ij,jl->l", sec.vectors.conj(), full, sec.vectors))
    np.testing.assert_allclose(populations_slow(pr).probs, P, atol=1e-8)


def test_slow_capacity():
    with pytest.raises(CapacityError):
        slow_population_series(ChargingProtocol(1, 17, 0.1, 0.5, 1.0, nu=1.0), [1.0])


def test_dephase_evolve_properties(rng):
    H = build_ising(ModelParams(1, 0.4, 5))
    rho = random_density_matrix(32, rng)
    out = dephase_evolve(rho, H, 1.3, 0.8).matrix
    assert np.trace(out).real == pytest.approx(1.0)
    assert np.allclose(out, out.conj().T)
    assert np.linalg.eigvalsh(out).min() > -1e-12
    a = dephase_evolve(dephase_evolve(rho, H, 0.4, 0.8), H, 0.9, 0.8).matrix
    assert np.allclose(a, out, atol=1e-12)
    # energy is conserved under pure dephasing
    assert H.expectation(out) == pytest.approx(H.expectation(rho))


def test_dephase_evolve_limits(rng):
    H = build_ising(ModelParams(-1, 0.4, 3))
    rho = random_density_matrix(8, rng)
    assert np.allclose(dephase_evolve(rho, H, 2.0, UNITARY).matrix, propagate(rho, H, 2.0))
    inst = dephase_evolve(rho, H, 0.0, INSTANT_DEPHASE).matrix
    assert np.allclose(inst, sum(P @ rho @ P for _, P in H.projectors()))


def test_dephase_evolve_rejects_non_states():
    H = build_ising(ModelParams(1, 0.4, 3))
    with pytest.raises(ValueError):
        dephase_evolve(2 * np.eye(8) / 8, H, 1.0, 1.0)


def test_integrate_milburn_piecewise_schedule(rng):
    H0 = build_ising(ModelParams(1, 0.1, 3))
    H1 = build_ising(ModelParams(1, 0.9, 3))
    rho = random_density_matrix(8, rng)
    tr = integrate_milburn(rho, [(H1.matrix, 0.7), (H0.matrix, 1.1)], 1.5, sample_times=[0.3])
    expected = dephase_evolve(dephase_evolve(rho, H1, 0.7, 1.5), H0, 1.1, 1.5).matrix
    np.testing.assert_allclose(tr.times, [0.0, 0.3, 0.7, 1.8])
    assert np.allclose(tr.states[-1], expected, atol=1e-8)
    assert np.allclose(tr.states[1], dephase_evolve(rho, H1, 0.3, 1.5).matrix, atol=1e-8)


def test_integrate_milburn_gives_up_on_stiff_problem(rng):
    H = 50 * build_ising(ModelParams(1, 0.9, 3)).matrix
    rho = random_density_matrix(8, rng)
    with pytest.raises(MilburnIntegrationError):
        integrate_milburn(rho, [(H, 1.0)], 0.01, dt=0.5, max_halvings=2)


def test_integrate_milburn_rejects_instant_limit(rng):
    with pytest.raises(ValueError):
        integrate_milburn(random_density_matrix(2, rng), [(np.eye(2), 1.0)], INSTANT_DEPHASE)


def test_coherence_measure_examples():
    plus = np.full((2, 2), 0.5)
    assert relative_entropy_coherence(plus) == pytest.approx(math.log(2))
    assert relative_entropy_coherence(np.diag([0.3, 0.7])) == 0.0
    assert relative_entropy_coherence(np.eye(4) / 4) == 0.0


def test_coherence_trace_starts_and_ends_sensibly():
    pr = ChargingProtocol(1, 7, 0.1, 0.6, 1.0)
    tr = coherence_trace(pr, pr.tau + np.array([0.0, 1e4]), decay_nu=1.0)
    assert tr.values[0] > 0
    assert tr.values[-1] < 1e-8
    assert tr.origin == 1.0


def test_coherence_zero_without_quench():
    pr = ChargingProtocol(1, 7, 0.3, 0.3, 1.0)
    tr = coherence_trace(pr, np.linspace(0, 5, 6), decay_nu=1.0)
    np.testing.assert_allclose(tr.values, 0, atol=1e-12)


def test_timescales_single_exponential():
    t = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 600)])
    tr = CoherenceTrace(t, np.exp(-t / 5.0))
    with pytest.raises(NoPlateauError) as err:
        extract_timescales(tr)
    assert err.value.tau1 == pytest.approx(5.0, rel=1e-3)


def test_timescales_two_exponentials():
    t = np.concatenate([[0.0], np.geomspace(1e-3, 1e4, 800)])
    tr = CoherenceTrace(t, 0.6 * np.exp(-t / 0.05) + 0.4 * np.exp(-t / 200.0))
    tau1, tau2 = extract_timescales(tr)
    assert tau1 == pytest.approx(0.05, rel=0.1)
    assert tau2 == pytest.approx(200.0, rel=0.1)
