import numpy as np
import pytest

from ising_battery.ed_oracle import (
    SX,
    SZ,
    DenseOperator,
    build_ising,
    build_ising_kron,
    ed_ground_state,
    energy_clusters,
    integrate_milburn_reference,
    parity_diagonal,
    propagate,
    random_density_matrix,
    reachable_sector,
    site_operator,
    symmetry_labels,
    translation_matrix,
    zero_momentum_basis,
)
from ising_battery.spectrum import EVEN, ODD, CapacityError, ModelParams


def test_classical_ground_energies():
    # h = 0: frustrated ring leaves one bond unsatisfied, the ferromagnet satisfies all
    assert ed_ground_state(ModelParams(1, 0.0, 3), parity=EVEN)[0] == pytest.approx(-1.0)
    assert build_ising(ModelParams(-1, 0.0, 3)).eigenvalues[0] == pytest.approx(-3.0)
    assert build_ising(ModelParams(1, 0.0, 5)).eigenvalues[0] == pytest.approx(-3.0)


def test_field_only_ground_energy():
    assert build_ising(ModelParams(1, 0.0, 3)).eigenvalues[0] == pytest.approx(-1.0)
    H = build_ising(ModelParams(1, 0.0, 3)).matrix - 2.0 * sum(site_operator(SZ, l, 3) for l in range(3))
    # with the interaction removed only the field survives
    Hz = build_ising(ModelParams(1, 2.0, 3)).matrix - build_ising(ModelParams(1, 0.0, 3)).matrix
    assert np.linalg.eigvalsh(Hz)[0] == pytest.approx(-6.0)
    assert np.allclose(H, build_ising(ModelParams(1, 2.0, 3)).matrix)


@pytest.mark.parametrize("N", [3, 5, 7])
@pytest.mark.parametrize("J", [1, -1])
def test_bit_builder_matches_kron_builder(N, J):
    p = ModelParams(J, 0.63, N)
    np.testing.assert_allclose(build_ising(p).matrix, build_ising_kron(p).matrix, atol=1e-14)


def test_site_ordering_is_most_significant_first():
    # index 0b100 has site 0 down (bit set)
    sz0 = site_operator(SZ, 0, 3)
    assert sz0[0b100, 0b100] == -1 and sz0[0b011, 0b011] == 1
    hz = build_ising(ModelParams(1, 1.0, 3)).matrix - build_ising(ModelParams(1, 0.0, 3)).matrix
    assert hz[0, 0] == pytest.approx(-3.0)


def test_capacity_limits():
    with pytest.raises(CapacityError):
        build_ising(ModelParams(1, 0.5, 17))
    with pytest.raises(CapacityError):
        build_ising_kron(ModelParams(1, 0.5, 13))


def test_dense_operator_rejects_non_hermitian():
    with pytest.raises(ValueError):
        DenseOperator(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        DenseOperator(np.ones((2, 3)))


def test_energy_clusters():
    groups = energy_clusters(np.array([0.0, 1e-12, 1.0, 2.0, 2.0 + 1e-11]))
    assert [g.tolist() for g in groups] == [[0, 1], [2], [3, 4]]


def test_parity_and_translation_commute_with_h():
    N = 5
    H = build_ising(ModelParams(1, 0.4, N)).matrix
    P = np.diag(parity_diagonal(N))
    T = translation_matrix(N)
    assert np.allclose(H @ P, P @ H)
    assert np.allclose(H @ T, T @ H)
    assert np.allclose(np.linalg.matrix_power(T, N), np.eye(2**N))


def test_translation_moves_site_l_to_l_plus_one():
    N = 5
    T = translation_matrix(N)
    for l in range(N):
        lhs = T @ site_operator(SX, l, N) @ T.T
        assert np.allclose(lhs, site_operator(SX, (l + 1) % N, N))


def test_symmetry_labels_diagonalize_everything():
    N = 5
    H = build_ising(ModelParams(1, 0.3, N))
    lab = symmetry_labels(H, N)
    V = lab.vectors
    assert np.allclose(V.conj().T @ V, np.eye(2**N), atol=1e-10)
    assert np.allclose(V.conj().T @ H.matrix @ V, np.diag(lab.energies), atol=1e-10)
    T = translation_matrix(N)
    assert np.allclose(V.conj().T @ T @ V, np.diag(lab.translation), atol=1e-9)
    assert set(np.unique(lab.parity)) <= {1, -1}
    np.testing.assert_allclose(np.abs(lab.translation) ** 1, 1, atol=1e-9)


def test_ground_state_has_zero_momentum():
    for J in (1, -1):
        N = 7
        lab = symmetry_labels(build_ising(ModelParams(J, 0.3, N)), N)
        # J = -1 ground doublet and the J = +1 even vacuum both carry k = 0 in their sector
        even_ground = np.argmax(lab.parity == EVEN)
        assert lab.zero_momentum()[even_ground]


@pytest.mark.parametrize("N", [3, 5, 7, 9])
@pytest.mark.parametrize("parity", [EVEN, ODD])
def test_zero_momentum_basis_orthonormal_and_invariant(N, parity):
    B = zero_momentum_basis(N, parity)
    assert np.allclose(B.T @ B, np.eye(B.shape[1]))
    assert np.allclose(translation_matrix(N) @ B, B)
    assert np.allclose(parity_diagonal(N)[:, None] * B, parity * B)


@pytest.mark.parametrize("N, dim", [(3, 2), (5, 4), (7, 8), (9, 16)])
def test_reachable_dimension(N, dim):
    for J in (1, -1):
        s = reachable_sector(ModelParams(J, 0.2, N))
        assert len(s.energies) == dim
        assert np.allclose(s.vectors.T @ s.vectors, np.eye(dim), atol=1e-10)


def test_reachable_sector_is_invariant_under_any_field():
    p = ModelParams(1, 0.3, 7)
    s = reachable_sector(p)
    Q = s.vectors @ s.vectors.T
    for h in (0.0, 0.9, 2.5):
        H = build_ising(p.with_field(h)).matrix
        assert np.allclose(Q @ H @ Q, H @ Q, atol=1e-10)


def test_reachable_ground_is_global_ground():
    for J in (1, -1):
        p = ModelParams(J, 0.4, 7)
        assert reachable_sector(p).energies[0] == pytest.approx(build_ising(p).eigenvalues[0], abs=1e-10)


def test_propagate_is_unitary(rng):
    H = build_ising(ModelParams(1, 0.7, 5))
    psi = rng.normal(size=32) + 1j * rng.normal(size=32)
    psi /= np.linalg.norm(psi)
    out = propagate(psi, H, 3.3)
    assert np.linalg.norm(out) == pytest.approx(1.0)
    back = propagate(out, H, -3.3)
    assert np.allclose(back, psi)
    rho = random_density_matrix(32, rng)
    assert np.trace(propagate(rho, H, 1.1)).real == pytest.approx(1.0)


def test_milburn_reference_keeps_stationary_states(rng):
    H = build_ising(ModelParams(-1, 0.5, 3))
    vals, vecs = H.eigh()
    rho = (vecs * rng.dirichlet(np.ones(8))) @ vecs.conj().T
    assert np.allclose(integrate_milburn_reference(rho, H, 0.3, 7.0), rho, atol=1e-12)


def test_milburn_reference_long_time_limit_is_block_diagonal(rng):
    H = build_ising(ModelParams(1, 0.5, 3))
    rho = random_density_matrix(8, rng)
    out = integrate_milburn_reference(rho, H, 0.5, 1e4)
    expected = sum(P @ rho @ P for _, P in H.projectors())
    assert np.allclose(out, expected, atol=1e-10)


def test_milburn_reference_unitary_limit(rng):
    H = build_ising(ModelParams(1, 0.5, 3))
    rho = random_density_matrix(8, rng)
    assert np.allclose(integrate_milburn_reference(rho, H, np.inf, 2.0), propagate(rho, H, 2.0), atol=1e-12)
