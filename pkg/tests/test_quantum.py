import numpy as np
import pytest

from qst_model.errors import ArgumentError, ContractViolation, DimensionError
from qst_model.quantum import (
    PAULI_MATRICES,
    DensityMatrix,
    MeasurementKind,
    apply_adjoint,
    apply_map,
    bell_state,
    classic_fidelity,
    fidelity,
    measure,
    pauli4_povm,
    pauli_ensemble,
    pauli_observable,
    povm_probabilities,
    random_rank_r_state,
    rank_estimate,
    sample_povm,
    select_observables,
    select_povm_outcomes,
    trace_distance,
)

X, Y, Z, I2 = PAULI_MATRICES


class TestPauliObservables:
    def test_single_and_product_labels(self):
        np.testing.assert_array_equal(pauli_observable([1]), X)
        np.testing.assert_array_equal(pauli_observable([3, 4]), np.kron(Z, I2))
        np.testing.assert_array_equal(pauli_observable([2, 1]), np.kron(Y, X))

    def test_invalid_labels(self):
        with pytest.raises(ArgumentError):
            pauli_observable([0])
        with pytest.raises(ArgumentError):
            pauli_observable([])

    def test_flat_index_is_most_significant_digit_first(self):
        ensemble = pauli_ensemble(2, [0, 2, 15])
        np.testing.assert_array_equal(ensemble.matrices[0], np.kron(X, X))
        np.testing.assert_array_equal(ensemble.matrices[1], np.kron(X, Z))
        np.testing.assert_array_equal(ensemble.matrices[2], np.eye(4))

    def test_selection_is_distinct_and_skips_identity(self, rng):
        ensemble = select_observables(1, 3, rng)
        assert sorted(ensemble.indices) == [0, 1, 2]
        ensemble = select_observables(4, 103, rng)
        assert ensemble.count == 103
        assert len(set(ensemble.indices)) == 103
        assert 255 not in ensemble.indices
        with pytest.raises(ArgumentError):
            select_observables(1, 4, rng)

    @pytest.mark.parametrize("n", [1, 2])
    def test_full_family_is_trace_orthogonal_and_unitary(self, n):
        d = 2**n
        family = pauli_ensemble(n, range(4**n)).matrices
        gram = np.einsum("aij,bji->ab", family, family)
        np.testing.assert_allclose(gram, d * np.eye(4**n), atol=1e-12)
        for p in family:
            np.testing.assert_allclose(p @ p.conj().T, np.eye(d), atol=1e-12)

    def test_weights_rows_are_flattened_matrices(self, two_qubit_ensemble):
        w = two_qubit_ensemble.weights()
        assert w.shape == (10, 16)
        np.testing.assert_array_equal(w[3].reshape(4, 4), two_qubit_ensemble.matrices[3])


class TestMeasurementMap:
    def test_adjoint_identity(self, rng, two_qubit_ensemble):
        for _ in range(200):
            x = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            y = rng.standard_normal(10) + 1j * rng.standard_normal(10)
            lhs = np.vdot(apply_map(two_qubit_ensemble, x), y)
            rhs = np.vdot(x, apply_adjoint(two_qubit_ensemble, y))
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_map_is_trace_against_each_element(self, rng, two_qubit_ensemble):
        x = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        expected = [np.trace(a @ x) for a in two_qubit_ensemble.matrices]
        np.testing.assert_allclose(apply_map(two_qubit_ensemble, x), expected)

    def test_dimension_mismatch(self, two_qubit_ensemble):
        with pytest.raises(DimensionError):
            apply_map(two_qubit_ensemble, np.eye(2))
        with pytest.raises(DimensionError):
            apply_adjoint(two_qubit_ensemble, np.zeros(9))

    def test_maximally_mixed_state_has_zero_pauli_expectations(self, two_qubit_ensemble):
        b = measure(two_qubit_ensemble, DensityMatrix.maximally_mixed(4))
        np.testing.assert_allclose(b, 0.0, atol=1e-15)
        assert b.dtype == np.float64


class TestStates:
    def test_random_state_is_physical_with_requested_rank(self, rng):
        rho = random_rank_r_state(16, 3, rng)
        assert np.trace(rho.matrix).real == pytest.approx(1.0)
        assert np.linalg.eigvalsh(rho.matrix).min() > -1e-12
        assert rank_estimate(rho) == 3

    def test_rank_out_of_range(self, rng):
        with pytest.raises(ArgumentError):
            random_rank_r_state(4, 5, rng)

    def test_density_matrix_validation(self):
        with pytest.raises(ContractViolation):
            DensityMatrix(np.diag([0.5, 0.25]))
        with pytest.raises(ContractViolation):
            DensityMatrix(np.diag([1.5, -0.5]))
        with pytest.raises(ContractViolation):
            DensityMatrix(np.array([[0.5, 0.5], [0.0, 0.5]]))

    def test_density_matrix_is_read_only(self):
        rho = DensityMatrix.maximally_mixed(2)
        with pytest.raises(ValueError):
            rho.matrix[0, 0] = 1.0


class TestPovm:
    def test_pauli4_povm_is_complete(self):
        povm = pauli4_povm(2)
        assert povm.kind is MeasurementKind.POVM
        assert povm.count == 16
        np.testing.assert_allclose(povm.matrices.sum(axis=0), np.eye(4), atol=1e-12)
        assert np.linalg.eigvalsh(povm.matrices).min() > -1e-12

    def test_probabilities_of_ket_zero(self):
        rho = DensityMatrix(np.diag([1.0, 0.0]))
        p = povm_probabilities(rho, pauli4_povm(1))
        np.testing.assert_allclose(p, [1 / 3, 1 / 6, 1 / 6, 1 / 3])

    def test_partial_outcome_selection(self, rng):
        ensemble = select_povm_outcomes(2, 10, rng)
        assert ensemble.count == 10
        assert len(set(ensemble.indices)) == 10
        assert all(0 <= a < 16 for a in ensemble.indices)
        with pytest.raises(ArgumentError):
            select_povm_outcomes(2, 17, rng)

    def test_sample_povm_frequencies(self, rng):
        p = povm_probabilities(bell_state(), pauli4_povm(2))
        freq = sample_povm(p, 1000, rng)
        assert freq.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(freq * 1000, np.round(freq * 1000))
        with pytest.raises(ArgumentError):
            sample_povm(p, 0, rng)
        with pytest.raises(ArgumentError):
            sample_povm(p * 2, 10, rng)

    def test_probabilities_are_affine_in_the_state(self, rng):
        povm = pauli4_povm(2)
        for _ in range(20):
            rho = random_rank_r_state(4, 1, rng).matrix
            sigma = random_rank_r_state(4, 3, rng).matrix
            a = rng.uniform()
            mixed = povm_probabilities(a * rho + (1 - a) * sigma, povm)
            p_rho, p_sigma = povm_probabilities(rho, povm), povm_probabilities(sigma, povm)
            expected = a * p_rho + (1 - a) * p_sigma
            np.testing.assert_allclose(mixed, expected, atol=1e-12)

    def test_sample_povm_concentrates(self, rng):
        n_avg = 1_000_000
        p = povm_probabilities(random_rank_r_state(4, 2, rng), pauli4_povm(2))
        freq = sample_povm(p, n_avg, rng)
        sigma = np.sqrt(p * (1 - p) / n_avg)
        assert np.all(np.abs(freq - p) <= 5 * sigma + 1e-12)

    def test_probabilities_need_a_povm(self, two_qubit_ensemble):
        with pytest.raises(ArgumentError):
            povm_probabilities(bell_state(), two_qubit_ensemble)


class TestMetrics:
    def test_bell_against_maximally_mixed(self):
        mixed = DensityMatrix.maximally_mixed(4)
        assert fidelity(bell_state(), mixed) == pytest.approx(0.5, abs=1e-10)
        assert trace_distance(bell_state(), mixed) == pytest.approx(0.75, abs=1e-10)

    def test_identical_and_orthogonal_states(self, rank1_state):
        assert fidelity(rank1_state, rank1_state) == pytest.approx(1.0, abs=1e-8)
        assert trace_distance(rank1_state, rank1_state) == pytest.approx(0.0, abs=1e-12)
        zero, one = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
        assert fidelity(zero, one) == pytest.approx(0.0, abs=1e-12)
        assert trace_distance(zero, one) == pytest.approx(1.0)

    def test_unit_fidelity_iff_zero_distance(self, rng):
        for _ in range(30):
            rho = random_rank_r_state(4, int(rng.integers(1, 5)), rng)
            sigma = random_rank_r_state(4, int(rng.integers(1, 5)), rng)
            assert fidelity(rho, rho) == pytest.approx(1.0, abs=1e-7)
            assert trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-12)
            assert fidelity(rho, sigma) < 1.0 - 1e-6
            assert trace_distance(rho, sigma) > 1e-6

    def test_fidelity_is_symmetric(self, rng):
        rho = random_rank_r_state(4, 2, rng)
        sigma = random_rank_r_state(4, 3, rng)
        assert fidelity(rho, sigma) == pytest.approx(fidelity(sigma, rho), abs=1e-9)

    def test_fidelity_rejects_non_hermitian(self):
        with pytest.raises(ContractViolation):
            fidelity(np.array([[1.0, 1.0], [0.0, 0.0]]), np.eye(2) / 2)

    def test_fidelity_clamps_negative_eigenvalues(self):
        estimate = np.diag([1.05, -0.05])
        assert fidelity(np.diag([1.0, 0.0]), estimate) == pytest.approx(np.sqrt(1.05))

    def test_classic_fidelity_matches_sampled_expectation(self, rng):
        p = rng.dirichlet(np.ones(16))
        q = rng.dirichlet(np.ones(16))
        exact = classic_fidelity(p, q)
        draws = rng.choice(16, size=20000, p=p)
        ratios = np.sqrt(q[draws] / p[draws])
        standard_error = ratios.std(ddof=1) / np.sqrt(len(ratios))
        assert abs(ratios.mean() - exact) <= 3 * standard_error
        assert classic_fidelity(p, p) == pytest.approx(1.0)

    def test_classic_fidelity_shape_mismatch(self):
        with pytest.raises(DimensionError):
            classic_fidelity([0.5, 0.5], [1.0, 0.0, 0.0])

    def test_rank_estimate(self):
        assert rank_estimate(np.diag([1.0, 1e-9, 0.0])) == 1
        assert rank_estimate(np.eye(3) / 3) == 3
