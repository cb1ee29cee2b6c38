import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnerf.qsim import (CircuitSpec, Gate, StateVector, all_expectations_z,
                        amplitude_embed, apply_cry, apply_ry, backprop_circuit,
                        basis_state, expectation_z, run_circuit,
                        run_circuit_batch, tensor_product, z_expectations_batch)
from qnerf.circuits import AnsatzConfig, build_full, identity_init

from helpers import (central_diff, dense_circuit, dense_z, random_circuit,
                     random_state, rel_err)


class TestBasisState:
    def test_two_qubits(self):
        assert np.array_equal(basis_state(2).amps, [1, 0, 0, 0])

    def test_one_qubit(self):
        assert np.array_equal(basis_state(1).amps, [1, 0])

    def test_three_qubits(self):
        s = basis_state(3)
        assert s.amps.shape == (8,)
        assert s.amps[0] == 1.0 and np.count_nonzero(s.amps) == 1

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            basis_state(0)


class TestAmplitudeEmbed:
    def test_normalization(self):
        assert np.allclose(amplitude_embed([3, 4]).amps, [0.6, 0.8])

    def test_identity_case(self):
        assert np.array_equal(amplitude_embed([1, 0, 0, 0]).amps, [1, 0, 0, 0])

    def test_zero_vector_fallback(self):
        assert np.allclose(amplitude_embed([0, 0, 0, 0]).amps, [0.5] * 4)

    def test_non_power_of_two(self):
        with pytest.raises(ValueError):
            amplitude_embed([1, 2, 3])

    def test_negative_entry(self):
        with pytest.raises(ValueError):
            amplitude_embed([1, -1])

    def test_scalar_vector_rejected(self):
        with pytest.raises(ValueError):
            amplitude_embed([1.0])

    @given(st.lists(st.floats(0, 1e6), min_size=4, max_size=4))
    def test_unit_norm(self, vals):
        s = amplitude_embed(vals)
        assert abs(np.linalg.norm(s.amps) - 1.0) < 1e-10


class TestTensorProduct:
    def test_basis_states(self):
        zero, one = basis_state(1), StateVector(1, np.array([0.0, 1.0]))
        assert np.array_equal(tensor_product(zero, one).amps, [0, 1, 0, 0])

    def test_superposition(self):
        plus = StateVector(1, np.array([1.0, 1.0]) / np.sqrt(2))
        out = tensor_product(plus, basis_state(1))
        assert np.allclose(out.amps, np.array([1, 0, 1, 0]) / np.sqrt(2))

    def test_matches_kron_oracle(self, rng):
        a = StateVector(2, random_state(2, rng))
        b = StateVector(2, random_state(2, rng))
        out = tensor_product(a, b)
        assert out.n == 4
        assert np.allclose(out.amps, np.kron(a.amps, b.amps), atol=1e-12)


class TestApplyRy:
    def test_zero_angle_identity(self, rng):
        s = StateVector(3, random_state(3, rng))
        assert np.array_equal(apply_ry(s, 1, 0.0).amps, s.amps)

    def test_pi_flips_zero(self):
        out = apply_ry(basis_state(1), 0, np.pi)
        assert np.allclose(out.amps, [0, 1], atol=1e-12)

    def test_half_pi(self):
        # oracle: explicit 2x2 multiply at theta = pi/2
        out = apply_ry(basis_state(1), 0, np.pi / 2)
        expected = np.array([np.cos(np.pi / 4), np.sin(np.pi / 4)])
        assert np.allclose(out.amps, expected, atol=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            apply_ry(basis_state(2), 2, 0.3)


class TestApplyCry:
    def test_control_zero_unchanged(self, rng):
        # qubit 0 amplitude mass entirely on control=0 half
        s = StateVector(2, np.array([0.6, 0.8, 0.0, 0.0]))
        assert np.allclose(apply_cry(s, 0, 1, 1.234).amps, s.amps)

    def test_flips_target_when_control_set(self):
        s = StateVector(2, np.array([0.0, 0.0, 1.0, 0.0]))  # |10>
        out = apply_cry(s, 0, 1, np.pi)
        assert np.allclose(out.amps, [0, 0, 0, 1], atol=1e-12)  # |11>

    def test_matches_dense_oracle(self, rng):
        from helpers import dense_gate

        s = StateVector(3, random_state(3, rng))
        gate = Gate("cry", target=2, control=0, param_slot=0)
        out = apply_cry(s, 0, 2, 0.7)
        expected = dense_gate(gate, 0.7, 3) @ s.amps
        assert np.allclose(out.amps, expected, atol=1e-12)

    def test_equal_indices(self):
        with pytest.raises(ValueError):
            apply_cry(basis_state(2), 1, 1, 0.1)


class TestRunCircuit:
    def test_empty_circuit(self, rng):
        s = StateVector(2, random_state(2, rng))
        out = run_circuit(s, CircuitSpec(2), np.zeros(0))
        assert np.array_equal(out.amps, s.amps)

    def test_identity_initialisation(self, rng):
        circuit = build_full(AnsatzConfig("full", 4, 2))
        s = StateVector(4, random_state(4, rng, nonneg=True))
        out = run_circuit(s, circuit, identity_init(circuit))
        assert np.max(np.abs(out.amps - s.amps)) < 1e-12

    def test_matches_dense_oracle(self, rng):
        circuit = build_full(AnsatzConfig("full", 4, 1))
        thetas = rng.uniform(0, 2 * np.pi, circuit.n_params)
        s = StateVector(4, random_state(4, rng))
        out = run_circuit(s, circuit, thetas)
        expected = dense_circuit(circuit, thetas) @ s.amps
        assert np.max(np.abs(out.amps - expected)) < 1e-10

    def test_slot_out_of_range(self):
        circuit = CircuitSpec(2, (Gate("ry", 0, None, 3),))
        with pytest.raises(ValueError):
            run_circuit(basis_state(2), circuit, np.zeros(2))


class TestExpectationZ:
    def test_eigenstates(self):
        assert expectation_z(basis_state(1), 0) == 1.0
        one = StateVector(1, np.array([0.0, 1.0]))
        assert expectation_z(one, 0) == -1.0

    def test_uniform_superposition(self):
        for n in (1, 2, 3):
            s = StateVector(n, np.full(2**n, 1.0 / np.sqrt(2**n)))
            for q in range(n):
                assert abs(expectation_z(s, q)) < 1e-12

    def test_matches_dense_operator(self, rng):
        s = StateVector(3, random_state(3, rng))
        for q in range(3):
            expected = s.amps @ dense_z(3, q) @ s.amps
            assert abs(expectation_z(s, q) - expected) < 1e-12

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            expectation_z(basis_state(2), 5)


class TestBackpropCircuit:
    def test_zero_upstream(self, rng):
        circuit = random_circuit(3, 6, rng)
        thetas = rng.uniform(0, 2 * np.pi, circuit.n_params)
        s = StateVector(3, random_state(3, rng))
        d_th, d_in = backprop_circuit(s, circuit, thetas, np.zeros(3))
        assert np.array_equal(d_th, np.zeros_like(thetas))
        assert np.array_equal(d_in, np.zeros_like(s.amps))

    def test_single_ry_analytic(self):
        # <Z> = cos(theta) on |0>, so the derivative is -sin(theta)
        circuit = CircuitSpec(1, (Gate("ry", 0, None, 0),))
        for theta in (0.0, 0.4, np.pi / 2, 2.2):
            d_th, _ = backprop_circuit(basis_state(1), circuit,
                                       np.array([theta]), np.array([1.0]))
            assert abs(d_th[0] - (-np.sin(theta))) < 1e-12

    def test_matches_finite_differences(self, rng):
        circuit = build_full(AnsatzConfig("full", 4, 1))
        thetas = rng.uniform(0, 2 * np.pi, circuit.n_params)
        init = StateVector(4, random_state(4, rng, nonneg=True))
        upstream = rng.standard_normal(4)

        def loss(th):
            out = run_circuit(init, circuit, th)
            return float(upstream @ all_expectations_z(out))

        d_th, d_in = backprop_circuit(init, circuit, thetas, upstream)
        fd = central_diff(loss, thetas, h=1e-5)
        assert rel_err(d_th, fd) < 1e-4

    def test_input_gradient_matches_fd(self, rng):
        circuit = random_circuit(3, 8, rng)
        thetas = rng.uniform(0, 2 * np.pi, circuit.n_params)
        init = random_state(3, rng)
        upstream = rng.standard_normal(3)

        def loss(amps):
            out = run_circuit_batch(amps[None, :], 3, circuit, thetas)
            return float(upstream @ z_expectations_batch(out, 3)[0])

        _, d_in = backprop_circuit(StateVector(3, init), circuit, thetas,
                                   upstream)
        fd = central_diff(loss, init, h=1e-5)
        assert rel_err(d_in, fd) < 1e-4


class TestBatchedKernels:
    def test_batch_matches_single(self, rng):
        circuit = random_circuit(3, 10, rng)
        thetas = rng.uniform(0, 2 * np.pi, circuit.n_params)
        states = np.stack([random_state(3, rng) for _ in range(5)])
        batch_out = run_circuit_batch(states, 3, circuit, thetas)
        for i in range(5):
            single = run_circuit(StateVector(3, states[i]), circuit, thetas)
            assert np.allclose(batch_out[i], single.amps, atol=1e-12)

    def test_per_row_angles(self, rng):
        circuit = random_circuit(2, 5, rng)
        thetas = rng.uniform(0, 2 * np.pi, (4, circuit.n_params))
        states = np.stack([random_state(2, rng) for _ in range(4)])
        batch_out = run_circuit_batch(states, 2, circuit, thetas)
        for i in range(4):
            single = run_circuit(StateVector(2, states[i]), circuit, thetas[i])
            assert np.allclose(batch_out[i], single.amps, atol=1e-12)


@settings(deadline=None, max_examples=25)
@given(st.integers(1, 4), st.integers(0, 12), st.integers(0, 2**31 - 1))
def test_norm_preserved_and_real(n, n_gates, seed):
    rng = np.random.default_rng(seed)
    circuit = random_circuit(n, n_gates, rng)
    thetas = rng.uniform(-np.pi, np.pi, max(circuit.n_params, 1))
    s = StateVector(n, random_state(n, rng))
    out = run_circuit(s, circuit, thetas)
    assert abs(np.linalg.norm(out.amps) - 1.0) < 1e-10
    assert np.all(np.isfinite(out.amps))
    assert out.amps.dtype == np.float64
