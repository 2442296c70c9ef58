"""Built-in models and the fidelity library."""
import numpy as np
import pytest

from pulseopt.controls import ControlsSet
from pulseopt.problems import (
    CallableEvaluator,
    FoMResult,
    IsingChainModel,
    IsingEvaluator,
    PowerPenaltyFoM,
    QubitEvaluator,
    QubitTransferModel,
    build_ising_hamiltonians,
    embed_single,
    gate_fidelity,
    propagate_state,
    pulse_power,
    state_fidelity,
    SIGMA_X,
    SIGMA_Z,
)


def controls_for(model, pulse):
    grid = (np.arange(model.bins) + 0.5) * model.T / model.bins
    return ControlsSet(pulses=[np.asarray(pulse)], timegrids=[grid], parameters=[])


class TestIsingHamiltonians:
    def test_three_qubit_spectrum_against_spin_enumeration(self):
        model = IsingChainModel(n_qubits=3, J=1.0, g=0.0)
        H0, _ = build_ising_hamiltonians(model)
        # independent oracle: H0 is diagonal in the z basis with entries
        # -J (s1 s2 + s2 s3) over all spin assignments
        expected = []
        for bits in range(8):
            s = [1 - 2 * ((bits >> (2 - q)) & 1) for q in range(3)]
            expected.append(-1.0 * (s[0] * s[1] + s[1] * s[2]))
        assert np.allclose(np.diag(H0).real, expected)
        vals, counts = np.unique(np.linalg.eigvalsh(H0).round(12), return_counts=True)
        assert np.allclose(vals, [-2.0, 0.0, 2.0])
        assert list(counts) == [2, 4, 2]

    def test_benchmark_instance_dimensions(self):
        H0, Hc = build_ising_hamiltonians(IsingChainModel(n_qubits=5, J=1.0, g=2.0))
        assert H0.shape == (32, 32)
        assert Hc.shape == (32, 32)
        assert np.abs(H0 - H0.conj().T).max() < 1e-14

    def test_control_flips_single_spins(self):
        model = IsingChainModel(n_qubits=5)
        _, Hc = build_ising_hamiltonians(model)
        ground = np.zeros(32)
        ground[0] = 1.0
        image = Hc @ ground
        # equal-weight sum of the five single-flip states |10000>, ..., |00001>
        flips = [2 ** (5 - 1 - q) for q in range(5)]
        expected = np.zeros(32)
        expected[flips] = 1.0
        assert np.allclose(image.real, expected)

    def test_rejects_tiny_and_huge_chains(self):
        with pytest.raises(ValueError, match="n_qubits >= 3"):
            IsingChainModel(n_qubits=2)
        with pytest.raises(ValueError, match="dense-matrix limit"):
            IsingChainModel(n_qubits=13)


class TestIsingEvaluator:
    def test_zero_pulse_gives_zero_fidelity(self):
        model = IsingChainModel(n_qubits=4, bins=10)
        ev = IsingEvaluator(model)
        r = ev.get_FoM(controls_for(model, np.zeros(10)))
        assert r.FoM == pytest.approx(0.0, abs=1e-12)
        assert r.std is None

    def test_deterministic_without_noise(self):
        model = IsingChainModel(n_qubits=3, bins=8)
        ev = IsingEvaluator(model)
        pulse = np.linspace(-1, 1, 8)
        a = ev.get_FoM(controls_for(model, pulse)).FoM
        b = ev.get_FoM(controls_for(model, pulse)).FoM
        assert a == b

    def test_noise_reproducible_under_seed(self):
        model = IsingChainModel(n_qubits=3, bins=8, noise_std=0.1)
        pulse = np.linspace(-1, 1, 8)
        values = []
        for _ in range(2):
            ev = IsingEvaluator(model, rng=np.random.default_rng(21))
            values.append([ev.get_FoM(controls_for(model, pulse)).FoM for _ in range(5)])
        assert values[0] == values[1]
        assert len(set(values[0])) > 1  # noise actually varies between calls

    def test_noise_attaches_positive_std(self):
        model = IsingChainModel(n_qubits=3, bins=8, noise_std=0.1)
        ev = IsingEvaluator(model, rng=np.random.default_rng(2))
        r = ev.get_FoM(controls_for(model, np.linspace(0, 2, 8)))
        assert ev.provides_std
        assert r.std is not None and r.std > 0

    def test_quantum_model_matches_black_box(self):
        model = IsingChainModel(n_qubits=3, bins=12)
        ev = IsingEvaluator(model)
        qm = ev.quantum_model()
        pulse = np.sin(np.linspace(0, 3, 12))
        psi = propagate_state(qm.H0, qm.Hc, [pulse], model.T, np.array([1] + [0] * 7, dtype=complex))
        direct = abs(psi[-1]) ** 2
        via_evaluator = ev.get_FoM(controls_for(model, pulse)).FoM
        assert direct == pytest.approx(via_evaluator, abs=1e-12)


class TestQubitEvaluator:
    def test_pi_pulse_transfer(self):
        model = QubitTransferModel(T=1.0, bins=25)
        ev = QubitEvaluator(model)
        r = ev.get_FoM(controls_for(model, np.full(25, np.pi)))
        assert r.FoM == pytest.approx(1.0, abs=1e-12)

    def test_half_pulse(self):
        model = QubitTransferModel(T=1.0, bins=25)
        ev = QubitEvaluator(model)
        r = ev.get_FoM(controls_for(model, np.full(25, np.pi / 2)))
        assert r.FoM == pytest.approx(0.5, abs=1e-12)


class TestStateFidelity:
    def test_identical_pure(self):
        rho = np.diag([1.0, 0.0]).astype(complex)
        assert state_fidelity(rho, rho) == pytest.approx(1.0)

    def test_orthogonal_pure(self):
        a = np.diag([1.0, 0.0]).astype(complex)
        b = np.diag([0.0, 1.0]).astype(complex)
        assert state_fidelity(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_mixed_against_pure_closed_form(self):
        # commuting states: F = (sum_k sqrt(p_k q_k))^2 = 1/2 here
        rho = np.eye(2, dtype=complex) / 2
        aim = np.diag([1.0, 0.0]).astype(complex)
        assert state_fidelity(rho, aim) == pytest.approx(0.5)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
            rho = A @ A.conj().T
            rho /= np.trace(rho).real
            B = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
            sig = B @ B.conj().T
            sig /= np.trace(sig).real
            assert state_fidelity(rho, sig) == pytest.approx(
                state_fidelity(sig, rho), abs=1e-10
            )

    def test_non_psd_rejected(self):
        bad = np.diag([1.5, -0.5]).astype(complex)
        good = np.diag([1.0, 0.0]).astype(complex)
        with pytest.raises(ValueError, match="positive semidefinite"):
            state_fidelity(bad, good)


class TestGateFidelity:
    def test_identical(self):
        U = np.array([[0, 1], [1, 0]], dtype=complex)
        assert gate_fidelity(U, U) == pytest.approx(1.0)

    def test_global_phase_invariance(self):
        rng = np.random.default_rng(5)
        from scipy.linalg import expm
        H = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        U = expm(-1j * (H + H.conj().T))
        for phi in (0.1, 1.0, np.pi / 3):
            assert gate_fidelity(np.exp(1j * phi) * U, U) == pytest.approx(1.0, abs=1e-12)

    def test_traceless_product(self):
        assert gate_fidelity(SIGMA_X, np.eye(2, dtype=complex)) == pytest.approx(0.0)


class TestPowerPenalty:
    def test_combination(self):
        base = CallableEvaluator(fn=lambda controls: FoMResult(FoM=0.8, std=0.02),
                                 provides_std=True)
        wrapped = PowerPenaltyFoM(base, weight=0.75)
        grid = np.array([0.125, 0.375, 0.625, 0.875])
        controls = ControlsSet(pulses=[np.array([1.0, -1.0, 2.0, 0.0])],
                               timegrids=[grid], parameters=[])
        power = (1 + 1 + 4 + 0) * 0.25
        r = wrapped.get_FoM(controls)
        assert r.FoM == pytest.approx(0.75 * 0.2 + 0.25 * power)
        assert r.std == pytest.approx(0.75 * 0.02)
        assert wrapped.preferred_direction == "minimization"

    def test_pulse_power_midpoint_rule(self):
        grid = (np.arange(100) + 0.5) / 100
        controls = ControlsSet(pulses=[np.sin(2 * np.pi * grid)],
                               timegrids=[grid], parameters=[])
        # integral of sin^2 over one period is 1/2
        assert pulse_power(controls) == pytest.approx(0.5, abs=1e-4)

    def test_weight_validation(self):
        base = CallableEvaluator(fn=lambda c: 1.0)
        with pytest.raises(ValueError):
            PowerPenaltyFoM(base, weight=1.5)


def test_embed_single_matches_kron():
    left = embed_single(SIGMA_Z, 0, 2)
    assert np.allclose(left, np.kron(SIGMA_Z, np.eye(2)))
    right = embed_single(SIGMA_Z, 1, 2)
    assert np.allclose(right, np.kron(np.eye(2), SIGMA_Z))
