"""Built-in open-loop control problems and the figure-of-merit library.

The Ising chain and single-qubit problems double as black-box evaluators for
the gradient-free driver and as white-box Hamiltonian models for the
gradient-based one.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .controls import ControlsSet

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

MAX_CHAIN_QUBITS = 12  # dense 2^n matrices; beyond this a desk run is hopeless


class EvaluatorError(RuntimeError):
    """A single figure-of-merit evaluation failed; the driver may retry."""


@dataclass
class FoMResult:
    """One figure-of-merit measurement as returned by an evaluator."""

    FoM: float
    std: float | None = None
    status: str = "ok"


class FoMEvaluator(ABC):
    """Anything that can score a set of controls.

    ``provides_std`` must be True for evaluators used with the re-evaluation
    option; the returned std is then required on every measurement.
    """

    provides_std: bool = False
    preferred_direction: str = "maximization"

    @abstractmethod
    def get_FoM(self, controls: ControlsSet) -> FoMResult:
        ...


@dataclass
class QuantumModel:
    """Drift and control Hamiltonians plus the transfer endpoints."""

    H0: np.ndarray
    Hc: list[np.ndarray]
    rho0: np.ndarray
    rho_aim: np.ndarray | None = None
    U_aim: np.ndarray | None = None

    def dimension(self) -> int:
        return self.H0.shape[0]


def embed_single(op: np.ndarray, site: int, n_qubits: int) -> np.ndarray:
    """Place a single-qubit operator on one site of a tensor chain."""
    out = np.array([[1.0 + 0.0j]])
    for j in range(n_qubits):
        out = np.kron(out, op if j == site else IDENTITY_2)
    return out


def embed_pair(op: np.ndarray, i: int, j: int, n_qubits: int) -> np.ndarray:
    """Product of the same single-qubit operator on two sites."""
    out = np.array([[1.0 + 0.0j]])
    for k in range(n_qubits):
        out = np.kron(out, op if k in (i, j) else IDENTITY_2)
    return out


@dataclass
class IsingChainModel:
    """Open spin chain with nearest and next-nearest ZZ couplings.

    A single global x field drives all spins.  ``noise_std`` is the standard
    deviation of a fresh Gaussian perturbation added to the next-nearest
    coupling at every evaluation (0 keeps the model deterministic).
    """

    n_qubits: int = 5
    J: float = 1.0
    g: float = 2.0
    noise_std: float = 0.0
    T: float = 1.0
    bins: int = 100

    def __post_init__(self):
        if self.n_qubits < 3:
            raise ValueError("chain needs n_qubits >= 3 for the next-nearest term")
        if self.n_qubits > MAX_CHAIN_QUBITS:
            raise ValueError(
                f"n_qubits = {self.n_qubits} exceeds the dense-matrix limit "
                f"({MAX_CHAIN_QUBITS}); use a sparse or tensor-network evaluator"
            )
        if self.T <= 0:
            raise ValueError("T must be > 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def build_ising_hamiltonians(
    model: IsingChainModel, g_override: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Drift and control Hamiltonians of the chain, open boundaries.

    H0 = -J sum_j Z_j Z_{j+1} - g sum_j Z_j Z_{j+2},  Hc = sum_j X_j
    """
    n = model.n_qubits
    g = model.g if g_override is None else g_override
    dim = 2**n
    H0 = np.zeros((dim, dim), dtype=complex)
    for j in range(n - 1):
        H0 -= model.J * embed_pair(SIGMA_Z, j, j + 1, n)
    for j in range(n - 2):
        H0 -= g * embed_pair(SIGMA_Z, j, j + 2, n)
    Hc = np.zeros((dim, dim), dtype=complex)
    for j in range(n):
        Hc += embed_single(SIGMA_X, j, n)
    return H0, Hc


def propagate_state(
    H0: np.ndarray,
    Hc_list: Sequence[np.ndarray],
    pulses: Sequence[np.ndarray],
    duration: float,
    psi0: np.ndarray,
) -> np.ndarray:
    """Piecewise-constant evolution of a state vector.

    Each bin k applies exp(-i dt (H0 + sum_j u_j[k] Hc_j)).
    """
    pulses = [np.asarray(p, dtype=float) for p in pulses]
    if len(pulses) != len(Hc_list):
        raise ValueError("one pulse per control Hamiltonian required")
    n_bins = len(pulses[0])
    if any(len(p) != n_bins for p in pulses):
        raise ValueError("all pulses must share the bin count")
    dt = duration / n_bins
    psi = np.asarray(psi0, dtype=complex).copy()
    for k in range(n_bins):
        H = H0.astype(complex, copy=True)
        for Hc, u in zip(Hc_list, pulses):
            H += u[k] * Hc
        psi = expm(-1j * dt * H) @ psi
    return psi


class IsingEvaluator(FoMEvaluator):
    """Ground-to-excited transfer fidelity of the driven Ising chain.

    The figure of merit is the population of the all-excited state after
    evolving the all-ground state under the received x-field pulse.  With
    coupling noise enabled a first-order sensitivity estimate of the FoM
    standard deviation is attached to every measurement.
    """

    preferred_direction = "maximization"

    def __init__(self, model: IsingChainModel, rng: np.random.Generator | None = None):
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng()
        self.provides_std = model.noise_std > 0
        n = model.n_qubits
        self.psi0 = np.zeros(2**n, dtype=complex)
        self.psi0[0] = 1.0  # |00...0>
        self.target = np.zeros(2**n, dtype=complex)
        self.target[-1] = 1.0  # |11...1>
        self._H0_clean, self._Hc = build_ising_hamiltonians(model)

    def quantum_model(self) -> QuantumModel:
        """White-box view (noiseless couplings) for gradient-based runs."""
        return QuantumModel(
            H0=self._H0_clean,
            Hc=[self._Hc],
            rho0=np.outer(self.psi0, self.psi0.conj()),
            rho_aim=np.outer(self.target, self.target.conj()),
        )

    def _fidelity(self, pulse: np.ndarray, g_value: float) -> float:
        model = self.model
        if g_value == model.g:
            H0 = self._H0_clean
        else:
            H0, _ = build_ising_hamiltonians(model, g_override=g_value)
        psi_T = propagate_state(H0, [self._Hc], [pulse], model.T, self.psi0)
        return float(np.abs(np.vdot(self.target, psi_T)) ** 2)

    def get_FoM(self, controls: ControlsSet) -> FoMResult:
        pulse = np.asarray(controls.pulses[0], dtype=float)
        if len(pulse) != self.model.bins:
            raise ValueError(
                f"expected pulse of {self.model.bins} bins, got {len(pulse)}"
            )
        model = self.model
        if model.noise_std == 0:
            return FoMResult(FoM=self._fidelity(pulse, model.g))
        delta_g = self.rng.normal(0.0, model.noise_std)
        fom = self._fidelity(pulse, model.g + delta_g)
        # first-order propagation of coupling noise into the FoM
        h = max(1e-3, 0.05 * model.noise_std)
        sensitivity = (
            self._fidelity(pulse, model.g + h) - self._fidelity(pulse, model.g - h)
        ) / (2.0 * h)
        std = max(abs(sensitivity) * model.noise_std, 1e-12)
        return FoMResult(FoM=fom, std=std)


@dataclass
class QubitTransferModel:
    """Resonant two-level transfer |0> -> |1> driven through sigma_x / 2."""

    T: float = 1.0
    bins: int = 100
    detuning: float = 0.0


class QubitEvaluator(FoMEvaluator):
    """Excited-state population for the single-qubit transfer problem."""

    preferred_direction = "maximization"

    def __init__(self, model: QubitTransferModel):
        self.model = model
        self.psi0 = np.array([1.0, 0.0], dtype=complex)
        self.target = np.array([0.0, 1.0], dtype=complex)
        self.H0 = 0.5 * model.detuning * SIGMA_Z
        self.Hc = [0.5 * SIGMA_X]

    def quantum_model(self) -> QuantumModel:
        return QuantumModel(
            H0=self.H0,
            Hc=list(self.Hc),
            rho0=np.outer(self.psi0, self.psi0.conj()),
            rho_aim=np.outer(self.target, self.target.conj()),
        )

    def get_FoM(self, controls: ControlsSet) -> FoMResult:
        psi_T = propagate_state(
            self.H0, self.Hc, [controls.pulses[0]], self.model.T, self.psi0
        )
        return FoMResult(FoM=float(np.abs(np.vdot(self.target, psi_T)) ** 2))


def _sqrt_psd(rho: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Hermitian square root; rejects matrices that are not PSD within tol."""
    vals, vecs = np.linalg.eigh(rho)
    if vals.min() < -tol:
        raise ValueError(f"matrix is not positive semidefinite (min eig {vals.min():.2e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def state_fidelity(rho_T: np.ndarray, rho_aim: np.ndarray) -> float:
    """Uhlmann state overlap fidelity (tr sqrt(sqrt(a) b sqrt(a)))^2."""
    rho_T = np.asarray(rho_T, dtype=complex)
    rho_aim = np.asarray(rho_aim, dtype=complex)
    if rho_T.shape != rho_aim.shape:
        raise ValueError("density matrices must have equal dimensions")
    s = _sqrt_psd(rho_T)
    inner = s @ rho_aim @ s
    vals = np.linalg.eigh(inner)[0]
    return float(np.sum(np.sqrt(np.clip(vals, 0.0, None))) ** 2)


def gate_fidelity(U_T: np.ndarray, U_aim: np.ndarray) -> float:
    """Phase-insensitive gate overlap |tr(U_aim^dag U_T)|^2 / N^2."""
    U_T = np.asarray(U_T, dtype=complex)
    U_aim = np.asarray(U_aim, dtype=complex)
    if U_T.shape != U_aim.shape:
        raise ValueError("unitaries must have equal dimensions")
    dim = U_T.shape[0]
    return float(np.abs(np.trace(U_aim.conj().T @ U_T)) ** 2 / dim**2)


def pulse_power(controls: ControlsSet) -> float:
    """Midpoint-rule integral of |u(t)|^2 summed over all pulses."""
    total = 0.0
    for pulse, grid in zip(controls.pulses, controls.timegrids):
        grid = np.asarray(grid, dtype=float)
        dt = grid[1] - grid[0] if len(grid) > 1 else 0.0
        total += float(np.sum(np.asarray(pulse) ** 2) * dt)
    return total


class PowerPenaltyFoM(FoMEvaluator):
    """Blend infidelity with transmitted power: k (1 - F) + (1 - k) P.

    Wraps a fidelity-style evaluator; the combined figure is minimized.
    """

    preferred_direction = "minimization"

    def __init__(self, base: FoMEvaluator, weight: float):
        if not 0.0 <= weight <= 1.0:
            raise ValueError("weight must lie in [0, 1]")
        self.base = base
        self.weight = weight
        self.provides_std = base.provides_std

    def get_FoM(self, controls: ControlsSet) -> FoMResult:
        inner = self.base.get_FoM(controls)
        value = self.weight * (1.0 - inner.FoM) + (1.0 - self.weight) * pulse_power(
            controls
        )
        std = None if inner.std is None else self.weight * inner.std
        return FoMResult(FoM=value, std=std, status=inner.status)


@dataclass
class CallableEvaluator(FoMEvaluator):
    """Adapter turning a plain function of a ControlsSet into an evaluator."""

    fn: "callable"
    provides_std: bool = False
    preferred_direction: str = "maximization"
    calls: int = field(default=0, init=False)

    def get_FoM(self, controls: ControlsSet) -> FoMResult:
        self.calls += 1
        out = self.fn(controls)
        if isinstance(out, FoMResult):
            return out
        if isinstance(out, dict):
            return FoMResult(
                FoM=float(out["FoM"]),
                std=(float(out["std"]) if out.get("std") is not None else None),
                status=out.get("status", "ok"),
            )
        return FoMResult(FoM=float(out))
