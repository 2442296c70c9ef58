"""Mock spin-ensemble experiment served over the file-exchange protocol.

Plays the role of a real setup for end-to-end tests: a two-level system
driven by an amplitude and a phase pulse, with a static spread of Rabi
amplitudes across the simulated ensemble, shot noise on every readout and a
slow downward drift of the measured contrast.  The figure of merit is the
ensemble-averaged population transferred to the excited state.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .exchange import (
    ExchangeReply,
    ProtocolError,
    send_reply,
    try_read_controls,
)

log = logging.getLogger(__name__)

AMPLITUDE_PULSE = "amplitude"
PHASE_PULSE = "phase"


@dataclass
class MockNVModel:
    """Ensemble and noise parameters of the simulated experiment."""

    rabi_inhomogeneity_std: float = 0.15
    drift_rate: float = 0.002  # contrast lost per minute
    shot_noise_std: float = 0.01
    pulse_duration: float = 1.0  # model units; stands in for the 200 ns pulse
    ensemble_size: int = 32

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        for name in ("rabi_inhomogeneity_std", "drift_rate", "shot_noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def ensemble_scales(model: MockNVModel, rng: np.random.Generator) -> np.ndarray:
    """Static per-member Rabi amplitude scaling factors."""
    if model.rabi_inhomogeneity_std == 0:
        return np.ones(model.ensemble_size)
    return rng.normal(1.0, model.rabi_inhomogeneity_std, model.ensemble_size)


def simulate_contrast(
    amplitude: np.ndarray,
    phase: np.ndarray,
    timegrid: np.ndarray,
    scales: np.ndarray,
    global_scale: float = 1.0,
) -> float:
    """Population transferred |0> -> |1>, averaged over the given ensemble.

    Per bin the drive is Omega_x = A cos(phi), Omega_y = A sin(phi) applied
    through (Omega_x sx + Omega_y sy) / 2; each member sees the amplitudes
    multiplied by its own scale times the global one.
    """
    amplitude = np.asarray(amplitude, dtype=float)
    phase = np.asarray(phase, dtype=float)
    timegrid = np.asarray(timegrid, dtype=float)
    if not (len(amplitude) == len(phase) == len(timegrid)):
        raise ValueError("amplitude, phase and timegrid lengths must match")
    if len(timegrid) < 2:
        raise ValueError("need at least two bins")
    dt = timegrid[1] - timegrid[0]

    members = np.asarray(scales, dtype=float) * float(global_scale)
    # states as rows (member, 2), starting in |0>
    state = np.zeros((len(members), 2), dtype=complex)
    state[:, 0] = 1.0
    cos_phi = np.cos(phase)
    sin_phi = np.sin(phase)
    for k in range(len(timegrid)):
        theta = members * amplitude[k] * dt  # rotation angle per member
        half = 0.5 * theta
        c = np.cos(half)
        s = np.sin(half)
        # exp(-i theta/2 (cos(phi) sx + sin(phi) sy)) applied to each member
        n_minus = cos_phi[k] - 1j * sin_phi[k]
        n_plus = cos_phi[k] + 1j * sin_phi[k]
        a, b = state[:, 0].copy(), state[:, 1].copy()
        state[:, 0] = c * a - 1j * s * n_minus * b
        state[:, 1] = c * b - 1j * s * n_plus * a
    return float(np.mean(np.abs(state[:, 1]) ** 2))


def rectangular_pi_pulse(bins: int, duration: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant-amplitude reference pulse with area exactly pi."""
    dt = duration / bins
    timegrid = (np.arange(bins) + 0.5) * dt
    amplitude = np.full(bins, np.pi / duration)
    phase = np.zeros(bins)
    return amplitude, phase, timegrid


def robustness_sweep(
    amplitude: np.ndarray,
    phase: np.ndarray,
    timegrid: np.ndarray,
    model: MockNVModel,
    scales,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Noiseless ensemble contrast of a pulse at each global amplitude scale."""
    member_scales = ensemble_scales(model, rng or np.random.default_rng(0))
    return np.array(
        [
            simulate_contrast(amplitude, phase, timegrid, member_scales, s)
            for s in scales
        ]
    )


class MockExperimentServer:
    """Polls the session directory and answers controls with contrast replies."""

    def __init__(
        self,
        session_dir,
        model: MockNVModel,
        rng: np.random.Generator | None = None,
        clock=time.monotonic,
        sleep=time.sleep,
        poll_interval_ms: float = 20.0,
    ):
        self.session_dir = session_dir
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng()
        self.clock = clock
        self.sleep = sleep
        self.poll_interval_ms = poll_interval_ms
        self.scales = ensemble_scales(model, self.rng)
        self.start_time = None
        self.served = 0

    def _evaluate(self, msg) -> ExchangeReply:
        pulses = msg.pulses
        if AMPLITUDE_PULSE not in pulses or PHASE_PULSE not in pulses:
            log.warning(
                "controls must name pulses %r and %r; got %r",
                AMPLITUDE_PULSE, PHASE_PULSE, sorted(pulses),
            )
            return ExchangeReply(iteration=msg.iteration, FoM=0.0, status="error")
        grids = list(msg.timegrids.values())
        if not grids:
            return ExchangeReply(iteration=msg.iteration, FoM=0.0, status="error")
        amplitude = np.asarray(pulses[AMPLITUDE_PULSE], dtype=float)
        phase = np.asarray(pulses[PHASE_PULSE], dtype=float)
        grid = np.asarray(grids[0], dtype=float)
        try:
            contrast = simulate_contrast(amplitude, phase, grid, self.scales)
        except ValueError as err:
            log.warning("bad controls payload: %s", err)
            return ExchangeReply(iteration=msg.iteration, FoM=0.0, status="error")
        elapsed_min = (self.clock() - self.start_time) / 60.0
        fom = contrast - self.model.drift_rate * elapsed_min
        if self.model.shot_noise_std > 0:
            fom += self.rng.normal(0.0, self.model.shot_noise_std)
        return ExchangeReply(
            iteration=msg.iteration, FoM=fom, std=max(self.model.shot_noise_std, 1e-9)
        )

    def serve_forever(self) -> int:
        """Handle requests until a terminate flag arrives; returns the count."""
        self.start_time = self.clock()
        last_iteration = 0
        log.info("mock experiment serving in %s", self.session_dir)
        while True:
            try:
                msg = try_read_controls(self.session_dir)
            except ProtocolError as err:
                log.warning("ignoring malformed controls file: %s", err)
                self.sleep(self.poll_interval_ms / 1000.0)
                continue
            if msg is None or msg.iteration <= last_iteration:
                self.sleep(self.poll_interval_ms / 1000.0)
                continue
            last_iteration = msg.iteration
            if msg.control_flag == "terminate":
                log.info("terminate received after %d evaluations", self.served)
                return self.served
            reply = self._evaluate(msg)
            send_reply(self.session_dir, reply)
            self.served += 1


def serve(
    session_dir,
    model: MockNVModel,
    rng=None,
    clock=time.monotonic,
    poll_interval_ms: float = 20.0,
) -> int:
    """Convenience wrapper for one blocking serve loop."""
    server = MockExperimentServer(
        session_dir, model, rng=rng, clock=clock, poll_interval_ms=poll_interval_ms
    )
    return server.serve_forever()
