"""Pulse, parameter and time descriptions plus randomized-basis pulse assembly.

A pulse is represented by a truncated expansion in a randomized function
basis added on top of a carried-over base pulse, post-shaped by a scaling
function and forced into its amplitude limits.  All functions here are pure:
randomness enters only through an explicitly passed generator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SUPPORTED_BASES = ("Fourier", "Chebyshev", "PiecewiseBasis", "Walsh", "Sigmoid")
CONSTRAINT_MODES = ("cut", "shrink")


@dataclass
class UniformDistribution:
    """Uniform superparameter distribution on [lower_limit, upper_limit]."""

    lower_limit: float
    upper_limit: float

    def __post_init__(self):
        if self.upper_limit < self.lower_limit:
            raise ValueError("distribution upper_limit must be >= lower_limit")


@dataclass
class BasisConfig:
    """Which function space a pulse is expanded in, and how it is randomized."""

    basis_name: str
    basis_vector_number: int = 1
    distribution: UniformDistribution | None = None
    bins_number: int | None = None  # PiecewiseBasis only

    def __post_init__(self):
        if self.basis_name not in SUPPORTED_BASES:
            raise ValueError(
                f"unknown basis {self.basis_name!r}, supported: {SUPPORTED_BASES}"
            )
        if self.basis_name == "PiecewiseBasis":
            if self.bins_number is None:
                raise ValueError("PiecewiseBasis requires bins_number")
        else:
            if self.basis_vector_number < 1:
                raise ValueError("basis_vector_number must be positive")
            if self.distribution is None:
                raise ValueError(f"{self.basis_name} basis requires a distribution")

    def coefficient_count(self) -> int:
        """Search-space size contributed by one pulse in this basis."""
        if self.basis_name == "PiecewiseBasis":
            return int(self.bins_number)
        if self.basis_name == "Fourier":
            # one sine and one cosine weight per sampled frequency
            return 2 * self.basis_vector_number
        return self.basis_vector_number


@dataclass
class PulseSpec:
    """Static description of one optimizable pulse."""

    pulse_name: str
    time_name: str
    lower_limit: float
    upper_limit: float
    bins_number: int
    amplitude_variation: float
    basis: BasisConfig
    scaling_function: Callable[[np.ndarray], np.ndarray] | None = None
    initial_guess: Callable[[np.ndarray], np.ndarray] | Sequence[float] | None = None
    constraint_mode: str = "cut"

    def __post_init__(self):
        if not self.lower_limit < self.upper_limit:
            raise ValueError(
                f"pulse {self.pulse_name!r}: lower_limit must be < upper_limit"
            )
        if self.bins_number < 2:
            raise ValueError(f"pulse {self.pulse_name!r}: bins_number must be >= 2")
        if self.amplitude_variation <= 0:
            raise ValueError(
                f"pulse {self.pulse_name!r}: amplitude_variation must be > 0"
            )
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ValueError(
                f"pulse {self.pulse_name!r}: constraint_mode must be one of "
                f"{CONSTRAINT_MODES}"
            )
        if isinstance(self.initial_guess, (list, tuple, np.ndarray)):
            if len(self.initial_guess) != self.bins_number:
                raise ValueError(
                    f"pulse {self.pulse_name!r}: initial_guess list length "
                    f"{len(self.initial_guess)} != bins_number {self.bins_number}"
                )


@dataclass
class ParameterSpec:
    """A constant-but-variable scalar optimized alongside the pulses."""

    parameter_name: str
    initial_value: float
    lower_limit: float
    upper_limit: float
    amplitude_variation: float

    def __post_init__(self):
        if not self.lower_limit <= self.initial_value <= self.upper_limit:
            raise ValueError(
                f"parameter {self.parameter_name!r}: initial_value must lie in "
                "[lower_limit, upper_limit]"
            )
        if self.amplitude_variation <= 0:
            raise ValueError(
                f"parameter {self.parameter_name!r}: amplitude_variation must be > 0"
            )


@dataclass
class TimeSpec:
    """A named, fixed pulse duration."""

    time_name: str
    initial_value: float = 1.0

    def __post_init__(self):
        if self.initial_value <= 0:
            raise ValueError(f"time {self.time_name!r}: initial_value must be > 0")


@dataclass
class BasisExpansion:
    """One pulse's randomized basis draw and the coefficients being searched."""

    superparameters: np.ndarray
    coefficients: np.ndarray
    base_pulse: np.ndarray

    def __post_init__(self):
        self.superparameters = np.asarray(self.superparameters, dtype=float)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.base_pulse = np.asarray(self.base_pulse, dtype=float)


@dataclass
class ControlsSet:
    """Sampled pulses on their time grids plus the current parameter values."""

    pulses: list[np.ndarray] = field(default_factory=list)
    timegrids: list[np.ndarray] = field(default_factory=list)
    parameters: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.pulses) != len(self.timegrids):
            raise ValueError("pulses and timegrids must have the same length")
        for p, t in zip(self.pulses, self.timegrids):
            if len(p) != len(t):
                raise ValueError("each pulse must match its timegrid length")


def build_timegrid(time: TimeSpec, bins_number: int) -> np.ndarray:
    """Uniform midpoint sample times t_k = (k + 1/2) T / bins.

    Midpoint placement keeps piecewise-constant propagation centered on each
    interval.
    """
    if bins_number < 2:
        raise ValueError("bins_number must be >= 2")
    dt = time.initial_value / bins_number
    return (np.arange(bins_number) + 0.5) * dt


def sample_superparameters(cfg: BasisConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw the randomized basis parameters (e.g. Fourier frequencies).

    Deterministic under a fixed generator state.  PiecewiseBasis has no
    superparameters and yields an empty array.
    """
    if cfg.basis_name == "PiecewiseBasis":
        return np.empty(0)
    dist = cfg.distribution
    if not isinstance(dist, UniformDistribution):
        raise ValueError(f"unsupported superparameter distribution: {dist!r}")
    return rng.uniform(dist.lower_limit, dist.upper_limit, cfg.basis_vector_number)


def _walsh_column(sequency: int, x: np.ndarray) -> np.ndarray:
    """Walsh function of given sequency on x in [0, 1)."""
    seq = max(int(sequency), 0)
    gray = seq ^ (seq >> 1)
    col = np.ones_like(x)
    m = 0
    while gray >> m:
        if (gray >> m) & 1:
            # Rademacher function of order m: +1/-1 square wave with 2^(m+1) half-periods
            col = col * (1.0 - 2.0 * (np.floor(x * 2.0 ** (m + 1)).astype(int) & 1))
        m += 1
    return col


def basis_matrix(
    cfg: BasisConfig,
    superparameters: np.ndarray,
    timegrid: np.ndarray,
    duration: float,
) -> np.ndarray:
    """Evaluate the basis vectors on the time grid, one column per coefficient.

    Fourier contributes a sine and a cosine column per sampled frequency,
    with frequencies measured in full periods over the pulse duration.
    Chebyshev and Walsh round their superparameters to integer orders and
    sequencies.  Sigmoid centers are the superparameters mapped linearly from
    the distribution range onto [0, duration]; the width is fixed at
    duration / (4 * basis_vector_number).
    """
    t = np.asarray(timegrid, dtype=float)
    name = cfg.basis_name
    if name == "PiecewiseBasis":
        if len(t) != cfg.bins_number:
            raise ValueError("timegrid length must equal PiecewiseBasis bins_number")
        return np.eye(len(t))

    sp = np.asarray(superparameters, dtype=float)
    if sp.shape != (cfg.basis_vector_number,):
        raise ValueError(
            f"expected {cfg.basis_vector_number} superparameters, got {sp.shape}"
        )
    x = t / duration  # normalized time in [0, 1)

    if name == "Fourier":
        cols = np.empty((len(t), 2 * len(sp)))
        for i, f in enumerate(sp):
            cols[:, 2 * i] = np.sin(2.0 * np.pi * f * x)
            cols[:, 2 * i + 1] = np.cos(2.0 * np.pi * f * x)
        return cols

    if name == "Chebyshev":
        cols = np.empty((len(t), len(sp)))
        u = 2.0 * x - 1.0
        for i, s in enumerate(sp):
            order = max(int(round(s)), 0)
            c = np.zeros(order + 1)
            c[order] = 1.0
            cols[:, i] = np.polynomial.chebyshev.chebval(u, c)
        return cols

    if name == "Walsh":
        cols = np.empty((len(t), len(sp)))
        for i, s in enumerate(sp):
            cols[:, i] = _walsh_column(int(round(s)), x)
        return cols

    if name == "Sigmoid":
        dist = cfg.distribution
        span = dist.upper_limit - dist.lower_limit
        width = duration / (4.0 * cfg.basis_vector_number)
        cols = np.empty((len(t), len(sp)))
        for i, s in enumerate(sp):
            frac = (s - dist.lower_limit) / span if span > 0 else 0.5
            center = frac * duration
            cols[:, i] = 1.0 / (1.0 + np.exp(-(t - center) / width))
        return cols

    raise ValueError(f"unknown basis {name!r}")


def apply_amplitude_constraint(pulse: np.ndarray, spec: PulseSpec) -> np.ndarray:
    """Force a sampled pulse into [lower_limit, upper_limit].

    "cut" clamps each sample independently.  "shrink" rescales the whole
    pulse about the amplitude midpoint by a single factor, preserving shape.
    """
    pulse = np.asarray(pulse, dtype=float)
    if not np.all(np.isfinite(pulse)):
        raise ValueError(f"pulse {spec.pulse_name!r}: non-finite samples")
    lo, hi = spec.lower_limit, spec.upper_limit
    if spec.constraint_mode == "cut":
        return np.clip(pulse, lo, hi)
    # shrink: one scalar keeps every sample's deviation within the allowed band
    mid = 0.5 * (hi + lo)
    allowed = 0.5 * (hi - lo)
    deviation = np.abs(pulse - mid)
    worst = deviation.max(initial=0.0)
    if worst <= allowed:
        return pulse.copy()
    scale = allowed / worst
    return mid + scale * (pulse - mid)


def evaluate_pulse(
    spec: PulseSpec,
    expansion: BasisExpansion,
    timegrid: np.ndarray,
    duration: float | None = None,
) -> np.ndarray:
    """Assemble the sampled pulse from its expansion and enforce the limits.

    u(t_k) = constrain( base_pulse[k] + scaling(t_k) * sum_i B[k, i] * c_i )

    The initial guess is not added here; it enters once, as the first base
    pulse (see :func:`initial_base_pulse`).
    """
    t = np.asarray(timegrid, dtype=float)
    if len(t) != spec.bins_number:
        raise ValueError(
            f"pulse {spec.pulse_name!r}: timegrid length {len(t)} != "
            f"bins_number {spec.bins_number}"
        )
    if duration is None:
        # midpoint grids carry the duration implicitly
        duration = float(t[-1] + 0.5 * (t[1] - t[0]))
    expected = spec.basis.coefficient_count()
    if expansion.coefficients.shape != (expected,):
        raise ValueError(
            f"pulse {spec.pulse_name!r}: expected {expected} coefficients, "
            f"got {expansion.coefficients.shape}"
        )
    if expansion.base_pulse.shape != (spec.bins_number,):
        raise ValueError(
            f"pulse {spec.pulse_name!r}: base_pulse length must equal bins_number"
        )
    B = basis_matrix(spec.basis, expansion.superparameters, t, duration)
    update = B @ expansion.coefficients
    if spec.scaling_function is not None:
        update = np.asarray(spec.scaling_function(t), dtype=float) * update
    return apply_amplitude_constraint(expansion.base_pulse + update, spec)


def initial_base_pulse(spec: PulseSpec, timegrid: np.ndarray) -> np.ndarray:
    """Base pulse for the first super-iteration: the user's guess, constrained.

    The guess is treated exactly like a previous best solution, so the scaling
    function does not multiply it.
    """
    t = np.asarray(timegrid, dtype=float)
    guess = spec.initial_guess
    if guess is None:
        raw = np.zeros(spec.bins_number)
    elif callable(guess):
        raw = np.asarray(guess(t), dtype=float)
        if raw.shape == ():
            raw = np.full(spec.bins_number, float(raw))
    else:
        raw = np.asarray(guess, dtype=float)
    if raw.shape != (spec.bins_number,):
        raise ValueError(
            f"pulse {spec.pulse_name!r}: initial guess evaluates to shape "
            f"{raw.shape}, expected ({spec.bins_number},)"
        )
    return apply_amplitude_constraint(raw, spec)


def clamp_parameters(specs: Sequence[ParameterSpec], values: Sequence[float]) -> list[float]:
    """Clamp searched parameter values into their configured ranges."""
    if len(specs) != len(values):
        raise ValueError("parameter value count does not match specs")
    return [
        float(min(max(v, s.lower_limit), s.upper_limit))
        for s, v in zip(specs, values)
    ]


def sigmoid_width(duration: float, basis_vector_number: int) -> float:
    """Fixed sigmoid step width used by the Sigmoid basis."""
    return duration / (4.0 * basis_vector_number)


def fourier_frequency_range(cfg: BasisConfig) -> tuple[float, float]:
    """Frequency window, in periods per pulse duration, of a Fourier basis."""
    if cfg.basis_name != "Fourier" or cfg.distribution is None:
        raise ValueError("not a randomized Fourier basis")
    return (cfg.distribution.lower_limit, cfg.distribution.upper_limit)
