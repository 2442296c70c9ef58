"""Quantum optimal control pulse optimization, open- and closed-loop.

Gradient-free dressed chopped-random-basis searches (Nelder-Mead, CMA-ES)
and gradient-based piecewise-constant pulse engineering with exact
auxiliary-matrix gradients, driven either by built-in simulated problems or
by an external evaluator over a file-exchange protocol.
"""

__version__ = "0.1.0"

from .config import ConfigurationError, OptimizationConfig, load_config, parse_config
from .controls import (
    BasisConfig,
    BasisExpansion,
    ControlsSet,
    ParameterSpec,
    PulseSpec,
    TimeSpec,
    apply_amplitude_constraint,
    build_timegrid,
    evaluate_pulse,
    sample_superparameters,
)
from .dcrab import (
    DcrabDriver,
    DriftCompensation,
    OptimizationResult,
    ReEvaluationPolicy,
    run_dcrab,
)
from .grape import (
    GrapeConfig,
    GrapeProblem,
    GrapeResult,
    fom_hilbert_schmidt,
    grape_gradient,
    run_grape,
    slice_propagators,
)
from .problems import (
    FoMEvaluator,
    FoMResult,
    IsingChainModel,
    IsingEvaluator,
    QuantumModel,
    gate_fidelity,
    state_fidelity,
)
from .search import SearchCriteria, SearchRecord, cmaes, nelder_mead

__all__ = [
    "BasisConfig",
    "BasisExpansion",
    "ConfigurationError",
    "ControlsSet",
    "DcrabDriver",
    "DriftCompensation",
    "FoMEvaluator",
    "FoMResult",
    "GrapeConfig",
    "GrapeProblem",
    "GrapeResult",
    "IsingChainModel",
    "IsingEvaluator",
    "OptimizationConfig",
    "OptimizationResult",
    "ParameterSpec",
    "PulseSpec",
    "QuantumModel",
    "ReEvaluationPolicy",
    "SearchCriteria",
    "SearchRecord",
    "TimeSpec",
    "apply_amplitude_constraint",
    "build_timegrid",
    "cmaes",
    "evaluate_pulse",
    "fom_hilbert_schmidt",
    "gate_fidelity",
    "grape_gradient",
    "load_config",
    "nelder_mead",
    "parse_config",
    "run_dcrab",
    "run_grape",
    "sample_superparameters",
    "slice_propagators",
    "state_fidelity",
]
