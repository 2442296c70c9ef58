"""JSON configuration parsing and validation.

The configuration is a dictionary with sections ``algorithm_settings``,
``pulses``, ``parameters`` and ``times``.  Unknown keys produce warnings, not
errors; every applied default is recorded so the runtime can log it exactly
once.  Validation failures carry the JSON path of the offending entry.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .controls import (
    BasisConfig,
    ParameterSpec,
    PulseSpec,
    TimeSpec,
    UniformDistribution,
)
from .dcrab import DriftCompensation, ReEvaluationPolicy
from .rng import resolve_seed
from .search import SEARCH_METHODS, SearchCriteria

ALGORITHMS = ("dCRAB", "GRAPE")
DIRECTIONS = ("maximization", "minimization")
DEFAULT_BINS_NUMBER = 100
DEFAULT_RE_EVALUATION_THRESHOLDS = [0.33, 0.5, 0.6]


class ConfigurationError(ValueError):
    """Invalid configuration; message starts with the JSON path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class DirectSearchSettings:
    name: str = "NelderMead"
    is_adaptive: bool = True
    criteria: SearchCriteria = field(default_factory=SearchCriteria)
    sigma0: float | None = None


@dataclass
class GrapeSettings:
    max_eval_total: int = 200
    ftol: float = 1e-9
    gtol: float = 1e-7


@dataclass
class AlgorithmSettings:
    algorithm_name: str
    super_iteration_number: int = 1
    max_eval_total: int = 10_000
    total_time_lim: float | None = None  # minutes
    FoM_goal: float | None = None
    optimization_direction: str = "maximization"
    dsm: DirectSearchSettings = field(default_factory=DirectSearchSettings)
    seed: int | None = None
    drift: DriftCompensation = field(default_factory=DriftCompensation)
    re_evaluation: ReEvaluationPolicy | None = None
    grape: GrapeSettings | None = None


@dataclass
class OptimizationConfig:
    """Validated in-memory form of the configuration document."""

    optimization_client_name: str
    algorithm: AlgorithmSettings
    pulses: list[PulseSpec]
    parameters: list[ParameterSpec]
    times: list[TimeSpec]
    results_folder: str | None = None
    problem: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    defaults_applied: list[str] = field(default_factory=list)
    raw_text: str = ""


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigurationError(f"{path}.{key}", "required key is missing")
    return mapping[key]


def _typed(value, types, path: str, what: str):
    if not isinstance(value, types):
        raise ConfigurationError(path, f"expected {what}, got {type(value).__name__}")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(path, f"expected an integer, got {type(value).__name__}")
    return value


def _warn_unknown(section: dict, known: set[str], path: str, warnings: list[str]):
    for key in section:
        if key not in known:
            warnings.append(f"{path}.{key}: unknown key ignored")


_LAMBDA_GLOBALS = {"__builtins__": {}, "np": np, "numpy": np, "math": math, "pi": math.pi}


def parse_time_function(entry, path: str):
    """A pulse shape: a lambda-function string, a sample list, or absent."""
    if entry is None:
        return None
    if isinstance(entry, (list, tuple)):
        return [float(v) for v in entry]
    if not isinstance(entry, dict):
        raise ConfigurationError(path, "expected an object or a list of samples")
    ftype = entry.get("function_type")
    if ftype == "lambda_function":
        code = _require(entry, "lambda_function", path)
        if not isinstance(code, str) or not code.lstrip().startswith("lambda"):
            raise ConfigurationError(
                f"{path}.lambda_function", "expected a lambda expression string"
            )
        try:
            fn = eval(code, dict(_LAMBDA_GLOBALS))  # noqa: S307 - documented surface
        except Exception as err:
            raise ConfigurationError(
                f"{path}.lambda_function", f"could not evaluate: {err}"
            ) from None
        return fn
    if ftype == "list_function":
        samples = _require(entry, "list_function", path)
        if not isinstance(samples, (list, tuple)):
            raise ConfigurationError(f"{path}.list_function", "expected a list")
        return [float(v) for v in samples]
    raise ConfigurationError(
        f"{path}.function_type",
        "expected 'lambda_function' or 'list_function'",
    )


def _parse_basis(entry: dict, path: str, pulse_bins: int, warnings: list[str]) -> BasisConfig:
    name = _require(entry, "basis_name", path)
    known = {
        "basis_name", "basis_vector_number", "bins_number",
        "random_super_parameter_distribution", "super_parameter_distribution",
    }
    _warn_unknown(entry, known, path, warnings)
    if name == "PiecewiseBasis":
        bins = entry.get("bins_number", pulse_bins)
        try:
            return BasisConfig(basis_name=name, bins_number=_integer(bins, f"{path}.bins_number"))
        except ValueError as err:
            raise ConfigurationError(path, str(err)) from None
    dist_entry = entry.get(
        "random_super_parameter_distribution",
        entry.get("super_parameter_distribution"),
    )
    if dist_entry is None:
        raise ConfigurationError(
            f"{path}.random_super_parameter_distribution", "required key is missing"
        )
    dname = _require(dist_entry, "distribution_name", f"{path}.random_super_parameter_distribution")
    if dname != "Uniform":
        raise ConfigurationError(
            f"{path}.random_super_parameter_distribution.distribution_name",
            f"unsupported distribution {dname!r}; only 'Uniform' is available",
        )
    lo = _number(_require(dist_entry, "lower_limit", f"{path}.random_super_parameter_distribution"),
                 f"{path}.random_super_parameter_distribution.lower_limit")
    hi = _number(_require(dist_entry, "upper_limit", f"{path}.random_super_parameter_distribution"),
                 f"{path}.random_super_parameter_distribution.upper_limit")
    if not lo < hi:
        raise ConfigurationError(
            f"{path}.random_super_parameter_distribution.lower_limit",
            "lower_limit must be < upper_limit",
        )
    n = entry.get("basis_vector_number")
    if n is None:
        raise ConfigurationError(f"{path}.basis_vector_number", "required key is missing")
    try:
        return BasisConfig(
            basis_name=name,
            basis_vector_number=_integer(n, f"{path}.basis_vector_number"),
            distribution=UniformDistribution(lower_limit=lo, upper_limit=hi),
        )
    except ValueError as err:
        raise ConfigurationError(path, str(err)) from None


def _parse_pulse(
    entry: dict, idx: int, algorithm: str, warnings: list[str], defaults: list[str]
) -> PulseSpec:
    path = f"pulses[{idx}]"
    known = {
        "pulse_name", "time_name", "upper_limit", "lower_limit", "bins_number",
        "amplitude_variation", "basis", "scaling_function", "initial_guess",
        "constraint_mode",
    }
    _warn_unknown(entry, known, path, warnings)
    name = _typed(_require(entry, "pulse_name", path), str, f"{path}.pulse_name", "a string")
    time_name = _typed(_require(entry, "time_name", path), str, f"{path}.time_name", "a string")
    upper = _number(_require(entry, "upper_limit", path), f"{path}.upper_limit")
    lower = _number(_require(entry, "lower_limit", path), f"{path}.lower_limit")
    if not lower < upper:
        raise ConfigurationError(f"{path}.lower_limit", "lower_limit must be < upper_limit")

    bins = entry.get("bins_number")
    if bins is None:
        bins = DEFAULT_BINS_NUMBER
        defaults.append(f"{path}.bins_number defaulted to {DEFAULT_BINS_NUMBER}")
    else:
        bins = _integer(bins, f"{path}.bins_number")

    variation = entry.get("amplitude_variation")
    if variation is None:
        if algorithm == "dCRAB":
            raise ConfigurationError(f"{path}.amplitude_variation", "required key is missing")
        variation = 1.0
        defaults.append(f"{path}.amplitude_variation defaulted to 1.0")
    else:
        variation = _number(variation, f"{path}.amplitude_variation")

    basis_entry = entry.get("basis")
    if basis_entry is None:
        if algorithm == "dCRAB":
            raise ConfigurationError(f"{path}.basis", "required key is missing")
        basis = BasisConfig(basis_name="PiecewiseBasis", bins_number=bins)
        defaults.append(f"{path}.basis defaulted to PiecewiseBasis")
    else:
        basis = _parse_basis(basis_entry, f"{path}.basis", bins, warnings)
    if algorithm == "GRAPE" and basis.basis_name != "PiecewiseBasis":
        raise ConfigurationError(
            f"{path}.basis.basis_name",
            "GRAPE optimizes piecewise-constant amplitudes directly; "
            "use PiecewiseBasis",
        )
    if basis.basis_name == "PiecewiseBasis" and basis.bins_number != bins:
        raise ConfigurationError(
            f"{path}.basis.bins_number",
            f"PiecewiseBasis bins ({basis.bins_number}) must equal the "
            f"pulse bins_number ({bins})",
        )

    mode = entry.get("constraint_mode")
    if mode is None:
        mode = "cut"
        defaults.append(f"{path}.constraint_mode defaulted to 'cut'")

    scaling = parse_time_function(entry.get("scaling_function"), f"{path}.scaling_function")
    if isinstance(scaling, list):
        samples = np.asarray(scaling, dtype=float)
        if len(samples) != bins:
            raise ConfigurationError(
                f"{path}.scaling_function", f"list length must equal bins_number ({bins})"
            )
        scaling = lambda t, _s=samples: _s  # noqa: E731
    guess = parse_time_function(entry.get("initial_guess"), f"{path}.initial_guess")

    try:
        return PulseSpec(
            pulse_name=name,
            time_name=time_name,
            lower_limit=lower,
            upper_limit=upper,
            bins_number=bins,
            amplitude_variation=variation,
            basis=basis,
            scaling_function=scaling,
            initial_guess=guess,
            constraint_mode=mode,
        )
    except ValueError as err:
        raise ConfigurationError(path, str(err)) from None


def _parse_parameter(entry: dict, idx: int, warnings: list[str]) -> ParameterSpec:
    path = f"parameters[{idx}]"
    known = {
        "parameter_name", "initial_value", "lower_limit", "upper_limit",
        "amplitude_variation",
    }
    _warn_unknown(entry, known, path, warnings)
    try:
        return ParameterSpec(
            parameter_name=_typed(
                _require(entry, "parameter_name", path), str,
                f"{path}.parameter_name", "a string",
            ),
            initial_value=_number(_require(entry, "initial_value", path), f"{path}.initial_value"),
            lower_limit=_number(_require(entry, "lower_limit", path), f"{path}.lower_limit"),
            upper_limit=_number(_require(entry, "upper_limit", path), f"{path}.upper_limit"),
            amplitude_variation=_number(
                _require(entry, "amplitude_variation", path), f"{path}.amplitude_variation"
            ),
        )
    except ValueError as err:
        if isinstance(err, ConfigurationError):
            raise
        raise ConfigurationError(path, str(err)) from None


def _parse_time(entry: dict, idx: int, warnings: list[str], defaults: list[str]) -> TimeSpec:
    path = f"times[{idx}]"
    _warn_unknown(entry, {"time_name", "initial_value"}, path, warnings)
    name = _typed(_require(entry, "time_name", path), str, f"{path}.time_name", "a string")
    value = entry.get("initial_value")
    if value is None:
        value = 1.0
        defaults.append(f"{path}.initial_value defaulted to 1.0")
    else:
        value = _number(value, f"{path}.initial_value")
    try:
        return TimeSpec(time_name=name, initial_value=value)
    except ValueError as err:
        raise ConfigurationError(path, str(err)) from None


def _parse_criteria(entry: dict, path: str, warnings: list[str]) -> SearchCriteria:
    known = {"xatol", "frtol", "time_lim", "max_eval", "change_based_stop"}
    _warn_unknown(entry, known, path, warnings)
    cbs = entry.get("change_based_stop")
    cbs_evals = cbs_change = None
    if cbs is not None:
        _warn_unknown(cbs, {"cbs_funct_evals", "cbs_change"}, f"{path}.change_based_stop", warnings)
        cbs_evals = _integer(
            _require(cbs, "cbs_funct_evals", f"{path}.change_based_stop"),
            f"{path}.change_based_stop.cbs_funct_evals",
        )
        cbs_change = _number(
            _require(cbs, "cbs_change", f"{path}.change_based_stop"),
            f"{path}.change_based_stop.cbs_change",
        )
    try:
        return SearchCriteria(
            xatol=None if "xatol" not in entry else _number(entry["xatol"], f"{path}.xatol"),
            frtol=None if "frtol" not in entry else _number(entry["frtol"], f"{path}.frtol"),
            max_eval=None if "max_eval" not in entry else _integer(entry["max_eval"], f"{path}.max_eval"),
            time_lim=None if "time_lim" not in entry else _number(entry["time_lim"], f"{path}.time_lim"),
            cbs_funct_evals=cbs_evals,
            cbs_change=cbs_change,
        )
    except ValueError as err:
        raise ConfigurationError(path, str(err)) from None


def _parse_algorithm(entry: dict, warnings: list[str], defaults: list[str]) -> AlgorithmSettings:
    path = "algorithm_settings"
    known = {
        "algorithm_name", "super_iteration_number", "max_eval_total",
        "total_time_lim", "FoM_goal", "optimization_direction", "dsm_settings",
        "random_number_generator", "compensate_drift", "re_evaluation",
        "stopping_criteria",
    }
    _warn_unknown(entry, known, path, warnings)
    name = _require(entry, "algorithm_name", path)
    if name not in ALGORITHMS:
        raise ConfigurationError(
            f"{path}.algorithm_name", f"unknown algorithm {name!r}; supported: {ALGORITHMS}"
        )
    direction = entry.get("optimization_direction")
    if direction is None:
        direction = "maximization"
        defaults.append(f"{path}.optimization_direction defaulted to 'maximization'")
    elif direction not in DIRECTIONS:
        raise ConfigurationError(
            f"{path}.optimization_direction", f"must be one of {DIRECTIONS}"
        )

    si_number = entry.get("super_iteration_number")
    if si_number is None:
        si_number = 1
        if name == "dCRAB":
            defaults.append(f"{path}.super_iteration_number defaulted to 1")
    else:
        si_number = _integer(si_number, f"{path}.super_iteration_number")
        if si_number < 1:
            raise ConfigurationError(f"{path}.super_iteration_number", "must be >= 1")

    max_eval_total = entry.get("max_eval_total")
    if max_eval_total is None:
        max_eval_total = 10_000
        if name == "dCRAB":
            defaults.append(f"{path}.max_eval_total defaulted to 10000")
    else:
        max_eval_total = _integer(max_eval_total, f"{path}.max_eval_total")

    settings = AlgorithmSettings(
        algorithm_name=name,
        super_iteration_number=si_number,
        max_eval_total=max_eval_total,
        optimization_direction=direction,
    )
    if "total_time_lim" in entry:
        settings.total_time_lim = _number(entry["total_time_lim"], f"{path}.total_time_lim")
        if settings.total_time_lim <= 0:
            raise ConfigurationError(f"{path}.total_time_lim", "must be > 0 minutes")
    if "FoM_goal" in entry:
        settings.FoM_goal = _number(entry["FoM_goal"], f"{path}.FoM_goal")

    rng_entry = entry.get("random_number_generator")
    if rng_entry is not None:
        _warn_unknown(rng_entry, {"seed_number"}, f"{path}.random_number_generator", warnings)
        settings.seed = _integer(
            _require(rng_entry, "seed_number", f"{path}.random_number_generator"),
            f"{path}.random_number_generator.seed_number",
        )
    else:
        settings.seed = resolve_seed(None)
        defaults.append(
            f"{path}.random_number_generator absent; entropy seed "
            f"{settings.seed} was drawn"
        )

    drift_entry = entry.get("compensate_drift")
    if drift_entry is not None:
        _warn_unknown(
            drift_entry, {"compensation_time_minutes", "after_SI"},
            f"{path}.compensate_drift", warnings,
        )
        if drift_entry.get("after_SI"):
            settings.drift = DriftCompensation(mode="after_SI")
        elif "compensation_time_minutes" in drift_entry:
            period = _number(
                drift_entry["compensation_time_minutes"],
                f"{path}.compensate_drift.compensation_time_minutes",
            )
            try:
                settings.drift = DriftCompensation(mode="periodic", period_minutes=period)
            except ValueError as err:
                raise ConfigurationError(f"{path}.compensate_drift", str(err)) from None
        else:
            raise ConfigurationError(
                f"{path}.compensate_drift",
                "expected 'compensation_time_minutes' or 'after_SI'",
            )

    re_entry = entry.get("re_evaluation")
    if re_entry is not None:
        _warn_unknown(re_entry, {"thresholds"}, f"{path}.re_evaluation", warnings)
        thresholds = re_entry.get("thresholds")
        if thresholds is None:
            thresholds = list(DEFAULT_RE_EVALUATION_THRESHOLDS)
            defaults.append(
                f"{path}.re_evaluation.thresholds defaulted to {thresholds}"
            )
        try:
            settings.re_evaluation = ReEvaluationPolicy(
                thresholds=[float(t) for t in thresholds]
            )
        except ValueError as err:
            raise ConfigurationError(f"{path}.re_evaluation", str(err)) from None

    if name == "dCRAB":
        dsm_entry = entry.get("dsm_settings")
        dsm = DirectSearchSettings()
        if dsm_entry is None:
            defaults.append(f"{path}.dsm_settings defaulted to adaptive NelderMead")
        else:
            _warn_unknown(
                dsm_entry, {"general_settings", "stopping_criteria"},
                f"{path}.dsm_settings", warnings,
            )
            general = dsm_entry.get("general_settings", {})
            _warn_unknown(
                general, {"dsm_algorithm_name", "is_adaptive", "sigma0"},
                f"{path}.dsm_settings.general_settings", warnings,
            )
            dsm.name = general.get("dsm_algorithm_name", "NelderMead")
            if dsm.name not in SEARCH_METHODS:
                raise ConfigurationError(
                    f"{path}.dsm_settings.general_settings.dsm_algorithm_name",
                    f"unknown method {dsm.name!r}; registered: {sorted(SEARCH_METHODS)}",
                )
            if "is_adaptive" in general:
                dsm.is_adaptive = bool(general["is_adaptive"])
            else:
                defaults.append(
                    f"{path}.dsm_settings.general_settings.is_adaptive defaulted to true"
                )
            if "sigma0" in general:
                dsm.sigma0 = _number(
                    general["sigma0"], f"{path}.dsm_settings.general_settings.sigma0"
                )
            crit_entry = dsm_entry.get("stopping_criteria")
            if crit_entry is not None:
                dsm.criteria = _parse_criteria(
                    crit_entry, f"{path}.dsm_settings.stopping_criteria", warnings
                )
        settings.dsm = dsm
    else:  # GRAPE
        stop_entry = entry.get("stopping_criteria", {})
        _warn_unknown(
            stop_entry, {"max_eval_total", "ftol", "gtol"},
            f"{path}.stopping_criteria", warnings,
        )
        grape = GrapeSettings()
        if "max_eval_total" in stop_entry:
            grape.max_eval_total = _integer(
                stop_entry["max_eval_total"], f"{path}.stopping_criteria.max_eval_total"
            )
        if "ftol" in stop_entry:
            grape.ftol = _number(stop_entry["ftol"], f"{path}.stopping_criteria.ftol")
        if "gtol" in stop_entry:
            grape.gtol = _number(stop_entry["gtol"], f"{path}.stopping_criteria.gtol")
        settings.grape = grape
    return settings


def parse_config(text: str) -> OptimizationConfig:
    """Parse and validate a JSON configuration document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigurationError("<document>", f"invalid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("<document>", "top level must be an object")

    warnings: list[str] = []
    defaults: list[str] = []
    known = {
        "optimization_client_name", "algorithm_settings", "pulses", "parameters",
        "times", "communication", "problem",
    }
    _warn_unknown(doc, known, "<document>", warnings)

    client = doc.get("optimization_client_name")
    if client is None:
        client = "optimization"
        defaults.append("optimization_client_name defaulted to 'optimization'")

    algorithm = _parse_algorithm(
        _require(doc, "algorithm_settings", "<document>"), warnings, defaults
    )

    pulses = [
        _parse_pulse(entry, i, algorithm.algorithm_name, warnings, defaults)
        for i, entry in enumerate(doc.get("pulses", []))
    ]
    parameters = [
        _parse_parameter(entry, i, warnings)
        for i, entry in enumerate(doc.get("parameters", []))
    ]
    times = [
        _parse_time(entry, i, warnings, defaults)
        for i, entry in enumerate(doc.get("times", []))
    ]

    time_names = {}
    for i, t in enumerate(times):
        if t.time_name in time_names:
            raise ConfigurationError(f"times[{i}].time_name", f"duplicate name {t.time_name!r}")
        time_names[t.time_name] = t
    for i, p in enumerate(pulses):
        if p.time_name not in time_names:
            raise ConfigurationError(
                f"pulses[{i}].time_name",
                f"does not resolve to any entry under 'times' ({p.time_name!r})",
            )

    results_folder = None
    comms = doc.get("communication")
    if comms is not None:
        _warn_unknown(
            comms, {"communication_type", "results_folder"}, "communication", warnings
        )
        results_folder = comms.get("results_folder")
        if results_folder is not None:
            warnings.append(
                "communication.results_folder: absolute paths are not portable; "
                "override with --results-dir if it does not exist on this machine"
            )

    if algorithm.algorithm_name == "dCRAB" and not pulses and not parameters:
        raise ConfigurationError("pulses", "dCRAB needs at least one pulse or parameter")
    if algorithm.algorithm_name == "GRAPE" and not pulses:
        raise ConfigurationError("pulses", "GRAPE needs at least one pulse")

    return OptimizationConfig(
        optimization_client_name=client,
        algorithm=algorithm,
        pulses=pulses,
        parameters=parameters,
        times=times,
        results_folder=results_folder,
        problem=doc.get("problem", {}),
        warnings=warnings,
        defaults_applied=defaults,
        raw_text=text,
    )


def load_config(path) -> OptimizationConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
