"""Run orchestration: results folders, dumping, logging and algorithm dispatch."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigurationError, OptimizationConfig
from .controls import ControlsSet, build_timegrid, initial_base_pulse
from .dcrab import DcrabDriver, HistoryRow, OptimizationResult
from .grape import GrapeConfig, GrapeProblem, run_grape
from .problems import IsingChainModel, IsingEvaluator, QubitEvaluator, QubitTransferModel
from .rng import child_rng

log = logging.getLogger(__name__)

RESULTS_DIRNAME = "QOC_Results"
RESULTS_DIR_ENV = "PULSEOPT_RESULTS_DIR"
NOISE_STREAM_KEY = 70001  # child-rng slot for built-in problem noise


def create_results_folder(base_dir, client_name: str, clock=datetime.now) -> Path:
    """Create base/QOC_Results/<YYYYMMDD_HHMMSS>_<client>/ and return it."""
    base = Path(base_dir)
    stamp = clock().strftime("%Y%m%d_%H%M%S")
    name = f"{stamp}_{client_name}" if client_name else stamp
    parent = base / RESULTS_DIRNAME
    parent.mkdir(parents=True, exist_ok=True)
    folder = parent / name
    suffix = 0
    while True:
        try:
            folder.mkdir()
            return folder
        except FileExistsError:
            suffix += 1
            folder = parent / f"{name}_{suffix}"


def resolve_results_base(cli_value, config: OptimizationConfig) -> tuple[Path, str]:
    """Results base directory with precedence CLI > environment > config > cwd."""
    if cli_value:
        return Path(cli_value), "command line"
    env = os.environ.get(RESULTS_DIR_ENV)
    if env:
        return Path(env), f"environment variable {RESULTS_DIR_ENV}"
    if config.results_folder and Path(config.results_folder).parent.exists():
        return Path(config.results_folder), "configuration communication block"
    return Path.cwd(), "current working directory"


def setup_run_logging(folder: Path) -> logging.Handler:
    """Attach a per-run file handler to the package logger."""
    handler = logging.FileHandler(folder / "optimization.log", encoding="utf-8")
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)-7s %(name)s: %(message)s")
    )
    pkg_logger = logging.getLogger("pulseopt")
    pkg_logger.setLevel(logging.INFO)
    pkg_logger.addHandler(handler)
    return handler


def teardown_run_logging(handler: logging.Handler):
    logging.getLogger("pulseopt").removeHandler(handler)
    handler.close()


def dump_results(
    folder, result: OptimizationResult, config: OptimizationConfig, version: str = __version__
) -> None:
    """Persist the best controls, the evaluation history and run metadata.

    Floats go through Python's shortest round-trip representation, so a
    reloaded best-controls file is bit-identical to the arrays in memory.
    """
    folder = Path(folder)
    pulse_names = [p.pulse_name for p in config.pulses]
    time_names = [p.time_name for p in config.pulses]
    parameter_names = [p.parameter_name for p in config.parameters]
    best = {
        "best_FoM": result.best_FoM,
        "best_std": result.best_std,
        "termination_reason": result.termination_reason,
        "total_evaluations": result.total_iterations,
        "super_iterations_completed": result.super_iterations_completed,
        "eval_counts": result.eval_counts,
        "pulses": {
            name: np.asarray(p, dtype=float).tolist()
            for name, p in zip(pulse_names, result.best_controls.pulses)
        },
        "timegrids": {
            name: np.asarray(t, dtype=float).tolist()
            for name, t in zip(time_names, result.best_controls.timegrids)
        },
        "parameters": {
            name: float(v)
            for name, v in zip(parameter_names, result.best_controls.parameters)
        },
    }
    _write_with_retry(folder / "best_controls.json", json.dumps(best, indent=1))
    rows = [
        (row.index, row.super_iteration, row.kind, repr(row.FoM),
         "" if row.std is None else repr(row.std), int(row.accepted))
        for row in result.history
    ]
    with open(folder / "history.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "super_iteration", "kind", "FoM", "std", "accepted"])
        writer.writerows(rows)
    (folder / "version.txt").write_text(version + "\n", encoding="utf-8")


def _write_with_retry(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as err:
        log.warning("write of %s failed (%s); retrying once", path, err)
        path.write_text(text, encoding="utf-8")


def load_best_controls(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_config_copy(folder: Path, config: OptimizationConfig):
    """Verbatim copy of the input document; written before the run starts."""
    (Path(folder) / "config.json").write_text(config.raw_text, encoding="utf-8")


def build_builtin_evaluator(name: str, config: OptimizationConfig):
    """Construct a built-in open-loop problem sized from the configuration."""
    if not config.pulses:
        raise ConfigurationError("pulses", "built-in problems need one pulse")
    spec = config.pulses[0]
    times = {t.time_name: t for t in config.times}
    duration = times[spec.time_name].initial_value
    section = dict(config.problem)
    if name == "ising":
        model = IsingChainModel(
            n_qubits=int(section.get("n_qubits", 5)),
            J=float(section.get("J", 1.0)),
            g=float(section.get("g", 2.0)),
            noise_std=float(section.get("noise_std", 0.0)),
            T=duration,
            bins=spec.bins_number,
        )
        rng = child_rng(config.algorithm.seed, NOISE_STREAM_KEY)
        return IsingEvaluator(model, rng=rng)
    if name == "qubit":
        model = QubitTransferModel(
            T=duration,
            bins=spec.bins_number,
            detuning=float(section.get("detuning", 0.0)),
        )
        return QubitEvaluator(model)
    raise ConfigurationError("problem", f"unknown built-in problem {name!r}")


def _grape_result_to_optimization_result(config, grape_result, timegrids) -> OptimizationResult:
    controls = ControlsSet(
        pulses=[np.asarray(p, dtype=float) for p in grape_result.optimal_pulses],
        timegrids=[np.asarray(t, dtype=float) for t in timegrids],
        parameters=[],
    )
    history = [
        HistoryRow(
            index=i + 1, super_iteration=1, kind="search",
            FoM=f, std=None, accepted=True,
        )
        for i, f in enumerate(grape_result.FoM_history)
    ]
    return OptimizationResult(
        best_controls=controls,
        best_FoM=grape_result.final_FoM,
        best_std=None,
        total_iterations=grape_result.iterations,
        super_iterations_completed=0,
        termination_reason=grape_result.termination,
        history=history,
        eval_counts={"search": grape_result.iterations},
    )


def run_grape_from_config(config: OptimizationConfig, evaluator) -> OptimizationResult:
    """Drive a model-based GRAPE run described by the configuration."""
    if not hasattr(evaluator, "quantum_model"):
        raise ConfigurationError(
            "algorithm_settings.algorithm_name",
            "GRAPE needs a model-based evaluator exposing the Hamiltonians; "
            "file-exchange evaluators cannot be used",
        )
    model = evaluator.quantum_model()
    times = {t.time_name: t for t in config.times}
    if len(config.pulses) != len(model.Hc):
        raise ConfigurationError(
            "pulses",
            f"GRAPE needs one pulse per control Hamiltonian "
            f"({len(model.Hc)} controls, {len(config.pulses)} pulses)",
        )
    first = config.pulses[0]
    duration = times[first.time_name].initial_value
    bins = first.bins_number
    for i, spec in enumerate(config.pulses):
        if spec.bins_number != bins or times[spec.time_name].initial_value != duration:
            raise ConfigurationError(
                f"pulses[{i}]", "GRAPE pulses must share bins_number and duration"
            )
    problem = GrapeProblem(
        H0=model.H0, Hc=model.Hc, rho0=model.rho0,
        rho_aim=model.rho_aim, U_aim=model.U_aim,
        T=duration, N=bins,
    )
    timegrids = [build_timegrid(times[s.time_name], s.bins_number) for s in config.pulses]
    initial = np.array(
        [initial_base_pulse(s, g) for s, g in zip(config.pulses, timegrids)]
    )
    for spec in config.pulses:
        if spec.scaling_function is not None:
            probe = np.asarray(spec.scaling_function(timegrids[0]), dtype=float)
            if probe.shape != () and not np.allclose(probe, 1.0):
                log.warning(
                    "pulse %r: scaling_function is ignored by GRAPE "
                    "(amplitudes are optimized directly)", spec.pulse_name,
                )
    grape_settings = config.algorithm.grape
    gcfg = GrapeConfig(
        max_iterations=grape_settings.max_eval_total,
        ftol=grape_settings.ftol,
        gtol=grape_settings.gtol,
        lower_limit=min(s.lower_limit for s in config.pulses),
        upper_limit=max(s.upper_limit for s in config.pulses),
        control_bounds=[(s.lower_limit, s.upper_limit) for s in config.pulses],
        direction=config.algorithm.optimization_direction,
        jitter_scale=max(s.amplitude_variation for s in config.pulses),
        seed=config.algorithm.seed,
    )
    result = run_grape(problem, gcfg, initial_pulses=initial)
    log.info(
        "GRAPE finished: FoM %.8g after %d iterations (%s)",
        result.final_FoM, result.iterations, result.termination,
    )
    return _grape_result_to_optimization_result(config, result, timegrids)


@dataclass
class RunOutput:
    result: OptimizationResult
    folder: Path


def run_optimization(
    config: OptimizationConfig,
    evaluator,
    results_base=None,
    clock=time.monotonic,
    folder_clock=datetime.now,
) -> RunOutput:
    """Execute one configured optimization with full results persistence."""
    base, source = resolve_results_base(results_base, config)
    folder = create_results_folder(base, config.optimization_client_name, clock=folder_clock)
    handler = setup_run_logging(folder)
    try:
        log.info("results folder %s (base from %s)", folder, source)
        write_config_copy(folder, config)
        for note in config.defaults_applied:
            log.info("default applied: %s", note)
        for note in config.warnings:
            log.warning("%s", note)
        if config.algorithm.algorithm_name == "GRAPE":
            result = run_grape_from_config(config, evaluator)
        else:
            driver = DcrabDriver(config, evaluator, clock=clock)
            result = driver.run()
        dump_results(folder, result, config)
        log.info(
            "run complete: best FoM %.8g, termination %s",
            result.best_FoM, result.termination_reason,
        )
        return RunOutput(result=result, folder=folder)
    finally:
        teardown_run_logging(handler)
