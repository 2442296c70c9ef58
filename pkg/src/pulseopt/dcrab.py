"""Dressed chopped-random-basis driver.

Each super-iteration draws a fresh randomized basis per pulse, runs a direct
search over the expansion coefficients (plus any constant-but-variable
parameters), and merges the winner into the carried-over base pulses.  The
first candidate of every super-iteration is the zero-coefficient point, so it
reproduces the current best controls exactly; improvements are dressed on top.

Noisy evaluators are handled by a staged re-evaluation rule and by periodic
re-calibration of the record against signal drift.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .controls import (
    BasisExpansion,
    ControlsSet,
    ParameterSpec,
    PulseSpec,
    TimeSpec,
    build_timegrid,
    clamp_parameters,
    evaluate_pulse,
    initial_base_pulse,
    sample_superparameters,
)
from .problems import EvaluatorError, FoMEvaluator, FoMResult
from .rng import child_rng
from .search import get_search_method

log = logging.getLogger(__name__)

SEARCH_STREAM_KEY = 90001  # child-rng slot for the direct search engine
MAX_MEASURE_RETRIES = 3


class EvaluatorFailure(RuntimeError):
    """Evaluator kept failing after the retry budget was spent."""


class EvaluatorAbort(RuntimeError):
    """Evaluator requested a clean shutdown."""


class _GlobalStop(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class ReEvaluationPolicy:
    """Staged verification of promising candidates under measurement noise.

    At stage k the candidate has been measured k times; it survives if the
    probability that its true value beats the record, under independent
    normal models, is at least ``thresholds[k-1]``.
    """

    thresholds: list[float] = field(default_factory=lambda: [0.33, 0.5, 0.6])
    enabled: bool = True

    def __post_init__(self):
        if self.enabled:
            if not self.thresholds:
                raise ValueError("re-evaluation needs at least one threshold")
            if any(not 0.0 < t < 1.0 for t in self.thresholds):
                raise ValueError("thresholds must lie in (0, 1)")


@dataclass
class DriftCompensation:
    """When to re-calibrate the record against the (possibly drifting) signal."""

    mode: str = "off"  # off | periodic | after_SI
    period_minutes: float = 15.0

    def __post_init__(self):
        if self.mode not in ("off", "periodic", "after_SI"):
            raise ValueError("mode must be off, periodic or after_SI")
        if self.mode == "periodic" and self.period_minutes <= 0:
            raise ValueError("period_minutes must be > 0 in periodic mode")


@dataclass
class DcrabState:
    """Mutable driver state carried across super-iterations."""

    super_iteration_index: int = 1
    base_pulses: list[np.ndarray] = field(default_factory=list)
    best_parameters: list[float] = field(default_factory=list)
    record_FoM: float | None = None
    record_std: float | None = None
    drift_offset: float = 0.0
    total_evaluations: int = 0
    start_time: float = 0.0


@dataclass
class HistoryRow:
    index: int
    super_iteration: int
    kind: str  # search | re_evaluation | drift
    FoM: float
    std: float | None
    accepted: bool


@dataclass
class OptimizationResult:
    """Best controls and the full per-evaluation history of a run."""

    best_controls: ControlsSet
    best_FoM: float
    best_std: float | None
    total_iterations: int
    super_iterations_completed: int
    termination_reason: str
    history: list[HistoryRow] = field(default_factory=list)
    eval_counts: dict = field(default_factory=dict)


def _probability_better(
    mean_candidate: float, std_candidate: float, mean_record: float, std_record: float
) -> float:
    """P(candidate below record) for two independent normal models."""
    spread = math.sqrt(std_candidate**2 + std_record**2)
    if spread == 0.0:
        if mean_candidate < mean_record:
            return 1.0
        return 0.5 if mean_candidate == mean_record else 0.0
    return NormalDist(0.0, 1.0).cdf((mean_record - mean_candidate) / spread)


class DcrabDriver:
    """One dCRAB optimization run bound to a config and an evaluator."""

    def __init__(
        self,
        config,
        evaluator: FoMEvaluator,
        clock=time.monotonic,
    ):
        self.config = config
        self.evaluator = evaluator
        self.clock = clock
        alg = config.algorithm
        self.sign = 1.0 if alg.optimization_direction == "minimization" else -1.0
        self.pulse_specs: list[PulseSpec] = list(config.pulses)
        self.param_specs: list[ParameterSpec] = list(config.parameters)
        times = {t.time_name: t for t in config.times}
        self.durations = []
        self.timegrids = []
        for spec in self.pulse_specs:
            tspec: TimeSpec = times[spec.time_name]
            self.durations.append(tspec.initial_value)
            self.timegrids.append(build_timegrid(tspec, spec.bins_number))
        self.policy: ReEvaluationPolicy | None = alg.re_evaluation
        if self.policy is not None and self.policy.enabled:
            if not getattr(evaluator, "provides_std", False):
                raise ValueError(
                    "re-evaluation is enabled but the evaluator does not "
                    "provide a FoM standard deviation"
                )
        self.drift: DriftCompensation = alg.drift or DriftCompensation()
        self.seed = alg.seed
        self.state = DcrabState()
        self.history: list[HistoryRow] = []
        self.counts = {"search": 0, "re_evaluation": 0, "drift": 0}
        self._record_pulses: list[np.ndarray] | None = None
        self._record_params: list[float] = []
        self._expansions: list[BasisExpansion] = []
        self._coeff_slices: list[slice] = []
        self._last_drift_check: float = 0.0

    # record bookkeeping: internal values are in minimization orientation

    @property
    def _record_J(self) -> float | None:
        if self.state.record_FoM is None:
            return None
        return self.sign * self.state.record_FoM

    def _set_record(self, J: float, std: float | None, controls: ControlsSet):
        self.state.record_FoM = self.sign * J
        self.state.record_std = std
        self._record_pulses = [p.copy() for p in controls.pulses]
        self._record_params = list(controls.parameters)

    def _record_controls(self) -> ControlsSet:
        return ControlsSet(
            pulses=[p.copy() for p in self._record_pulses],
            timegrids=[t.copy() for t in self.timegrids],
            parameters=list(self._record_params),
        )

    # measurement plumbing

    def _measure(self, controls: ControlsSet, kind: str) -> FoMResult:
        """One evaluator call with the consecutive-failure retry budget."""
        last_issue = None
        for attempt in range(1 + MAX_MEASURE_RETRIES):
            try:
                raw = self.evaluator.get_FoM(controls)
            except EvaluatorAbort:
                raise
            except EvaluatorError as err:
                last_issue = str(err)
                log.warning("evaluator failure (attempt %d): %s", attempt + 1, err)
                continue
            result = raw if isinstance(raw, FoMResult) else _coerce_fom(raw)
            if result.status == "abort":
                raise EvaluatorAbort("evaluator requested abort")
            if result.status != "ok" or not math.isfinite(result.FoM):
                last_issue = f"status={result.status}, FoM={result.FoM}"
                log.warning("bad evaluation (attempt %d): %s", attempt + 1, last_issue)
                continue
            self.counts[kind] += 1
            self.state.total_evaluations += 1
            return result
        raise EvaluatorFailure(
            f"evaluator failed {1 + MAX_MEASURE_RETRIES} consecutive times "
            f"({last_issue})"
        )

    def _log_history(self, result: FoMResult, kind: str, accepted: bool):
        self.history.append(
            HistoryRow(
                index=len(self.history) + 1,
                super_iteration=self.state.super_iteration_index,
                kind=kind,
                FoM=result.FoM,
                std=result.std,
                accepted=accepted,
            )
        )

    # stopping machinery

    def _check_global_stops(self):
        alg = self.config.algorithm
        if self.counts["search"] >= alg.max_eval_total:
            raise _GlobalStop("max_eval_total")
        if alg.total_time_lim is not None:
            if self.clock() - self.state.start_time >= alg.total_time_lim * 60.0:
                raise _GlobalStop("total_time_lim")

    def _check_goal(self):
        goal = self.config.algorithm.FoM_goal
        if goal is None or self._record_J is None:
            return
        if self._record_J <= self.sign * goal:
            raise _GlobalStop("goal_reached")

    # drift compensation

    def compensate_drift(self, force: bool = False):
        """Re-measure the record controls and re-anchor the record to it."""
        if self._record_pulses is None:
            return
        mode = self.drift.mode
        if not force:
            if mode != "periodic":
                return
            if self.clock() - self._last_drift_check < self.drift.period_minutes * 60.0:
                return
        self._last_drift_check = self.clock()
        try:
            fresh = self._measure(self._record_controls(), kind="drift")
        except EvaluatorFailure as err:
            log.warning("drift probe failed, skipping compensation: %s", err)
            return
        old = self.state.record_FoM
        self.state.drift_offset += fresh.FoM - old
        self.state.record_FoM = fresh.FoM
        if fresh.std is not None:
            self.state.record_std = fresh.std
        self._log_history(fresh, "drift", accepted=True)
        log.info(
            "drift compensation: record %.6g -> %.6g (cumulative offset %.6g)",
            old, fresh.FoM, self.state.drift_offset,
        )

    # candidate handling

    def consider_candidate(
        self, controls: ControlsSet, first: FoMResult
    ) -> tuple[bool, float]:
        """Accept/reject a measured candidate; returns (accepted, J seen).

        The returned value is the mean, in minimization orientation, of all
        measurements spent on this candidate; the search engine receives it as
        the objective value.
        """
        J_first = self.sign * first.FoM
        if self._record_J is None:
            self._set_record(J_first, first.std, controls)
            self._log_history(first, "search", accepted=True)
            return True, J_first

        policy = self.policy
        if policy is None or not policy.enabled:
            accepted = J_first < self._record_J
            if accepted:
                self._set_record(J_first, first.std, controls)
            self._log_history(first, "search", accepted=accepted)
            return accepted, J_first

        if first.std is None or first.std <= 0:
            raise EvaluatorFailure(
                "re-evaluation policy requires a positive std on every measurement"
            )
        measures = [first]
        record_std = self.state.record_std or 0.0
        for stage, threshold in enumerate(policy.thresholds, start=1):
            j_values = [self.sign * m.FoM for m in measures]
            mean_j = float(np.mean(j_values))
            sigma = float(np.mean([m.std for m in measures]))
            p = _probability_better(
                mean_j, sigma / math.sqrt(stage), self._record_J, record_std
            )
            if p < threshold:
                self._log_history(first, "search", accepted=False)
                for extra in measures[1:]:
                    self._log_history(extra, "re_evaluation", accepted=False)
                return False, mean_j
            if stage < len(policy.thresholds):
                measures.append(self._measure(controls, kind="re_evaluation"))
        pooled_mean = float(np.mean([self.sign * m.FoM for m in measures]))
        pooled_std = float(
            np.mean([m.std for m in measures]) / math.sqrt(len(measures))
        )
        self._set_record(pooled_mean, pooled_std, controls)
        self._log_history(first, "search", accepted=True)
        for extra in measures[1:]:
            self._log_history(extra, "re_evaluation", accepted=True)
        return True, pooled_mean

    # search-space assembly

    def start_superiteration(self, si: int):
        """Fresh basis draw; returns (expansions, x0, offsets)."""
        self.state.super_iteration_index = si
        expansions = []
        offsets: list[float] = []
        for pi, spec in enumerate(self.pulse_specs):
            sp = sample_superparameters(spec.basis, child_rng(self.seed, si, pi))
            count = spec.basis.coefficient_count()
            expansions.append(
                BasisExpansion(
                    superparameters=sp,
                    coefficients=np.zeros(count),
                    base_pulse=self.state.base_pulses[pi],
                )
            )
            offsets.extend([spec.amplitude_variation] * count)
        offsets.extend(p.amplitude_variation for p in self.param_specs)
        self._expansions = expansions
        self._coeff_slices = []
        start = 0
        for e in expansions:
            stop = start + e.coefficients.size
            self._coeff_slices.append(slice(start, stop))
            start = stop
        x0 = np.concatenate(
            [np.zeros(start), np.asarray(self.state.best_parameters, dtype=float)]
        )
        return expansions, x0, np.asarray(offsets, dtype=float)

    def build_controls(self, x: np.ndarray) -> ControlsSet:
        """Map a search vector onto constrained pulses and clamped parameters."""
        x = np.asarray(x, dtype=float)
        pulses = []
        for spec, expansion, sl, grid, T in zip(
            self.pulse_specs, self._expansions, self._coeff_slices,
            self.timegrids, self.durations,
        ):
            expansion.coefficients = x[sl]
            pulses.append(evaluate_pulse(spec, expansion, grid, T))
        n_coeff = self._coeff_slices[-1].stop if self._coeff_slices else 0
        params = clamp_parameters(self.param_specs, x[n_coeff:])
        return ControlsSet(
            pulses=pulses,
            timegrids=[t.copy() for t in self.timegrids],
            parameters=params,
        )

    def _objective(self, x: np.ndarray) -> float:
        self._check_global_stops()
        self.compensate_drift()
        controls = self.build_controls(x)
        first = self._measure(controls, kind="search")
        _accepted, value = self.consider_candidate(controls, first)
        self._check_goal()
        return value

    # the driver loop

    def run(self) -> OptimizationResult:
        alg = self.config.algorithm
        self.state.start_time = self.clock()
        self._last_drift_check = self.state.start_time
        self.state.base_pulses = [
            initial_base_pulse(spec, grid)
            for spec, grid in zip(self.pulse_specs, self.timegrids)
        ]
        self.state.best_parameters = [p.initial_value for p in self.param_specs]
        self._record_params = list(self.state.best_parameters)

        search = get_search_method(alg.dsm.name)
        reason = "super_iterations_completed"
        completed = 0
        try:
            for si in range(1, alg.super_iteration_number + 1):
                _, x0, offsets = self.start_superiteration(si)
                # the zero-coefficient candidate reproduces the carried-over
                # best controls; it seeds the record and gives every engine
                # (including population-based ones) the dressing identity
                self._objective(x0)
                record = search(
                    objective=self._objective,
                    x0=x0,
                    offsets=offsets,
                    criteria=alg.dsm.criteria,
                    rng=child_rng(self.seed, si, SEARCH_STREAM_KEY),
                    adaptive=alg.dsm.is_adaptive,
                    sigma0=alg.dsm.sigma0,
                    clock=self.clock,
                )
                log.info(
                    "super-iteration %d finished (%s) after %d evaluations, "
                    "record FoM %.8g",
                    si, record.terminated_by, len(record.history),
                    self.state.record_FoM,
                )
                self.state.base_pulses = [p.copy() for p in self._record_pulses]
                self.state.best_parameters = list(self._record_params)
                completed = si
                if self.drift.mode == "after_SI":
                    self.compensate_drift(force=True)
        except _GlobalStop as stop:
            reason = stop.reason
        except KeyboardInterrupt:
            reason = "interrupted"
            log.warning("interrupted; persisting partial results")
        except EvaluatorAbort:
            reason = "evaluator_abort"
            log.info("evaluator requested abort; persisting partial results")
        except EvaluatorFailure as err:
            reason = "evaluator_failure"
            log.error("aborting run: %s", err)
        log.info("dCRAB run finished: %s", reason)
        return self._result(reason, completed)

    def _result(self, reason: str, completed: int) -> OptimizationResult:
        if self._record_pulses is None:
            # nothing was ever evaluated; report the initial guess
            self._record_pulses = [p.copy() for p in self.state.base_pulses]
        return OptimizationResult(
            best_controls=self._record_controls(),
            best_FoM=self.state.record_FoM if self.state.record_FoM is not None else math.nan,
            best_std=self.state.record_std,
            total_iterations=self.state.total_evaluations,
            super_iterations_completed=completed,
            termination_reason=reason,
            history=list(self.history),
            eval_counts=dict(self.counts),
        )


def _coerce_fom(raw) -> FoMResult:
    if isinstance(raw, dict):
        std = raw.get("std")
        return FoMResult(
            FoM=float(raw["FoM"]),
            std=None if std is None else float(std),
            status=raw.get("status", "ok"),
        )
    return FoMResult(FoM=float(raw))


def run_dcrab(config, evaluator: FoMEvaluator, clock=time.monotonic) -> OptimizationResult:
    """Run a full dCRAB optimization for a parsed configuration."""
    if not config.pulses and not config.parameters:
        raise ValueError("dCRAB needs at least one pulse or one parameter")
    driver = DcrabDriver(config, evaluator, clock=clock)
    return driver.run()
