"""Gradient-free local search engines used inside each dCRAB super-iteration.

Both engines minimize.  Maximization is handled upstream by negating the
objective.  The objective callback may raise :class:`StopSearch` to signal an
externally triggered stop (global evaluation budget, goal reached, wall-time);
the engine then finalizes its record with ``terminated_by = "global"``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

EPS_F = 1e-14  # floor for relative FoM-spread denominators


class StopSearch(Exception):
    """Raised by an objective callback to end the search from outside."""

    def __init__(self, reason: str = "global"):
        super().__init__(reason)
        self.reason = reason


@dataclass
class SearchCriteria:
    """Per-search stopping criteria; ``None`` disables a criterion."""

    xatol: float | None = None
    frtol: float | None = None
    max_eval: int | None = None
    time_lim: float | None = None  # minutes
    cbs_funct_evals: int | None = None
    cbs_change: float | None = None

    def __post_init__(self):
        for name in ("xatol", "frtol", "time_lim", "cbs_change"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be > 0 when set")
        if self.max_eval is not None and self.max_eval < 1:
            raise ValueError("max_eval must be >= 1 when set")
        if self.cbs_funct_evals is not None and self.cbs_funct_evals < 2:
            raise ValueError("cbs_funct_evals must be >= 2 when set")

    @property
    def change_based_enabled(self) -> bool:
        return self.cbs_funct_evals is not None and self.cbs_change is not None


@dataclass
class SearchRecord:
    """Evaluation history and best point of one direct-search run."""

    history: list[tuple[int, float]] = field(default_factory=list)
    best_x: np.ndarray | None = None
    best_f: float = math.inf
    terminated_by: str = "max_eval"

    def best_so_far(self) -> np.ndarray:
        """Non-increasing curve of the best value seen up to each evaluation."""
        return np.minimum.accumulate([f for _, f in self.history])


def change_based_stop(history: Sequence[float], window: int, threshold: float) -> bool:
    """True when the best-so-far trend has flattened out.

    Fits a least-squares line to the last ``window`` points of the
    best-so-far curve and fires when the absolute slope drops below
    ``threshold``.  The raw value sequence is deliberately not used: its
    slope is noise-dominated in closed-loop runs.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    values = np.asarray(history, dtype=float)
    if len(values) < window:
        return False
    best = np.minimum.accumulate(values)[-window:]
    slope = np.polyfit(np.arange(window), best, 1)[0]
    return abs(slope) < threshold


class _Budget:
    """Shared evaluation/time/trend accounting for both engines."""

    def __init__(self, objective, criteria: SearchCriteria, clock=time.monotonic):
        self._objective = objective
        self.criteria = criteria
        self._clock = clock
        self._t0 = clock()
        self.record = SearchRecord()
        self.n_eval = 0
        self.stop_reason: str | None = None

    def exhausted(self) -> bool:
        c = self.criteria
        if self.stop_reason is not None:
            return True
        if c.max_eval is not None and self.n_eval >= c.max_eval:
            self.stop_reason = "max_eval"
            return True
        if c.time_lim is not None and (self._clock() - self._t0) >= c.time_lim * 60.0:
            self.stop_reason = "time"
            return True
        if c.change_based_enabled and change_based_stop(
            [f for _, f in self.record.history], c.cbs_funct_evals, c.cbs_change
        ):
            self.stop_reason = "change_based"
            return True
        return False

    def __call__(self, x: np.ndarray) -> float:
        """Evaluate, record, and coerce non-finite values to +inf."""
        if self.exhausted():
            raise StopSearch(self.stop_reason)
        try:
            f = float(self._objective(np.asarray(x, dtype=float)))
        except StopSearch as stop:
            self.stop_reason = "global"
            raise stop
        self.n_eval += 1
        if not math.isfinite(f):
            f = math.inf
        self.record.history.append((self.n_eval, f))
        if f < self.record.best_f:
            self.record.best_f = f
            self.record.best_x = np.array(x, dtype=float)
        return f

    def finalize(self, reason: str) -> SearchRecord:
        self.record.terminated_by = self.stop_reason or reason
        return self.record


def _simplex_coefficients(n: int, adaptive: bool) -> tuple[float, float, float, float]:
    """Reflection, expansion, contraction and shrink coefficients."""
    if adaptive:
        return 1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2.0 * n), 1.0 - 1.0 / n
    return 1.0, 2.0, 0.5, 0.5


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    offsets: Sequence[float],
    criteria: SearchCriteria | None = None,
    adaptive: bool = True,
    clock=time.monotonic,
) -> SearchRecord:
    """Simplex search from the start simplex {x0, x0 + offsets_i * e_i}.

    With ``adaptive`` the coefficients scale with dimension, which improves
    behavior for the 10-plus dimensional searches a Fourier super-iteration
    produces.  Converges when the largest per-coordinate vertex spread falls
    below ``xatol`` and the relative value spread falls below ``frtol``.
    """
    x0 = np.asarray(x0, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    n = x0.size
    if n < 1 or offsets.shape != x0.shape:
        raise ValueError("x0 and offsets must be equal-length, non-empty vectors")
    if np.any(offsets == 0.0):
        raise ValueError("offsets must be nonzero")
    criteria = criteria or SearchCriteria()
    rho, chi, psi, sigma = _simplex_coefficients(n, adaptive)
    budget = _Budget(objective, criteria, clock)

    simplex = np.repeat(x0[None, :], n + 1, axis=0)
    for i in range(n):
        simplex[i + 1, i] += offsets[i]

    try:
        fvals = np.array([budget(v) for v in simplex])
        # ties broken by insertion order: stable sort keeps the search deterministic
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]

        while True:
            spread_x = np.max(simplex.max(axis=0) - simplex.min(axis=0))
            spread_f = abs(fvals[-1] - fvals[0]) / max(abs(fvals[0]), EPS_F)
            x_ok = criteria.xatol is None or spread_x < criteria.xatol
            f_ok = criteria.frtol is None or spread_f < criteria.frtol
            if (criteria.xatol is not None or criteria.frtol is not None) and x_ok and f_ok:
                reason = "xatol" if criteria.xatol is not None else "frtol"
                return budget.finalize(reason)

            centroid = simplex[:-1].mean(axis=0)
            worst = simplex[-1]
            xr = centroid + rho * (centroid - worst)
            fr = budget(xr)
            if fr < fvals[0]:
                xe = centroid + rho * chi * (centroid - worst)
                fe = budget(xe)
                if fe < fr:
                    simplex[-1], fvals[-1] = xe, fe
                else:
                    simplex[-1], fvals[-1] = xr, fr
            elif fr < fvals[-2]:
                simplex[-1], fvals[-1] = xr, fr
            else:
                if fr < fvals[-1]:
                    xc = centroid + psi * rho * (centroid - worst)
                    fc = budget(xc)
                    accept = fc <= fr
                else:
                    xc = centroid - psi * (centroid - worst)
                    fc = budget(xc)
                    accept = fc < fvals[-1]
                if accept:
                    simplex[-1], fvals[-1] = xc, fc
                else:
                    for i in range(1, n + 1):
                        simplex[i] = simplex[0] + sigma * (simplex[i] - simplex[0])
                        fvals[i] = budget(simplex[i])
            order = np.argsort(fvals, kind="stable")
            simplex, fvals = simplex[order], fvals[order]
    except StopSearch as stop:
        return budget.finalize(stop.reason)


def _cmaes_parameters(n: int, popsize: int | None):
    """Default strategy parameters for (mu/mu_w, lambda) CMA-ES."""
    lam = popsize if popsize is not None else 4 + int(3 * math.log(n))
    mu = lam // 2
    raw = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mueff = 1.0 / np.sum(weights**2)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))
    return lam, mu, weights, mueff, cc, cs, c1, cmu, damps, chi_n


def default_population_size(n: int) -> int:
    """lambda = 4 + floor(3 ln n), the canonical CMA-ES default."""
    return 4 + int(3 * math.log(n))


def cmaes(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    sigma0: float,
    criteria: SearchCriteria | None = None,
    rng: np.random.Generator | None = None,
    popsize: int | None = None,
    clock=time.monotonic,
) -> SearchRecord:
    """Covariance matrix adaptation evolution strategy, canonical form.

    Rank-one and rank-mu covariance updates with cumulative step-size
    adaptation.  ``xatol`` is read as a threshold on the global step size
    sigma; ``frtol`` bounds the relative fitness spread within a generation.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if sigma0 <= 0:
        raise ValueError("sigma0 must be > 0")
    criteria = criteria or SearchCriteria()
    rng = rng or np.random.default_rng()
    lam, mu, weights, mueff, cc, cs, c1, cmu, damps, chi_n = _cmaes_parameters(
        n, popsize
    )
    budget = _Budget(objective, criteria, clock)

    mean = x0.copy()
    sigma = float(sigma0)
    pc = np.zeros(n)
    ps = np.zeros(n)
    C = np.eye(n)
    generation = 0

    try:
        while True:
            if criteria.xatol is not None and sigma < criteria.xatol:
                return budget.finalize("xatol")

            # eigendecomposition each generation; dimensions here are small
            eigvals, B = np.linalg.eigh(C)
            eigvals = np.maximum(eigvals, 1e-20)
            D = np.sqrt(eigvals)
            inv_sqrt_C = (B / D) @ B.T

            z = rng.standard_normal((lam, n))
            ys = z * D @ B.T  # rows: B @ (D * z_k)
            xs = mean + sigma * ys
            fs = np.array([budget(x) for x in xs])

            order = np.argsort(fs, kind="stable")
            xs, ys, fs = xs[order], ys[order], fs[order]

            spread_f = abs(fs[-1] - fs[0]) / max(abs(fs[0]), EPS_F)
            if criteria.frtol is not None and spread_f < criteria.frtol:
                x_ok = criteria.xatol is None or sigma < criteria.xatol
                if x_ok:
                    return budget.finalize("frtol")

            old_mean = mean
            mean = weights @ xs[:mu]
            y_w = (mean - old_mean) / sigma

            ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt_C @ y_w)
            generation += 1
            hsig = float(
                np.linalg.norm(ps)
                / math.sqrt(1 - (1 - cs) ** (2 * generation))
                / chi_n
                < 1.4 + 2 / (n + 1)
            )
            pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w

            rank_mu = (ys[:mu] * weights[:, None]).T @ ys[:mu]
            C = (
                (1 - c1 - cmu) * C
                + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
                + cmu * rank_mu
            )
            C = 0.5 * (C + C.T)  # guard symmetry against round-off

            sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
    except StopSearch as stop:
        return budget.finalize(stop.reason)


SEARCH_METHODS: dict[str, Callable] = {}


def register_search_method(name: str, runner: Callable) -> None:
    """Expose a custom direct-search engine under a configuration name.

    The runner must accept (objective, x0, offsets, criteria, rng, adaptive,
    sigma0, clock) keyword-style and return a :class:`SearchRecord`.
    """
    SEARCH_METHODS[name] = runner


def get_search_method(name: str) -> Callable:
    try:
        return SEARCH_METHODS[name]
    except KeyError:
        raise KeyError(
            f"unknown direct search method {name!r}; registered: "
            f"{sorted(SEARCH_METHODS)}"
        ) from None


def _run_nelder_mead(objective, x0, offsets, criteria, rng, adaptive, sigma0, clock):
    return nelder_mead(objective, x0, offsets, criteria, adaptive=adaptive, clock=clock)


def _run_cmaes(objective, x0, offsets, criteria, rng, adaptive, sigma0, clock):
    if sigma0 is None:
        # one global step size: use the mean requested per-coordinate variation
        sigma0 = float(np.mean(np.abs(offsets)))
    return cmaes(objective, x0, sigma0, criteria, rng=rng, clock=clock)


register_search_method("NelderMead", _run_nelder_mead)
register_search_method("CMAES", _run_cmaes)
