"""Direct search engines and stopping criteria."""
import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize, rosen

from pulseopt.search import (
    SearchCriteria,
    StopSearch,
    change_based_stop,
    cmaes,
    default_population_size,
    get_search_method,
    nelder_mead,
    register_search_method,
)


def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


class TestNelderMead:
    def test_sphere_two_dim(self):
        rec = nelder_mead(
            sphere, [1.0, 1.0], [0.5, 0.5],
            SearchCriteria(xatol=1e-8, frtol=1e-12, max_eval=2000),
        )
        assert rec.best_f < 1e-10
        assert rec.terminated_by in ("xatol", "frtol")

    def test_rosenbrock_within_budget(self):
        rec = nelder_mead(
            rosen, [-1.2, 1.0], [0.5, 0.5],
            SearchCriteria(xatol=1e-10, frtol=1e-12, max_eval=400),
        )
        assert rec.best_f < 1e-6

    def test_rosenbrock_matches_reference_trajectory(self):
        # classic coefficients, n=2: evaluation-for-evaluation identical to
        # the scipy simplex from the same start simplex
        mine, ref = [], []
        nelder_mead(
            lambda x: (mine.append(np.array(x)), rosen(x))[1],
            [-1.2, 1.0], [0.5, 0.5],
            SearchCriteria(max_eval=150), adaptive=False,
        )
        minimize(
            lambda x: (ref.append(np.array(x)), rosen(x))[1],
            [-1.2, 1.0], method="Nelder-Mead",
            options={
                "maxfev": 150, "adaptive": False,
                "xatol": 1e-14, "fatol": 1e-14,
                "initial_simplex": np.array([[-1.2, 1.0], [-0.7, 1.0], [-1.2, 1.5]]),
            },
        )
        n = min(len(mine), len(ref))
        assert n >= 100
        for a, b in zip(mine[:n], ref[:n]):
            assert np.allclose(a, b, atol=1e-13)

    def test_adaptive_equals_classic_for_two_dims(self):
        # 1 + 2/2 = 2, 0.75 - 1/4 = 0.5, 1 - 1/2 = 0.5: trajectories coincide
        a, b = [], []
        nelder_mead(lambda x: (a.append(tuple(x)), rosen(x))[1], [0.5, 0.5],
                    [0.3, 0.3], SearchCriteria(max_eval=100), adaptive=True)
        nelder_mead(lambda x: (b.append(tuple(x)), rosen(x))[1], [0.5, 0.5],
                    [0.3, 0.3], SearchCriteria(max_eval=100), adaptive=False)
        assert a == b

    def test_max_eval_exact_cap(self):
        calls = []
        rec = nelder_mead(
            lambda x: (calls.append(1), sphere(x))[1],
            [1.0, 1.0, 1.0], [0.5] * 3, SearchCriteria(max_eval=10),
        )
        assert len(calls) == 10
        assert rec.terminated_by == "max_eval"

    def test_non_finite_treated_as_worst(self):
        def holey(x):
            if x[0] < 0:
                return math.nan
            return sphere(x)

        rec = nelder_mead(
            holey, [1.0, 1.0], [0.5, 0.5],
            SearchCriteria(xatol=1e-8, frtol=1e-10, max_eval=500),
        )
        assert rec.best_f < 1e-8
        assert math.isfinite(rec.best_f)

    def test_best_so_far_non_increasing(self):
        rec = nelder_mead(rosen, [-1.2, 1.0], [0.5, 0.5],
                          SearchCriteria(max_eval=300))
        curve = rec.best_so_far()
        assert np.all(np.diff(curve) <= 0)

    def test_objective_stop_search(self):
        def stopping(x):
            stopping.n += 1
            if stopping.n >= 7:
                raise StopSearch("external")
            return sphere(x)

        stopping.n = 0
        rec = nelder_mead(stopping, [1.0, 1.0], [0.5, 0.5], SearchCriteria())
        assert rec.terminated_by == "global"
        assert len(rec.history) == 6

    def test_time_limit(self):
        fake = {"t": 0.0}

        def clock():
            fake["t"] += 10.0  # ten seconds per check
            return fake["t"]

        rec = nelder_mead(
            sphere, [1.0, 1.0], [0.5, 0.5],
            SearchCriteria(time_lim=1.0),  # one minute
            clock=clock,
        )
        assert rec.terminated_by == "time"

    def test_rejects_zero_offsets(self):
        with pytest.raises(ValueError):
            nelder_mead(sphere, [1.0], [0.0], SearchCriteria())


class TestCmaes:
    def test_sphere_four_dims(self):
        rec = cmaes(sphere, [1.0] * 4, 0.3,
                    SearchCriteria(max_eval=1500), rng=np.random.default_rng(3))
        assert rec.best_f < 1e-8

    def test_rosenbrock(self):
        rec = cmaes(rosen, [-1.2, 1.0], 0.5,
                    SearchCriteria(max_eval=2500), rng=np.random.default_rng(5))
        assert rec.best_f < 1e-6

    def test_deterministic_under_seed(self):
        runs = []
        for _ in range(2):
            rec = cmaes(sphere, [1.0] * 3, 0.3,
                        SearchCriteria(max_eval=200), rng=np.random.default_rng(42))
            runs.append(rec.history)
        assert runs[0] == runs[1]

    @pytest.mark.parametrize(
        "n,lam", [(2, 6), (3, 7), (4, 8), (5, 8), (10, 10), (20, 12)]
    )
    def test_default_population_size(self, n, lam):
        # 4 + floor(3 ln n), frozen against the published defaults
        assert default_population_size(n) == lam

    def test_sigma_threshold_stop(self):
        rec = cmaes(sphere, [1.0] * 2, 0.3,
                    SearchCriteria(xatol=1e-6, max_eval=10000),
                    rng=np.random.default_rng(0))
        assert rec.terminated_by == "xatol"

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            cmaes(sphere, [1.0], 0.0, SearchCriteria())


class TestChangeBasedStop:
    def test_flat_history_fires(self):
        assert change_based_stop([5.0] * 50, window=50, threshold=0.01)

    def test_improving_history_does_not_fire(self):
        hist = list(range(100, 0, -1))  # improves by 1 per evaluation
        assert not change_based_stop(hist, window=50, threshold=0.01)

    def test_short_history_never_fires(self):
        assert not change_based_stop([1.0, 0.5], window=50, threshold=0.01)

    def test_closed_loop_style_plateau(self):
        # noisy raw values on a converged plateau: best-so-far is flat, so a
        # window of 50 with threshold 0.001 fires
        rng = np.random.default_rng(8)
        hist = list(0.2 + 0.05 * rng.standard_normal(20)) + [0.1] * 50
        assert change_based_stop(hist, window=50, threshold=0.001)

    def test_slope_uses_best_so_far_not_raw(self):
        # raw values oscillate wildly but never improve: must still fire
        raw = [1.0 + ((-1) ** k) * 5.0 for k in range(60)]
        raw[0] = -10.0  # best comes first
        assert change_based_stop(raw, window=50, threshold=0.01)

    def test_window_validation(self):
        with pytest.raises(ValueError):
            change_based_stop([1.0], window=1, threshold=0.1)


class TestCriteriaValidation:
    def test_negative_tolerance(self):
        with pytest.raises(ValueError):
            SearchCriteria(xatol=-1.0)

    def test_window_minimum(self):
        with pytest.raises(ValueError):
            SearchCriteria(cbs_funct_evals=1, cbs_change=0.1)


class TestRegistry:
    def test_builtins_registered(self):
        assert get_search_method("NelderMead") is not None
        assert get_search_method("CMAES") is not None

    def test_unknown_name(self):
        with pytest.raises(KeyError, match="registered"):
            get_search_method("SimulatedAnnealing")

    def test_custom_method_pluggable(self):
        def fake_search(objective, x0, offsets, criteria, rng, adaptive, sigma0, clock):
            from pulseopt.search import SearchRecord
            f = objective(np.asarray(x0))
            return SearchRecord(history=[(1, f)], best_x=np.asarray(x0), best_f=f,
                                terminated_by="max_eval")

        register_search_method("FakeSearch", fake_search)
        try:
            runner = get_search_method("FakeSearch")
            rec = runner(objective=sphere, x0=[1.0], offsets=[0.1],
                         criteria=SearchCriteria(), rng=None, adaptive=True,
                         sigma0=None, clock=time.monotonic)
            assert rec.best_f == 1.0
        finally:
            from pulseopt.search import SEARCH_METHODS
            SEARCH_METHODS.pop("FakeSearch", None)
