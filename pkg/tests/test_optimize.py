import numpy as np
import pytest

from oracles import grid_search_temperature
from tempcal import InvalidInputError, OptimizationError, OptimizerConfig, minimize_nll
from tempcal.calibrators import temperature_objective
from conftest import binary_dataset


def quadratic(x):
    return float((x[0] - 3) ** 2), np.array([2 * (x[0] - 3)])


def test_quadratic_converges():
    res = minimize_nll(quadratic, [0.0])
    assert res.x[0] == pytest.approx(3, abs=1e-5)
    assert res.converged
    d = res.diagnostics()
    assert set(d) == {"final_nll", "grad_norm", "iterations", "converged", "stop_reason"}


def test_stationary_start_returns_init():
    res = minimize_nll(quadratic, [3.0])
    assert res.x[0] == 3.0 and res.n_iter == 0 and res.reason == "gtol"


def test_rosenbrock():
    def rosen(x):
        a, b = x
        f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
        return f, np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])

    res = minimize_nll(rosen, [-1.2, 1.0], OptimizerConfig(ftol=0))
    assert np.allclose(res.x, [1, 1], atol=1e-5)


def test_deterministic():
    def f(x):
        return float(np.sum(np.cosh(x - 1))), np.sinh(x - 1)

    a = minimize_nll(f, [0.3, -2.0, 4.0])
    b = minimize_nll(f, [0.3, -2.0, 4.0])
    assert a.x.tobytes() == b.x.tobytes() and a.trace == b.trace


def test_trace_is_monotone():
    res = minimize_nll(quadratic, [-50.0])
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))


def test_max_iter_reported():
    res = minimize_nll(quadratic, [0.0], OptimizerConfig(max_iter=1, gtol=0, ftol=0))
    assert res.n_iter == 1 and not res.converged and res.reason == "max_iter"


def test_non_finite_region_is_backed_off():
    # finite only on x < 1; the first full step from 0 lands outside
    def f(x):
        if x[0] >= 1:
            return float("inf"), np.array([np.nan])
        return float(-np.log(1 - x[0]) + x[0] ** 2), np.array([1 / (1 - x[0]) + 2 * x[0]])

    res = minimize_nll(f, [0.5])
    assert np.isfinite(res.fun) and res.x[0] < 1


def test_always_non_finite_raises():
    calls = {"n": 0}

    def f(x):
        calls["n"] += 1
        if calls["n"] == 1:
            return 1.0, np.array([1.0])
        return float("nan"), np.array([np.nan])

    with pytest.raises(OptimizationError):
        minimize_nll(f, [0.0], OptimizerConfig(max_halvings=50))
    assert calls["n"] == 1 + 51


def test_non_finite_init_rejected():
    with pytest.raises(InvalidInputError):
        minimize_nll(lambda x: (float("nan"), np.zeros(1)), [0.0])


def test_temperature_via_descent_matches_grid():
    ds = binary_dataset(5000, tau=1.7, seed=4)
    res = minimize_nll(lambda u: temperature_objective(u, ds.logits, ds.labels), [0.0])
    tau_grid, _ = grid_search_temperature(ds.logits, ds.labels)
    assert np.exp(res.x[0]) == pytest.approx(tau_grid, abs=1e-2)
