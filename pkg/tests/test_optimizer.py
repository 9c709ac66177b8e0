import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mplcgrad.device import Detection
from mplcgrad.gradients import EstimatorConfig, Scheme
from mplcgrad.metrics import Metric
from mplcgrad.optimizer import (
    DeviceSpec,
    OptimizerOptions,
    Termination,
    TrialTrace,
    minimize,
    pad_traces,
    run_trial,
    run_trials,
    summarize,
    trial_problem,
)


def bowl(c):
    return (lambda p: float(np.sum((p - c) ** 2)), lambda p: 2 * (p - c))


def rosenbrock(p):
    return float(np.sum(100 * (p[1:] - p[:-1] ** 2) ** 2 + (1 - p[:-1]) ** 2))


def rosenbrock_grad(p):
    g = np.zeros_like(p)
    g[:-1] = -400 * p[:-1] * (p[1:] - p[:-1] ** 2) - 2 * (1 - p[:-1])
    g[1:] += 200 * (p[1:] - p[:-1] ** 2)
    return g


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_quadratic_bowl(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-3, 3, n)
    f, g = bowl(c)
    trace = minimize(f, g, rng.uniform(-3, 3, n))
    assert np.max(np.abs(trace.final_params - c)) <= 1e-10
    assert trace.iterations <= n + 5


def test_scaled_quadratic():
    scales = np.logspace(0, 3, 12)
    trace = minimize(lambda p: float(scales @ p**2), lambda p: 2 * scales * p, np.ones(12))
    assert trace.termination is Termination.GRADIENT_TOLERANCE
    assert np.max(np.abs(trace.final_params)) < 1e-10


def test_rosenbrock():
    trace = minimize(rosenbrock, rosenbrock_grad, np.full(6, -1.2), OptimizerOptions(gradient_tolerance=1e-9))
    assert np.allclose(trace.final_params, 1.0, atol=1e-6)


def test_costs_monotone():
    trace = minimize(rosenbrock, rosenbrock_grad, np.array([-1.2, 1.0, 0.5]))
    assert np.all(np.diff(trace.costs) <= 0)


def test_max_iterations():
    trace = minimize(rosenbrock, rosenbrock_grad, np.full(4, -1.2), OptimizerOptions(max_iterations=3))
    assert trace.termination is Termination.MAX_ITERATIONS
    assert trace.iterations == 3


def test_line_search_failure_reported():
    # gradient points the wrong way, so no step ever satisfies Armijo
    trace = minimize(lambda p: float(p @ p), lambda p: -2 * p, np.ones(3))
    assert trace.termination is Termination.LINE_SEARCH_FAILURE


def test_already_converged():
    f, g = bowl(np.zeros(3))
    trace = minimize(f, g, np.zeros(3))
    assert trace.iterations == 0
    assert trace.termination is Termination.GRADIENT_TOLERANCE


def test_non_finite_cost_raises():
    with pytest.raises(FloatingPointError):
        minimize(lambda p: float("nan"), lambda p: p, np.ones(2))


@pytest.mark.parametrize("kwargs", [{"c1": 0.9, "c2": 0.1}, {"c1": 0.0}, {"c2": 1.0}, {"memory": 0}])
def test_options_validation(kwargs):
    with pytest.raises(ValueError):
        OptimizerOptions(**kwargs)


def test_trial_problem_independent_of_noise():
    spec = DeviceSpec(4, 5)
    a = trial_problem(spec, 3)
    b = trial_problem(spec, 3)
    assert np.array_equal(a[0].fixed_unitaries, b[0].fixed_unitaries)
    assert np.array_equal(a[1], b[1])
    assert np.array_equal(a[2], b[2])
    assert np.all((0 <= a[2]) & (a[2] < 2 * np.pi))


def test_run_trial_analytic_converges():
    trace = run_trial(DeviceSpec(8, 9), EstimatorConfig(Scheme.ANALYTIC), Metric.FROBENIUS_SQ, 0)
    assert trace.final_cost <= 1e-10
    assert trace.final["n_params"] == 80
    assert trace.final["frobenius"] == pytest.approx(32 * trace.final_cost, abs=1e-15)


def test_run_trial_probe_calls():
    cfg = EstimatorConfig(Scheme.CENTRAL_SINC, 1.0)
    trace = run_trial(DeviceSpec(4, 5), cfg, Metric.FROBENIUS_SQ, 1, OptimizerOptions(max_iterations=5))
    assert trace.final["probe_calls"] == trace.cost_evaluations + 2 * 24 * trace.gradient_evaluations


def test_run_trials_deterministic_and_parallel():
    spec = DeviceSpec(4, 5, Detection.INTENSITY)
    cfg = EstimatorConfig(Scheme.CENTRAL_SINC, np.pi / 2, 2.0 ** -8)
    opts = OptimizerOptions(max_iterations=30)
    a = run_trials(spec, cfg, Metric.D_PRIME, 3, 10, opts)
    b = run_trials(spec, cfg, Metric.D_PRIME, 3, 10, opts, jobs=2)
    assert [t.seed for t in a] == [10, 11, 12]
    for x, y in zip(a, b):
        assert x.costs == y.costs
        assert np.array_equal(x.final_params, y.final_params)


def test_run_trials_rejects_zero():
    with pytest.raises(ValueError):
        run_trials(DeviceSpec(2, 1), EstimatorConfig(), Metric.FROBENIUS_SQ, 0, 0)


def test_summarize_single_trace():
    table = summarize([[1.0, 0.5, 0.1]])
    for col in ("min", "q25", "median", "q75", "max"):
        assert np.array_equal(getattr(table, col), [1.0, 0.5, 0.1])


def test_summarize_two_constant_traces():
    table = summarize([[0.2] * 4, [0.4] * 4])
    assert np.allclose(table.median, 0.3)
    assert np.allclose(table.min, 0.2)
    assert np.allclose(table.max, 0.4)
    assert np.allclose(table.q25, 0.25)


def sorted_quantile(values, q):
    v = np.sort(values)
    pos = q * (len(v) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def test_summarize_matches_sort_oracle():
    rng = np.random.default_rng(0)
    traces = [list(rng.uniform(0.5, 2) * rng.uniform(0.5, 0.95) ** np.arange(rng.integers(20, 40)))
              for _ in range(64)]
    table = summarize(traces)
    padded = pad_traces(traces)
    for it in (0, 7, 25, padded.shape[1] - 1):
        col = padded[:, it]
        for name, q in zip(("min", "q25", "median", "q75", "max"), (0, 0.25, 0.5, 0.75, 1)):
            assert getattr(table, name)[it] == pytest.approx(sorted_quantile(col, q), abs=1e-12)


def test_pad_traces_carries_last():
    c = pad_traces([[3.0, 2.0], [5.0, 4.0, 1.0]])
    assert c.tolist() == [[3.0, 2.0, 2.0], [5.0, 4.0, 1.0]]
    with pytest.raises(ValueError):
        pad_traces([])


def test_trace_helpers():
    t = TrialTrace([1.0, 1e-3, 1e-7, 1e-9], np.zeros(2), Termination.GRADIENT_TOLERANCE)
    assert t.iterations == 3
    assert t.iterations_to(1e-6) == 2
    assert t.iterations_to(1e-12) is None
    assert t.to_dict()["termination"] == "gradient_tolerance"
