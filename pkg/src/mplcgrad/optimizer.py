"""L-BFGS minimization over phase vectors, multi-trial runs and trace statistics."""

import enum
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .device import Detection, forward, random_device
from .gradients import EstimatorConfig, NoisyCostProbe, NoiseModel, estimate_gradient
from .linalg import haar_unitary
from .metrics import Metric, normalized_cost


class Termination(str, enum.Enum):
    GRADIENT_TOLERANCE = "gradient_tolerance"
    MAX_ITERATIONS = "max_iterations"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass(frozen=True)
class OptimizerOptions:
    memory: int = 10
    gradient_tolerance: float = 1e-12
    max_iterations: int = 1000
    c1: float = 1e-4
    c2: float = 0.9
    initial_step: float = 1.0
    max_line_search: int = 40

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"Wolfe constants need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class TrialTrace:
    costs: list
    final_params: np.ndarray
    termination: Termination
    seed: int = None
    estimator: EstimatorConfig = None
    metric: Metric = None
    detection: Detection = None
    cost_evaluations: int = 0
    gradient_evaluations: int = 0
    final: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return len(self.costs) - 1

    @property
    def final_cost(self):
        return self.costs[-1]

    def iterations_to(self, threshold):
        """First iteration whose recorded cost is <= threshold, or None."""
        hits = np.flatnonzero(np.asarray(self.costs) <= threshold)
        return int(hits[0]) if hits.size else None

    def to_dict(self):
        return {
            "seed": self.seed,
            "termination": self.termination.value,
            "iterations": self.iterations,
            "final_cost": self.final_cost,
            "cost_evaluations": self.cost_evaluations,
            "gradient_evaluations": self.gradient_evaluations,
            "estimator": None if self.estimator is None else self.estimator.to_dict(),
            "metric": None if self.metric is None else Metric(self.metric).value,
            "detection": None if self.detection is None else Detection(self.detection).value,
            "final": dict(self.final),
        }


class _Objective:
    def __init__(self, cost_fn, grad_fn):
        self.cost_fn = cost_fn
        self.grad_fn = grad_fn
        self.n_cost = 0
        self.n_grad = 0

    def cost(self, x):
        self.n_cost += 1
        f = float(self.cost_fn(x))
        if not np.isfinite(f):
            raise FloatingPointError(f"cost function returned {f} at evaluation {self.n_cost}")
        return f

    def grad(self, x):
        self.n_grad += 1
        g = np.asarray(self.grad_fn(x), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"gradient contains non-finite entries at evaluation {self.n_grad}")
        return g


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da), (b, fb, db), or None."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def _line_search(obj, x, f0, g0, d, step, opts):
    """Strong-Wolfe line search (bracketing then zoom). Returns (t, f, g) or None."""
    dg0 = g0 @ d
    c1, c2 = opts.c1, opts.c2
    evals = 0

    def phi(t):
        return obj.cost(x + t * d)

    def dphi(t):
        g = obj.grad(x + t * d)
        return g, g @ d

    def zoom(lo, f_lo, dg_lo, hi, f_hi, dg_hi):
        nonlocal evals
        while evals < opts.max_line_search:
            t = None
            if dg_hi is not None:
                t = _cubic_min(lo, f_lo, dg_lo, hi, f_hi, dg_hi)
            if t is None:
                # quadratic through f_lo, dg_lo, f_hi
                denom = 2 * (f_hi - f_lo - dg_lo * (hi - lo))
                t = lo - dg_lo * (hi - lo) ** 2 / denom if denom > 0 else None
            width = hi - lo
            if t is None or not (min(lo, hi) + 0.1 * abs(width) <= t <= max(lo, hi) - 0.1 * abs(width)):
                t = lo + 0.5 * width
            if t == lo or t == hi:
                return None
            evals += 1
            f = phi(t)
            if f > f0 + c1 * t * dg0 or f >= f_lo:
                hi, f_hi, dg_hi = t, f, None
                continue
            g, dg = dphi(t)
            if abs(dg) <= -c2 * dg0:
                return t, f, g
            if dg * (hi - lo) >= 0:
                hi, f_hi, dg_hi = lo, f_lo, dg_lo
            lo, f_lo, dg_lo = t, f, dg
        return None

    t_prev, f_prev, dg_prev = 0.0, f0, dg0
    t = step
    while evals < opts.max_line_search:
        evals += 1
        f = phi(t)
        if f > f0 + c1 * t * dg0 or (t_prev > 0 and f >= f_prev):
            return zoom(t_prev, f_prev, dg_prev, t, f, None)
        g, dg = dphi(t)
        if abs(dg) <= -c2 * dg0:
            return t, f, g
        if dg >= 0:
            return zoom(t, f, dg, t_prev, f_prev, dg_prev)
        t_prev, f_prev, dg_prev = t, f, dg
        t = 2.0 * t
    return None


def minimize(cost_fn, grad_fn, p0, opts=None, monitor=None):
    """L-BFGS with two-loop recursion and a strong-Wolfe line search.

    ``monitor(x)`` supplies the value recorded per iteration; it defaults to
    ``cost_fn`` (pass the noiseless cost here when cost_fn is noisy).
    Line-search failure ends the run with that reason instead of raising.
    """
    opts = opts or OptimizerOptions()
    obj = _Objective(cost_fn, grad_fn)
    x = np.array(p0, dtype=float)
    f = obj.cost(x)
    g = obj.grad(x)
    costs = [f if monitor is None else float(monitor(x))]
    s_hist = deque(maxlen=opts.memory)
    y_hist = deque(maxlen=opts.memory)
    reason = Termination.MAX_ITERATIONS
    for _ in range(opts.max_iterations):
        if np.max(np.abs(g)) <= opts.gradient_tolerance:
            reason = Termination.GRADIENT_TOLERANCE
            break
        d = -_two_loop(g, s_hist, y_hist)
        if g @ d >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
        result = _line_search(obj, x, f, g, d, opts.initial_step, opts)
        if result is None and s_hist:
            # stale curvature pairs can produce a poor direction; retry once along -g
            s_hist.clear()
            y_hist.clear()
            d = -g
            result = _line_search(obj, x, f, g, d, opts.initial_step, opts)
        if result is None:
            reason = Termination.LINE_SEARCH_FAILURE
            break
        t, f_new, g_new = result
        s = t * d
        y = g_new - g
        if s @ y > 1e-300 and s @ y > np.finfo(float).eps * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        x = x + s
        f, g = f_new, g_new
        costs.append(f if monitor is None else float(monitor(x)))
    else:
        if np.max(np.abs(g)) <= opts.gradient_tolerance:
            reason = Termination.GRADIENT_TOLERANCE
    return TrialTrace(costs, x, reason, cost_evaluations=obj.n_cost, gradient_evaluations=obj.n_grad)


@dataclass(frozen=True)
class DeviceSpec:
    n_ports: int = 8
    n_layers: int = 9
    detection: Detection = Detection.COHERENT

    def __post_init__(self):
        object.__setattr__(self, "detection", Detection(self.detection))


def trial_problem(spec, seed):
    """Device, target, initial point and noise stream for one trial.

    Fixed layers, target and start point come from one child stream and the
    measurement noise from another, so the noise level never changes the
    sampled problem.
    """
    problem_ss, noise_ss = np.random.SeedSequence(int(seed)).spawn(2)
    rng = np.random.default_rng(problem_ss)
    device = random_device(spec.n_ports, spec.n_layers, spec.detection, rng)
    target = haar_unitary(spec.n_ports, rng)
    p0 = rng.uniform(0.0, 2 * np.pi, device.n_params)
    return device, target, p0, np.random.default_rng(noise_ss)


def run_trial(spec, cfg, metric, seed, opts=None, noise_model=NoiseModel.SQUARED):
    spec = spec if isinstance(spec, DeviceSpec) else DeviceSpec(*spec)
    metric = Metric(metric)
    device, target, p0, noise_rng = trial_problem(spec, seed)
    probe = NoisyCostProbe(device, target, metric, cfg.noise_sigma, noise_rng, noise_model)
    trace = minimize(
        probe.measure,
        lambda p: estimate_gradient(probe, p, cfg),
        p0,
        opts,
        monitor=probe.true_cost,
    )
    x = forward(device, trace.final_params)
    trace.seed = int(seed)
    trace.estimator = cfg
    trace.metric = metric
    trace.detection = spec.detection
    trace.final = {
        "cost": trace.final_cost,
        "frobenius": normalized_cost(target, x, Metric.FROBENIUS_SQ) * 4 * spec.n_ports,
        "d": normalized_cost(target, x, Metric.D) * 2 * spec.n_ports,
        "dprime": normalized_cost(target, x, Metric.D_PRIME) * 2 * spec.n_ports,
        "n_params": device.n_params,
        "probe_calls": probe.calls,
    }
    return trace


def _run_trial_args(args):
    return run_trial(*args)


def run_trials(spec, cfg, metric, n_trials, seed0, opts=None, jobs=1,
               noise_model=NoiseModel.SQUARED):
    """Independent trials with seeds seed0, seed0 + 1, ...; results in seed order."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    spec = spec if isinstance(spec, DeviceSpec) else DeviceSpec(*spec)
    cfg = cfg if isinstance(cfg, EstimatorConfig) else EstimatorConfig(**cfg)
    args = [(spec, cfg, metric, seed0 + t, opts, noise_model) for t in range(n_trials)]
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or n_trials == 1:
        return [run_trial(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_trial_args, args))


@dataclass
class QuantileTable:
    iteration: np.ndarray
    min: np.ndarray
    q25: np.ndarray
    median: np.ndarray
    q75: np.ndarray
    max: np.ndarray

    COLUMNS = ("iteration", "min", "q25", "median", "q75", "max")

    def rows(self):
        return zip(*(getattr(self, c) for c in self.COLUMNS))


def pad_traces(traces):
    """Cost matrix (trials x iterations), shorter traces carry their last value forward."""
    if not traces:
        raise ValueError("need at least one trace")
    seqs = [t.costs if isinstance(t, TrialTrace) else list(t) for t in traces]
    if any(len(s) == 0 for s in seqs):
        raise ValueError("empty cost trace")
    length = max(len(s) for s in seqs)
    return np.array([list(s) + [s[-1]] * (length - len(s)) for s in seqs], dtype=float)


def summarize(traces):
    """Per-iteration min / 25% / median / 75% / max with linear interpolation."""
    c = pad_traces(traces)
    q = np.quantile(c, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0)
    return QuantileTable(np.arange(c.shape[1]), *q)
