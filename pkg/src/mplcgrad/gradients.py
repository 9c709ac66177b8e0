"""Finite-difference gradient estimators over measured (possibly noisy) costs."""

import enum
from dataclasses import dataclass

import numpy as np

from .device import analytic_gradient, forward
from .linalg import make_rng
from .metrics import Metric, normalized_cost


def sinc(h):
    """Unnormalized sinc, sin(h)/h, with sinc(0) = 1."""
    h = np.asarray(h, dtype=float)
    safe = np.where(h == 0.0, 1.0, h)
    out = np.where(h == 0.0, 1.0, np.sin(safe) / safe)
    return float(out) if out.ndim == 0 else out


class Scheme(str, enum.Enum):
    CENTRAL_SINC = "central"
    CENTRAL_PLAIN = "central-plain"
    FORWARD = "forward"
    BACKWARD = "backward"
    ANALYTIC = "analytic"


class NoiseModel(str, enum.Enum):
    SQUARED = "squared"  # cost + eps^2, as in the noise benchmark
    ADDITIVE = "additive"  # cost + eps; zero-mean variant, not the benchmark model


DEFAULT_STEP = {
    Scheme.CENTRAL_SINC: np.pi / 2,
    Scheme.CENTRAL_PLAIN: np.pi / 2,
    Scheme.FORWARD: 2.0 ** -18,
    Scheme.BACKWARD: 2.0 ** -18,
    Scheme.ANALYTIC: np.pi / 2,
}


@dataclass(frozen=True)
class EstimatorConfig:
    scheme: Scheme = Scheme.CENTRAL_SINC
    step: float = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        scheme = Scheme(self.scheme)
        object.__setattr__(self, "scheme", scheme)
        if self.step is None:
            object.__setattr__(self, "step", float(DEFAULT_STEP[scheme]))
        step = float(self.step)
        object.__setattr__(self, "step", step)
        if not np.isfinite(step) or step <= 0:
            raise ValueError(f"finite difference step must be positive, got {step}")
        if scheme is Scheme.CENTRAL_SINC and step >= np.pi:
            raise ValueError(f"sinc-corrected central difference needs 0 < h < pi, got {step}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def to_dict(self):
        return {"scheme": self.scheme.value, "step": self.step, "noise_sigma": self.noise_sigma}

    @property
    def evaluations_per_gradient(self):
        """Probe calls one gradient estimate costs for P parameters, as (a, b) in a*P + b."""
        return {
            Scheme.CENTRAL_SINC: (2, 0),
            Scheme.CENTRAL_PLAIN: (2, 0),
            Scheme.FORWARD: (1, 1),
            Scheme.BACKWARD: (1, 1),
            Scheme.ANALYTIC: (0, 0),
        }[self.scheme]


class NoisyCostProbe:
    """Simulated cost measurement on a device configured towards ``target``.

    Every call to :meth:`measure` returns the normalized cost plus a fresh
    noise draw per evaluated point and counts the evaluations. An optional
    correction table maps requested phases to drive signals before they reach
    the device.
    """

    def __init__(self, device, target, metric=Metric.FROBENIUS_SQ, sigma=0.0, rng=None,
                 noise_model=NoiseModel.SQUARED, correction=None):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.device = device
        self.target = np.asarray(target, dtype=complex)
        if self.target.shape != (device.n_ports, device.n_ports):
            raise ValueError("target does not match device port count")
        self.metric = Metric(metric)
        self.sigma = float(sigma)
        self.rng = make_rng(0 if rng is None else rng)
        self.noise_model = NoiseModel(noise_model)
        self.correction = correction
        self.calls = 0

    def drives(self, p):
        p = np.asarray(p, dtype=float)
        if self.correction is None:
            return p
        return self.correction.drive(p)

    def true_cost(self, p):
        """Noiseless normalized cost; not counted as a measurement."""
        return normalized_cost(self.target, forward(self.device, self.drives(p)), self.metric)

    def measure(self, p):
        p = np.asarray(p, dtype=float)
        value = self.true_cost(p)
        count = 1 if p.ndim == 1 else p.shape[0]
        self.calls += count
        if self.sigma > 0:
            eps = self.rng.normal(0.0, self.sigma, size=np.shape(value))
            value = value + (eps * eps if self.noise_model is NoiseModel.SQUARED else eps)
        return float(value) if np.ndim(value) == 0 else value

    def oracle_gradient(self, p):
        p = np.asarray(p, dtype=float)
        g = analytic_gradient(self.device, self.drives(p), self.target, self.metric)
        if self.correction is not None:
            g = g * self.correction.drive_derivative(p)
        return g


def measure_cost(probe, p):
    return probe.measure(p)


def estimate_gradient(probe, p, cfg):
    """Gradient of the measured cost at p under the configured scheme.

    The central schemes evaluate 2P points, forward/backward P + 1 (the base
    point once), and the analytic scheme none.
    """
    cfg = cfg if isinstance(cfg, EstimatorConfig) else EstimatorConfig(**cfg)
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    if n != probe.device.n_params:
        raise ValueError(f"parameter vector length {n} does not match device ({probe.device.n_params})")
    h = cfg.step
    if cfg.scheme is Scheme.ANALYTIC:
        return probe.oracle_gradient(p)
    shifts = h * np.eye(n)
    if cfg.scheme in (Scheme.CENTRAL_SINC, Scheme.CENTRAL_PLAIN):
        points = np.empty((2 * n, n))
        points[0::2] = p + shifts
        points[1::2] = p - shifts
        g = probe.measure(points)
        grad = (g[0::2] - g[1::2]) / (2 * h)
        if cfg.scheme is Scheme.CENTRAL_SINC:
            grad = grad / sinc(h)
        return grad
    sign = 1.0 if cfg.scheme is Scheme.FORWARD else -1.0
    points = np.empty((n + 1, n))
    points[0] = p
    points[1:] = p + sign * shifts
    g = probe.measure(points)
    return sign * (g[1:] - g[0]) / h
