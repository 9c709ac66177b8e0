"""Matrix distances between a target unitary U and a realized unitary X.

All cost functions broadcast over leading batch axes: ``x`` may be a single
N x N matrix or a stack of shape (..., N, N). Scalars come back as ``float``.
"""

import enum
from dataclasses import dataclass

import numpy as np


class Metric(str, enum.Enum):
    FROBENIUS_SQ = "frobenius"
    D = "d"
    D_PRIME = "dprime"


def _pair(u, x):
    u = np.asarray(u)
    x = np.asarray(x)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"target must be square, got shape {u.shape}")
    if x.shape[-2:] != u.shape:
        raise ValueError(f"dimension mismatch: target {u.shape}, realized {x.shape}")
    return u, x


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def overlap_magnitudes_sq(u, x):
    """|[X U^dagger]_ij|^2."""
    u, x = _pair(u, x)
    t = x @ u.conj().T
    return t.real ** 2 + t.imag ** 2


def frobenius_cost(u, x):
    u, x = _pair(u, x)
    e = u - x
    return _out(np.sum(e.real ** 2 + e.imag ** 2, axis=(-2, -1)))


def distance_d(u, x):
    """Phase-insensitive distance built from |[X U^dagger]_ij|."""
    u, x = _pair(u, x)
    s = np.abs(x @ u.conj().T)
    return _out(np.sum((np.eye(u.shape[0]) - s) ** 2, axis=(-2, -1)))


def distance_d_prime(u, x):
    """Phase-insensitive distance built from |[X U^dagger]_ij|^2.

    Unlike :func:`distance_d`, every term is a sinusoid of any single phase
    in X, so the sinc-corrected central difference is exact for it.
    """
    s2 = overlap_magnitudes_sq(u, x)
    return _out(np.sum(np.abs(np.eye(s2.shape[-1]) - s2), axis=(-2, -1)))


_COSTS = {
    Metric.FROBENIUS_SQ: (frobenius_cost, 4),
    Metric.D: (distance_d, 2),
    Metric.D_PRIME: (distance_d_prime, 2),
}


def cost(u, x, metric):
    fn, _ = _COSTS[Metric(metric)]
    return fn(u, x)


def normalization(metric, n):
    """Divisor that maps the metric onto [0, 1] for N x N unitaries."""
    return _COSTS[Metric(metric)][1] * n


def normalized_cost(u, x, metric):
    u = np.asarray(u)
    return _out(cost(u, x, metric) / normalization(metric, u.shape[0]))


@dataclass(frozen=True)
class SinusoidFit:
    """g(phi) = amplitude * sin(phi + phase) + offset, plus the max-abs fit residual."""

    amplitude: float
    phase: float
    offset: float
    residual: float = 0.0

    def __call__(self, phi):
        return self.amplitude * np.sin(np.asarray(phi) + self.phase) + self.offset

    def derivative(self, phi):
        return self.amplitude * np.cos(np.asarray(phi) + self.phase)


def _distinct_on_circle(phi, tol=1e-12):
    if phi.size == 0:
        return 0
    w = np.sort(np.mod(phi, 2 * np.pi))
    gaps = np.diff(np.append(w, w[0] + 2 * np.pi))
    return max(1, int(np.count_nonzero(gaps > tol)))


def fit_sinusoid(phi, g):
    """Least-squares fit of g = A sin(phi + alpha) + B.

    Solved linearly in the (sin phi, cos phi, 1) basis, so no initial guess or
    iteration is involved.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    g = np.asarray(g, dtype=float).ravel()
    if phi.shape != g.shape:
        raise ValueError("phi and g must have the same length")
    if _distinct_on_circle(phi) < 3:
        raise ValueError("need at least 3 samples with distinct phase mod 2*pi")
    design = np.column_stack([np.sin(phi), np.cos(phi), np.ones_like(phi)])
    sv = np.linalg.svd(design, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise ValueError("rank-deficient sweep: samples do not determine a sinusoid")
    (c_sin, c_cos, offset), *_ = np.linalg.lstsq(design, g, rcond=None)
    amplitude = float(np.hypot(c_sin, c_cos))
    phase = float(np.arctan2(c_cos, c_sin))
    if phase >= np.pi:
        phase -= 2 * np.pi
    residual = float(np.max(np.abs(design @ np.array([c_sin, c_cos, offset]) - g)))
    return SinusoidFit(amplitude, phase, float(offset), residual)


def horn_polyhedron_check(eta, tol=1e-12):
    """True iff eta can be the diagonal-magnitude vector of a unitary matrix.

    Conditions: 0 <= eta_i <= 1 and sum(eta) - 2 eta_l <= n - 2 for every l.
    """
    eta = np.asarray(eta, dtype=float)
    n = eta.shape[-1]
    if n < 2:
        raise ValueError("Horn polyhedron test needs n >= 2")
    in_box = np.all((eta >= -tol) & (eta <= 1 + tol), axis=-1)
    faces = np.sum(eta, axis=-1, keepdims=True) - 2 * eta
    in_faces = np.all(faces <= n - 2 + tol, axis=-1)
    ok = in_box & in_faces
    return bool(ok) if np.ndim(ok) == 0 else ok
