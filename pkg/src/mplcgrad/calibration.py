"""Phase-shifter linearity calibration from the shape of the cost sweep.

With linear phase shifters, sweeping one drive signal makes the cost trace an
exact offset sinusoid. A nonlinear drive-to-phase response bends the trace;
recovering that response from the measured trace and inverting it gives a
per-shifter table of drive signals that restores the pure sinusoid.
"""

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from numpy.polynomial import Legendre
from scipy.optimize import brentq, least_squares

from .metrics import fit_sinusoid

TWO_PI = 2 * np.pi


class CalibrationError(ValueError):
    pass


class ResponseKind(str, enum.Enum):
    IDEAL = "ideal"
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class PhaseResponse:
    """phase = c1 v + c2 v^2 + ... for drive signal v."""

    coefficients: tuple = (1.0,)

    def __post_init__(self):
        c = tuple(float(x) for x in self.coefficients)
        if not c:
            raise ValueError("need at least the linear coefficient")
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def polynomial(cls, c2=0.0, c3=0.0, c1=1.0):
        return cls((c1, c2, c3) if c3 else (c1, c2))

    @property
    def kind(self):
        if self.coefficients[0] == 1.0 and not any(self.coefficients[1:]):
            return ResponseKind.IDEAL
        return ResponseKind.POLYNOMIAL

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind is ResponseKind.IDEAL:
            return v
        # phase = v * (c1 + v * (c2 + ...))
        acc = np.zeros_like(v)
        for c in reversed(self.coefficients):
            acc = acc * v + c
        return acc * v

    def derivative(self, v):
        v = np.asarray(v, dtype=float)
        acc = np.zeros_like(v)
        for k, c in reversed(list(enumerate(self.coefficients, start=1))):
            acc = acc * v + k * c
        return acc

    def is_monotone(self, lo, hi, n=2049):
        return bool(np.all(self.derivative(np.linspace(lo, hi, n)) > 0))

    def to_dict(self):
        return {"kind": self.kind.value, "coefficients": list(self.coefficients)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d.get("coefficients", (1.0,))))


@dataclass
class CorrectionTable:
    """Per-shifter monotone map from desired phase in [0, 2*pi] to drive signal.

    Each entry holds K (phase, drive) knots; between knots the map is the
    cubic spline through them (monotone PCHIP if the spline is not). Shifters
    without an entry pass their phase through unchanged. Phases are reduced
    mod 2*pi before lookup.
    """

    knots: dict = field(default_factory=dict)

    def __post_init__(self):
        self._interp = {}
        self.knots = {int(k): (np.asarray(ph, dtype=float), np.asarray(dr, dtype=float))
                      for k, (ph, dr) in self.knots.items()}

    def _interpolant(self, k):
        if k not in self._interp:
            phase, drive = self.knots[k]
            spline = CubicSpline(phase, drive)
            grid = np.linspace(phase[0], phase[-1], 16 * len(phase) + 1)
            if np.any(spline(grid, 1) <= 0):
                spline = PchipInterpolator(phase, drive)
            self._interp[k] = spline
        return self._interp[k]

    def with_shifter(self, k, phase_knots, drive_knots):
        knots = dict(self.knots)
        knots[int(k)] = (phase_knots, drive_knots)
        return CorrectionTable(knots)

    def _map(self, p, order):
        p = np.array(p, dtype=float)
        out = p.copy() if order == 0 else np.ones_like(p)
        for k in self.knots:
            wrapped = np.mod(p[..., k], TWO_PI)
            out[..., k] = self._interpolant(k)(wrapped, order)
        return out

    def drive(self, p):
        return self._map(p, 0)

    def drive_derivative(self, p):
        return self._map(p, 1)

    def to_dict(self):
        return {
            "shifters": [
                {"shifter": k, "knots": [[float(a), float(b)] for a, b in zip(*self.knots[k])]}
                for k in sorted(self.knots)
            ]
        }

    @classmethod
    def from_dict(cls, d):
        knots = {}
        for entry in d["shifters"]:
            pairs = np.asarray(entry["knots"], dtype=float)
            knots[int(entry["shifter"])] = (pairs[:, 0], pairs[:, 1])
        return cls(knots)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _sweep(probe, shifter_index, drive_samples, base):
    n = probe.device.n_params
    if not 0 <= shifter_index < n:
        raise IndexError(f"shifter index {shifter_index} out of range [0, {n})")
    base = np.zeros(n) if base is None else np.asarray(base, dtype=float)
    points = np.tile(base, (len(drive_samples), 1))
    points[:, shifter_index] = drive_samples
    return probe.measure(points)


def sweep_and_fit(probe, shifter_index, drive_samples, base=None):
    """Sweep one shifter's drive with the others held at ``base`` and fit a sinusoid.

    Returns (fit, residual); the residual is the max-abs departure of the
    measured trace from the best offset sinusoid in the drive variable.
    """
    v = np.sort(np.asarray(drive_samples, dtype=float))
    if v.size < 8:
        raise ValueError("need at least 8 drive samples")
    spacing = (v[-1] - v[0]) / (v.size - 1)
    if v[-1] - v[0] + spacing < TWO_PI * (1 - 1e-9):
        raise ValueError("drive samples must span a full 2*pi period")
    g = _sweep(probe, shifter_index, v, base)
    fit = fit_sinusoid(v, g)
    return fit, fit.residual


def _initial_phase(v, g):
    """Rough phase-vs-drive curve from one sweep, unwrapped.

    Uses the trace extremes for amplitude and offset; the sign of the local
    slope picks the branch of arcsin.
    """
    offset = 0.5 * (g.max() + g.min())
    amplitude = 0.5 * (g.max() - g.min())
    s = np.clip((g - offset) / amplitude, -1.0, 1.0)
    slope = np.gradient(g, v)
    c = np.sign(slope) * np.sqrt(1.0 - s * s)
    theta = np.unwrap(np.arctan2(s, c))
    return amplitude, offset, theta


def fit_response(v, g, degree=5):
    """Recover the phase-vs-drive curve theta(v) from g = A sin(theta(v)) + B.

    theta is a Legendre series of the given degree over the sweep's drive
    range (well conditioned, unlike monomials in v). Only differences of
    theta matter for the correction, so its constant term doubles as the
    sinusoid's phase offset. Returns (theta, A, B, max-abs residual).
    """
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.ptp(g) <= 2e-12 * max(1.0, np.max(np.abs(g))):
        raise CalibrationError("cost does not vary with this shifter; its phase is unobservable")
    amplitude, offset, theta0 = _initial_phase(v, g)
    # fit the trace rescaled to unit amplitude so all parameters are O(1)
    y = (g - offset) / amplitude
    domain = [v.min(), v.max()]
    init = Legendre.fit(v, theta0, degree, domain=domain)
    basis = Legendre.basis
    design = np.column_stack([basis(k, domain=domain)(v) for k in range(degree + 1)])

    def residual(x):
        return x[0] * np.sin(design @ x[2:]) + x[1] - y

    def jac(x):
        phase = design @ x[2:]
        return np.column_stack([np.sin(phase), np.ones_like(v), (x[0] * np.cos(phase))[:, None] * design])

    x = np.concatenate([[1.0, 0.0], init.coef])
    sol = least_squares(residual, x, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=2000)
    x = sol.x
    # a few plain Gauss-Newton steps finish what LM's stopping rule leaves on the table
    for _ in range(3):
        step, *_ = np.linalg.lstsq(jac(x), -residual(x), rcond=None)
        x = x + step
    a, b = x[0] * amplitude, x[1] * amplitude + offset
    theta = Legendre(x[2:], domain=domain)
    if a < 0:
        a, theta = -a, theta + np.pi
    res = float(np.max(np.abs(a * np.sin(theta(v)) + b - g)))
    return theta, a, b, res


def build_correction(probe, shifter_index, drive_range=(0.0, TWO_PI), knots=64, samples=256,
                     degree=5, base=None, table=None):
    """Calibrate one shifter and return ``table`` extended with its entry.

    The sweep covers ``drive_range``; the fitted response must be monotone
    there and reach a full 2*pi of phase.
    """
    if knots < 8:
        raise ValueError("need at least 8 knots")
    lo, hi = map(float, drive_range)
    if not hi > lo:
        raise ValueError("empty drive range")
    v = np.linspace(lo, hi, samples)
    g = _sweep(probe, shifter_index, v, base)
    theta, *_ = fit_response(v, g, degree)
    slope = theta.deriv()
    if not np.all(slope(np.linspace(lo, hi, 16 * samples + 1)) > 0):
        raise CalibrationError(f"shifter {shifter_index}: response is not monotone on [{lo}, {hi}]")
    t_lo, t_hi = theta(lo), theta(hi)
    if t_hi - t_lo < TWO_PI * (1 - 1e-9):
        raise CalibrationError(
            f"shifter {shifter_index}: drive range covers only {t_hi - t_lo:.3f} rad of phase"
        )
    phase_knots = np.linspace(0.0, TWO_PI, knots)
    drive_knots = np.empty(knots)
    for i, t in enumerate(phase_knots):
        target = t_lo + t
        if target >= t_hi:
            drive_knots[i] = hi
            continue
        x = brentq(lambda x: theta(x) - target, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        # Newton polish on the smooth fitted curve
        x -= (theta(x) - target) / slope(x)
        drive_knots[i] = x
    table = CorrectionTable() if table is None else table
    return table.with_shifter(shifter_index, phase_knots, drive_knots)
