"""Multi-plane light conversion (MPLC) converter model.

The converter alternates arrays of N single-mode phase shifters with fixed
N-port unitaries A_1..A_m. Light meets phase array D_1 first, then A_1, and so
on; matrices compose right to left::

    X(p) = D_out · A_m · D_m · ... · A_2 · D_2 · A_1 · D_1

``D_out`` (an extra phase-shifter array after the last fixed unitary) exists
only for coherent detection; with intensity detection output phases are
unobservable, so it would be dead weight.

Parameters are laid out layer-major, port-minor: phase shifter j of array i is
``p[i * N + j]`` and the output array occupies the last N slots.
"""

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import haar_unitary, make_rng, unitarity_error
from .metrics import Metric, normalization


class Detection(str, enum.Enum):
    COHERENT = "coherent"
    INTENSITY = "intensity"


@dataclass(frozen=True, eq=False)
class MplcDevice:
    n_ports: int
    n_layers: int
    fixed_unitaries: np.ndarray
    detection: Detection = Detection.COHERENT
    phase_response: object = None  # calibration.PhaseResponse or None (ideal)
    seed: int = field(default=None, compare=False)

    def __post_init__(self):
        a = np.array(self.fixed_unitaries, dtype=complex)
        if a.shape != (self.n_layers, self.n_ports, self.n_ports):
            raise ValueError(
                f"expected {self.n_layers} fixed unitaries of size {self.n_ports}, got shape {a.shape}"
            )
        for i, ai in enumerate(a):
            err = unitarity_error(ai)
            if err > 1e-12:
                raise ValueError(f"fixed unitary A_{i + 1} is not unitary (error {err:.2e})")
        a.flags.writeable = False
        object.__setattr__(self, "fixed_unitaries", a)
        object.__setattr__(self, "detection", Detection(self.detection))

    @property
    def n_arrays(self):
        return self.n_layers + (1 if self.detection is Detection.COHERENT else 0)

    @property
    def n_params(self):
        return self.n_ports * self.n_arrays

    def with_response(self, phase_response):
        return MplcDevice(self.n_ports, self.n_layers, self.fixed_unitaries,
                          self.detection, phase_response, self.seed)

    def ideal(self):
        """Same device with linear phase shifters."""
        return self.with_response(None)

    def phases(self, p):
        """Realized phases for drive vector(s) p."""
        p = np.asarray(p, dtype=float)
        if self.phase_response is None:
            return p
        return self.phase_response.apply(p)

    def to_dict(self, explicit=None):
        """JSON-ready description. Seeded devices store only the seed unless explicit=True."""
        d = {
            "n_ports": self.n_ports,
            "n_layers": self.n_layers,
            "detection": self.detection.value,
        }
        if self.seed is not None and not explicit:
            d["seed"] = self.seed
        else:
            d["fixed_unitaries"] = [
                [[[z.real, z.imag] for z in row] for row in ai] for ai in self.fixed_unitaries
            ]
        if self.phase_response is not None:
            d["phase_response"] = self.phase_response.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        from .calibration import PhaseResponse

        response = d.get("phase_response")
        response = PhaseResponse.from_dict(response) if response else None
        detection = Detection(d.get("detection", "coherent"))
        if "fixed_unitaries" in d:
            a = np.array(d["fixed_unitaries"], dtype=float)
            a = a[..., 0] + 1j * a[..., 1]
            return cls(int(d["n_ports"]), int(d["n_layers"]), a, detection, response, d.get("seed"))
        if "seed" not in d:
            raise ValueError("device description needs either 'seed' or 'fixed_unitaries'")
        dev = device_from_seed(int(d["n_ports"]), int(d["n_layers"]), detection, int(d["seed"]))
        return dev.with_response(response)

    def to_json(self, explicit=None):
        return json.dumps(self.to_dict(explicit), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def random_device(n_ports, n_layers, detection=Detection.COHERENT, rng=None, phase_response=None):
    """Device with Haar-random fixed layers drawn from ``rng``."""
    if n_ports < 1 or n_layers < 1:
        raise ValueError("need at least one port and one layer")
    rng = make_rng(0 if rng is None else rng)
    a = np.stack([haar_unitary(n_ports, rng) for _ in range(n_layers)])
    return MplcDevice(n_ports, n_layers, a, detection, phase_response)


def device_from_seed(n_ports, n_layers, detection, seed):
    dev = random_device(n_ports, n_layers, detection, make_rng(seed))
    return MplcDevice(n_ports, n_layers, dev.fixed_unitaries, detection, None, int(seed))


def _check_params(device, p):
    p = np.asarray(p, dtype=float)
    if p.ndim == 0 or p.shape[-1] != device.n_params:
        raise ValueError(
            f"parameter vector length {p.shape[-1] if p.ndim else 0} does not match "
            f"device parameter count {device.n_params}"
        )
    return p


def _phase_factors(device, p):
    ph = np.exp(1j * device.phases(p))
    return ph.reshape(p.shape[:-1] + (device.n_arrays, device.n_ports))


def forward(device, p):
    """Realized transfer matrix X(p); p may carry leading batch axes."""
    p = _check_params(device, p)
    ph = _phase_factors(device, p)
    a = device.fixed_unitaries
    x = a[0] * ph[..., 0, np.newaxis, :]
    for i in range(1, device.n_layers):
        x = a[i] @ (ph[..., i, :, np.newaxis] * x)
    if device.detection is Detection.COHERENT:
        x *= ph[..., device.n_layers, :, np.newaxis]
    return x


def _chain(device, p):
    """Partial products around every phase array.

    Returns (pre, post, suffix): pre[i] is the product feeding phase array i,
    post[i] additionally includes array i's phases, and suffix[i] is
    everything after array i (starting with A_i), so X = suffix[i] @ post[i].
    """
    ph = _phase_factors(device, p)
    a = device.fixed_unitaries
    n = device.n_ports
    pre, post = [], []
    x = np.eye(n, dtype=complex)
    for i in range(device.n_arrays):
        pre.append(x)
        x = ph[i][:, np.newaxis] * x
        post.append(x)
        if i < device.n_layers:
            x = a[i] @ x
    suffix = [None] * device.n_arrays
    s = np.eye(n, dtype=complex)
    for i in reversed(range(device.n_arrays)):
        if i < device.n_layers:
            s = s @ a[i]
        suffix[i] = s
        s = s * ph[i][np.newaxis, :]
    return pre, post, suffix


@dataclass(frozen=True, eq=False)
class AffineDecomposition:
    """X(phase k = phi) = a_mat * exp(i phi) + b_mat."""

    a_mat: np.ndarray
    b_mat: np.ndarray
    param_index: int

    def __call__(self, phi):
        return self.a_mat * np.exp(1j * phi) + self.b_mat


def decompose_single_phase(device, p, k):
    """Split X into the part that rotates with phase k and the part that doesn't.

    With V the product after phase k's array and W the product before it
    (including the other ports of the same array), X(phi) = V diag(1, .., e^{i phi}, .., 1) W,
    so a_mat = V E_jj W is rank one.
    """
    p = _check_params(device, p)
    if p.ndim != 1:
        raise ValueError("decomposition takes a single parameter vector")
    if not 0 <= k < device.n_params:
        raise IndexError(f"parameter index {k} out of range [0, {device.n_params})")
    layer, port = divmod(k, device.n_ports)
    pre, _, suffix = _chain(device, p)
    ph = np.exp(1j * device.phases(p)[layer * device.n_ports:(layer + 1) * device.n_ports])
    ph[port] = 1.0
    w = ph[:, np.newaxis] * pre[layer]
    v = suffix[layer]
    a_mat = np.outer(v[:, port], w[port, :])
    return AffineDecomposition(a_mat, v @ w - a_mat, k)


def analytic_gradient(device, p, target, metric=Metric.FROBENIUS_SQ, normalized=True):
    """Exact gradient of the cost with respect to the drive vector p.

    Supports the squared Frobenius error and d'. For d' the unitary-only
    identity d' = 2N - 2 sum_i |[X U^dagger]_ii|^2 is differentiated.
    A nonlinear phase response enters through the chain rule.
    """
    metric = Metric(metric)
    p = _check_params(device, p)
    if p.ndim != 1:
        raise ValueError("analytic_gradient takes a single parameter vector")
    u = np.asarray(target)
    n = device.n_ports
    if u.shape != (n, n):
        raise ValueError(f"target shape {u.shape} does not match {n} ports")
    pre, post, suffix = _chain(device, p)
    x = suffix[-1] @ post[-1]
    grads = []
    if metric is Metric.FROBENIUS_SQ:
        ce = np.conj(u - x)
        for r, s in zip(post, suffix):
            v = np.sum(s * (ce @ r.T), axis=0)
            grads.append(2.0 * v.imag)
    elif metric is Metric.D_PRIME:
        udag = u.conj().T
        tdiag_conj = np.conj(np.diagonal(x @ udag))
        for r, s in zip(post, suffix):
            q = r @ udag
            v = np.sum(tdiag_conj[:, np.newaxis] * s * q.T, axis=0)
            grads.append(4.0 * v.imag)
    else:
        raise ValueError(f"no analytic gradient for metric {metric.value!r}")
    g = np.concatenate(grads)
    if device.phase_response is not None:
        g = g * device.phase_response.derivative(p)
    if normalized:
        g = g / normalization(metric, n)
    return g
