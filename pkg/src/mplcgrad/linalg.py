"""Dense complex matrix helpers and Haar-random unitaries.

Matrices are plain ``numpy`` arrays of dtype ``complex128``.
"""

import numpy as np

UNITARY_TOL = 1e-12


def make_rng(seed):
    """Return a numpy Generator for a 64-bit seed (or pass a Generator through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def _check_matrix(m, name="matrix"):
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {m.shape}")
    return m


def matmul(a, b):
    a = _check_matrix(a, "a")
    b = _check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def conj_transpose(m):
    return _check_matrix(m).conj().T


def frobenius_sq(m):
    """Squared Frobenius norm, sum of |m_kl|^2."""
    m = np.asarray(m)
    return float(np.sum(m.real ** 2 + m.imag ** 2))


def unitarity_error(m):
    """Max-abs entry of M M^dagger - I."""
    m = _check_matrix(m)
    if m.shape[0] != m.shape[1]:
        return np.inf
    return float(np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0]))))


def is_unitary(m, tol=UNITARY_TOL):
    return unitarity_error(m) <= tol


def haar_unitary(n, rng):
    """Sample an n x n unitary from the Haar measure.

    QR of a complex Ginibre matrix, with the phases of R's diagonal pushed
    back into Q so the result is Haar distributed rather than biased by the
    QR sign convention.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = make_rng(rng)
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    q = q * (d / np.abs(d))[np.newaxis, :]
    return q
