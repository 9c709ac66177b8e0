import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import haar_pair, permutation_matrix
from mplcgrad.linalg import haar_unitary, make_rng
from mplcgrad.metrics import (
    Metric,
    cost,
    distance_d,
    distance_d_prime,
    fit_sinusoid,
    frobenius_cost,
    horn_polyhedron_check,
    normalization,
    normalized_cost,
)

seeds = st.integers(0, 2**32 - 1)


def brute_frobenius(u, x):
    n = u.shape[0]
    return sum(abs(u[i, j] - x[i, j]) ** 2 for i in range(n) for j in range(n))


def brute_s(u, x):
    n = u.shape[0]
    return np.array([[abs(sum(x[i, k] * np.conj(u[j, k]) for k in range(n))) for j in range(n)]
                     for i in range(n)])


@pytest.mark.parametrize("fn", [frobenius_cost, distance_d, distance_d_prime])
def test_zero_at_target(fn):
    u = haar_unitary(5, make_rng(3))
    assert fn(u, u) == pytest.approx(0.0, abs=1e-13)


def test_frobenius_antipodal():
    assert frobenius_cost(np.eye(8), -np.eye(8)) == pytest.approx(32.0)


@pytest.mark.parametrize("seed", range(4))
def test_frobenius_brute_force(seed):
    u, x = haar_pair(8, seed)
    assert frobenius_cost(u, x) == pytest.approx(brute_frobenius(u, x), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds, st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_d_phase_insensitive(seed, theta):
    u = haar_unitary(6, make_rng(seed))
    x = np.diag(np.exp(1j * np.array(theta))) @ u
    assert distance_d(u, x) == pytest.approx(0.0, abs=1e-12)
    assert distance_d_prime(u, x) == pytest.approx(0.0, abs=1e-12)


def test_d_cyclic_permutation():
    x = permutation_matrix([1, 2, 3, 0])
    assert distance_d(np.eye(4), x) == pytest.approx(8.0)


def test_d_prime_fixed_point_free_permutation():
    x = permutation_matrix([3, 0, 1, 2, 7, 4, 5, 6])
    assert distance_d_prime(np.eye(8), x) == pytest.approx(16.0)
    assert normalized_cost(np.eye(8), x, Metric.D_PRIME) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), seeds)
def test_d_prime_diagonal_identity(n, seed):
    u, x = haar_pair(n, seed)
    s = brute_s(u, x)
    assert distance_d_prime(u, x) == pytest.approx(2 * n - 2 * np.sum(np.diag(s) ** 2), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), seeds)
def test_d_matches_brute_force(n, seed):
    u, x = haar_pair(n, seed)
    s = brute_s(u, x)
    assert distance_d(u, x) == pytest.approx(np.sum((np.eye(n) - s) ** 2), abs=1e-12)
    # for unitary pairs d = 2 sum(1 - s_ii) and d' >= d
    assert distance_d(u, x) == pytest.approx(2 * np.sum(1 - np.diag(s)), abs=1e-11)
    assert distance_d_prime(u, x) >= distance_d(u, x) - 1e-12


def test_normalized_examples():
    assert normalized_cost(np.eye(4), -np.eye(4), Metric.FROBENIUS_SQ) == pytest.approx(1.0)
    assert normalization(Metric.FROBENIUS_SQ, 8) == 32
    assert normalization(Metric.D, 8) == normalization(Metric.D_PRIME, 8) == 16
    u = haar_unitary(3, make_rng(0))
    for m in Metric:
        assert normalized_cost(u, u, m) == pytest.approx(0.0, abs=1e-14)


def test_cost_batches():
    u, _ = haar_pair(4, 0)
    rng = make_rng(1)
    xs = np.stack([haar_unitary(4, rng) for _ in range(5)])
    for m in Metric:
        batched = cost(u, xs, m)
        assert batched.shape == (5,)
        assert np.allclose(batched, [cost(u, x, m) for x in xs], rtol=0, atol=1e-13)


def test_cost_shape_errors():
    with pytest.raises(ValueError):
        frobenius_cost(np.eye(3), np.eye(4))
    with pytest.raises(ValueError):
        distance_d(np.ones((2, 3)), np.ones((2, 3)))


def test_fit_three_points_exact():
    phi = np.array([0.0, np.pi / 2, np.pi])
    fit = fit_sinusoid(phi, 2 * np.sin(phi + 0.4) + 5)
    assert fit.amplitude == pytest.approx(2.0, abs=1e-12)
    assert fit.phase == pytest.approx(0.4, abs=1e-12)
    assert fit.offset == pytest.approx(5.0, abs=1e-12)
    assert fit.residual <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10), st.floats(-np.pi, np.pi - 1e-6), st.floats(-5, 5), seeds)
def test_fit_recovers_parameters(a, alpha, b, seed):
    phi = np.sort(make_rng(seed).uniform(0, 2 * np.pi, 16))
    fit = fit_sinusoid(phi, a * np.sin(phi + alpha) + b)
    assert fit.amplitude == pytest.approx(a, rel=1e-9)
    assert np.angle(np.exp(1j * (fit.phase - alpha))) == pytest.approx(0.0, abs=1e-8)
    assert fit.offset == pytest.approx(b, abs=1e-9)
    assert fit(1.1) == pytest.approx(a * np.sin(1.1 + alpha) + b, abs=1e-9)
    assert fit.derivative(1.1) == pytest.approx(a * np.cos(1.1 + alpha), abs=1e-8)


def test_fit_rejects_degenerate():
    with pytest.raises(ValueError):
        fit_sinusoid([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        fit_sinusoid([0.0, 2 * np.pi, 4 * np.pi, 1.0], [1.0, 1.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        fit_sinusoid([0.0, 1.0, 2.0], [1.0, 2.0])


def test_fit_non_sinusoid_residual():
    phi = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    fit = fit_sinusoid(phi, np.abs(np.sin(phi)))
    assert fit.residual > 1e-2


def test_horn_examples():
    assert horn_polyhedron_check(np.ones(6))
    assert not horn_polyhedron_check(np.array([1.0, 1.0, 0.0]))
    assert horn_polyhedron_check(np.zeros(4))
    with pytest.raises(ValueError):
        horn_polyhedron_check(np.array([0.5]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), seeds)
def test_horn_holds_for_unitaries(n, seed):
    u = haar_unitary(n, make_rng(seed))
    assert horn_polyhedron_check(np.abs(np.diag(u)))


def test_horn_batch():
    rng = make_rng(0)
    eta = np.abs(np.stack([np.diag(haar_unitary(5, rng)) for _ in range(200)]))
    assert np.all(horn_polyhedron_check(eta))


def test_metric_values():
    assert Metric("dprime") is Metric.D_PRIME
    assert Metric("frobenius") is Metric.FROBENIUS_SQ
