import math

import gmpy2
import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctrlcost.errors import ConvergenceError, ValidationError
from ctrlcost.precision import (PrecisionContext, as_mp_array, eig_hermitian, fft, from_mpmath, gauss_legendre,
                                integrate, mpf, solve_linear, to_complex, to_mpmath)


def _random_hermitian(rng, n, ctx):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = A + A.conj().T
    return as_mp_array(A, ctx, complex_=True)


def test_precision_rejects_small_mantissa():
    with pytest.raises(ValidationError) as exc:
        PrecisionContext(32)
    assert exc.value.field == "mantissa_bits"


def test_scope_sets_working_precision(ctx):
    with ctx.scope():
        third = mpf(1) / 3
        assert abs(third - mpf("0.333333333333333333333333333333333333333333333333333333333333333333")) < 1e-65
    assert third.precision == 256
    assert mpf(1).precision == 53


def test_mpmath_round_trip(ctx):
    with ctx.scope():
        x = gmpy2.const_pi() / 7
        assert from_mpmath(to_mpmath(x, ctx)) == x


def test_eigen_identity(ctx):
    w, _ = eig_hermitian(as_mp_array(np.eye(3), ctx), ctx)
    assert [float(v) for v in w] == [1.0, 1.0, 1.0]


def test_eigen_diagonal_ascending(ctx):
    w, _ = eig_hermitian(as_mp_array(np.diag([2.0, -1.0]), ctx, complex_=True), ctx)
    assert [float(v) for v in w] == [-1.0, 2.0]


def test_eigen_round_trip_8x8(ctx, rng):
    A = _random_hermitian(rng, 8, ctx)
    w, V = eig_hermitian(A, ctx)
    with ctx.scope():
        R = V.dot(np.diag(w)).dot(np.conj(V).T)
        err = max(abs(v) for v in (R - A).reshape(-1)) / max(abs(v) for v in A.reshape(-1))
    assert err <= gmpy2.mpfr(2) ** -200


def test_eigen_matches_double_precision(ctx, rng):
    A = _random_hermitian(rng, 6, ctx)
    w, _ = eig_hermitian(A, ctx)
    ref = np.linalg.eigvalsh(to_complex(A))
    np.testing.assert_allclose([float(v) for v in w], ref, rtol=1e-12, atol=1e-12)


def test_eigen_rejects_non_square(ctx):
    with pytest.raises(ValidationError):
        eig_hermitian(np.zeros((2, 3), dtype=object), ctx)


@given(st.integers(1, 12), st.integers(0, 23))
def test_gauss_legendre_polynomial_exactness(n, degree):
    ctx = PrecisionContext(128)
    if degree > 2 * n - 1:
        return
    x, w = gauss_legendre(n, ctx, (0, 1))
    with ctx.scope():
        got = sum(wi * xi ** degree for xi, wi in zip(x, w))
        assert abs(got - mpf(1) / (degree + 1)) < mpf(2) ** -120


def test_gauss_two_nodes_x_squared(ctx):
    x, w = gauss_legendre(2, ctx, (0, 1))
    with ctx.scope():
        assert abs(sum(wi * xi ** 2 for xi, wi in zip(x, w)) - mpf(1) / 3) < mpf(2) ** -250


def test_gauss_constant(ctx):
    _, w = gauss_legendre(5, ctx)
    with ctx.scope():
        assert abs(sum(w) - 2) < mpf(2) ** -250


def test_gauss_sin_squared_to_60_digits(ctx):
    with ctx.scope():
        pi = gmpy2.const_pi()
    x, w = gauss_legendre(64, ctx, (0, pi))
    with ctx.scope():
        got = sum(wi * gmpy2.sin(xi) ** 2 for xi, wi in zip(x, w))
        assert abs(got - pi / 2) < mpf(10) ** -60


def test_integrate_adaptive_matches_mpmath(ctx):
    val, _ = integrate(lambda x: np.array([gmpy2.exp(-v * v) for v in x], dtype=object), 0, 2, ctx)
    val = np.asarray(val, dtype=object).item()
    mpmath.mp.prec = 256
    ref = mpmath.sqrt(mpmath.pi) / 2 * mpmath.erf(2)
    assert abs(float(val) - float(ref)) < 1e-15
    assert abs(to_mpmath(val, ctx) - ref) < mpmath.mpf(2) ** -100


def test_integrate_reports_non_convergence(ctx):
    with pytest.raises(ConvergenceError):
        integrate(lambda x: np.array([gmpy2.sqrt(abs(v)) for v in x], dtype=object), -1, 1, ctx,
                  rtol=mpf(2) ** -200, max_nodes=64)


@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_solve_linear_matches_numpy(n, seed):
    ctx = PrecisionContext(128)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) + 3 * np.eye(n)
    b = rng.standard_normal(n)
    x = solve_linear(as_mp_array(A, ctx, complex_=True), as_mp_array(b, ctx, complex_=True), ctx)
    np.testing.assert_allclose(to_complex(x), np.linalg.solve(A, b), rtol=1e-10, atol=1e-12)


def test_solve_linear_multiple_rhs_residual(ctx, rng):
    A = as_mp_array(rng.standard_normal((5, 5)), ctx)
    B = as_mp_array(rng.standard_normal((5, 3)), ctx)
    X = solve_linear(A, B, ctx)
    with ctx.scope():
        assert max(abs(v) for v in (A.dot(X) - B).reshape(-1)) < mpf(2) ** -240


def test_solve_linear_singular(ctx):
    A = as_mp_array([[1.0, 2.0], [2.0, 4.0]], ctx)
    with pytest.raises(ConvergenceError):
        solve_linear(A, as_mp_array([1.0, 1.0], ctx), ctx)


@given(st.integers(0, 6), st.booleans())
def test_fft_matches_numpy(log_size, inverse):
    ctx = PrecisionContext(96)
    size = 1 << log_size
    rng = np.random.default_rng(size)
    x = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    got = to_complex(fft(as_mp_array(x, ctx, complex_=True), ctx, inverse=inverse))
    ref = np.fft.ifft(x) * size if inverse else np.fft.fft(x)
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_fft_round_trip_at_working_precision(ctx, rng):
    x = as_mp_array(rng.standard_normal(32) + 1j * rng.standard_normal(32), ctx, complex_=True)
    y = fft(fft(x, ctx), ctx, inverse=True)
    with ctx.scope():
        assert max(abs(a / 32 - b) for a, b in zip(y, x)) < mpf(2) ** -245


def test_fft_rejects_non_power_of_two(ctx):
    with pytest.raises(ValidationError):
        fft(np.zeros(6, dtype=object), ctx)
