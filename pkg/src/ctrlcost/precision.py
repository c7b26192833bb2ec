"""Working-precision arithmetic.

All multiprecision work goes through gmpy2 (MPFR/MPC) scalars held in numpy
object arrays; arithmetic on such arrays rounds with the *current* gmpy2
context, so every routine here enters :meth:`PrecisionContext.scope` first.
mpmath is used where it has special functions gmpy2 lacks (complex log-gamma,
Hurwitz zeta, trigamma).
"""
from __future__ import annotations

import contextlib
import functools
from dataclasses import dataclass

import gmpy2
import mpmath
import numpy as np

from .errors import ConvergenceError, ValidationError

__all__ = [
    "PrecisionContext",
    "DEFAULT",
    "mpf",
    "mpc",
    "as_mp_array",
    "to_complex",
    "to_float",
    "to_mpmath",
    "from_mpmath",
    "eig_hermitian",
    "gauss_legendre",
    "integrate",
    "solve_linear",
    "fft",
]


@dataclass(frozen=True)
class PrecisionContext:
    """Mantissa width for every multiprecision step of a computation."""

    mantissa_bits: int = 256

    def __post_init__(self):
        bits = self.mantissa_bits
        if isinstance(bits, bool) or not isinstance(bits, (int, np.integer)):
            raise ValidationError("mantissa_bits", f"expected an integer, got {bits!r}")
        if bits < 64:
            raise ValidationError("mantissa_bits", f"must be at least 64, got {bits}")
        object.__setattr__(self, "mantissa_bits", int(bits))

    @contextlib.contextmanager
    def scope(self):
        with gmpy2.context(gmpy2.get_context(), precision=self.mantissa_bits) as ctx:
            yield ctx

    @property
    def mp(self):
        """Private mpmath context at the same precision."""
        return _mpmath_context(self.mantissa_bits)

    @property
    def eps(self):
        return 2.0 ** (-self.mantissa_bits)

    @property
    def pi(self):
        with self.scope():
            return gmpy2.const_pi()


DEFAULT = PrecisionContext()

_MPC = type(gmpy2.mpc())
_MPFR = type(gmpy2.mpfr())


@functools.lru_cache(maxsize=None)
def _mpmath_context(bits):
    ctx = mpmath.MPContext()
    ctx.prec = bits
    return ctx


def mpf(x):
    """Real scalar at the current context precision (strings parsed exactly)."""
    if isinstance(x, (mpmath.mpf,)):
        return from_mpmath(x)
    return gmpy2.mpfr(x)


def mpc(x, y=None):
    if isinstance(x, (mpmath.mpc, mpmath.mpf)) and y is None:
        return from_mpmath(x)
    if y is None:
        if isinstance(x, (complex, np.complexfloating)):
            return gmpy2.mpc(complex(x))
        return gmpy2.mpc(x)
    return gmpy2.mpc(gmpy2.mpfr(x), gmpy2.mpfr(y))


def as_mp_array(values, ctx=DEFAULT, complex_=False):
    """Object array of gmpy2 scalars at ``ctx`` precision."""
    arr = np.asarray(values, dtype=object)
    conv = mpc if complex_ else mpf
    with ctx.scope():
        out = np.empty(arr.shape, dtype=object)
        flat_in = arr.reshape(-1)
        flat_out = out.reshape(-1)
        for i, v in enumerate(flat_in):
            if isinstance(v, np.floating):
                v = float(v)
            elif isinstance(v, np.integer):
                v = int(v)
            if not complex_ and isinstance(v, (complex, np.complexfloating, _MPC)):
                flat_out[i] = mpc(v)
            else:
                flat_out[i] = conv(v)
    return out


def to_complex(arr):
    return np.array([complex(v) for v in np.asarray(arr, dtype=object).reshape(-1)],
                    dtype=np.complex128).reshape(np.shape(arr))


def to_float(arr):
    return np.array([float(v.real if isinstance(v, _MPC) else v)
                     for v in np.asarray(arr, dtype=object).reshape(-1)],
                    dtype=np.float64).reshape(np.shape(arr))


def _mpfr_to_mpmath(x, ctx):
    if gmpy2.is_zero(x):
        return ctx.mpf(0)
    if not gmpy2.is_finite(x):
        return ctx.mpf(float(x))
    man, exp = x.as_mantissa_exp()
    return ctx.mpf((int(man), int(exp)))


def to_mpmath(x, ctx=DEFAULT):
    """gmpy2 scalar -> mpmath scalar in the private context of ``ctx``."""
    m = ctx.mp
    if isinstance(x, _MPC):
        return m.mpc(_mpfr_to_mpmath(x.real, m), _mpfr_to_mpmath(x.imag, m))
    if isinstance(x, _MPFR):
        return _mpfr_to_mpmath(x, m)
    if isinstance(x, complex):
        return m.mpc(x)
    return m.mpf(x)


def _mpf_tuple_to_mpfr(t):
    sign, man, exp, _ = t
    if man == 0:
        if exp == 0:
            return gmpy2.mpfr(0)
        raise ValidationError("value", "non-finite multiprecision value")
    v = gmpy2.mul_2exp(gmpy2.mpfr(gmpy2.mpz(int(man))), int(exp))
    return -v if sign else v


def from_mpmath(x):
    """mpmath scalar -> gmpy2 scalar at the current context precision."""
    if isinstance(x, mpmath.ctx_mp_python._mpc):
        re, im = x._mpc_
        return gmpy2.mpc(_mpf_tuple_to_mpfr(re), _mpf_tuple_to_mpfr(im))
    return _mpf_tuple_to_mpfr(x._mpf_)


# ---------------------------------------------------------------------------
# Hermitian eigenproblem


def _conj(z):
    return z.conjugate() if isinstance(z, _MPC) else z


def _orthonormalize(Q):
    """Modified Gram-Schmidt on the columns of an object matrix, two passes."""
    n = Q.shape[1]
    Q = Q.copy()
    for _ in range(2):
        for j in range(n):
            v = Q[:, j]
            for i in range(j):
                qi = Q[:, i]
                coef = np.dot(np.conj(qi), v)
                v = v - coef * qi
            nrm = gmpy2.sqrt(sum(abs(c) ** 2 for c in v))
            Q[:, j] = v / nrm
    return Q


def eig_hermitian(A, ctx=DEFAULT, warm_start=True, max_sweeps=60):
    """Eigen-decomposition of a Hermitian matrix at working precision.

    Cyclic Jacobi with the relative off-diagonal test
    ``|a_pq| > tol * sqrt(|a_pp a_qq|)``, which keeps small eigenvalues of
    positive definite matrices accurate relative to themselves.  With
    ``warm_start`` the double-precision eigenvectors (re-orthonormalised at
    working precision) are used as the starting basis.

    Returns ``(w, V)``: ascending eigenvalues (object array of mpfr) and the
    unitary matrix whose columns are the eigenvectors.
    """
    with ctx.scope():
        A = np.asarray(A, dtype=object)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("matrix", f"expected a square matrix, got shape {A.shape}")
        n = A.shape[0]
        if n == 0:
            raise ValidationError("matrix", "empty matrix")
        is_complex = any(isinstance(v, (_MPC, complex)) for v in A.reshape(-1))
        conv = mpc if is_complex else mpf
        A = np.vectorize(conv, otypes=[object])(A)
        herm_err = max(abs(A[i, j] - _conj(A[j, i])) for i in range(n) for j in range(i, n))
        scale = max(abs(v) for v in A.reshape(-1))
        if scale == 0:
            V = np.vectorize(conv, otypes=[object])(np.eye(n))
            return np.array([mpf(0)] * n, dtype=object), V
        if herm_err > 1e-12 * scale:
            raise ValidationError("matrix", "matrix is not Hermitian")
        # symmetrise exactly
        A = (A + np.conj(A.T)) / 2 if is_complex else (A + A.T) / 2

        if warm_start and n > 2:
            Ad = to_complex(A) if is_complex else to_float(A)
            _, V0 = np.linalg.eigh(Ad)
            Q = _orthonormalize(np.vectorize(conv, otypes=[object])(V0))
            QH = np.conj(Q.T) if is_complex else Q.T
            A = QH.dot(A).dot(Q)
            A = (A + np.conj(A.T)) / 2 if is_complex else (A + A.T) / 2
            V = Q
        else:
            V = np.vectorize(conv, otypes=[object])(np.eye(n))

        tol = gmpy2.mpfr(2) ** (-ctx.mantissa_bits) * n
        tiny = gmpy2.mpfr(2) ** (-4 * ctx.mantissa_bits) * scale
        one = mpf(1)
        for _sweep in range(max_sweeps):
            rotated = False
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    b = abs(apq)
                    if b == 0:
                        continue
                    app = A[p, p].real if is_complex else A[p, p]
                    aqq = A[q, q].real if is_complex else A[q, q]
                    if b <= tol * gmpy2.sqrt(abs(app * aqq)) or b <= tiny:
                        continue
                    rotated = True
                    zeta = (aqq - app) / (2 * b)
                    t = one / (abs(zeta) + gmpy2.sqrt(1 + zeta * zeta))
                    if zeta < 0:
                        t = -t
                    c = one / gmpy2.sqrt(1 + t * t)
                    s = t * c
                    phase = apq / b
                    # U = diag(phase, 1) @ [[c, s], [-s, c]]
                    u_pp, u_pq, u_qp, u_qq = phase * c, phase * s, -s, c
                    cp = A[:, p].copy()
                    cq = A[:, q].copy()
                    A[:, p] = u_pp * cp + u_qp * cq
                    A[:, q] = u_pq * cp + u_qq * cq
                    rp = A[p, :].copy()
                    rq = A[q, :].copy()
                    A[p, :] = _conj(u_pp) * rp + _conj(u_qp) * rq
                    A[q, :] = _conj(u_pq) * rp + _conj(u_qq) * rq
                    A[p, p] = conv(app - t * b)
                    A[q, q] = conv(aqq + t * b)
                    A[p, q] = conv(0)
                    A[q, p] = conv(0)
                    vp = V[:, p].copy()
                    vq = V[:, q].copy()
                    V[:, p] = u_pp * vp + u_qp * vq
                    V[:, q] = u_pq * vp + u_qq * vq
            if not rotated:
                break
        else:
            raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
        w = np.array([A[i, i].real if is_complex else A[i, i] for i in range(n)], dtype=object)
        order = sorted(range(n), key=lambda i: w[i])
        return w[order], V[:, order]


# ---------------------------------------------------------------------------
# Quadrature


@functools.lru_cache(maxsize=64)
def _gl_cached(n, bits):
    x0, _ = np.polynomial.legendre.leggauss(n)
    ctx = PrecisionContext(bits)
    with ctx.scope():
        half = (n + 1) // 2
        # Newton on the non-negative half, mirrored
        x = np.array([mpf(float(v)) for v in x0[n - half:]], dtype=object)
        thresh = gmpy2.mpfr(2) ** (-bits + 4)
        for _ in range(12):
            p0 = np.array([mpf(1)] * half, dtype=object)
            p1 = x.copy()
            for k in range(2, n + 1):
                p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
            dp = n * (x * p1 - p0) / (x * x - 1)
            dx = p1 / dp
            x = x - dx
            if max(abs(v) for v in dx) < thresh:
                break
        p0 = np.array([mpf(1)] * half, dtype=object)
        p1 = x.copy()
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = n * (x * p1 - p0) / (x * x - 1)
        w = 2 / ((1 - x * x) * dp * dp)
        if n % 2:
            x[0] = mpf(0)
            nodes = np.concatenate([-x[:0:-1], x])
            weights = np.concatenate([w[:0:-1], w])
        else:
            nodes = np.concatenate([-x[::-1], x])
            weights = np.concatenate([w[::-1], w])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(n, ctx=DEFAULT, interval=(-1, 1)):
    """Gauss-Legendre nodes and weights on ``interval`` at working precision."""
    if n < 1:
        raise ValidationError("nodes", f"need at least one node, got {n}")
    x, w = _gl_cached(int(n), ctx.mantissa_bits)
    a, b = interval
    with ctx.scope():
        a, b = mpf(a), mpf(b)
        half = (b - a) / 2
        mid = (a + b) / 2
        return mid + half * x, half * w


def integrate(f, a, b, ctx=DEFAULT, rtol=None, start_nodes=32, max_nodes=4096, panels=1):
    """Adaptive-doubling Gauss-Legendre quadrature of a vectorised integrand.

    ``f`` receives an object array of nodes and returns an array whose leading
    axis matches; the result may be vector valued.  The node count per panel
    doubles until two successive estimates agree to ``rtol`` (default
    ``2**(-bits/2 - 16)`` relative to the estimate).  Returns ``(value, error)``.
    """
    with ctx.scope():
        a, b = mpf(a), mpf(b)
        if rtol is None:
            rtol = gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 2) - 16)
        edges = [a + (b - a) * k / panels for k in range(panels + 1)]
        n = start_nodes
        prev = None
        while n <= max_nodes:
            total = None
            for lo, hi in zip(edges[:-1], edges[1:]):
                x, w = gauss_legendre(n, ctx, (lo, hi))
                vals = np.asarray(f(x), dtype=object)
                part = np.tensordot(w, vals, axes=(0, 0))
                total = part if total is None else total + part
            if prev is not None:
                diff = np.max(np.abs(np.asarray(total - prev, dtype=object).reshape(-1)))
                ref = np.max(np.abs(np.asarray(total, dtype=object).reshape(-1)))
                if diff <= rtol * max(ref, gmpy2.mpfr(2) ** (-ctx.mantissa_bits)):
                    return total, diff
            prev = total
            n *= 2
        raise ConvergenceError(f"quadrature did not converge with {max_nodes} nodes per panel")


# ---------------------------------------------------------------------------
# Dense linear solve


def solve_linear(A, B, ctx=DEFAULT, rcond=None):
    """Solve ``A X = B`` by Gaussian elimination with partial pivoting.

    ``B`` may be a vector or a matrix of right-hand sides.  Raises
    :class:`ConvergenceError` when the smallest pivot falls below ``rcond``
    (default ``2^-(bits/2)``) times the largest.
    """
    A = np.array(A, dtype=object)
    B = np.array(B, dtype=object)
    vector = B.ndim == 1
    if vector:
        B = B.reshape(-1, 1)
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n:
        raise ValidationError("A", f"shape mismatch {A.shape} vs {B.shape}")
    with ctx.scope():
        rcond = rcond if rcond is not None else gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 2))
        A = A.copy()
        B = B.copy()
        pivots = []
        for k in range(n):
            p = k + int(np.argmax([abs(v) for v in A[k:, k]]))
            if p != k:
                A[[k, p]] = A[[p, k]]
                B[[k, p]] = B[[p, k]]
            piv = A[k, k]
            pivots.append(abs(piv))
            if piv == 0:
                raise ConvergenceError(f"singular matrix at column {k}")
            f = A[k + 1:, k] / piv
            A[k + 1:, k:] -= np.outer(f, A[k, k:])
            B[k + 1:] -= np.outer(f, B[k])
        if min(pivots) < rcond * max(pivots):
            raise ConvergenceError(f"pivot ratio {float(min(pivots) / max(pivots)):.3e} below {float(rcond):.1e}")
        X = np.empty_like(B)
        for k in range(n - 1, -1, -1):
            X[k] = (B[k] - A[k, k + 1:].dot(X[k + 1:])) / A[k, k]
    return X[:, 0] if vector else X


# ---------------------------------------------------------------------------
# Discrete Fourier transform


@functools.lru_cache(maxsize=16)
def _twiddles(size, bits):
    ctx = PrecisionContext(bits)
    with ctx.scope():
        pi2 = 2 * gmpy2.const_pi()
        half = size // 2
        k = [mpf(j) for j in range(half)]
        return np.array([gmpy2.mpc(gmpy2.cos(pi2 * j / size), gmpy2.sin(pi2 * j / size))
                         for j in k], dtype=object)


def fft(values, ctx=DEFAULT, inverse=False):
    """Radix-2 transform ``sum_m x_m exp(-+2 pi i m j / P)`` at working precision.

    ``inverse=True`` uses the ``+`` sign and applies no ``1/P`` normalisation.
    The length must be a power of two.
    """
    x = np.asarray(values, dtype=object)
    size = x.shape[0]
    if size & (size - 1) or size == 0:
        raise ValidationError("values", f"length must be a power of two, got {size}")
    with ctx.scope():
        w = _twiddles(size, ctx.mantissa_bits)
        if not inverse:
            w = np.conj(w)
        bits = size.bit_length() - 1
        idx = np.arange(size)
        rev = np.zeros(size, dtype=np.int64)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        a = x[rev].copy()
        length = 2
        while length <= size:
            half = length // 2
            step = size // length
            tw = w[::step][:half]
            a = a.reshape(-1, length)
            top = a[:, :half].copy()
            bot = a[:, half:] * tw
            a[:, :half] = top + bot
            a[:, half:] = top - bot
            a = a.reshape(-1)
            length *= 2
        return a
