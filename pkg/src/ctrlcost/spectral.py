"""Eigenbases of one-dimensional Sturm-Liouville operators.

The operator is ``A u = -(1/w) ((p u')' + q u)`` on ``[0, X]`` with separated
boundary conditions ``a u + b u' = 0`` at each end.  Two bases share one
interface:

* :class:`LaplacianBasis`: closed form for ``-u''`` with Dirichlet/Neumann
  ends, exact at any precision;
* :class:`NumericalBasis`: finite-difference eigenvalues refined by Prüfer
  shooting, eigenfunctions from ODE integration (double precision).

Mode numbers are 1-based throughout.  Eigenfunctions are normalised in
``L^2(w dx)`` with ``e_n'(0) > 0`` (or ``e_n(0) > 0`` when ``e_n(0) != 0``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from .errors import DegeneracyError, ResolutionError, ValidationError
from .precision import DEFAULT, mpf

__all__ = [
    "SturmLiouvilleProblem",
    "EigenBasis",
    "LaplacianBasis",
    "NumericalBasis",
    "laplacian_basis",
    "solve_sturm_liouville",
    "frequency_window",
    "weighted_length",
]

DIRICHLET = (1.0, 0.0)
NEUMANN = (0.0, 1.0)
_BC_NAMES = {"dirichlet": DIRICHLET, "neumann": NEUMANN}


def _coefficient(value, name):
    """Normalise a coefficient to ``(callable, tabulated)``."""
    if callable(value):
        return (lambda x, f=value: np.broadcast_to(np.asarray(f(x), dtype=float), np.shape(x))), False
    if isinstance(value, (int, float)):
        c = float(value)
        return (lambda x: np.full(np.shape(x), c)), False
    try:
        xs, vals = value
        xs = np.asarray(xs, dtype=float)
        vals = np.asarray(vals, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(name, "expected a number, a callable or a (grid, values) table") from None
    if xs.ndim != 1 or xs.shape != vals.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise ValidationError(name, "table must be two equal-length 1-D arrays on an increasing grid")
    return (lambda x: np.interp(x, xs, vals)), True


@dataclass(frozen=True)
class SturmLiouvilleProblem:
    """Coefficients and boundary conditions on ``[0, length]``.

    ``p``, ``q``, ``w`` may each be a constant, a vectorised callable, or a
    ``(grid, values)`` table (linear interpolation).  ``left``/``right`` are
    ``(a, b)`` pairs for ``a u + b u' = 0`` or the names ``"dirichlet"`` and
    ``"neumann"``.
    """

    length: float
    p: object = 1.0
    q: object = 0.0
    w: object = 1.0
    left: object = "dirichlet"
    right: object = "dirichlet"

    def __post_init__(self):
        if not (isinstance(self.length, (int, float)) and math.isfinite(self.length) and self.length > 0):
            raise ValidationError("length", f"must be a positive number, got {self.length!r}")
        for side in ("left", "right"):
            bc = getattr(self, side)
            if isinstance(bc, str):
                if bc.lower() not in _BC_NAMES:
                    raise ValidationError(side, f"unknown boundary condition {bc!r}")
                bc = _BC_NAMES[bc.lower()]
            try:
                a, b = (float(v) for v in bc)
            except (TypeError, ValueError):
                raise ValidationError(side, "expected (a, b) or 'dirichlet'/'neumann'") from None
            if a == 0 and b == 0:
                raise DegeneracyError(f"{side} boundary condition a u + b u' = 0 has a = b = 0")
            object.__setattr__(self, side, (a, b))

    def coefficients(self):
        p, tp = _coefficient(self.p, "p")
        q, tq = _coefficient(self.q, "q")
        w, tw = _coefficient(self.w, "w")
        return p, q, w, (tp or tq or tw)

    @property
    def is_plain_laplacian(self):
        const = all(isinstance(c, (int, float)) for c in (self.p, self.q, self.w))
        if not const or self.p != 1 or self.q != 0 or self.w != 1:
            return False
        return all(bc in (DIRICHLET, NEUMANN) for bc in (self.left, self.right))

    def boundary_order(self, point):
        """Normal-derivative order observed at an endpoint: 1 on a Dirichlet end, else 0."""
        bc = self._end(point)
        return 1 if bc[1] == 0 else 0

    def _end(self, point):
        if point == 0:
            return self.left
        if point == self.length:
            return self.right
        raise ValidationError("point", f"{point!r} is not an endpoint of [0, {self.length}]")


class EigenBasis:
    """Common interface of the eigenbases; see the two concrete classes."""

    problem: SturmLiouvilleProblem
    eigenvalues: np.ndarray
    asymptotic_shift: float
    warning: str | None = None
    entry_accuracy: float = 0.0

    @property
    def n_modes(self):
        return len(self.eigenvalues)

    @property
    def length(self):
        return self.problem.length

    @property
    def frequencies(self):
        return np.sqrt(np.maximum(self.eigenvalues, 0.0))

    def check_window(self, window):
        window = tuple(int(j) for j in window)
        if not window:
            raise ValidationError("window", "mode window is empty")
        if len(set(window)) != len(window) or min(window) < 1 or max(window) > self.n_modes:
            raise ValidationError("window", f"modes must be distinct and within 1..{self.n_modes}")
        return window

    def sample(self, window, x):
        """Eigenfunction values, shape ``(len(window), len(x))``, double precision."""
        return np.array([self.evaluate(j, x) for j in self.check_window(window)])

    def boundary_order(self, point):
        return self.problem.boundary_order(point)


# ---------------------------------------------------------------------------
# closed form


class LaplacianBasis(EigenBasis):
    """``-u''`` on ``[0, X]`` with Dirichlet or Neumann ends, in closed form.

    ``e_n(x) = c_n sin(k_n x + phi)`` with ``phi = 0`` for a Dirichlet left
    end and ``pi/2`` for a Neumann one.

    A length within a few ulps of ``r * pi`` (``r`` rational with denominator
    at most 64) is taken as exactly ``r * pi`` at working precision, and so is
    any point equal to the length; otherwise ``float(length)`` is exact.
    """

    def __init__(self, problem, n_modes):
        if not problem.is_plain_laplacian:
            raise ValidationError("problem", "closed form needs p = w = 1, q = 0 and Dirichlet/Neumann ends")
        if n_modes < 1:
            raise ValidationError("n_modes", f"must be positive, got {n_modes}")
        self.problem = problem
        left_d = problem.left == DIRICHLET
        right_d = problem.right == DIRICHLET
        self._phase_half_pi = not left_d
        # k_n = (n + offset) pi / X
        if left_d and right_d:
            self._offset = 0.0
        elif left_d != right_d:
            self._offset = -0.5
        else:
            self._offset = -1.0
        self.asymptotic_shift = self._offset
        self._pi_ratio = _pi_ratio(problem.length)
        self.eigenvalues = np.array([self.wavenumber(n) ** 2 for n in range(1, n_modes + 1)])
        self.warning = None
        self.entry_accuracy = 0.0

    def wavenumber(self, n, ctx=None):
        if ctx is None:
            return (n + self._offset) * math.pi / self.length
        with ctx.scope():
            return (n + mpf(self._offset)) * gmpy2.const_pi() / self.exact_point(self.length)

    def exact_point(self, x):
        """Working-precision value of a coordinate (the length maps to its exact value)."""
        if x == self.length and self._pi_ratio is not None:
            num, den = self._pi_ratio
            return gmpy2.const_pi() * num / den
        return mpf(x)

    def norm_constant(self, n, ctx=None):
        zero_mode = (n + self._offset) == 0
        if ctx is None:
            return math.sqrt((1.0 if zero_mode else 2.0) / self.length)
        with ctx.scope():
            return gmpy2.sqrt(mpf(1 if zero_mode else 2) / self.exact_point(self.length))

    def eigenvalues_mp(self, window, ctx=DEFAULT):
        window = self.check_window(window)
        with ctx.scope():
            return np.array([self.wavenumber(j, ctx) ** 2 for j in window], dtype=object)

    def evaluate(self, n, x):
        x = np.asarray(x, dtype=float)
        k = self.wavenumber(n)
        phase = math.pi / 2 if self._phase_half_pi else 0.0
        return self.norm_constant(n) * np.sin(k * x + phase)

    def derivative(self, n, x):
        x = np.asarray(x, dtype=float)
        k = self.wavenumber(n)
        phase = math.pi / 2 if self._phase_half_pi else 0.0
        return self.norm_constant(n) * k * np.cos(k * x + phase)

    def trace_vector(self, window, point, order, ctx=DEFAULT):
        """``d^order e_j / dx^order`` at ``point`` for ``j`` in the window, at working precision."""
        window = self.check_window(window)
        if order not in (0, 1):
            raise ValidationError("order", f"must be 0 or 1, got {order}")
        with ctx.scope():
            x = self.exact_point(point)
            phase = gmpy2.const_pi() / 2 if self._phase_half_pi else mpf(0)
            out = []
            for j in window:
                k = self.wavenumber(j, ctx)
                c = self.norm_constant(j, ctx)
                out.append(c * gmpy2.sin(k * x + phase) if order == 0 else c * k * gmpy2.cos(k * x + phase))
            return np.array(out, dtype=object)

    def overlap_matrix(self, window, interval, ctx=DEFAULT):
        """``S_jk = int_a^b e_j e_k dx`` in closed form at working precision."""
        window = self.check_window(window)
        a, b = _check_interval(interval, self.length)
        with ctx.scope():
            a, b = self.exact_point(a), self.exact_point(b)
            phase = gmpy2.const_pi() / 2 if self._phase_half_pi else mpf(0)
            ks = [self.wavenumber(j, ctx) for j in window]
            cs = [self.norm_constant(j, ctx) for j in window]

            def cos_integral(freq, shift):
                # int_a^b cos(freq x + shift) dx
                if freq == 0:
                    return (b - a) * gmpy2.cos(shift)
                return (gmpy2.sin(freq * b + shift) - gmpy2.sin(freq * a + shift)) / freq

            n = len(window)
            S = np.empty((n, n), dtype=object)
            for i in range(n):
                for j in range(i, n):
                    diff = cos_integral(ks[i] - ks[j], mpf(0))
                    summ = cos_integral(ks[i] + ks[j], 2 * phase)
                    S[i, j] = S[j, i] = cs[i] * cs[j] * (diff - summ) / 2
            return S


def _pi_ratio(length):
    from fractions import Fraction
    r = Fraction(length / math.pi).limit_denominator(64)
    if r > 0 and abs(float(r) * math.pi - length) <= 4 * math.ulp(length):
        return r.numerator, r.denominator
    return None


def laplacian_basis(length, n_modes, left="dirichlet", right="dirichlet"):
    return LaplacianBasis(SturmLiouvilleProblem(float(length), left=left, right=right), int(n_modes))


def _check_interval(interval, length):
    try:
        a, b = (float(v) for v in interval)
    except (TypeError, ValueError):
        raise ValidationError("omega", f"expected an interval (a, b), got {interval!r}") from None
    if not (0 <= a < b <= length):
        raise ValidationError("omega", f"interval ({a}, {b}) must satisfy 0 <= a < b <= {length}")
    return a, b


# ---------------------------------------------------------------------------
# numerical solver


@dataclass
class NumericalBasis(EigenBasis):
    """Sturm-Liouville eigenbasis computed by :func:`solve_sturm_liouville`."""

    problem: SturmLiouvilleProblem
    eigenvalues: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    asymptotic_shift: float
    warning: str | None
    entry_accuracy: float
    _solution: object = field(repr=False, default=None)
    _norms: np.ndarray = field(repr=False, default=None)

    def eigenvalues_mp(self, window, ctx=DEFAULT):
        window = self.check_window(window)
        with ctx.scope():
            return np.array([mpf(float(self.eigenvalues[j - 1])) for j in window], dtype=object)

    def _state(self, n, x):
        x = np.asarray(x, dtype=float)
        m = len(self.eigenvalues)
        y = self._solution.sol(x.reshape(-1))
        scale = self._norms[n - 1]
        return y[n - 1].reshape(x.shape) / scale, y[m + n - 1].reshape(x.shape) / scale

    def evaluate(self, n, x):
        return self._state(n, x)[0]

    def derivative(self, n, x):
        pfun = self.problem.coefficients()[0]
        u, pu = self._state(n, x)
        return pu / pfun(np.asarray(x, dtype=float))

    def trace_vector(self, window, point, order, ctx=DEFAULT):
        window = self.check_window(window)
        if order not in (0, 1):
            raise ValidationError("order", f"must be 0 or 1, got {order}")
        if not 0 <= point <= self.length:
            raise ValidationError("point", f"{point} outside [0, {self.length}]")
        fn = self.evaluate if order == 0 else self.derivative
        with ctx.scope():
            return np.array([mpf(float(fn(j, point))) for j in window], dtype=object)

    def overlap_matrix(self, window, interval, ctx=DEFAULT):
        """``int_a^b w e_j e_k dx`` by composite Gauss-Legendre in double precision."""
        window = self.check_window(window)
        a, b = _check_interval(interval, self.length)
        wfun = self.problem.coefficients()[2]
        panels = max(4, 2 * max(window))
        x0, w0 = np.polynomial.legendre.leggauss(24)
        edges = np.linspace(a, b, panels + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        x = (mid[:, None] + half[:, None] * x0[None, :]).reshape(-1)
        wts = (half[:, None] * w0[None, :]).reshape(-1) * wfun(x)
        E = self.sample(window, x)
        S = (E * wts) @ E.T
        with ctx.scope():
            return np.array([[mpf(float(v)) for v in row] for row in S], dtype=object)


def _fd_eigenvalues(problem, n_modes, grid_points):
    X = problem.length
    pfun, qfun, wfun, _ = problem.coefficients()
    N = grid_points - 1
    h = X / N
    x = np.linspace(0.0, X, N + 1)
    ph = pfun(0.5 * (x[1:] + x[:-1]))
    qv, wv = qfun(x), wfun(x)
    if np.any(pfun(x) <= 0) or np.any(wv <= 0):
        raise ValidationError("coefficients", "p and w must be positive on [0, X]")
    diag = np.zeros(N + 1)
    diag[1:N] = (ph[:-1] + ph[1:]) / h ** 2 - qv[1:N]
    mass = wv.copy()
    (a0, b0), (a1, b1) = problem.left, problem.right
    p0, pN = pfun(np.array([0.0, X]))
    diag[0] = ph[0] / h ** 2 - p0 * a0 / (b0 * h) - qv[0] / 2 if b0 != 0 else 0.0
    diag[N] = ph[-1] / h ** 2 + pN * a1 / (b1 * h) - qv[N] / 2 if b1 != 0 else 0.0
    mass[0] *= 0.5
    mass[N] *= 0.5
    off = -ph / h ** 2
    lo = 0 if b0 != 0 else 1
    hi = N + 1 if b1 != 0 else N
    d = diag[lo:hi] / mass[lo:hi]
    s = 1.0 / np.sqrt(mass[lo:hi])
    e = off[lo:hi - 1] * s[:-1] * s[1:]
    size = hi - lo
    if n_modes > size:
        raise ResolutionError(f"grid has {size} unknowns, fewer than {n_modes} requested modes")
    return eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, n_modes - 1))


def _angles(problem):
    pfun = problem.coefficients()[0]
    p0, pX = pfun(np.array([0.0, problem.length]))
    (a0, b0), (a1, b1) = problem.left, problem.right
    # u = sin(theta), p u' = cos(theta): a sin + (b/p) cos = 0
    alpha = math.atan2(-b0 / p0, a0) % math.pi
    beta = math.atan2(-b1 / pX, a1) % math.pi
    if beta == 0.0:
        beta = math.pi
    return alpha, beta


def _prufer_end(problem, lams, alpha):
    """Prüfer angle at ``x = X`` for every trial eigenvalue in ``lams`` at once."""
    pfun, qfun, wfun, _ = problem.coefficients()
    lams = np.asarray(lams, dtype=float)

    def rhs(x, th):
        xx = np.array([x])
        s2 = np.sin(th) ** 2
        return (1.0 - s2) / pfun(xx)[0] + (lams * wfun(xx)[0] + qfun(xx)[0]) * s2

    sol = solve_ivp(rhs, (0.0, problem.length), np.full(lams.shape, alpha), method="DOP853",
                    rtol=1e-12, atol=1e-12)
    return sol.y[:, -1]


def _refine(problem, guesses, alpha, beta):
    """Parallel Illinois iteration on ``theta(X; lambda) = beta + (n-1) pi``."""
    n = len(guesses)
    target = beta + np.arange(n) * math.pi

    def mismatch(lams):
        return _prufer_end(problem, lams, alpha) - target

    step = np.maximum(1e-3, 0.02 * np.abs(guesses))
    lo, hi = guesses - step, guesses + step
    flo, fhi = mismatch(lo), mismatch(hi)
    for _ in range(60):
        bad_lo, bad_hi = flo >= 0, fhi <= 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, lo - step, lo)
        hi = np.where(bad_hi, hi + step, hi)
        step *= 2
        flo, fhi = mismatch(lo), mismatch(hi)
    else:
        raise DegeneracyError("could not bracket the eigenvalues")
    tol = 1e-13 * np.maximum(1.0, np.abs(guesses))
    side = np.zeros(n, dtype=int)
    for _ in range(200):
        mid = (lo * fhi - hi * flo) / (fhi - flo)
        mid = np.where((mid <= lo) | (mid >= hi), 0.5 * (lo + hi), mid)
        fm = mismatch(mid)
        left = fm < 0
        lo, flo = np.where(left, mid, lo), np.where(left, fm, flo)
        hi, fhi = np.where(left, hi, mid), np.where(left, fhi, fm)
        # Illinois: halve the stale endpoint value when the same side moves twice
        fhi = np.where(left & (side == 1), fhi / 2, fhi)
        flo = np.where(~left & (side == -1), flo / 2, flo)
        side = np.where(left, 1, -1)
        if np.all((hi - lo < tol) | (np.abs(fm) < 1e-13)):
            return mid
    raise DegeneracyError("eigenvalue refinement did not converge")


def solve_sturm_liouville(problem, n_modes, grid_points=None):
    """First ``n_modes`` eigenpairs of ``problem``.

    Finite differences (half-cell rows at Robin/Neumann ends) give starting
    values, Prüfer shooting refines each eigenvalue to about 1e-12 relative,
    and the eigenfunctions come from integrating ``(u, p u', int w u^2)``.
    At least 16 grid points per wavelength of the top mode are required.
    """
    if not isinstance(problem, SturmLiouvilleProblem):
        raise ValidationError("problem", "expected a SturmLiouvilleProblem")
    if int(n_modes) < 1:
        raise ValidationError("n_modes", f"must be positive, got {n_modes}")
    n_modes = int(n_modes)
    if grid_points is None:
        grid_points = max(256, 32 * n_modes) + 1
    grid_points = int(grid_points)
    if grid_points - 1 < 8 * n_modes:
        raise ResolutionError(
            f"{grid_points} grid points resolve fewer than 16 points per wavelength for mode {n_modes}")
    pfun, qfun, wfun, tabulated = problem.coefficients()
    fd = _fd_eigenvalues(problem, n_modes, grid_points)
    alpha, beta = _angles(problem)
    lams = _refine(problem, fd, alpha, beta)
    gaps = np.diff(lams)
    if np.any(gaps <= 1e-9 * np.maximum(1.0, np.abs(lams[1:]))):
        raise DegeneracyError("eigenvalues are not separated")

    X = problem.length

    def rhs(x, y):
        xx = np.array([x])
        pv, qv, wv = pfun(xx)[0], qfun(xx)[0], wfun(xx)[0]
        u, pu = y[:n_modes], y[n_modes:2 * n_modes]
        return np.concatenate([pu / pv, -(lams * wv + qv) * u, wv * u * u])

    y0 = np.concatenate([np.full(n_modes, math.sin(alpha)), np.full(n_modes, math.cos(alpha)), np.zeros(n_modes)])
    sol = solve_ivp(rhs, (0.0, X), y0, method="DOP853", rtol=1e-12, atol=1e-13, dense_output=True)
    norms = np.sqrt(sol.y[2 * n_modes:, -1])

    top = np.arange(n_modes // 2, n_modes)
    liouville = _liouville_length(problem)
    shift = float(np.mean(np.sqrt(np.maximum(lams[top], 0.0)) * liouville / math.pi - (top + 1)))
    grid = np.linspace(0.0, X, grid_points)
    basis = NumericalBasis(problem=problem, eigenvalues=lams, grid=grid, values=None, derivatives=None,
                           asymptotic_shift=shift,
                           warning="coefficients tabulated; linear interpolation limits accuracy" if tabulated else None,
                           entry_accuracy=1e-10, _solution=sol, _norms=norms)
    basis.values = np.array([basis.evaluate(n, grid) for n in range(1, n_modes + 1)])
    basis.derivatives = np.array([basis.derivative(n, grid) for n in range(1, n_modes + 1)])
    return basis


def weighted_length(problem):
    """``int_0^X sqrt(p) dx`` by adaptive quadrature.

    Not the length that governs the eigenvalue law: for ``-(p u')' = lambda w u`` that
    is ``int sqrt(w / p)``, used internally for the asymptotic shift.
    """
    pfun, _, _, _ = problem.coefficients()
    val, _ = quad(lambda x: math.sqrt(float(pfun(np.array([x]))[0])), 0.0, problem.length, limit=200,
                  epsabs=1e-13, epsrel=1e-12)
    return val


def _liouville_length(problem):
    pfun, _, wfun, _ = problem.coefficients()
    x, wq = np.polynomial.legendre.leggauss(200)
    x = 0.5 * problem.length * (x + 1)
    return float(0.5 * problem.length * np.sum(wq * np.sqrt(wfun(x) / pfun(x))))


def frequency_window(basis, low=0.0, high=math.inf):
    """Mode numbers ``j`` with ``low <= sqrt(lambda_j) <= high``.

    Raises :class:`ValidationError` if the basis holds too few modes to cover
    ``high`` (a finite cap would otherwise be silently truncated).
    """
    freqs = basis.frequencies
    if math.isfinite(high) and freqs[-1] <= high:
        raise ValidationError("window", f"basis has {basis.n_modes} modes, not enough to reach frequency {high}")
    return tuple(int(j + 1) for j in np.nonzero((freqs >= low) & (freqs <= high))[0])
