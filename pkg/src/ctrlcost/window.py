"""Biorthogonal families to ``exp(-i lambda_k t)`` on ``[-T/2, T/2]``.

Construction, for a normalised sequence ``lambda_k ~ (k + nu)^2``:

* ``F_n(z) = prod_{k != n} (lambda_k - z) / (lambda_k - lambda_n)``, evaluated
  with explicit factors up to ``K`` and the exact Gamma-function tail of the
  model ``a (k + nu)^2 + b``;
* a multiplier ``M(z) = prod_k sinc(a_k z)``, ``a_k = gamma / (k + k0)^2``,
  even, ``M(0) = 1``, ``|M| <= 1`` on the real line, of exponential type
  ``sum a_k <= tau`` and decaying like ``exp(-(1 + margin) d sqrt|x|)``;
* ``G_n(z) = F_n(z) M(z - lambda_n)`` and ``g_n`` its inverse Fourier
  transform, supported in ``[-tau, tau]``, ``tau = T/2``.

Normalisation: ``g_n(t) = (1/2pi) int G_n(x) exp(i x t) dx`` so that
``int g_n(t) exp(-i lambda_k t) dt = G_n(lambda_k) = delta_nk``.

Numerics: ``G_n`` is sampled on a lattice ``x_m = x_0 + m h`` shared by all
``n`` with ``h < pi / (2 tau)``.  Then the trapezoid sum reproduces ``g_n`` on
``[-tau, tau]`` and the Gram entries ``(g_n, g_k) = (1/2pi) (G_n, G_k)`` exactly
up to truncation (Poisson summation).  When the window differences
``lambda_n - lambda_m`` are integers, ``h`` divides them and ``M`` is sampled
once.  Time samples come from an exact-arithmetic FFT of the lattice sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import gmpy2
import numpy as np

from .errors import ConstructionError, TruncationError, ValidationError
from .precision import DEFAULT, as_mp_array, fft, from_mpmath, mpc, mpf, to_complex, to_mpmath

__all__ = [
    "ALPHA_STAR",
    "SpectralSequence",
    "CountingFunction",
    "counting_function",
    "evaluate_F",
    "product_growth_constant",
    "Multiplier",
    "build_multiplier",
    "CompositeG",
    "BiorthogonalFamily",
    "build_family",
    "window_cost_bound",
    "fit_cost_exponent",
    "BoundaryFamilyControl",
    "boundary_control_from_family",
]

ALPHA_STAR = 4 * (36 / 37) ** 2


# ---------------------------------------------------------------------------
# sequences


@dataclass(frozen=True)
class SpectralSequence:
    """Increasing real sequence ``lambda_1 < lambda_2 < ...``.

    ``values`` holds explicitly known terms (as strings or numbers); beyond
    them the model ``scale * (k + shift)^2 + offset`` is used, which deviates
    from the true sequence by at most ``model_error``.  ``time_scale`` and
    ``frequency_shift`` record a normalisation ``lambda = time_scale *
    (lambda_normalised - frequency_shift)`` applied by :meth:`from_basis`.
    """

    values: tuple = ()
    scale: object = 1
    shift: object = 0
    offset: object = 0
    model_error: float = 0.0
    time_scale: object = 1
    frequency_shift: object = 0

    def __post_init__(self):
        if float(self.scale) <= 0:
            raise ValidationError("scale", "model scale must be positive")
        vals = [float(v) for v in self.values]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValidationError("values", "sequence must be strictly increasing")
        if vals and vals[0] <= 0:
            raise ValidationError("values", "normalised sequence needs lambda_1 > 0")
        if not vals and self.model_value_float(1) <= 0:
            raise ValidationError("offset", "normalised sequence needs lambda_1 > 0")

    @classmethod
    def squares(cls):
        return cls()

    @classmethod
    def from_rule(cls, scale=1, shift=0, offset=0):
        return cls(scale=scale, shift=shift, offset=offset)

    @classmethod
    def from_basis(cls, basis):
        """Normalise a basis spectrum to length ``pi`` and ``lambda_1 > 0``."""
        from .spectral import LaplacianBasis, _liouville_length

        if isinstance(basis, LaplacianBasis):
            if basis._pi_ratio:
                num, den = basis._pi_ratio
                sigma = Fraction(den * den, num * num)
            else:
                sigma = ("length", float(basis.length))
            nu = basis.asymptotic_shift
            # lambda = (pi/L)^2 (k + nu)^2; a zero mode is lifted by one
            lift = 1 if (1 + nu) == 0 else 0
            return cls(scale=1, shift=nu, offset=lift, time_scale=sigma,
                       frequency_shift=lift)
        L = _liouville_length(basis.problem)
        sigma = (math.pi / L) ** 2
        lam = np.asarray(basis.eigenvalues) / sigma
        lift = max(0.0, 1.0 - lam[0])
        lam = lam + lift
        k = np.arange(1, len(lam) + 1)
        top = k > len(lam) // 2
        nu = basis.asymptotic_shift
        resid = lam[top] - (k[top] + nu) ** 2
        offset = float(np.mean(resid))
        err = float(np.max(np.abs(resid - offset))) * 2 + 1e-6
        return cls(values=tuple(float(v) for v in lam), shift=nu, offset=offset, model_error=err,
                   time_scale=("length", L), frequency_shift=lift)

    def model_value_float(self, k):
        return float(self.scale) * (k + float(self.shift)) ** 2 + float(self.offset)

    def _num(self, v, ctx):
        if isinstance(v, Fraction):
            return mpf(v.numerator) / v.denominator
        return mpf(v)

    def params(self, ctx):
        with ctx.scope():
            return self._num(self.scale, ctx), self._num(self.shift, ctx), self._num(self.offset, ctx)

    def value(self, k, ctx=DEFAULT):
        with ctx.scope():
            if k <= len(self.values):
                return self._num(self.values[k - 1], ctx)
            a, nu, b = self.params(ctx)
            return a * (k + nu) ** 2 + b

    def values_mp(self, ks, ctx=DEFAULT):
        with ctx.scope():
            return np.array([self.value(k, ctx) for k in ks], dtype=object)

    def sigma(self, ctx=DEFAULT):
        """Time scale; a ``("length", L)`` entry means ``(pi / L)^2``."""
        with ctx.scope():
            if isinstance(self.time_scale, tuple):
                return (gmpy2.const_pi() / mpf(self.time_scale[1])) ** 2
            return self._num(self.time_scale, ctx)

    def lift(self, ctx=DEFAULT):
        with ctx.scope():
            return self._num(self.frequency_shift, ctx)

    def growth_constant(self, count=200):
        """``max |sqrt(lambda_k) - k|`` over the first ``count`` terms."""
        return max(abs(math.sqrt(self.value_float(k)) - k) for k in range(1, count + 1))

    def value_float(self, k):
        if k <= len(self.values):
            return float(self.values[k - 1])
        return self.model_value_float(k)


# ---------------------------------------------------------------------------
# counting function


@dataclass(frozen=True)
class CountingFunction:
    """``N_n(r) = #{k != n : |lambda_k - lambda_n| <= r}`` over the stored range."""

    center: int
    jumps: tuple
    r_max: float

    def __call__(self, r):
        if r > self.r_max:
            raise TruncationError(f"counts are only complete up to r = {self.r_max}")
        return int(np.searchsorted(self.jumps, r, side="right"))

    @property
    def min_gap(self):
        return self.jumps[0]

    def deviation_bound(self):
        """``max |sqrt(r) - N_n(r)|`` over ``0 <= r <= r_max`` (attained at jumps)."""
        best = 0.0
        prev = 0
        for i, r in enumerate(self.jumps):
            if r > self.r_max:
                break
            best = max(best, abs(math.sqrt(r) - prev), abs(math.sqrt(r) - (i + 1)))
            prev = i + 1
        return max(best, abs(math.sqrt(self.r_max) - prev))


def counting_function(seq, n, count=None):
    """Counting function centred at ``lambda_n`` using ``count`` terms."""
    if n < 1:
        raise ValidationError("n", "index must be positive")
    count = count or max(4 * n, 64)
    lam = np.array([seq.value_float(k) for k in range(1, count + 1)])
    dist = np.sort(np.abs(np.delete(lam, n - 1) - lam[n - 1]))
    return CountingFunction(center=n, jumps=tuple(dist), r_max=float(lam[-1] - lam[n - 1]))


# ---------------------------------------------------------------------------
# the product F_n


def _gamma_tail_ratio(seq, K, z, ctx):
    """``prod_{k>K} (m_k - z)`` up to a z-independent factor: ``1/(Gamma(c-al) Gamma(c+al))``."""
    m = ctx.mp
    a, nu, b = seq.params(ctx)
    c = to_mpmath(K + 1 + nu, ctx)
    al2 = to_mpmath((z - b) / a, ctx)
    if isinstance(al2, type(m.mpc(0))) or al2 < 0:
        al = m.sqrt(m.mpc(al2))
    else:
        al = m.sqrt(al2)
    val = m.rgamma(c - al) * m.rgamma(c + al)
    if not isinstance(z, type(gmpy2.mpc())):
        val = m.re(val)
    return from_mpmath(val)


def _tail_sum_bound(seq, n, K, wabs, ctx):
    """``sum_{k>K} |w| / (lambda_k - lambda_n - |w|)``, a bound for ``sum |ln(1 - w / (lambda_k - lambda_n))|``."""
    ln = seq.value_float(n)
    total = 0.0
    k = K + 1
    while True:
        total += wabs / (seq.value_float(k) - ln - wabs)
        if k > 20 * K + 1000:
            # integral tail of 1/(a k^2), doubled to absorb the shifts
            total += 2 * wabs / (float(seq.scale) * (k + float(seq.shift)))
            break
        k += 1
    return total


def evaluate_F(seq, n, z, ctx=DEFAULT, K=None, tail="model"):
    """``F_n(z)`` and a relative error bound.

    ``tail="model"`` multiplies the explicit product over ``k <= K`` by the
    exact Gamma-function tail of the model; the bound then only reflects
    ``model_error``.  ``tail="none"`` returns the plain truncated product with
    bound ``exp(sum_{k>K} |z - lambda_n| / (lambda_k - lambda_n)) - 1``.
    """
    if n < 1:
        raise ValidationError("n", "index must be positive")
    K = K or max(2 * n, 32)
    if K < 2 * n:
        raise ValidationError("K", f"truncation K={K} must be at least 2n={2 * n}")
    with ctx.scope():
        z = mpc(z) if isinstance(z, (complex, type(gmpy2.mpc()))) else mpf(z)
        lam = seq.values_mp(range(1, K + 1), ctx)
        ln = lam[n - 1]
        w = z - ln
        wabs = float(abs(w))
        gap = float(lam[-1] - ln)
        if tail == "none" or seq.model_error > 0:
            if wabs >= gap:
                raise TruncationError(f"|z - lambda_n| = {wabs:.3g} exceeds lambda_K - lambda_n = {gap:.3g}")
        val = mpf(1)
        for k in range(1, K + 1):
            if k != n:
                val *= (lam[k - 1] - z) / (lam[k - 1] - ln)
        if tail == "none":
            s = _tail_sum_bound(seq, n, K, wabs, ctx)
            return val, math.expm1(s)
        if tail != "model":
            raise ValidationError("tail", f"unknown tail treatment {tail!r}")
        val *= _gamma_tail_ratio(seq, K, z, ctx) / _gamma_tail_ratio(seq, K, ln, ctx)
        bound = 0.0
        if seq.model_error > 0:
            bound = math.expm1(2 * seq.model_error * _tail_sum_bound(seq, n, K, wabs, ctx) /
                               max(1.0, gap - wabs))
        return val, bound


def product_growth_constant(seq, n, eps, ctx=DEFAULT, radii=None, angles=8):
    """Fitted ``A`` with ``ln|F_n(lambda_n + z)| <= (sqrt(2) pi + eps) sqrt|z| + A`` on samples."""
    radii = radii or [10.0 ** e for e in np.linspace(-1, 4, 26)]
    rate = math.sqrt(2) * math.pi + eps
    best = -math.inf
    with ctx.scope():
        ln = seq.value(n, ctx)
        for r in radii:
            for j in range(angles):
                phi = 2 * math.pi * (j + 0.5) / angles
                z = ln + gmpy2.mpc(r * math.cos(phi), r * math.sin(phi))
                val, _ = evaluate_F(seq, n, z, ctx)
                best = max(best, float(gmpy2.log(abs(val))) - rate * math.sqrt(r))
            val, _ = evaluate_F(seq, n, ln - r, ctx)
            best = max(best, float(gmpy2.log(abs(val))) - rate * math.sqrt(r))
    return best


# ---------------------------------------------------------------------------
# multiplier


@dataclass
class Multiplier:
    """``M(z) = prod_{k>=1} sinc(a_k z)``, ``a_k = gamma / (k + k0)^2``."""

    tau: float
    d: float
    margin: float
    gamma: object
    k0: float
    ctx: object
    D: float = math.nan
    alpha_eff: float = math.nan
    _tails: dict = field(default_factory=dict, repr=False)

    def coefficient(self, k):
        return self.gamma / (k + mpf(self.k0)) ** 2

    @property
    def exponential_type(self):
        m = self.ctx.mp
        with self.ctx.scope():
            return from_mpmath(m.psi(1, m.mpf(self.k0) + 1)) * self.gamma

    def explicit_count(self, x):
        """Factors with ``a_k |x| > 1/2`` are multiplied out; the rest use the series."""
        g = float(self.gamma)
        return max(0, math.ceil(math.sqrt(2 * g * abs(float(x))) - self.k0 - 1))

    def _tail_coefficients(self, K):
        if K in self._tails:
            return self._tails[K]
        m = self.ctx.mp
        bits = self.ctx.mantissa_bits
        terms = int(bits * math.log(2) / math.log((2 * math.pi) ** 2)) + 3
        g = to_mpmath(self.gamma, self.ctx)
        shift = m.mpf(K) + 1 + m.mpf(self.k0)
        coeffs = []
        with self.ctx.scope():
            for j in range(1, terms + 1):
                cj = m.zeta(2 * j) / (j * m.pi ** (2 * j)) * g ** (2 * j) * m.zeta(4 * j, shift)
                coeffs.append(from_mpmath(cj))
        self._tails[K] = coeffs
        return coeffs

    def _log_tail(self, K, x2):
        coeffs = self._tail_coefficients(K)
        acc = mpf(0)
        for c in reversed(coeffs):
            acc = acc * x2 + c
        return -acc * x2

    def __call__(self, z):
        with self.ctx.scope():
            z = mpc(z) if isinstance(z, (complex, type(gmpy2.mpc()))) else mpf(z)
            if z == 0:
                return mpf(1)
            K = self.explicit_count(abs(z))
            val = mpf(1)
            for k in range(1, K + 1):
                w = self.coefficient(k) * z
                val *= gmpy2.sin(w) / w
            return val * gmpy2.exp(self._log_tail(K, z * z))

    def on_grid(self, start, h, count, chunk=256):
        """``M(start + m h)`` for ``m = 0..count-1`` (real points)."""
        with self.ctx.scope():
            start, h = mpf(start), mpf(h)
            out = np.empty(count, dtype=object)
            for m0 in range(0, count, chunk):
                m1 = min(count, m0 + chunk)
                xs = [start + m * h for m in range(m0, m1)]
                K = self.explicit_count(max(abs(float(xs[0])), abs(float(xs[-1]))))
                vals = self._chunk(xs, h, K)
                out[m0:m1] = vals
            return out

    def _chunk(self, xs, h, K):
        n = len(xs)
        if K == 0:
            return np.array([gmpy2.exp(self._log_tail(0, x * x)) for x in xs], dtype=object)
        a = np.array([self.coefficient(k) for k in range(1, K + 1)], dtype=object)
        prod_a = reduce(lambda u, v: u * v, a)
        two_cos = np.array([2 * gmpy2.cos(ak * h) for ak in a], dtype=object)
        s_prev = np.array([gmpy2.sin(ak * xs[0]) for ak in a], dtype=object)
        s_cur = np.array([gmpy2.sin(ak * xs[1]) for ak in a], dtype=object) if n > 1 else None
        out = []
        for i, x in enumerate(xs):
            if i == 0:
                s = s_prev
            elif i == 1:
                s = s_cur
            else:
                s_prev, s_cur = s_cur, two_cos * s_cur - s_prev
                s = s_cur
            if x == 0:
                out.append(mpf(1))
                continue
            val = np.prod(s) / (prod_a * x ** K)
            out.append(val * gmpy2.exp(self._log_tail(K, x * x)))
        return np.array(out, dtype=object)

    def envelope(self, x):
        """Upper bound for ``ln|M(x)|`` on the real line (double precision).

        Uses ``|sinc(w)| <= min(1, 1/|w|)``; the active count ``N`` gives
        ``-N ln(gamma x) + 2 (lnGamma(N + k0 + 1) - lnGamma(k0 + 1))``.
        """
        x = abs(float(x))
        g = float(self.gamma)
        N = math.floor(math.sqrt(g * x) - self.k0) if g * x > 0 else 0
        if N <= 0:
            return 0.0
        return -N * math.log(g * x) + 2 * (math.lgamma(N + self.k0 + 1) - math.lgamma(self.k0 + 1))


def build_multiplier(tau, d, ctx=DEFAULT, margin=0.1, check_range=(1e-2, 1e14)):
    """Multiplier of type ``<= tau`` with certified ``exp(-d sqrt|x|)`` decay.

    ``gamma = ((1 + margin) d / 2)^2`` and ``k0 >= 0`` solves
    ``gamma psi'(k0 + 1) = tau`` (nudged up so the type stays below ``tau``).
    The certificate fits ``D`` in
    ``ln|M(x)| <= ALPHA_STAR d^2 / (4 tau) + D - d sqrt|x|`` from the envelope on
    a log grid and checks that the envelope bound decreases past the grid end.
    """
    if not tau > 0:
        raise ValidationError("tau", f"must be positive, got {tau}")
    if not d > 0:
        raise ValidationError("d", f"must be positive, got {d}")
    if not margin > 0:
        raise ValidationError("margin", "decay margin must be positive")
    m = ctx.mp
    g = ((1 + margin) * d / 2) ** 2
    if g * math.pi ** 2 / 6 <= tau:
        k0 = 0.0
    else:
        k0 = float(m.findroot(lambda s: g * m.psi(1, s + 1) - tau, max(0.5, g / tau)))
        k0 = math.nextafter(k0 * (1 + 1e-12), math.inf)
    with ctx.scope():
        M = Multiplier(tau=float(tau), d=float(d), margin=float(margin), gamma=mpf(g), k0=k0, ctx=ctx)
        if M.exponential_type > tau:
            raise ConstructionError("multiplier type exceeds tau")
    xs = np.geomspace(check_range[0], check_range[1], 400)
    vals = np.array([M.envelope(x) + d * math.sqrt(x) for x in xs])
    peak = float(vals.max())
    if vals[-1] >= peak - 1 or np.any(np.diff(vals[-20:]) >= 0):
        raise ConstructionError("multiplier decay bound could not be certified on the check grid")
    # spot check the envelope against actual values
    for x in (0.5, 3.0, 40.0, 400.0):
        actual = float(gmpy2.log(abs(M(x)))) if M(x) != 0 else -math.inf
        if actual > M.envelope(x) + 1e-9:
            raise ConstructionError(f"envelope violated at x={x}")
    M.alpha_eff = 4 * tau * peak / d ** 2
    M.D = peak - ALPHA_STAR * d ** 2 / (4 * tau)
    return M


@dataclass
class CompositeG:
    """``G_n(z) = F_n(z) M(z - lambda_n)``."""

    seq: SpectralSequence
    n: int
    multiplier: Multiplier
    K: int | None = None

    def __call__(self, z):
        ctx = self.multiplier.ctx
        with ctx.scope():
            f, _ = evaluate_F(self.seq, self.n, z, ctx, K=self.K)
            return f * self.multiplier(z - self.seq.value(self.n, ctx))


# ---------------------------------------------------------------------------
# the family


@dataclass
class BiorthogonalFamily:
    """Sampled family ``g_n``, ``n`` in ``window``, supported in ``[-T/2, T/2]``.

    ``spectra[i]`` holds ``G_n`` on the lattice ``x0 + m h``; ``samples[i]`` holds
    ``g_n`` at ``times`` (uniform, starting at ``-T/2``).
    """

    seq: SpectralSequence
    T: float
    window: tuple
    eps: float
    multiplier: Multiplier
    K: int
    x0: object
    h: object
    spectra: np.ndarray
    times: np.ndarray
    dt: object
    samples: np.ndarray | None
    gram: np.ndarray
    gram_bound: float
    norms: np.ndarray
    residual: float
    residual_matrix: np.ndarray
    ctx: object

    @property
    def lattice(self):
        with self.ctx.scope():
            return self.x0 + self.h * np.arange(self.spectra.shape[1])

    def biorthogonality(self, ks):
        """``int g_n(t) exp(-i lambda_k t) dt`` by the trapezoid rule on the samples."""
        lam = self.seq.values_mp(ks, self.ctx)
        with self.ctx.scope():
            ph = np.array([[gmpy2.exp(gmpy2.mpc(0, -lk * t)) for t in self.times] for lk in lam], dtype=object)
            return self.dt * self.samples.dot(ph.T)


def _lattice_step(lams, h_max):
    """Common step dividing every window difference, or ``None``."""
    base = lams[0]
    diffs = []
    for v in lams[1:]:
        dv = v - base
        r = int(gmpy2.rint(dv))
        if abs(dv - r) > gmpy2.mpfr(2) ** (-gmpy2.get_context().precision // 2):
            return None
        diffs.append(abs(r))
    g = reduce(math.gcd, diffs, 0)
    if g == 0:
        return mpf(h_max)
    q = math.ceil(g / h_max)
    return mpf(g) / q


def _family_spectra(seq, window, tau, multiplier, K, tol, ctx, chunk=256):
    """Lattice, ``G_n`` values for the window and the lattice step."""
    n_max = max(window)
    lam_all = seq.values_mp(range(1, K + 1), ctx)
    lam_win = np.array([lam_all[n - 1] if n <= K else seq.value(n, ctx) for n in window], dtype=object)
    h_max = 0.95 * math.pi / (2 * tau)
    h = _lattice_step(list(lam_win), h_max)
    lattice = h is not None
    if h is None:
        h = mpf(h_max)
    x0 = lam_win[0]
    a, nu, b = seq.params(ctx)
    c_gamma = K + 1 + nu
    # per-n constants: D_n = prod_{k<=K, k!=n} (lambda_k - lambda_n), Gamma-tail at lambda_n
    consts = []
    for ln in lam_win:
        Dn = mpf(1)
        for lk in lam_all:
            if lk != ln:
                Dn *= lk - ln
        consts.append(Dn * _gamma_tail_ratio(seq, K, ln, ctx))

    cache_M = {}

    def M_values(offsets_idx):
        # offsets in units of h relative to 0 (lattice case)
        need = [i for i in offsets_idx if i not in cache_M]
        if need:
            lo, hi = min(need), max(need)
            span = range(lo, hi + 1)
            vals = multiplier.on_grid(lo * h, h, len(span))
            for i, v in zip(span, vals):
                cache_M[i] = v
        return [cache_M[i] for i in offsets_idx]

    shifts = [int(gmpy2.rint((ln - x0) / h)) for ln in lam_win] if lattice else None

    def block(m_lo, m_hi):
        ms = range(m_lo, m_hi)
        xs = [x0 + m * h for m in ms]
        P = np.array([reduce(lambda u, v: u * v, [lk - x for lk in lam_all]) for x in xs], dtype=object) \
            if len(lam_all) else np.ones(len(xs), dtype=object)
        tails = np.array([_gamma_tail_ratio(seq, K, x, ctx) for x in xs], dtype=object)
        rows = []
        for i, ln in enumerate(lam_win):
            if lattice:
                Mv = M_values([m - shifts[i] for m in ms])
            else:
                Mv = list(multiplier.on_grid(xs[0] - ln, h, len(xs)))
            row = []
            for j, x in enumerate(xs):
                if x == ln:
                    row.append(Mv[j])
                else:
                    row.append(P[j] / (ln - x) * tails[j] / consts[i] * Mv[j])
            rows.append(row)
        return np.array(rows, dtype=object)

    # start with the span of the window, extend both ways until negligible
    m_lo = 0
    m_hi = int(gmpy2.ceil((lam_win[-1] - x0) / h)) + 1
    core = block(m_lo, m_hi)
    blocks = [core]
    peak = [max(abs(v) for v in row) for row in core]

    def small(blk):
        return all(max(abs(v) for v in row) <= tol * pk for row, pk in zip(blk, peak))

    def extend(direction):
        nonlocal m_lo, m_hi
        quiet = 0
        while quiet < 2:
            if direction < 0:
                blk = block(m_lo - chunk, m_lo)
                m_lo -= chunk
                blocks.insert(0, blk)
            else:
                blk = block(m_hi, m_hi + chunk)
                m_hi += chunk
                blocks.append(blk)
            for i, row in enumerate(blk):
                peak[i] = max(peak[i], max(abs(v) for v in row))
            quiet = quiet + 1 if small(blk) else 0
            if m_hi - m_lo > 400000:
                raise ConstructionError("spectral support of the family did not become negligible")

    extend(-1)
    extend(+1)
    spectra = np.concatenate(blocks, axis=1)
    return x0 + m_lo * h, h, spectra


def build_family(seq, T, window, eps, ctx=DEFAULT, margin=0.1, tol=None, samples=True, check_extra=5,
                 residual_tol=1e-8, gram=True):
    """Construct and sample the biorthogonal family for ``window`` on ``[-T/2, T/2]``.

    ``tol`` (default ``2^-(bits/3)``) is the relative size below which the
    spectral tails of ``G_n`` are dropped.  Residuals
    ``|int g_n exp(-i lambda_k t) - delta_nk|`` are computed from the samples for
    ``k`` in the window plus ``check_extra`` further indices; a residual above
    ``residual_tol`` raises :class:`ConstructionError`.  ``gram=False`` skips
    the Gram matrix (and with it the cost bound) for large windows.
    """
    if not T > 0:
        raise ValidationError("T", f"must be positive, got {T}")
    if not eps > 0:
        raise ValidationError("eps", f"must be positive, got {eps}")
    window = tuple(int(n) for n in window)
    if not window or min(window) < 1 or len(set(window)) != len(window):
        raise ValidationError("window", "window must be distinct positive indices")
    window = tuple(sorted(window))
    tau = T / 2
    d = math.sqrt(2) * math.pi + 2 * eps
    multiplier = build_multiplier(tau, d, ctx, margin)
    K = max(4 * max(window), 32, len(seq.values))
    with ctx.scope():
        tol = tol or gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 3))
        x0, h, spectra = _family_spectra(seq, window, tau, multiplier, K, tol, ctx)
        n_x = spectra.shape[1]
        two_pi = 2 * gmpy2.const_pi()
        # Gram matrix by Plancherel on the lattice (exact for h < pi / (2 tau))
        if gram:
            gram = h / two_pi * spectra.dot(np.conj(spectra).T)
            norms = np.array([gmpy2.sqrt(gram[i, i].real) for i in range(len(window))], dtype=object)
            gram_bound = max(sum(abs(v) for v in row) for row in gram)
        else:
            gram = None
            norms = np.array([gmpy2.sqrt(h / two_pi * sum(abs(v) ** 2 for v in row)) for row in spectra],
                             dtype=object)
            gram_bound = math.nan

        P = 1 << max(4, math.ceil(math.log2(1.25 * n_x)))
        dt = two_pi / (P * h)
        n_t = int(gmpy2.ceil(T / dt)) + 1
        times = np.array([-mpf(tau) + j * dt for j in range(n_t)], dtype=object)
        sampled = None
        residual_matrix = None
        residual = math.nan
        if samples:
            phase_m = np.array([gmpy2.exp(gmpy2.mpc(0, -m * h * tau)) for m in range(n_x)], dtype=object)
            phase_t = np.array([gmpy2.exp(gmpy2.mpc(0, x0 * t)) for t in times], dtype=object)
            sampled = np.empty((len(window), n_t), dtype=object)
            zero = mpc(0)
            for i in range(len(window)):
                buf = np.full(P, zero, dtype=object)
                buf[:n_x] = spectra[i] * phase_m
                out = fft(buf, ctx, inverse=True)
                sampled[i] = h / two_pi * phase_t * out[:n_t]
            fam_tmp = BiorthogonalFamily(seq, T, window, eps, multiplier, K, x0, h, spectra, times, dt,
                                         sampled, gram, float(gram_bound), norms, math.nan, None, ctx)
            ks = tuple(range(1, max(window) + check_extra + 1))
            B = fam_tmp.biorthogonality(ks)
            residual_matrix = np.zeros(B.shape)
            for i, n in enumerate(window):
                for j, k in enumerate(ks):
                    residual_matrix[i, j] = float(abs(B[i, j] - (1 if n == k else 0)))
            residual = float(residual_matrix.max())
            if residual > residual_tol:
                i, j = np.unravel_index(int(residual_matrix.argmax()), residual_matrix.shape)
                raise ConstructionError(f"biorthogonality residual {residual:.3e} at n={window[i]}, "
                                        f"k={ks[j]} exceeds {residual_tol:.1e}")
    return BiorthogonalFamily(seq, T, window, eps, multiplier, K, x0, h, spectra, times, dt, sampled, gram,
                              float(gram_bound), norms, residual, residual_matrix, ctx)


def window_cost_bound(family):
    """``sqrt`` of the Schur row-sum bound of the Gram matrix."""
    if family.gram is None:
        raise ValidationError("family", "family was built without its Gram matrix")
    return math.sqrt(family.gram_bound)


def fit_cost_exponent(seq, T_grid, window, eps, ctx=DEFAULT, margin=0.1):
    """Least-squares fit ``ln C(T) = ln C0 + E / T``; returns ``(E, C0, [(T, C)])``."""
    if len(T_grid) < 2:
        raise ValidationError("T_grid", "need at least two horizons")
    pts = []
    for T in T_grid:
        fam = build_family(seq, T, window, eps, ctx, margin=margin, samples=False)
        pts.append((float(T), window_cost_bound(fam)))
    x = np.array([1 / T for T, _ in pts])
    y = np.array([math.log(C) for _, C in pts])
    E, lnC0 = np.polyfit(x, y, 1)
    return float(E), math.exp(lnC0), pts


# ---------------------------------------------------------------------------
# boundary control


@dataclass
class BoundaryFamilyControl:
    """Boundary input ``h`` on ``[0, T]`` built from a family.

    The modal system is ``u_j' = i lambda_j u_j - i w_j h(t)`` with
    ``w_j = d^k e_j(X)``; for ``k = 1`` the Dirichlet datum is ``-h``.
    """

    T: float
    times: np.ndarray
    signal: np.ndarray
    coefficients: np.ndarray
    norm: float
    bound: float
    window: tuple
    ctx: object
    dt: object

    def final_state(self, basis, point, order, u0):
        """Re-simulate ``u(T)`` by the trapezoid rule on the sampled input."""
        ctx = self.ctx
        lam = basis.eigenvalues_mp(self.window, ctx)
        w = basis.trace_vector(self.window, point, order, ctx)
        with ctx.scope():
            u0 = as_mp_array(u0, ctx, complex_=True)
            T = mpf(self.T)
            out = []
            for lk, wk, uk in zip(lam, w, u0):
                integral = self.dt * sum(gmpy2.exp(gmpy2.mpc(0, -lk * t)) * hv
                                         for t, hv in zip(self.times, self.signal))
                out.append(gmpy2.exp(gmpy2.mpc(0, lk * T)) * (uk - gmpy2.mpc(0, 1) * wk * integral))
            return np.array(out, dtype=object)


def boundary_control_from_family(family, basis, point, u0, order=None):
    """Steer window data ``u0`` to zero with a boundary input at ``point``.

    ``family`` must be built on ``SpectralSequence.from_basis(basis)``; its
    horizon is the normalised one, ``sigma * T``.
    """
    ctx = family.ctx
    order = basis.boundary_order(point) if order is None else order
    window = basis.check_window(family.window)
    if len(u0) != len(window):
        raise ValidationError("u0", f"expected {len(window)} coefficients, got {len(u0)}")
    if family.samples is None:
        raise ValidationError("family", "family was built without samples")
    w = basis.trace_vector(window, point, order, ctx)
    seq = family.seq
    with ctx.scope():
        if any(v == 0 for v in w):
            raise ValidationError("point", "a window mode has a vanishing boundary trace")
        sigma = seq.sigma(ctx)
        lift = seq.lift(ctx)
        u0 = as_mp_array(u0, ctx, complex_=True)
        tau = mpf(family.T) / 2
        lam_n = seq.values_mp(window, ctx)
        target = np.array([-gmpy2.mpc(0, 1) * u / wk for u, wk in zip(u0, w)], dtype=object)
        a = np.array([tv * gmpy2.exp(gmpy2.mpc(0, ln * tau)) for tv, ln in zip(target, lam_n)], dtype=object)
        H = a.dot(family.samples)  # H(r) at r = t_family + tau
        r = family.times + tau
        times = r / sigma
        signal = np.array([sigma * gmpy2.exp(gmpy2.mpc(0, -lift * rr)) * Hv for rr, Hv in zip(r, H)],
                          dtype=object)
        gram = family.gram
        energy = abs(np.conj(a).dot(gram.T).dot(a).real)
        norm = float(gmpy2.sqrt(sigma * energy))
        bound = float(gmpy2.sqrt(sigma)) * window_cost_bound(family) * float(
            gmpy2.sqrt(sum(abs(v) ** 2 for v in target)))
        T = float(mpf(family.T) / sigma)
        dt = family.dt / sigma
    return BoundaryFamilyControl(T=T, times=times, signal=signal, coefficients=a, norm=norm, bound=bound,
                                 window=window, ctx=ctx, dt=dt)
