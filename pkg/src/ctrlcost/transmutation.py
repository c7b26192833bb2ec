"""Schrödinger controls transmuted from wave controls.

Three pieces:

* :func:`wave_hum_control` steers the wave equation ``w_ss - w_xx = 1_Omega f``
  on ``[0, X]`` (Dirichlet) from ``(w0, w1)`` at ``s = 0`` to given targets at
  ``s = S`` with ``f = theta(s) chi(x) phi(s, x)``; ``phi`` is a free wave,
  ``theta`` a smooth bump vanishing near both ends of ``[0, S]`` and ``chi`` a
  smooth cutoff inside ``Omega``.
* :func:`build_fundamental_solution` steers the Schrödinger equation on the
  segment ``[-L, L]`` from a truncated Dirac mass at ``0`` to zero in time ``T``
  with equal Dirichlet inputs at both ends.  By symmetry only the half-line
  ``[0, L]`` with a Neumann end at ``0`` is computed.
* :func:`transmute` integrates the product of the two against each other in
  ``s``, which yields a Schrödinger control on ``[0, X]``.

All ``s``-integrals are done in the modal bases, so no ``s``-grid is shared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import gmpy2
import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import erf

from .errors import ConstructionError, ConvergenceError, DegeneracyError, DegenerateGramianError, ValidationError
from .observability import InteriorObservation, _theta, hum_control, observation_weights
from .precision import DEFAULT, as_mp_array, fft, gauss_legendre, mpc, mpf, solve_linear, to_complex
from .spectral import LaplacianBasis, laplacian_basis
from .window import ALPHA_STAR, SpectralSequence, build_family

__all__ = [
    "SpatialCutoff",
    "WaveControl",
    "wave_hum_control",
    "FundamentalSolution",
    "build_fundamental_solution",
    "Transmutation",
    "transmute",
    "TwoStageControl",
    "two_stage_control",
    "default_wave_window",
    "default_half_window",
    "fundamental_for_wave",
    "ResidualReport",
    "CostChain",
]

_I = gmpy2.mpc(0, 1)


# ---------------------------------------------------------------------------
# cutoffs and quadrature


@dataclass(frozen=True)
class SpatialCutoff:
    """Smooth cutoff supported in ``Omega``.

    On each piece ``(a, b)`` the value is the product of the ramps
    ``(1 + erf((x - a - 5w) / w)) / 2`` (absent when ``a = 0``) and
    ``(1 - erf((x - b + 5w) / w)) / 2`` (absent when ``b = X``); outside
    ``Omega`` it is zero.  The jump at an interior end is ``erfc(5) / 2``.
    """

    omega: InteriorObservation
    length: float
    width: float = 0.05

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError("ramp_width", f"must be positive, got {self.width}")
        for a, b in self.core():
            if not b > a:
                raise ValidationError("ramp_width", f"ramps of width {self.width} leave no core in Omega")

    def core(self):
        """Sub-intervals where the cutoff is at least ``1 / 2``."""
        w, X = self.width, self.length
        return [(a + 5 * w if a > 0 else a, b - 5 * w if b < X else b) for a, b in self.omega.intervals]

    def control_threshold(self):
        """Length of the longest ray in ``[0, X]`` that misses the core."""
        pieces = self.core()
        gaps = [2 * pieces[0][0], 2 * (self.length - pieces[-1][1])]
        gaps += [b0 - a1 for (_, a1), (b0, _) in zip(pieces, pieces[1:])]
        return max(gaps)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        w, X = self.width, self.length
        for a, b in self.omega.intervals:
            inside = (x > a) & (x < b)
            v = np.ones_like(x)
            if a > 0:
                v *= 0.5 * (1 + erf((x - a - 5 * w) / w))
            if b < X:
                v *= 0.5 * (1 - erf((x - b + 5 * w) / w))
            out = np.where(inside, v, out)
        return out

    def values_mp(self, xs, a, b, ctx):
        """Cutoff at nodes ``xs`` inside the piece ``(a, b)``."""
        with ctx.scope():
            w = mpf(self.width)
            out = []
            for x in xs:
                v = mpf(1)
                if a > 0:
                    v *= (1 + gmpy2.erf((x - mpf(a) - 5 * w) / w)) / 2
                if b < self.length:
                    v *= (1 - gmpy2.erf((x - mpf(b) + 5 * w) / w)) / 2
                out.append(v)
            return np.array(out, dtype=object)


def _panel_rule(a, b, max_len, nodes, ctx):
    """Composite Gauss-Legendre rule on ``[a, b]`` with panels of length ``<= max_len``."""
    with ctx.scope():
        a, b = mpf(a), mpf(b)
        n_panels = max(1, math.ceil(float(b - a) / max_len))
        x, w = gauss_legendre(nodes, ctx)
        hw = (b - a) / (2 * n_panels)
        xs, ws = [], []
        for p in range(n_panels):
            mid = a + (2 * p + 1) * hw
            xs.extend(mid + hw * xi for xi in x)
            ws.extend(hw * wi for wi in w)
        return np.array(xs, dtype=object), np.array(ws, dtype=object)


def _bump(u):
    if u <= 0 or u >= 1:
        return mpf(0), mpf(0)
    th = gmpy2.exp(4 - 1 / (u * (1 - u)))
    return th, th * (1 - 2 * u) / (u * u * (1 - u) ** 2)


def _bump_float(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = (u > 0) & (u < 1)
    out[m] = np.exp(4 - 1 / (u[m] * (1 - u[m])))
    return out


def _cos_sin(freqs, xs):
    C = np.empty((len(freqs), len(xs)), dtype=object)
    S = np.empty_like(C)
    for i, f in enumerate(freqs):
        for j, x in enumerate(xs):
            C[i, j] = gmpy2.cos(f * x)
            S[i, j] = gmpy2.sin(f * x)
    return C, S


# ---------------------------------------------------------------------------
# wave control


@dataclass
class WaveControl:
    """Wave control ``f = theta(s) chi(x) sum_m p_m(s) e_m(x)`` on ``(0, S) x Omega``.

    ``p_m(s) = alpha_m cos(omega_m s) + beta_m sin(omega_m s) / omega_m``.
    ``overlap[n, m] = int chi e_n e_m`` for ``n`` up to ``len(window) + extra_modes``.
    """

    basis: LaplacianBasis
    cutoff: SpatialCutoff
    S: float
    window: tuple
    omega_n: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    targets: tuple
    alpha: np.ndarray
    beta: np.ndarray
    overlap: np.ndarray
    overlap_sq: np.ndarray
    lead: float
    steering_residual: float
    ctx: object
    nodes_per_panel: int = 32
    response: np.ndarray = field(default=None, repr=False)
    _rules: dict = field(default_factory=dict, repr=False)

    @property
    def support(self):
        return self.lead * self.S, (1 - self.lead) * self.S

    def with_data(self, w0, w1=None, targets=None):
        """Same control machinery, new data; returns a new :class:`WaveControl`."""
        ctx = self.ctx
        W = len(self.window)
        with ctx.scope():
            w0 = as_mp_array(list(w0), ctx, complex_=True)
            w1 = as_mp_array(list(w1), ctx, complex_=True) if w1 is not None else np.full(W, mpc(0), dtype=object)
            if targets is None:
                targets = (np.full(W, mpc(0), dtype=object), np.full(W, mpc(0), dtype=object))
            free = _free_endpoint(self, w0, w1)
            want = np.concatenate(targets)
            x = _solve_amplitudes(self, want - free)
            reached = self.response.dot(x) + free
            ref = math.sqrt(float(sum(abs(v) ** 2 for v in np.concatenate([w0, w1]))))
            err = math.sqrt(float(sum(abs(v) ** 2 for v in reached - want)))
        return replace(self, w0=w0, w1=w1, targets=targets, alpha=x[:W], beta=x[W:],
                       steering_residual=err / ref if ref else err)

    def time_rule(self, max_freq):
        """Quadrature on the support of ``theta`` resolving ``exp(i max_freq s)``."""
        key = math.ceil(max_freq)
        if key not in self._rules:
            a, b = self.support
            self._rules[key] = _panel_rule(a, b, min(0.1, 16.0 / max(key, 1)), self.nodes_per_panel, self.ctx)
        return self._rules[key]

    def bump(self, s_nodes):
        """``theta`` and ``theta'`` at the nodes."""
        a, b = self.support
        with self.ctx.scope():
            a, b = mpf(a), mpf(b)
            vals = [_bump((s - a) / (b - a)) for s in s_nodes]
            th = np.array([v[0] for v in vals], dtype=object)
            dth = np.array([v[1] / (b - a) for v in vals], dtype=object)
        return th, dth

    def _weighted_products(self, freqs, max_freq):
        """``int theta cos(omega_k s) cos(f s)`` and ``int theta sin(omega_k s) cos(f s)``."""
        xs, ws = self.time_rule(max_freq)
        th, _ = self.bump(xs)
        with self.ctx.scope():
            Cw, Sw = _cos_sin(self.omega_n, xs)
            Cf, _ = _cos_sin(freqs, xs)
            wt = ws * th
            return (Cw * wt).dot(Cf.T), (Sw * wt).dot(Cf.T)

    def profiles(self, s_nodes):
        """``p_m`` and ``p_m'`` at the nodes, shape ``(W, len(s_nodes))``."""
        with self.ctx.scope():
            Cw, Sw = _cos_sin(self.omega_n, s_nodes)
            om = self.omega_n[:, None]
            p = self.alpha[:, None] * Cw + self.beta[:, None] / om * Sw
            dp = -self.alpha[:, None] * om * Sw + self.beta[:, None] * Cw
        return p, dp

    def forcing_float(self, s):
        """Modal forcing ``theta(s) sum_m C_nm p_m(s)`` in double precision, shape ``(W,)``."""
        a, b = self.support
        om = np.array([float(v) for v in self.omega_n])
        al, be = to_complex(self.alpha), to_complex(self.beta)
        C = np.array(self.overlap[: len(self.window)], dtype=float)
        p = al * np.cos(om * s) + be * np.sin(om * s) / om
        return float(_bump_float((s - a) / (b - a))) * C.dot(p)

    def control_norm(self):
        """``|f|_{L^2((0, S) x Omega)}``."""
        xs, ws = self.time_rule(2 * float(self.omega_n[-1]))
        th, _ = self.bump(xs)
        p, _ = self.profiles(xs)
        with self.ctx.scope():
            C2 = self.overlap_sq
            q = (np.conj(p) * C2.dot(p)).sum(axis=0)
            return gmpy2.sqrt(abs((ws * th * th).dot(q).real))

    def even_h1_norm(self):
        """``H^1`` norm in ``s`` (values in ``L^2(Omega)``) of the even extension to ``(-S, S)``."""
        xs, ws = self.time_rule(2 * float(self.omega_n[-1]))
        th, dth = self.bump(xs)
        p, dp = self.profiles(xs)
        with self.ctx.scope():
            C2 = self.overlap_sq
            f = p * th
            df = p * dth + dp * th
            q = (np.conj(f) * C2.dot(f)).sum(axis=0) + (np.conj(df) * C2.dot(df)).sum(axis=0)
            return gmpy2.sqrt(2 * abs(ws.dot(q).real))

    def operator_proxy(self):
        """``|f| / |(w0, w1)|`` with the data measured in ``L^2 x H^-1``."""
        with self.ctx.scope():
            data = sum(abs(v) ** 2 for v in self.w0) + sum(abs(v) ** 2 / om ** 2
                                                         for v, om in zip(self.w1, self.omega_n))
            if data == 0:
                return mpf(0)
            return self.control_norm() / gmpy2.sqrt(data)

    def _ivp(self, rtol=1e-12, dense=False):
        W = len(self.window)
        om = np.array([float(v) for v in self.omega_n])
        y0 = np.concatenate([to_complex(self.w0), to_complex(self.w1)])
        y0 = np.concatenate([y0.real, y0.imag])

        def rhs(s, y):
            z = y[: 2 * W] + 1j * y[2 * W:]
            w, dw = z[:W], z[W:]
            ddw = -om ** 2 * w + self.forcing_float(s)
            out = np.concatenate([dw, ddw])
            return np.concatenate([out.real, out.imag])

        scale = max(1.0, float(np.abs(y0).max()))
        return solve_ivp(rhs, (0.0, self.S), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-2 * scale,
                         dense_output=dense, max_step=0.02)

    def resimulate(self, rtol=1e-12):
        """Forward re-simulation in double; relative endpoint error against the targets."""
        sol = self._ivp(rtol)
        W = len(self.window)
        y = sol.y[:, -1]
        z = y[: 2 * W] + 1j * y[2 * W:]
        tgt = np.concatenate([to_complex(self.targets[0]), to_complex(self.targets[1])])
        ref = max(float(np.linalg.norm(np.concatenate([to_complex(self.w0), to_complex(self.w1)]))), 1e-300)
        return float(np.linalg.norm(z - tgt)) / ref

    def trajectory(self, s_grid, rtol=1e-12):
        """Modal ``w`` and ``w_s`` on ``s_grid``, each of shape ``(W, len(s_grid))``."""
        sol = self._ivp(rtol, dense=True)
        W = len(self.window)
        y = sol.sol(np.asarray(s_grid, dtype=float))
        z = y[: 2 * W] + 1j * y[2 * W:]
        return z[:W], z[W:]

    def wave_residual(self, s_grid, step=1e-4, rtol=1e-13):
        """``max_s |w_ss + omega^2 w - F| / max_s |F|`` with ``w_ss`` from differencing ``w_s``."""
        sol = self._ivp(rtol, dense=True)
        W = len(self.window)
        om = np.array([float(v) for v in self.omega_n])
        worst, scale = 0.0, 0.0
        for s in s_grid:
            if not 2 * step < s < self.S - 2 * step:
                raise ValidationError("s_grid", "residual points must be interior")
            ts = s + step * np.array([-2, -1, 1, 2])
            y = sol.sol(ts)
            dw = y[W: 2 * W] + 1j * y[3 * W:]
            ddw = (dw[:, 0] - 8 * dw[:, 1] + 8 * dw[:, 2] - dw[:, 3]) / (12 * step)
            yc = sol.sol(s)
            w = yc[:W] + 1j * yc[2 * W: 3 * W]
            F = self.forcing_float(s)
            worst = max(worst, float(np.linalg.norm(ddw + om ** 2 * w - F)))
            scale = max(scale, float(np.linalg.norm(F)))
        return worst / scale if scale else worst


def _as_observation(omega):
    if isinstance(omega, (tuple, list)):
        omega = InteriorObservation(omega) if omega and isinstance(omega[0], (tuple, list)) \
            else InteriorObservation(*omega)
    if not isinstance(omega, InteriorObservation):
        raise ValidationError("omega", "an interior set is required")
    return omega


def _check_wave_basis(basis):
    if not isinstance(basis, LaplacianBasis):
        raise ValidationError("basis", "wave control needs a closed-form Laplacian basis")
    if basis.asymptotic_shift == -1.0:
        raise ValidationError("basis", "a zero mode has no wave frequency")


def default_wave_window(basis, n_data, extra=48):
    """Wave window ``1 .. n_data + extra``: the spatial leakage of the cutoff decays with the excess."""
    n = n_data + extra
    if n > basis.n_modes:
        raise ValidationError("basis", f"wave window needs {n} modes, basis has {basis.n_modes}")
    return tuple(range(1, n + 1))


def wave_hum_control(basis, omega, S, w0, w1=None, targets=None, window=None, ctx=DEFAULT, ramp_width=0.05,
                     lead=0.05, extra_modes=16, nodes_per_panel=32):
    """Steer ``(w, w_s)`` from ``(w0, w1)`` at ``s = 0`` to ``targets`` at ``s = S``.

    The control is ``theta chi phi`` with ``phi`` a free wave over the window:
    the weighted HUM ansatz.  The ``2W`` amplitudes of ``phi`` solve a dense
    linear system at working precision.  ``theta`` vanishes outside
    ``[lead S, (1 - lead) S]``.
    """
    _check_wave_basis(basis)
    omega = _as_observation(omega)
    if not 0 < lead < 0.5:
        raise ValidationError("lead", f"time cutoff margin must lie in (0, 0.5), got {lead}")
    if not S > 0:
        raise ValidationError("S", f"must be positive, got {S}")
    cutoff = SpatialCutoff(omega, basis.length, ramp_width)
    threshold = cutoff.control_threshold()
    if (1 - 2 * lead) * S <= threshold:
        raise DegenerateGramianError(f"active control time {(1 - 2 * lead) * S:.4g} does not exceed the "
                                     f"ray threshold {threshold:.4g}; the wave Gramian is singular")
    n_data = max(len(w0), len(w1) if w1 is not None else 0)
    window = basis.check_window(window if window is not None else tuple(range(1, n_data + 1)))
    if window != tuple(range(1, len(window) + 1)):
        raise ValidationError("window", "wave window must be 1..W")
    W = len(window)
    if n_data > W:
        raise ValidationError("w0", f"{n_data} data coefficients exceed the window of {W} modes")
    n_ext = min(W + extra_modes, basis.n_modes)

    def pad(v):
        v = list(v) if v is not None else []
        return as_mp_array(v + [0] * (W - len(v)), ctx, complex_=True)

    with ctx.scope():
        w0m, w1m = pad(w0), pad(w1)
        tgt = (pad(targets[0]), pad(targets[1])) if targets is not None else (pad(None), pad(None))
        om_all = np.array([basis.wavenumber(n, ctx) for n in range(1, n_ext + 1)], dtype=object)
        om = om_all[:W]
        # spatial quadrature on each piece of Omega
        E_rows, chi_w, chi2_w = [], [], []
        max_len = min(cutoff.width / 2, 8.0 / (2 * float(om_all[-1])))
        for a, b in omega.intervals:
            xs, ws = _panel_rule(a, b, max_len, nodes_per_panel, ctx)
            chi = cutoff.values_mp(xs, a, b, ctx)
            phase = gmpy2.const_pi() / 2 if basis._phase_half_pi else mpf(0)
            E = np.array([[basis.norm_constant(n, ctx) * gmpy2.sin(k * x + phase) for x in xs]
                          for n, k in zip(range(1, n_ext + 1), om_all)], dtype=object)
            E_rows.append(E)
            chi_w.append(ws * chi)
            chi2_w.append(ws * chi * chi)
        E = np.concatenate(E_rows, axis=1)
        cw = np.concatenate(chi_w)
        c2w = np.concatenate(chi2_w)
        overlap = (E * cw).dot(E[:W].T)
        overlap_sq = (E[:W] * c2w).dot(E[:W].T)

    wc = WaveControl(basis=basis, cutoff=cutoff, S=float(S), window=window, omega_n=om, w0=w0m, w1=w1m,
                     targets=tgt, alpha=None, beta=None, overlap=overlap, overlap_sq=overlap_sq, lead=lead,
                     steering_residual=math.nan, ctx=ctx, nodes_per_panel=nodes_per_panel)
    C = overlap[:W]
    with ctx.scope():
        CC, SC = wc._weighted_products(om, 2 * float(om[-1]))
        Sm = mpf(S)
        cS = np.array([gmpy2.cos(v * Sm) for v in om], dtype=object)
        sS = np.array([gmpy2.sin(v * Sm) for v in om], dtype=object)
        # w_n(S) = cos w0 + sin/omega w1 + int sin(omega_n (S - r)) / omega_n F_n(r) dr
        CS = SC.T  # int theta cos(omega_n r) sin(omega_m r)
        xs, ws = wc.time_rule(2 * float(om[-1]))
        th, _ = wc.bump(xs)
        _, Sw = _cos_sin(om, xs)
        SS = (Sw * (ws * th)).dot(Sw.T)
        R = np.empty((2 * W, 2 * W), dtype=object)
        for n in range(W):
            for m in range(W):
                R[n, m] = C[n, m] * (sS[n] * CC[n, m] - cS[n] * SC[n, m]) / om[n]
                R[W + n, m] = C[n, m] * (cS[n] * CC[n, m] + sS[n] * SC[n, m])
                R[n, W + m] = C[n, m] * (sS[n] * CS[n, m] - cS[n] * SS[n, m]) / (om[n] * om[m])
                R[W + n, W + m] = C[n, m] * (cS[n] * CS[n, m] + sS[n] * SS[n, m]) / om[m]
    wc.response = R
    return wc.with_data(w0m, w1m, tgt)


def _free_endpoint(wc, w0, w1):
    om, Sm = wc.omega_n, mpf(wc.S)
    cS = np.array([gmpy2.cos(v * Sm) for v in om], dtype=object)
    sS = np.array([gmpy2.sin(v * Sm) for v in om], dtype=object)
    return np.concatenate([cS * w0 + sS / om * w1, -om * sS * w0 + cS * w1])


def _solve_amplitudes(wc, rhs):
    try:
        return solve_linear(wc.response, rhs, wc.ctx)
    except ConvergenceError as exc:
        raise DegenerateGramianError(f"wave control system is singular: {exc}") from exc


# ---------------------------------------------------------------------------
# fundamental controlled solution


def default_half_window(L, max_frequency, margin=30.0):
    """Half-line modes ``nu_m = (m - 1/2) pi / L`` up to ``max_frequency + margin``."""
    return tuple(range(1, math.ceil((max_frequency + margin) * L / math.pi + 0.5) + 1))


@dataclass
class FundamentalSolution:
    """Controlled Schrödinger solution on ``[-L, L]`` from a truncated Dirac mass to zero.

    Stored on the half-line ``[0, L]``: ``v(t, s) = sum_m c_m(t) psi_m(s)`` with
    ``psi_m = sqrt(2/L) cos(nu_m s)``; both ends receive the Dirichlet datum
    ``-h(t)``.  ``c_m(t) = exp(i mu_m t) (c_m(0) - i psi_m'(L) K_m(sigma t))``
    where ``K_m`` is an exact lattice sum built from the family spectra.
    """

    L: float
    T: object
    half_basis: LaplacianBasis
    family: object
    sigma: object
    lift: object
    tau: object
    mu: np.ndarray
    lam: np.ndarray
    c0: np.ndarray
    dpsi: np.ndarray
    x: np.ndarray
    h: object
    E0: np.ndarray
    D: np.ndarray
    Bsum: np.ndarray
    hhat: np.ndarray
    ctx: object
    _lattice_index: list = field(default=None, repr=False)
    _grid: tuple = field(default=None, repr=False)

    @property
    def window(self):
        """Controlled modes (the support of the truncated Dirac mass)."""
        return self.family.window

    @property
    def modes(self):
        """All half-line modes carried, controlled or not."""
        return tuple(range(1, len(self.mu) + 1))

    def rows(self, block=48):
        """Yield ``(lo, B[lo:hi])`` with ``B[m, k] = E0_k / (i (x_k - lam_m))`` (zero on the lattice point).

        Rows are regenerated on demand: for a few hundred modes they would not fit in memory.
        """
        with self.ctx.scope():
            E0i = -_I * self.E0
            for lo in range(0, len(self.mu), block):
                hi = min(lo + block, len(self.mu))
                out = np.empty((hi - lo, len(self.x)), dtype=object)
                for i, m in enumerate(range(lo, hi)):
                    diff = self.x - self.lam[m]
                    k = self._lattice_index[m]
                    if k is not None:
                        diff[k] = mpf(1)
                    out[i] = E0i / diff
                    if k is not None:
                        out[i, k] = mpc(0)
                yield lo, out

    def duhamel_matrix(self, freqs):
        """``sum_k B[m, k] E(sigma (x_k - lift) - lambda_n)`` for each row ``m`` and frequency ``lambda_n``.

        ``E(w) = int_0^T exp(i w t) dt``.  Partial fractions in ``x_k`` reduce the
        double sum to one lattice sum per row and one per frequency.
        """
        ctx = self.ctx
        with ctx.scope():
            T, sigma = self.T, self.sigma
            x, E0 = self.x, self.E0
            n_x = len(x)
            step = gmpy2.exp(_I * sigma * T * self.h)
            ph = [gmpy2.exp(_I * sigma * T * x[0])]
            for _ in range(n_x - 1):
                ph.append(ph[-1] * step)
            E1 = np.array(ph, dtype=object) * E0
            a = [mpf(f) / sigma + self.lift for f in freqs]
            tol = gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 2))

            def sums(p, skip):
                d = x - p
                if skip is not None:
                    d[skip] = mpf(1)
                r0, r1 = E0 / d, E1 / d
                if skip is not None:
                    r0[skip] = r1[skip] = mpc(0)
                return r0.sum(), r1.sum()

            def lattice_hit(p):
                pos = (p - x[0]) / self.h
                k = int(gmpy2.rint(pos))
                return k if 0 <= k < n_x and abs(pos - k) <= tol * (1 + abs(pos)) else None

            hits = [lattice_hit(an) for an in a]
            Q = [sums(an, k) for an, k in zip(a, hits)]
            out = np.empty((len(self.mu), len(a)), dtype=object)
            for m, lm in enumerate(self.lam):
                km = self._lattice_index[m]
                P0, P1 = sums(lm, km)
                for n, an in enumerate(a):
                    if abs(lm - an) <= tol * (1 + abs(lm)):
                        out[m, n] = self._direct_duhamel(m, km, freqs[n])
                        continue
                    Q0, Q1 = Q[n]
                    if km is not None and km != hits[n]:
                        Q0 = Q0 - E0[km] / (x[km] - an)
                        Q1 = Q1 - E1[km] / (x[km] - an)
                    phi = gmpy2.exp(-_I * sigma * T * an)
                    val = -(phi * (P1 - Q1) - (P0 - Q0)) / (sigma * (lm - an))
                    k = hits[n]
                    if k is not None and k != km:
                        val += E0[k] / (_I * (x[k] - lm)) * T
                    out[m, n] = val
            return out

    def _direct_duhamel(self, m, km, freq):
        T = self.T
        total = mpc(0)
        for k, (xk, e0) in enumerate(zip(self.x, self.E0)):
            if k == km:
                continue
            w = self.sigma * (xk - self.lift) - freq
            E = T if w == 0 else (gmpy2.exp(_I * w * T) - 1) / (_I * w)
            total += e0 / (_I * (xk - self.lam[m])) * E
        return total

    @property
    def cost_rate(self):
        """Exponent ``alpha`` of the pair ``(A, alpha)``: the multiplier's effective rate."""
        return self.family.multiplier.alpha_eff

    def cost_pair(self):
        """``(A, alpha)`` with ``|v|_{L^2 H^-1} = A exp(alpha L^2 / T)``."""
        alpha = self.cost_rate
        A = float(self.hminus1_norm()) * math.exp(-alpha * self.L ** 2 / float(self.T))
        return A, alpha

    def coefficients(self, times):
        """Half-line coefficients ``c_m(t)``, shape ``(M, len(times))``."""
        ctx = self.ctx
        with ctx.scope():
            r = [self.sigma * mpf(t) for t in times]
            step = [gmpy2.exp(_I * self.h * rr) for rr in r]
            Ex = np.empty((len(self.x), len(r)), dtype=object)
            for j, rr in enumerate(r):
                col = [gmpy2.exp(_I * self.x[0] * rr)]
                for _ in range(len(self.x) - 1):
                    col.append(col[-1] * step[j])
                Ex[:, j] = col
            S = np.empty((len(self.mu), len(r)), dtype=object)
            for lo, blk in self.rows():
                S[lo: lo + len(blk)] = blk.dot(Ex)
            scale = self.h / (2 * gmpy2.const_pi())
            out = np.empty((len(self.mu), len(r)), dtype=object)
            for m in range(len(self.mu)):
                for j, rr in enumerate(r):
                    K = scale * (gmpy2.exp(-_I * self.lam[m] * rr) * S[m, j] - self.Bsum[m] + self.D[m] * rr)
                    out[m, j] = gmpy2.exp(_I * self.mu[m] * mpf(times[j])) * (self.c0[m] - _I * self.dpsi[m] * K)
            return out

    def full_line_coefficients(self, times):
        """Coefficients against the Dirichlet basis of ``[-L, L]``, rows ``j = 1 .. 2M``.

        Odd ``j = 2m - 1`` carry ``(-1)^(m+1) sqrt(2) c_m``; even ``j`` vanish by symmetry.
        """
        c = self.coefficients(times)
        with self.ctx.scope():
            out = np.full((2 * c.shape[0], c.shape[1]), mpc(0), dtype=object)
            r2 = gmpy2.sqrt(mpf(2))
            for m in range(c.shape[0]):
                out[2 * m] = (1 if m % 2 == 0 else -1) * r2 * c[m]
            return out

    def initial_trace_error(self):
        """``max_j |v_j(0) - e_j(0)|`` over the full-line window (Dirichlet basis of ``[-L, L]``)."""
        v = self.full_line_coefficients([0])[: 2 * len(self.window), 0]
        full = laplacian_basis(2 * self.L, len(v))
        e0 = full.trace_vector(tuple(range(1, len(v) + 1)), self.L, 0, self.ctx)
        with self.ctx.scope():
            return float(max(abs(a - b) for a, b in zip(v, e0)))

    def final_residual(self):
        """``|v(T)|_{H^-1} / |v(0)|_{H^-1}``."""
        c = self.coefficients([0, self.T])
        with self.ctx.scope():
            w = [2 / (1 + m) for m in self.mu]
            n0 = sum(wi * abs(v) ** 2 for wi, v in zip(w, c[:, 0]))
            n1 = sum(wi * abs(v) ** 2 for wi, v in zip(w, c[:, 1]))
            return float(gmpy2.sqrt(n1 / n0))

    def _mode_energies(self):
        """Exact ``int_0^T |c_m|^2 dt`` from the lattice representation."""
        ctx = self.ctx
        n_x = len(self.x)
        with ctx.scope():
            two_pi = 2 * gmpy2.const_pi()
            R = two_pi / self.h
            end = 2 * self.tau
            scale = self.h / two_pi
            z = gmpy2.exp(_I * self.h * end)
            zk = [mpc(1)]
            for _ in range(n_x - 1):
                zk.append(zk[-1] * z)
            zk = np.array(zk, dtype=object)
            ks = np.arange(n_x)
            out = []
            for lo, blk in self.rows():
                for i, row in enumerate(blk):
                    m = lo + i
                    k_m = int(gmpy2.rint((self.lam[m] - self.x[0]) / self.h))
                    fac = -_I * self.dpsi[m] * scale
                    A = self.c0[m] - fac * self.Bsum[m]
                    gam = fac * self.D[m]
                    row_sq = sum(v.real * v.real + v.imag * v.imag for v in row)
                    kappa = (ks - k_m).astype(object)
                    kappa[kappa == 0] = 1  # row vanishes at the lattice point
                    total = R * abs(A) ** 2 + R * abs(fac) ** 2 * row_sq + abs(gam) ** 2 * R ** 3 / 3
                    total += (A.conjugate() * gam).real * R ** 2
                    cross = fac * (-_I * R / self.h) * (row / kappa).sum()
                    total += 2 * (gam.conjugate() * cross).real
                    # constant tail on [2 tau, R]
                    last = A + fac * row.dot(zk) * z ** (-k_m) + gam * end
                    total -= (R - end) * abs(last) ** 2
                    out.append(total / self.sigma)
            return np.array(out, dtype=object)

    def hminus1_norm(self):
        """``|v|_{L^2(0, T; H^-1(-L, L))}`` with weights ``1 / (1 + mu)``."""
        e = self._mode_energies()
        with self.ctx.scope():
            return gmpy2.sqrt(sum(2 * v / (1 + m) for v, m in zip(e, self.mu)))

    def boundary_norm(self):
        """``|(g_-, g_+)|_{L^2(0, T)}`` (both ends carry ``-h``)."""
        with self.ctx.scope():
            two_pi = 2 * gmpy2.const_pi()
            one = self.sigma * self.h / two_pi * sum(abs(v) ** 2 for v in self.hhat)
            return gmpy2.sqrt(2 * one)

    def grid(self):
        """Uniform times in ``[0, T]`` and ``c_m`` there, via one FFT per mode.

        Every ``lam_m`` sits on the lattice ``x_0 + k h`` and the grid step is
        ``2 pi / (P h)``, so all phases come from one table of ``P``-th roots of unity.
        """
        if self._grid is not None:
            return self._grid
        ctx = self.ctx
        n_x = len(self.x)
        with ctx.scope():
            P = 1 << max(4, math.ceil(math.log2(1.25 * n_x)))
            two_pi = 2 * gmpy2.const_pi()
            dr = two_pi / (P * self.h)
            n_t = int(gmpy2.ceil(2 * self.tau / dr)) + 1
            r = np.array([j * dr for j in range(n_t)], dtype=object)
            roots = [mpc(1), gmpy2.exp(_I * two_pi / P)]
            for _ in range(P - 2):
                roots.append(roots[-1] * roots[1])
            base = np.array([gmpy2.exp(_I * self.x[0] * rr) for rr in r], dtype=object)
            # exp(i mu_m t) exp(-i lam_m r) = exp(-i lift r) for every m
            common = np.array([gmpy2.exp(-_I * self.lift * rr) for rr in r], dtype=object)
            shift = common * base
            scale = self.h / two_pi
            zero = mpc(0)
            c = np.empty((len(self.mu), n_t), dtype=object)
            for lo, blk in self.rows():
                for i, row in enumerate(blk):
                    m = lo + i
                    k_m = int(gmpy2.rint((self.lam[m] - self.x[0]) / self.h)) % P
                    buf = np.full(P, zero, dtype=object)
                    buf[:n_x] = row
                    S = fft(buf, ctx, inverse=True)[:n_t]
                    fac = -_I * self.dpsi[m] * scale
                    A = self.c0[m] - fac * self.Bsum[m]
                    B = fac * self.D[m]
                    for j, rr in enumerate(r):
                        c[m, j] = shift[j] * ((A + B * rr) * roots[(k_m * j) % P]) + fac * common[j] * base[j] * S[j]
            buf = np.full(P, zero, dtype=object)
            buf[:n_x] = self.E0
            H = scale * base * fft(buf, ctx, inverse=True)[:n_t]
            signal = np.array([self.sigma * cm * Hv for cm, Hv in zip(common, H)], dtype=object)
            self._grid = (r / self.sigma, c, signal)
        return self._grid

    def sample(self, times, s_points):
        """``v(t, s)`` on ``[-L, L]`` in double precision, shape ``(len(times), len(s_points))``."""
        c = to_complex(self.coefficients(times))
        s = np.abs(np.asarray(s_points, dtype=float))
        psi = np.array([self.half_basis.evaluate(m, s) for m in self.modes])
        return c.T.dot(psi)


def fundamental_for_wave(wave, T, L=None, eps=0.3, ctx=None, margin=30.0, response_margin=300.0):
    """Fundamental solution sized for ``wave``: controlled modes up to ``omega_W + margin``,
    response modes up to ``omega_W + response_margin`` (at most the family's product length)."""
    L = wave.S if L is None else L
    ctx = ctx or wave.ctx
    top = float(wave.omega_n[-1])
    window = default_half_window(L, top, margin)
    n_resp = len(default_half_window(L, top, response_margin))
    return build_fundamental_solution(L, T, window=window, eps=eps, ctx=ctx,
                                      response_modes=min(n_resp, 4 * len(window)))


def build_fundamental_solution(L, T, window=None, eps=0.3, ctx=DEFAULT, margin=0.1, max_frequency=None,
                               response_modes=None):
    """Steer the truncated Dirac mass at ``0`` on ``[-L, L]`` to zero in time ``T``.

    ``window`` indexes the controlled half-line cosine modes; the default
    covers ``nu <= max_frequency + 30`` with ``max_frequency = 8 / T``.
    ``response_modes`` (default: the family's explicit product length, four
    times the window) further modes start at zero and are carried along
    uncontrolled; the family spectrum vanishes at their frequencies, so they
    end at zero as well.
    """
    L = float(L)
    if not L > 0:
        raise ValidationError("L", f"must be positive, got {L}")
    if not 0 < T <= min(math.pi / 2, L) ** 2:
        raise ValidationError("T", f"need 0 < T <= min(pi/2, L)^2, got {T}")
    if window is None:
        window = default_half_window(L, max_frequency if max_frequency is not None else 8 / T)
    window = tuple(int(m) for m in window)
    if window != tuple(range(1, len(window) + 1)):
        raise ValidationError("window", "half-line window must be 1..M")
    seq = SpectralSequence.from_basis(laplacian_basis(L, len(window), left="neumann", right="dirichlet"))
    with ctx.scope():
        sigma = seq.sigma(ctx)
        Tn = float(sigma * mpf(T))
    family = build_family(seq, Tn, window, eps, ctx, margin=margin, samples=False, gram=False)
    n_resp = response_modes if response_modes is not None else family.K
    if n_resp < len(window):
        raise ValidationError("response_modes", f"must cover the window of {len(window)} modes")
    half = laplacian_basis(L, n_resp, left="neumann", right="dirichlet")
    modes = tuple(range(1, n_resp + 1))
    psi0 = half.trace_vector(window, 0, 0, ctx)
    dpsi = half.trace_vector(modes, L, 1, ctx)
    with ctx.scope():
        T_eff = mpf(family.T) / sigma
        lift = seq.lift(ctx)
        tau = mpf(family.T) / 2
        lam = seq.values_mp(modes, ctx)
        mu = sigma * (lam - lift)
        c0 = np.array([gmpy2.mpc(v / 2) for v in psi0] + [mpc(0)] * (n_resp - len(window)), dtype=object)
        a = np.array([-_I * c / w * gmpy2.exp(_I * ln * tau) for c, w, ln in zip(c0, dpsi, lam)], dtype=object)
        hhat = a[: len(window)].dot(family.spectra)
        x = family.lattice
        h = family.h
        E0 = np.array([v * gmpy2.exp(-_I * xk * tau) for v, xk in zip(hhat, x)], dtype=object)
        D = np.full(n_resp, mpc(0), dtype=object)
        tol = gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 2))
        index = []
        for m, lm in enumerate(lam):
            pos = (lm - x[0]) / h
            k = int(gmpy2.rint(pos))
            if abs(pos - k) > tol * (1 + abs(pos)):
                raise ConstructionError("half-line frequencies are off the family lattice")
            index.append(k if 0 <= k < len(x) else None)
            if index[-1] is not None:
                D[m] = E0[k]
    fs = FundamentalSolution(L=L, T=T_eff, half_basis=half, family=family, sigma=sigma, lift=lift, tau=tau,
                             mu=mu, lam=lam, c0=c0, dpsi=dpsi, x=x, h=h, E0=E0, D=D, Bsum=None,
                             hhat=hhat, ctx=ctx, _lattice_index=index)
    with ctx.scope():
        fs.Bsum = np.concatenate([blk.sum(axis=1) for _, blk in fs.rows()])
    return fs


# ---------------------------------------------------------------------------
# transmutation


@dataclass
class ResidualReport:
    residual: float
    leakage: float
    projected: float


@dataclass
class CostChain:
    control: float
    kernel: float
    wave: float

    @property
    def holds(self):
        return self.control <= self.kernel * self.wave


@dataclass
class Transmutation:
    """Schrödinger control ``g = chi sum_k q_k e_k`` and state ``u`` on ``[0, X]``.

    ``q_k(t) = 2 sum_m c_m(t) P[m, k]`` and ``u_n(t) = 2 sum_m c_m(t) Wk[m, n]`` where
    ``P[m, k] = int_0^L psi_m theta p_k ds`` and ``Wk[m, n] = int_0^L psi_m w_n ds``.
    """

    fundamental: FundamentalSolution
    wave: WaveControl
    P: np.ndarray
    Wk: np.ndarray
    u0: np.ndarray
    ctx: object
    trace_correction: float = 0.0

    @property
    def T(self):
        return self.fundamental.T

    @property
    def window(self):
        return self.wave.window

    def state(self, times):
        c = self.fundamental.coefficients(times)
        with self.ctx.scope():
            return 2 * self.Wk.T.dot(c)

    def control_modes(self, times):
        c = self.fundamental.coefficients(times)
        with self.ctx.scope():
            return 2 * self.P.T.dot(c)

    def control(self, times, x_points):
        """``g(t, x)`` in double precision, shape ``(len(times), len(x_points))``."""
        q = to_complex(self.control_modes(times))
        x = np.asarray(x_points, dtype=float)
        E = np.array([self.wave.basis.evaluate(n, x) for n in self.window])
        return q.T.dot(E) * self.wave.cutoff(x)[None, :]

    def trace_error(self):
        """``|u(0) - u0| / |u0|`` (modal)."""
        u = self.state([0])[:, 0]
        with self.ctx.scope():
            num = sum(abs(a - b) ** 2 for a, b in zip(u, self.u0))
            den = sum(abs(b) ** 2 for b in self.u0)
            return float(gmpy2.sqrt(num / den))

    def final_state_kernel(self):
        """``|u(T)| / |u0|`` from the kernel over the wave window."""
        u = self.state([self.T])[:, 0]
        with self.ctx.scope():
            return float(gmpy2.sqrt(sum(abs(v) ** 2 for v in u) / sum(abs(v) ** 2 for v in self.u0)))

    def resimulate(self, n_modes=None):
        """``u_n(T)`` by Duhamel with exact time integrals, ``n = 1 .. n_modes``.

        Modes past the wave window start at zero and are driven only through
        the leakage of ``chi q`` outside the window.
        """
        fs, ctx = self.fundamental, self.ctx
        C = self.wave.overlap
        n_modes = n_modes or C.shape[0]
        if n_modes > C.shape[0]:
            raise ValidationError("n_modes", f"overlaps are stored for {C.shape[0]} modes")
        basis = self.wave.basis
        lam_n = basis.eigenvalues_mp(tuple(range(1, n_modes + 1)), ctx)
        with ctx.scope():
            T = fs.T

            def E(w):
                return T if w == 0 else (gmpy2.exp(_I * w * T) - 1) / (_I * w)

            def F1(w):
                if w == 0:
                    return T * T / 2
                e = gmpy2.exp(_I * w * T)
                return T * e / (_I * w) + (e - 1) / (w * w)

            BE = fs.duhamel_matrix(lam_n)
            scale = fs.h / (2 * gmpy2.const_pi())
            J = np.empty((len(fs.mu), n_modes), dtype=object)
            for m, mu in enumerate(fs.mu):
                for n, ln in enumerate(lam_n):
                    w = mu - ln
                    J[m, n] = fs.c0[m] * E(w) - _I * fs.dpsi[m] * scale * (
                        BE[m, n] - fs.Bsum[m] * E(w) + fs.D[m] * fs.sigma * F1(w))
            I_nk = 2 * J.T.dot(self.P)  # (n, k)
            u0 = list(self.u0) + [mpc(0)] * (n_modes - len(self.u0))
            out = []
            for n in range(n_modes):
                g_int = sum(C[n, k] * I_nk[n, k] for k in range(C.shape[1]))
                out.append(gmpy2.exp(_I * lam_n[n] * T) * (u0[n] - _I * g_int))
            return np.array(out, dtype=object)

    def final_state(self, n_modes=None):
        """``|u(T)| / |u0|`` from :meth:`resimulate`."""
        u = self.resimulate(n_modes)
        with self.ctx.scope():
            return float(gmpy2.sqrt(sum(abs(v) ** 2 for v in u) / sum(abs(v) ** 2 for v in self.u0)))

    def pde_residual(self, check_times=None, step=1e-7):
        """Relative residual of ``i u_t - u_xx - 1_Omega g`` at ``check_times``.

        ``u_t`` by fourth-order central differences, ``u_xx = -lambda u``
        modally.  The part of ``chi q`` outside the wave window counts fully
        (``u`` has no component there).  Reports the full residual and the leakage, both
        maxima over the check times relative to ``|g(t)|_{L^2(Omega)}``, and the
        residual of the projection onto the window alone.
        """
        T = float(self.T)
        check_times = check_times or [T * f for f in (0.15, 0.35, 0.5, 0.65, 0.85)]
        ctx = self.ctx
        stencil = (-2, -1, 0, 1, 2)
        with ctx.scope():
            dt = mpf(step)
            times = [mpf(t) + k * dt for t in check_times for k in stencil]
        c = self.fundamental.coefficients(times)
        lam = self.wave.basis.eigenvalues_mp(self.window, ctx)
        W = len(self.window)
        worst_res, worst_leak, worst_proj = 0.0, 0.0, 0.0
        with ctx.scope():
            u = 2 * self.Wk.T.dot(c)
            q = 2 * self.P.T.dot(c)
            C = self.wave.overlap[:W]
            C2 = self.wave.overlap_sq
            for i in range(len(check_times)):
                cols = [5 * i + j for j in range(5)]
                du = (u[:, cols[0]] - 8 * u[:, cols[1]] + 8 * u[:, cols[3]] - u[:, cols[4]]) / (12 * dt)
                uc, qc = u[:, cols[2]], q[:, cols[2]]
                g_modal = C.dot(qc)
                g_sq = abs(np.conj(qc).dot(C2.dot(qc)).real)
                proj = sum(abs(v) ** 2 for v in g_modal)
                leak = max(g_sq - proj, mpf(0))
                res = sum(abs(_I * a + l * b - g) ** 2 for a, l, b, g in zip(du, lam, uc, g_modal))
                worst_res = max(worst_res, float(gmpy2.sqrt((res + leak) / g_sq)))
                worst_leak = max(worst_leak, float(gmpy2.sqrt(leak / g_sq)))
                worst_proj = max(worst_proj, float(gmpy2.sqrt(res / g_sq)))
        return ResidualReport(worst_res, worst_leak, worst_proj)

    def control_norm(self):
        """``|g|_{L^2((0, T) x Omega)}`` by the trapezoid rule on the FFT grid.

        The cancellation lives in ``c_m``, which the grid carries at working
        precision; the modal sums that follow run in double.
        """
        times, c, _ = self.fundamental.grid()
        c = to_complex(c)
        P = to_complex(self.P)
        C2 = np.array(self.wave.overlap_sq, dtype=float)
        q = 2 * P.T.dot(c)
        dens = np.abs(np.einsum("kj,kl,lj->j", q.conj(), C2, q).real)
        dt = float(times[1] - times[0])
        # the grid ends at the first point past T; beyond T the state is steered out
        return math.sqrt(dt * (dens.sum() - (dens[0] + dens[-1]) / 2))

    def cost_chain(self):
        return CostChain(control=float(self.control_norm()), kernel=float(self.fundamental.hminus1_norm()),
                         wave=float(self.wave.even_h1_norm()))


def _kernel_blocks(fundamental, wave):
    """``int_0^L psi_m theta cos(omega_k s)`` and the ``sin`` analogue, shape ``(W, M)``."""
    ctx = fundamental.ctx
    nu = [fundamental.half_basis.wavenumber(m, ctx) for m in fundamental.modes]
    with ctx.scope():
        nu = np.array(nu, dtype=object)
        CC, SC = wave._weighted_products(nu, float(wave.omega_n[-1] + nu[-1]))
        norm = gmpy2.sqrt(2 / mpf(fundamental.L))
        tol = gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 4))
        gap = np.empty((len(nu), len(wave.omega_n)), dtype=object)
        for m, vm in enumerate(nu):
            for n, om in enumerate(wave.omega_n):
                gap[m, n] = om * om - vm * vm
                if abs(gap[m, n]) <= tol * om * om:
                    raise DegeneracyError(f"half-line frequency {float(vm):.6g} coincides with wave "
                                          f"frequency {float(om):.6g}; perturb L")
        return norm * CC, norm * SC, gap


def _trace_map(fundamental, wave, CC, SC, gap):
    """Matrix taking wave data ``w0`` to the kernel trace ``u(0)``."""
    ctx = fundamental.ctx
    W = len(wave.window)
    C = wave.overlap[:W]
    with ctx.scope():
        c0 = fundamental.c0
        # a[n, k] = sum_m c0_m CC[k, m] / gap[m, n], likewise b with SC / omega_k
        G = np.array([[c0[m] / gap[m, n] for n in range(W)] for m in range(len(c0))], dtype=object)
        a = CC.dot(G).T
        b = (SC.dot(G) / wave.omega_n[:, None]).T
        free = np.concatenate([np.diag([gmpy2.cos(v * mpf(wave.S)) for v in wave.omega_n]),
                               np.diag([-v * gmpy2.sin(v * mpf(wave.S)) for v in wave.omega_n])])
        X = _solve_amplitudes(wave, -free)
        return 2 * np.hstack([C * a, C * b]).dot(X)


def transmute(fundamental, wave, u0=None, correct_trace=True):
    """Combine a fundamental solution and a wave control into a Schrödinger control.

    Needs ``S <= L`` (the wave control must be supported inside the segment)
    and ``w1 = 0`` (even reflection in ``s``).  With ``correct_trace`` the wave
    data are replaced by the preimage of ``u0`` under the kernel-trace map, so
    that ``u(0) = u0`` holds despite the truncated Dirac mass; the relative
    size of that correction is kept as ``trace_correction``.
    """
    ctx = fundamental.ctx
    if wave.S > fundamental.L * (1 + 1e-12):
        raise ValidationError("S", f"wave time {wave.S} exceeds the half-length {fundamental.L}")
    with ctx.scope():
        if any(v != 0 for v in wave.w1):
            raise ValidationError("w1", "even reflection in s needs zero initial velocity")
        if any(v != 0 for v in np.concatenate(wave.targets)):
            raise ValidationError("targets", "the wave must be steered to rest")
    W = len(wave.window)
    u0 = wave.w0 if u0 is None else as_mp_array(list(u0) + [0] * (W - len(u0)), ctx, complex_=True)
    CC, SC, gap = _kernel_blocks(fundamental, wave)
    correction = 0.0
    if correct_trace:
        A = _trace_map(fundamental, wave, CC, SC, gap)
        with ctx.scope():
            w0 = solve_linear(A, u0, ctx)
            correction = float(gmpy2.sqrt(sum(abs(p - q) ** 2 for p, q in zip(w0, u0))
                                          / sum(abs(q) ** 2 for q in u0)))
        wave = wave.with_data(w0)
    with ctx.scope():
        Q = CC * wave.alpha[:, None] + SC * (wave.beta / wave.omega_n)[:, None]  # (k, m)
        P = Q.T
        Wk = P.dot(wave.overlap[:W].T) / gap
    return Transmutation(fundamental=fundamental, wave=wave, P=P, Wk=Wk, u0=u0, ctx=ctx,
                         trace_correction=correction)


# ---------------------------------------------------------------------------
# two-stage control


@dataclass
class TwoStageControl:
    """Smoothing HUM control on ``[0, T']`` followed by a transmuted control on ``[T', T]``."""

    split: float
    T: float
    smoothing: object
    transmuted: Transmutation
    low_state: np.ndarray
    smoothing_cost: float
    transmuted_cost: float
    u0: np.ndarray

    @property
    def cost(self):
        return math.hypot(self.smoothing_cost, self.transmuted_cost)

    def final_state(self):
        """``|u(T)| / |u0|``: the transmuted stage steers the low-mode state at ``T'``."""
        ratio = self.transmuted.final_state()
        ctx = self.transmuted.ctx
        with ctx.scope():
            low = gmpy2.sqrt(sum(abs(v) ** 2 for v in self.low_state))
            full = gmpy2.sqrt(sum(abs(v) ** 2 for v in self.u0))
            return ratio * float(low / full)


def two_stage_control(basis, omega, u0, T, split, ctx=DEFAULT, n_low=None, L=None, eps=0.3, ramp_width=0.05,
                      wave_window=None):
    """Two-stage control of ``u0`` over ``[0, T]`` with the split ``T' = split T``.

    Stage one (HUM over modes ``n_low + 1 .. len(u0)`` observed on ``Omega``)
    removes the high modes on ``[0, T']``; the low-mode state it leaves at
    ``T'`` is then steered to zero by a transmuted control over ``T - T'``.
    With ``u0`` inside the low window stage one is skipped.
    """
    if not 0 < split < 1:
        raise ValidationError("split", f"must lie in (0, 1), got {split}")
    omega = _as_observation(omega)
    u0 = list(u0)
    N = len(u0)
    n_low = n_low if n_low is not None else min(8, N)
    if not 1 <= n_low <= N:
        raise ValidationError("n_low", f"need 1 <= n_low <= {N}, got {n_low}")
    T1 = split * T
    T2 = T - T1
    L = L if L is not None else 2.2
    with ctx.scope():
        u0m = as_mp_array(u0, ctx, complex_=True)
    high = tuple(range(n_low + 1, N + 1))
    smoothing = None
    cost1 = 0.0
    lam = basis.eigenvalues_mp(tuple(range(1, N + 1)), ctx)
    with ctx.scope():
        Tm = mpf(T1)
        low = np.array([gmpy2.exp(_I * l * Tm) * v for l, v in zip(lam[:n_low], u0m[:n_low])], dtype=object)
    if high and any(v != 0 for v in u0m[n_low:]):
        smoothing = hum_control(basis, omega, T1, high, list(u0m[n_low:]), ctx)
        cost1 = float(smoothing.norm())
        S = observation_weights(basis, smoothing.observation, tuple(range(1, N + 1)), ctx)[:n_low, n_low:]
        with ctx.scope():
            cut = gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 2))
            for n in range(n_low):
                # u_n(T') = exp(i lambda_n T') (u0_n - i sum_k S_nk q_k Theta(lambda_k - lambda_n))
                drive = sum(S[n, j] * qk * _theta(lk - lam[n], Tm, cut)
                            for j, (qk, lk) in enumerate(zip(smoothing.coefficients, lam[n_low:])))
                low[n] -= gmpy2.exp(_I * lam[n] * Tm) * _I * drive
    win = wave_window or default_wave_window(basis, max(N, n_low))
    wave = wave_hum_control(basis, omega, L, list(low), window=win, ctx=ctx, ramp_width=ramp_width)
    fund = fundamental_for_wave(wave, T2, L, eps, ctx)
    tr = transmute(fund, wave)
    cost2 = float(tr.control_norm())
    return TwoStageControl(split=split, T=T, smoothing=smoothing, transmuted=tr, low_state=low,
                           smoothing_cost=cost1, transmuted_cost=cost2, u0=u0m)
