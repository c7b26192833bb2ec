"""Heat-kernel witnesses that force the cost up.

A point source at ``y`` outside the observed set, smoothed by
``exp(-T lambda)`` and restricted to frequencies ``2 T omega <= d``, carries
unit-order energy but is seen only through Gaussian tails on ``Omega``.  The
ratio ``R(T) = |u0| / |u|_{L^2(Omega x (-T/2, T/2))}`` is a lower bound for
the cost on the same window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import gmpy2
import numpy as np

from .errors import TruncationError, ValidationError
from .observability import InteriorObservation, build_gramian, cost_estimate, observation_weights
from .precision import DEFAULT, mpc, mpf
from .spectral import frequency_window

__all__ = [
    "WitnessConfig",
    "WitnessPoint",
    "HeatNorm",
    "complex_heat_norm",
    "heat_envelope_ratios",
    "witness_coefficients",
    "witness_ratio_curve",
]


@dataclass(frozen=True)
class WitnessConfig:
    basis: object
    y: float
    omega: InteriorObservation
    d: float

    def __post_init__(self):
        if not isinstance(self.omega, InteriorObservation):
            raise ValidationError("omega", "witness needs an interior observation set")
        if not 0 < self.y < self.basis.length:
            raise ValidationError("y", f"source must lie in (0, {self.basis.length}), got {self.y}")
        dist = self.omega.distance(self.y)
        if not 0 < self.d < dist:
            raise ValidationError("d", f"need 0 < d < dist(y, Omega) = {dist}, got {self.d}")
        if abs(float(self.basis.evaluate(1, self.y))) < 1e-12:
            raise ValidationError("y", "source sits on a zero of the first mode")

    def window(self, T):
        """Modes with ``2 T omega_j <= d``."""
        return frequency_window(self.basis, 0.0, self.d / (2 * T))


def _source_values(basis, y, window, ctx):
    return basis.trace_vector(window, y, 0, ctx)


def witness_coefficients(cfg, T, ctx=DEFAULT):
    """Window and coefficients ``exp(-T lambda_j) e_j(y)`` of the witness."""
    window = cfg.window(T)
    if not window:
        raise ValidationError("T", f"no mode satisfies 2 T omega <= d at T = {T}")
    ey = _source_values(cfg.basis, cfg.y, window, ctx)
    lam = cfg.basis.eigenvalues_mp(window, ctx)
    with ctx.scope():
        Tm = mpf(T)
        return window, np.array([gmpy2.exp(-Tm * lk) * e for lk, e in zip(lam, ey)], dtype=object)


@dataclass
class WitnessPoint:
    T: float
    ratio: object
    n_modes: int
    cost: object
    mantissa_bits: int

    @property
    def T_ln_ratio(self):
        return self.T * float(gmpy2.log(self.ratio))

    def row(self):
        return {"T": self.T, "R": float(self.ratio), "T_ln_R": self.T_ln_ratio, "n_modes": self.n_modes,
                "cost": float(self.cost) if self.cost is not None else math.nan,
                "mantissa_bits": self.mantissa_bits}


def witness_ratio(cfg, T, ctx=DEFAULT, with_cost=True):
    """``R(T)``; the witness is the state at the centre of ``(-T/2, T/2)``."""
    window, c = witness_coefficients(cfg, T, ctx)
    G = build_gramian(cfg.basis, cfg.omega, T, window, ctx)
    lam = cfg.basis.eigenvalues_mp(window, ctx)
    with ctx.scope():
        half = mpf(T) / 2
        # coefficients at the start of the window
        c0 = np.array([v * gmpy2.exp(mpc(0, -lk * half)) for v, lk in zip(c, lam)], dtype=object)
        energy = c0.dot(G).dot(np.conj(c0)).real
        ratio = gmpy2.sqrt(sum(abs(v) ** 2 for v in c) / energy)
    cost = cost_estimate(cfg.basis, cfg.omega, T, window, ctx).cost if with_cost else None
    return WitnessPoint(T=float(T), ratio=ratio, n_modes=len(window), cost=cost, mantissa_bits=ctx.mantissa_bits)


def witness_ratio_curve(cfg, T_grid, ctx=DEFAULT, with_cost=True):
    if not T_grid:
        raise ValidationError("T_grid", "empty horizon grid")
    return [witness_ratio(cfg, T, ctx, with_cost) for T in T_grid]


@dataclass
class HeatNorm:
    value: object
    tail_bound: float
    n_modes: int


def complex_heat_norm(basis, y, omega, z, ctx=DEFAULT, window=None, rtol=None):
    """``|exp(z Delta) delta_y|_{L^2(Omega)}`` from the eigen-expansion.

    Without ``window`` the expansion is cut where the tail bound
    ``sqrt(2/X) (sum_{j>N} exp(-2 Re z lambda_j))^(1/2)`` drops below
    ``rtol`` (default ``2^-(bits/2)``) times the computed norm.  The tail bound
    assumes eigenfunctions bounded by ``sqrt(2/X)`` (closed-form bases) and
    ``omega_{j+1} - omega_j >= pi / X`` past the stored range.
    """
    z = complex(z)
    if not z.real > 0:
        raise ValidationError("z", f"need Re z > 0, got {z}")
    if not isinstance(omega, InteriorObservation):
        raise ValidationError("omega", "heat norm needs an interior observation set")
    rtol = rtol if rtol is not None else 2.0 ** (-(ctx.mantissa_bits // 2))
    X = basis.length
    lam_f = np.asarray(basis.eigenvalues, dtype=float)

    def tail(N):
        # sum over stored modes past N plus an integral beyond the stored range
        rest = lam_f[N:]
        s = float(np.sum(np.exp(-2 * z.real * rest)))
        if len(lam_f):
            top = math.sqrt(lam_f[-1])
            # omega_j >= omega_max + (j - n) pi / X asymptotically
            s += math.exp(-2 * z.real * top ** 2) * X / (math.pi * max(4 * z.real * top, 1e-300))
        return math.sqrt(2 / X * s)

    if window is None:
        cut = ctx.mantissa_bits * math.log(2) + 20
        N = int(np.searchsorted(2 * z.real * lam_f, cut)) + 1
        window = tuple(range(1, min(N, len(lam_f)) + 1))
    window = basis.check_window(window)
    ey = _source_values(basis, y, window, ctx)
    lam = basis.eigenvalues_mp(window, ctx)
    S = observation_weights(basis, omega, window, ctx)
    with ctx.scope():
        zm = mpc(z)
        a = np.array([gmpy2.exp(-zm * lk) * e for lk, e in zip(lam, ey)], dtype=object)
        value = gmpy2.sqrt(abs(a.dot(S).dot(np.conj(a)).real))
    bound = tail(len(window))
    if bound > rtol * float(value):
        raise TruncationError(f"expansion tail {bound:.3e} exceeds {rtol:.1e} x norm {float(value):.3e}; "
                              "enlarge the basis")
    return HeatNorm(value=value, tail_bound=bound, n_modes=len(window))


def heat_envelope_ratios(basis, y, omega, t_grid, ctx=DEFAULT, d=None):
    """``|exp(t(1+i) Delta) delta_y|_{L^2(Omega)} / exp(-d^2 / (8 t))`` per ``t``."""
    d = omega.distance(y) if d is None else d
    out = []
    for t in t_grid:
        hn = complex_heat_norm(basis, y, omega, complex(t, t), ctx)
        with ctx.scope():
            out.append(float(hn.value * gmpy2.exp(mpf(d) ** 2 / (8 * mpf(t)))))
    return out
