"""Truncated observability Gramians and the controllability cost.

Sign convention used everywhere in the package: the controlled equation is
``i u_t - u_xx = 1_Omega g`` (or a boundary input), so free modes evolve as
``exp(+i lambda_j t)`` and the modal system reads
``u_j' = i lambda_j u_j - i g_j``.

For a mode window ``J`` the Gramian is ``G_jk = S_jk Theta_jk(T)`` with
``Theta_jk = int_0^T exp(i (lambda_j - lambda_k) t) dt`` and ``S`` either the
interior overlap ``int_Omega e_j e_k`` or the boundary product
``d^k e_j(X) d^k e_k(X)``.  The observed energy of initial data ``c`` is
``c^T G conj(c)``, and the cost is ``1 / sqrt(lambda_min(G))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import gmpy2
import numpy as np

from .errors import DegenerateGramianError, ValidationError
from .precision import DEFAULT, as_mp_array, eig_hermitian, integrate, mpc, mpf, to_complex
from .spectral import frequency_window

__all__ = [
    "InteriorObservation",
    "BoundaryObservation",
    "CostEstimate",
    "HumControl",
    "observation_weights",
    "build_gramian",
    "cost_estimate",
    "cost_curve",
    "highfreq_cost_curve",
    "lowfreq_probe",
    "fitted_rate",
    "hum_control",
]


@dataclass(frozen=True, init=False)
class InteriorObservation:
    """Observation on a union of disjoint open subintervals.

    ``InteriorObservation(a, b)`` or ``InteriorObservation([(a1, b1), (a2, b2)])``.
    """

    intervals: tuple

    def __init__(self, *args):
        if len(args) == 2 and all(isinstance(v, (int, float, np.floating, np.integer)) for v in args):
            pieces = [args]
        elif len(args) == 1:
            pieces = list(args[0])
        else:
            raise ValidationError("omega", f"expected (a, b) or a list of intervals, got {args!r}")
        parsed = []
        for piece in pieces:
            try:
                a, b = (float(v) for v in piece)
            except (TypeError, ValueError):
                raise ValidationError("omega", f"malformed interval {piece!r}") from None
            if not a < b:
                raise ValidationError("omega", f"empty interval ({a}, {b})")
            parsed.append((a, b))
        if not parsed:
            raise ValidationError("omega", "observation set is empty")
        parsed.sort()
        for (a0, b0), (a1, b1) in zip(parsed, parsed[1:]):
            if a1 < b0:
                raise ValidationError("omega", f"intervals ({a0}, {b0}) and ({a1}, {b1}) overlap")
        object.__setattr__(self, "intervals", tuple(parsed))

    @property
    def interval(self):
        """Convex hull ``(a, b)``."""
        return (self.intervals[0][0], self.intervals[-1][1])

    def indicator(self, x):
        x = np.asarray(x, dtype=float)
        return np.any([(x >= a) & (x <= b) for a, b in self.intervals], axis=0)

    def distance(self, y):
        """Distance from ``y`` to the closure of the set."""
        return min(0.0 if a <= y <= b else min(abs(y - a), abs(y - b)) for a, b in self.intervals)

    def gap_length(self, length):
        """Longest subinterval of ``[0, length]`` missing the set."""
        edges = [0.0] + [v for ab in self.intervals for v in ab] + [float(length)]
        return max(edges[i + 1] - edges[i] for i in range(0, len(edges), 2))


@dataclass(frozen=True)
class BoundaryObservation:
    """Trace ``d^order u(point)``; ``order=None`` picks 1 on a Dirichlet end, else 0."""

    point: float
    order: int | None = None

    def resolved_order(self, basis):
        return basis.boundary_order(self.point) if self.order is None else self.order


def observation_weights(basis, observation, window, ctx=DEFAULT):
    """The matrix ``S`` for the window, at working precision."""
    window = basis.check_window(window)
    if isinstance(observation, InteriorObservation):
        parts = [basis.overlap_matrix(window, ab, ctx) for ab in observation.intervals]
        with ctx.scope():
            return sum(parts[1:], parts[0])
    if isinstance(observation, BoundaryObservation):
        if observation.point not in (0, basis.length):
            raise ValidationError("observation", f"boundary point must be 0 or {basis.length}")
        order = observation.resolved_order(basis)
        trace = basis.trace_vector(window, observation.point, order, ctx)
        # a-priori trace size sqrt(2/X) omega^order; anything below tol times it is rounding
        top = max(1.0, float(basis.frequencies[max(window) - 1]))
        tol = math.sqrt(2 / basis.length) * top ** order * max(2.0 ** (-(ctx.mantissa_bits // 2)),
                                                               10 * basis.entry_accuracy)
        with ctx.scope():
            trace = np.array([v if abs(v) > tol else mpf(0) for v in trace], dtype=object)
            return np.outer(trace, trace)
    raise ValidationError("observation", f"unsupported observation {observation!r}")


def _theta(delta, T, cutoff):
    """``int_0^T exp(i delta t) dt`` with a Taylor branch near ``delta = 0``."""
    if abs(delta) < cutoff:
        return gmpy2.mpc(T, delta * T * T / 2)
    return (gmpy2.exp(gmpy2.mpc(0, delta * T)) - 1) / gmpy2.mpc(0, delta)


def _check_horizon(T):
    if not (isinstance(T, (int, float, np.floating)) and math.isfinite(T) and T > 0):
        raise ValidationError("T", f"horizon must be a positive number, got {T!r}")


def build_gramian(basis, observation, T, window, ctx=DEFAULT, sobolev_order=0):
    """Gramian on the window; ``sobolev_order=s`` rescales to ``H^s`` data.

    With ``s > 0`` the matrix is ``D G D`` where ``D = diag((1+lambda_j)^(-s/2))``,
    so its smallest eigenvalue governs the cost measured in the ``H^s`` norm.
    """
    _check_horizon(T)
    window = basis.check_window(window)
    S = observation_weights(basis, observation, window, ctx)
    lam = basis.eigenvalues_mp(window, ctx)
    n = len(window)
    with ctx.scope():
        Tm = mpf(T)
        cutoff = gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 2))
        G = np.empty((n, n), dtype=object)
        for j in range(n):
            G[j, j] = gmpy2.mpc(S[j, j] * Tm, 0)
            for k in range(j + 1, n):
                th = _theta(lam[j] - lam[k], Tm, cutoff)
                G[j, k] = S[j, k] * th
                G[k, j] = G[j, k].conjugate()
        if sobolev_order:
            d = np.array([(1 + v) ** (-mpf(sobolev_order) / 2) for v in lam], dtype=object)
            G = G * np.outer(d, d)
    return G


@dataclass
class CostEstimate:
    T: float
    cost: object
    lambda_min: object
    n_modes: int
    mantissa_bits: int
    window: tuple
    eigenvector: np.ndarray

    @property
    def ln_cost(self):
        return float(gmpy2.log(self.cost))

    @property
    def T_ln_cost(self):
        return self.T * self.ln_cost

    def row(self):
        return {"T": self.T, "cost": float(self.cost), "T_ln_cost": self.T_ln_cost,
                "n_modes": self.n_modes, "mantissa_bits": self.mantissa_bits}


def _rounding_floor(G, basis, ctx):
    """Smallest eigenvalue that the entries of ``G`` can still resolve."""
    scale = max(abs(v) for v in G.reshape(-1))
    rel = max(basis.entry_accuracy, 2.0 ** (-ctx.mantissa_bits))
    return scale * G.shape[0] * rel * 16


def cost_estimate(basis, observation, T, window, ctx=DEFAULT, sobolev_order=0):
    """Cost ``1/sqrt(lambda_min)`` of the window Gramian."""
    G = build_gramian(basis, observation, T, window, ctx, sobolev_order)
    w, V = eig_hermitian(G, ctx)
    lam_min = w[0]
    with ctx.scope():
        floor = _rounding_floor(G, basis, ctx)
        if lam_min <= 0 or lam_min <= floor:
            raise DegenerateGramianError(
                f"lambda_min = {float(lam_min):.3e} is not above the rounding floor {float(floor):.3e}; "
                "raise the precision, shrink the window or lengthen T")
        cost = 1 / gmpy2.sqrt(lam_min)
    return CostEstimate(T=float(T), cost=cost, lambda_min=lam_min, n_modes=len(w),
                        mantissa_bits=ctx.mantissa_bits, window=basis.check_window(window), eigenvector=V[:, 0])


def cost_curve(basis, observation, T_grid, c, ctx=DEFAULT, sobolev_order=0):
    """Cost on the windows ``sqrt(lambda_j) <= c/T`` for each ``T``."""
    if not T_grid:
        raise ValidationError("T_grid", "empty horizon grid")
    if not c > 0:
        raise ValidationError("c", f"window constant must be positive, got {c}")
    out = []
    for T in T_grid:
        _check_horizon(T)
        window = frequency_window(basis, 0.0, c / T)
        if not window:
            raise ValidationError("c", f"no mode has frequency <= {c / T}")
        out.append(cost_estimate(basis, observation, T, window, ctx, sobolev_order))
    return out


def highfreq_cost_curve(basis, observation, T_grid, d, c, ctx=DEFAULT):
    """Cost on the high-frequency windows ``d/T <= sqrt(lambda_j) <= c/T``.

    The quantity of interest is ``cost * sqrt(T)``, which stays bounded as
    ``T -> 0`` when ``d`` exceeds the geometric constant of ``Omega``.
    """
    if not 0 < d < c:
        raise ValidationError("d", f"need 0 < d < c, got d={d}, c={c}")
    out = []
    for T in T_grid:
        _check_horizon(T)
        window = frequency_window(basis, d / T, c / T)
        if not window:
            raise ValidationError("T_grid", f"window [{d / T}, {c / T}] holds no modes")
        out.append(cost_estimate(basis, observation, T, window, ctx))
    return out


def fitted_rate(curve):
    """Mean of ``T ln C`` over the smallest-``T`` half of a curve."""
    pts = sorted(curve, key=lambda e: e.T)
    tail = pts[: max(1, len(pts) // 2)]
    return sum(e.T_ln_cost for e in tail) / len(tail)


def lowfreq_probe(basis, observation, T, d, ctx=DEFAULT):
    """Cost on the low-frequency window ``sqrt(lambda_j) <= d/T``."""
    _check_horizon(T)
    window = frequency_window(basis, 0.0, d / T)
    if not window:
        raise ValidationError("d", f"no mode has frequency <= {d / T}")
    return cost_estimate(basis, observation, T, window, ctx)


# ---------------------------------------------------------------------------
# minimal-norm control


@dataclass
class HumControl:
    """Minimal-norm control ``Omega``-supported (or boundary input) on ``[0, T]``.

    Interior: ``g(t, x) = 1_Omega(x) sum_k q_k exp(i lambda_k t) e_k(x)``.
    Boundary: the input enters as ``u_j' = i lambda_j u_j - i w_j h(t)`` with
    ``w_j = d^k e_j(X)`` and ``h(t) = sum_k q_k w_k exp(i lambda_k t)``; for
    ``k = 1`` this is the Dirichlet datum ``u(t, X) = -h(t)``.
    """

    basis: object
    observation: object
    T: float
    window: tuple
    coefficients: np.ndarray
    ctx: object

    def _lam(self):
        return self.basis.eigenvalues_mp(self.window, self.ctx)

    def modal_input(self, t):
        """``g_j(t)`` for every window mode (object array, shape ``(len(t), n)``)."""
        S = observation_weights(self.basis, self.observation, self.window, self.ctx)
        lam = self._lam()
        with self.ctx.scope():
            t = np.atleast_1d(np.asarray(t, dtype=object))
            phases = np.array([[gmpy2.exp(gmpy2.mpc(0, lk * tt)) for lk in lam] for tt in t], dtype=object)
            return (phases * self.coefficients).dot(S.T)

    def signal(self, t):
        """Boundary input ``h(t)`` (complex128), boundary observations only."""
        if not isinstance(self.observation, BoundaryObservation):
            raise ValidationError("observation", "signal() applies to boundary controls")
        w = self.basis.trace_vector(self.window, self.observation.point,
                                    self.observation.resolved_order(self.basis), self.ctx)
        lam = self._lam()
        with self.ctx.scope():
            vals = [sum(q * wk * gmpy2.exp(gmpy2.mpc(0, lk * mpf(float(tt))))
                        for q, wk, lk in zip(self.coefficients, w, lam)) for tt in np.atleast_1d(t)]
        return to_complex(np.array(vals, dtype=object))

    def evaluate(self, t, x):
        """Interior control ``g(t, x)`` on a grid (complex128, shape ``(len(t), len(x))``)."""
        if not isinstance(self.observation, InteriorObservation):
            raise ValidationError("observation", "evaluate() applies to interior controls")
        x = np.asarray(x, dtype=float)
        E = self.basis.sample(self.window, x)
        lam = np.array([float(v) for v in self._lam()])
        q = to_complex(self.coefficients)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        vals = (np.exp(1j * np.outer(t, lam)) * q) @ E
        inside = self.observation.indicator(x)
        return vals * inside

    def norm(self):
        G = build_gramian(self.basis, self.observation, self.T, self.window, self.ctx)
        with self.ctx.scope():
            q = self.coefficients
            return gmpy2.sqrt(abs(q.dot(G).dot(np.conj(q)).real))

    def final_state(self, u0, rtol=None):
        """Forward re-simulation: ``u(T)`` from quadrature of the modal inputs.

        Independent of the closed-form ``Theta`` used to build the control.
        """
        lam = self._lam()
        ctx = self.ctx
        with ctx.scope():
            u0 = as_mp_array(u0, ctx, complex_=True)
            T = mpf(self.T)

            def integrand(t):
                g = self.modal_input(t)
                ph = np.array([[gmpy2.exp(gmpy2.mpc(0, -lk * tt)) for lk in lam] for tt in t], dtype=object)
                return g * ph

            span = max(float(v) for v in lam) - min(float(v) for v in lam)
            panels = max(1, int(span * self.T / 40) + 1)
            integral, _ = integrate(integrand, 0, T, ctx, rtol=rtol, panels=panels)
            out = np.array([gmpy2.exp(gmpy2.mpc(0, lk * T)) * (u - gmpy2.mpc(0, 1) * I)
                            for lk, u, I in zip(lam, u0, integral)], dtype=object)
        return out


def hum_control(basis, observation, T, window, u0, ctx=DEFAULT):
    """Minimal-norm control steering the window data ``u0`` to zero at ``T``.

    Solves ``conj(G) q = -i u0``; the control norm is ``sqrt(u0^H conj(G)^{-1} u0)``,
    at most ``cost * |u0|``.
    """
    window = basis.check_window(window)
    if len(u0) != len(window):
        raise ValidationError("u0", f"expected {len(window)} coefficients, got {len(u0)}")
    G = build_gramian(basis, observation, T, window, ctx)
    w, V = eig_hermitian(G, ctx)
    with ctx.scope():
        if w[0] <= _rounding_floor(G, basis, ctx):
            raise DegenerateGramianError("Gramian is singular at working precision")
        u0 = as_mp_array(u0, ctx, complex_=True)
        # conj(G) = conj(V) diag(w) V^T
        Vc = np.conj(V)
        rhs = -gmpy2.mpc(0, 1) * u0
        q = Vc.dot(V.T.dot(rhs) / w)
    return HumControl(basis=basis, observation=observation, T=float(T), window=window, coefficients=q, ctx=ctx)
