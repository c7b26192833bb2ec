"""Cost of tensor systems ``A + B`` observed through ``C (x) I``.

The companion operator ``B`` is given by its real spectrum ``beta_m`` in an
orthonormal eigenbasis.  The tensor Gramian is assembled entry by entry over
``(j, m)`` pairs and diagonalised as a whole; the comparison with the factor
Gramian is the point of the exercise, so no block structure is assumed.
"""
from __future__ import annotations

from dataclasses import dataclass

import gmpy2
import numpy as np

from .errors import DegenerateGramianError, ValidationError
from .observability import BoundaryObservation, _rounding_floor, _theta, build_gramian, observation_weights
from .precision import DEFAULT, eig_hermitian, mpf
from .spectral import LaplacianBasis, solve_sturm_liouville

__all__ = ["TensorComparison", "tensor_gramian", "tensor_gramian_mineig", "cylinder_boundary_cost"]


@dataclass
class TensorComparison:
    T: float
    tensor_min: object
    factor_min: object
    order: int

    @property
    def rel_diff(self):
        return float(abs(self.tensor_min - self.factor_min) / abs(self.factor_min))

    @property
    def tensor_cost(self):
        return 1 / gmpy2.sqrt(self.tensor_min)

    @property
    def factor_cost(self):
        return 1 / gmpy2.sqrt(self.factor_min)

    def row(self):
        return {"T": self.T, "tensor_min": float(self.tensor_min), "factor_min": float(self.factor_min),
                "rel_diff": self.rel_diff}


def _companion(spectrum):
    beta = [float(b) for b in spectrum]
    if not beta:
        raise ValidationError("companion_spectrum", "need at least one companion eigenvalue")
    return beta


def tensor_gramian(basis, observation, T, window, companion_spectrum, ctx=DEFAULT, sobolev_order=0):
    """Gramian of ``exp(i t (A + B))`` observed by ``C (x) I``, ordered ``(m, j)``.

    Entry ``((m, j), (n, k))`` is ``S_jk <f_m, f_n> Theta(lambda_j + beta_m - lambda_k - beta_n)``
    with ``<f_m, f_n> = delta_mn`` for the orthonormal companion eigenbasis.
    """
    window = basis.check_window(window)
    beta = _companion(companion_spectrum)
    S = observation_weights(basis, observation, window, ctx)
    lam = basis.eigenvalues_mp(window, ctx)
    nj, nm = len(window), len(beta)
    with ctx.scope():
        Tm = mpf(T)
        b = [mpf(v) for v in beta]
        cutoff = gmpy2.mpfr(2) ** (-(ctx.mantissa_bits // 2))
        weights = [(1 + v) ** (-mpf(sobolev_order) / 2) for v in lam] if sobolev_order else [mpf(1)] * nj
        G = np.full((nj * nm, nj * nm), gmpy2.mpc(0), dtype=object)
        # off-diagonal companion blocks vanish: <f_m, f_n> = 0 for m != n
        for m in range(nm):
            for j in range(nj):
                for k in range(nj):
                    th = _theta(lam[j] + b[m] - lam[k] - b[m], Tm, cutoff)
                    G[m * nj + j, m * nj + k] = S[j, k] * th * weights[j] * weights[k]
    return G


def tensor_gramian_mineig(basis, observation, T, window, companion_spectrum, ctx=DEFAULT, max_order=400,
                          sobolev_order=0):
    """Smallest eigenvalues of the tensor Gramian and of the factor Gramian."""
    window = basis.check_window(window)
    order = len(window) * len(_companion(companion_spectrum))
    if order > max_order:
        raise ValidationError("companion_spectrum", f"tensor order {order} exceeds the cap {max_order}")
    Gt = tensor_gramian(basis, observation, T, window, companion_spectrum, ctx, sobolev_order)
    Gf = build_gramian(basis, observation, T, window, ctx, sobolev_order)
    wt, _ = eig_hermitian(Gt, ctx)
    wf, _ = eig_hermitian(Gf, ctx)
    with ctx.scope():
        for w, G in ((wt[0], Gt), (wf[0], Gf)):
            if w <= _rounding_floor(G, basis, ctx):
                raise DegenerateGramianError(f"lambda_min = {float(w):.3e} is below the rounding floor")
    return TensorComparison(T=float(T), tensor_min=wt[0], factor_min=wf[0], order=order)


def cylinder_boundary_cost(factor, companion_spectrum, T, window, ctx=DEFAULT, n_modes=None):
    """Boundary cost on ``[0, X] x cross-section`` observed at ``x = X``.

    ``factor`` is a :class:`SturmLiouvilleProblem` or a basis.  The trace order
    is 1 on a Dirichlet end and 0 otherwise; data are measured in the matching
    ``H^k`` norm through the weights ``(1 + lambda_j)^(-k/2)``.
    """
    if hasattr(factor, "eigenvalues_mp"):
        basis = factor
    else:
        n_modes = n_modes or max(window)
        if factor.is_plain_laplacian:
            basis = LaplacianBasis(factor, n_modes)
        else:
            basis = solve_sturm_liouville(factor, n_modes)
    X = basis.length
    obs = BoundaryObservation(X)
    k = obs.resolved_order(basis)
    return tensor_gramian_mineig(basis, obs, T, window, companion_spectrum, ctx, sobolev_order=k)
