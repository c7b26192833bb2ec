import math

import gmpy2
import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctrlcost.errors import TruncationError, ValidationError
from ctrlcost.precision import PrecisionContext, mpf
from ctrlcost.spectral import laplacian_basis
from ctrlcost.window import (ALPHA_STAR, SpectralSequence, boundary_control_from_family, build_family,
                             build_multiplier, counting_function, evaluate_F, window_cost_bound)

SQUARES = SpectralSequence.squares()


@pytest.fixture(scope="module")
def family12():
    return build_family(SQUARES, 1.0, tuple(range(1, 13)), 0.3, PrecisionContext(256))


def test_alpha_star_value():
    assert ALPHA_STAR == pytest.approx(3.787, abs=5e-4)


def test_F_at_own_node_is_one(ctx):
    val, _ = evaluate_F(SQUARES, 3, 9, ctx)
    assert abs(val - 1) < mpf(2) ** -240


@pytest.mark.parametrize("k", [1, 2, 4, 17, 40])
def test_F_vanishes_at_other_nodes(ctx, k):
    val, _ = evaluate_F(SQUARES, 3, k * k, ctx, K=40)
    assert val == 0


def _extrapolated_product_oracle():
    """prod_{k=2}^N k^2/(k^2-1) in exact rationals, extrapolated to N = inf by a cubic in 1/N."""
    from fractions import Fraction
    Ns = (50, 100, 200, 400, 800)
    vals = []
    p, k = Fraction(1), 2
    for N in Ns:
        while k <= N:
            p *= Fraction(k * k, k * k - 1)
            k += 1
        vals.append(float(p))
    return float(np.polyfit(1 / np.array(Ns, dtype=float), vals, 3)[-1])


def test_F1_at_zero_is_two(ctx):
    oracle = _extrapolated_product_oracle()
    assert oracle == pytest.approx(2.0, abs=1e-7)
    val, bound = evaluate_F(SQUARES, 1, 0, ctx)
    assert bound == 0.0
    assert abs(val - 2) < mpf(2) ** -200


def test_truncated_product_bound_covers_model_tail(ctx):
    exact, _ = evaluate_F(SQUARES, 2, 7.5, ctx, K=64)
    trunc, bound = evaluate_F(SQUARES, 2, 7.5, ctx, K=64, tail="none")
    assert abs(float(trunc / exact) - 1) <= bound


def test_truncation_error_when_far_outside(ctx):
    with pytest.raises(TruncationError):
        evaluate_F(SQUARES, 1, 5000.0, ctx, K=32, tail="none")


def test_counting_function():
    N = counting_function(SQUARES, 3)
    # |k^2 - 9| for k != 3: 5 (k=2), 7 (k=4), 8 (k=1), 16 (k=5)
    assert N(4.9) == 0 and N(5) == 1 and N(8) == 3 and N(16) == 4
    assert N.min_gap == 5
    with pytest.raises(TruncationError):
        N(1e9)


@pytest.fixture(scope="module")
def multiplier():
    ctx = PrecisionContext(128)
    d = math.sqrt(2) * math.pi + 0.6
    return build_multiplier(0.5, d, ctx)


def test_multiplier_normalised(multiplier):
    assert multiplier(0) == 1


@given(st.floats(0.01, 400.0))
def test_multiplier_even_and_bounded(x):
    ctx = PrecisionContext(128)
    M = build_multiplier(0.5, math.sqrt(2) * math.pi + 0.6, ctx)
    with ctx.scope():
        a, b = M(x), M(-x)
        assert a == b
        assert abs(a) <= 1


def test_multiplier_type_below_tau(multiplier):
    assert float(multiplier.exponential_type) <= multiplier.tau


def test_multiplier_fourier_support(multiplier):
    """Trapezoid transform on a lattice with period 4 tau vanishes on (tau, 3 tau)."""
    ctx = multiplier.ctx
    tau = multiplier.tau
    h = math.pi / (2 * tau)
    count = 1
    while abs(float(multiplier(count * h))) > 1e-30:
        count *= 2
    xs = np.arange(-count, count + 1) * h
    vals = np.array([float(v) for v in multiplier.on_grid(-count * h, h, 2 * count + 1)])
    at_zero = h / (2 * math.pi) * vals.sum()
    for t in (1.3 * tau, 2.0 * tau, 2.7 * tau):
        leak = h / (2 * math.pi) * np.sum(vals * np.cos(xs * t))
        assert abs(leak) <= 1e-10 * abs(at_zero)


def test_multiplier_grid_matches_pointwise(multiplier):
    grid = multiplier.on_grid(0.25, 0.5, 40)
    with multiplier.ctx.scope():
        for m in (0, 7, 39):
            assert abs(grid[m] - multiplier(0.25 + 0.5 * m)) < mpf(2) ** -100


def test_biorthogonality_window_12(family12):
    assert family12.residual <= 1e-8
    assert family12.residual_matrix.shape == (12, 17)


def test_plancherel_norms(family12):
    ctx = family12.ctx
    with ctx.scope():
        for i in (0, 5, 11):
            g = family12.samples[i]
            sampled = gmpy2.sqrt(family12.dt * sum(abs(v) ** 2 for v in g))
            assert abs(float(sampled / family12.norms[i]) - 1) < 1e-12


def test_family_support_and_gram_hermitian(family12):
    assert float(family12.times[0]) == pytest.approx(-0.5)
    assert float(family12.times[-1]) >= 0.5
    G = np.array([[complex(v) for v in row] for row in family12.gram])
    np.testing.assert_allclose(G, G.conj().T, atol=1e-30)


def test_cross_window_decay(family12):
    eps, tau = 0.3, 0.5
    top = max(abs(complex(family12.gram[i, i])) for i in range(12))
    envelope = top * math.exp(ALPHA_STAR * (math.pi + math.sqrt(2) * eps) ** 2 / tau)
    for i in range(12):
        for j in range(12):
            gap = abs((i + 1) ** 2 - (j + 1) ** 2)
            assert abs(complex(family12.gram[i, j])) * math.exp(eps * math.sqrt(gap / 2)) <= envelope


def test_single_element_window_bound(ctx):
    fam = build_family(SQUARES, 1.0, (3,), 0.3, ctx, samples=False)
    assert window_cost_bound(fam) == pytest.approx(float(fam.norms[0]), rel=1e-12)


def test_family_without_gram_has_no_bound(ctx):
    fam = build_family(SQUARES, 1.0, (1, 2), 0.3, ctx, samples=False, gram=False)
    with pytest.raises(ValidationError):
        window_cost_bound(fam)


@pytest.mark.parametrize("field,kwargs", [("T", {"T": -1.0}), ("eps", {"eps": 0.0}), ("window", {"window": ()})])
def test_family_validation(ctx, field, kwargs):
    args = {"seq": SQUARES, "T": 1.0, "window": (1, 2), "eps": 0.3}
    args.update(kwargs)
    with pytest.raises(ValidationError) as exc:
        build_family(ctx=ctx, **args)
    assert exc.value.field == field


def test_boundary_control_single_mode(ctx):
    basis = laplacian_basis(math.pi, 4)
    seq = SpectralSequence.from_basis(basis)
    fam = build_family(seq, 0.8, (2,), 0.3, ctx)
    ctl = boundary_control_from_family(fam, basis, math.pi, [1.0])
    end = ctl.final_state(basis, math.pi, 1, [1.0])
    assert abs(complex(end[0])) <= 1e-8
    # one moment: the signal is a multiple of the single family member
    ratio = [complex(s) / complex(g) for s, g in zip(ctl.signal[100:400:50], fam.samples[0][100:400:50])]
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)


def test_boundary_control_ten_modes(ctx, rng):
    basis = laplacian_basis(math.pi, 12)
    seq = SpectralSequence.from_basis(basis)
    fam = build_family(seq, 0.8, tuple(range(1, 11)), 0.3, ctx)
    u0 = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    ctl = boundary_control_from_family(fam, basis, math.pi, list(u0))
    end = ctl.final_state(basis, math.pi, 1, list(u0))
    rel = math.sqrt(sum(abs(complex(v)) ** 2 for v in end)) / np.linalg.norm(u0)
    assert rel <= 1e-6
    assert ctl.norm <= ctl.bound
