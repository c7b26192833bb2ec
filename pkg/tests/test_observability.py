import math

import gmpy2
import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctrlcost.errors import DegenerateGramianError, ValidationError
from ctrlcost.observability import (BoundaryObservation, InteriorObservation, build_gramian, cost_curve,
                                    cost_estimate, fitted_rate, highfreq_cost_curve, hum_control,
                                    lowfreq_probe, observation_weights)
from ctrlcost.precision import PrecisionContext, mpf, to_complex
from ctrlcost.spectral import laplacian_basis

PI = math.pi


def _dense(G):
    return to_complex(G)


@given(st.floats(0.05, 3.0), st.integers(1, 6))
def test_full_observation_gramian_is_scaled_identity(T, n):
    ctx = PrecisionContext(128)
    b = laplacian_basis(PI, n + 2)
    G = _dense(build_gramian(b, InteriorObservation(0.0, PI), T, tuple(range(1, n + 1)), ctx))
    np.testing.assert_allclose(G, T * np.eye(n), atol=1e-25)


def test_half_interval_single_mode(ctx):
    b = laplacian_basis(PI, 2)
    G = build_gramian(b, InteriorObservation(0.0, PI / 2), 0.7, (1,), ctx)
    assert complex(G[0, 0]) == pytest.approx(0.35, abs=1e-30)


def test_boundary_gramian_closed_form(ctx):
    b = laplacian_basis(PI, 2)
    G = build_gramian(b, BoundaryObservation(PI, 1), 1.0, (1, 2), ctx)
    with ctx.scope():
        pi = gmpy2.const_pi()
        two_over_pi = 2 / pi
        assert abs(G[0, 0] - two_over_pi) < mpf(2) ** -240
        assert abs(G[1, 1] - 4 * two_over_pi) < mpf(2) ** -240
        off = two_over_pi * 2 * (-1) * (gmpy2.exp(gmpy2.mpc(0, -3)) - 1) / gmpy2.mpc(0, -3)
        assert abs(G[0, 1] - off) < mpf(2) ** -240
        assert abs(G[1, 0] - off.conjugate()) < mpf(2) ** -240


@given(st.floats(0.05, 2.0))
def test_full_observation_cost_is_inverse_sqrt(T):
    ctx = PrecisionContext(128)
    b = laplacian_basis(1.0, 6)
    est = cost_estimate(b, InteriorObservation(0.0, 1.0), T, (1, 2, 3, 4), ctx)
    assert float(est.cost) == pytest.approx(1 / math.sqrt(T), rel=1e-25)


def test_single_mode_scalar_cost(ctx):
    b = laplacian_basis(PI, 2)
    est = cost_estimate(b, InteriorObservation(0.0, PI / 2), 0.4, (1,), ctx)
    assert float(est.cost) == pytest.approx(math.sqrt(2 / 0.4), rel=1e-14)


def test_boundary_cost_stable_under_precision_escalation():
    b = laplacian_basis(PI, 22)
    obs = BoundaryObservation(PI, 1)
    lo = cost_estimate(b, obs, 0.3, tuple(range(1, 21)), PrecisionContext(256))
    hi = cost_estimate(b, obs, 0.3, tuple(range(1, 21)), PrecisionContext(320))
    assert abs(float(lo.cost / hi.cost) - 1) <= 1e-10
    assert lo.mantissa_bits == 256 and lo.n_modes == 20


def test_full_observation_curve_has_no_exponential_rate(ctx):
    b = laplacian_basis(1.0, 40)
    curve = cost_curve(b, InteriorObservation(0.0, 1.0), [0.8, 0.4, 0.2, 0.1], 8.0, ctx)
    for e in curve:
        assert float(e.cost) == pytest.approx(1 / math.sqrt(e.T), rel=1e-30)
    assert abs(fitted_rate(curve)) < 0.15


def test_highfreq_full_observation_is_flat(ctx):
    b = laplacian_basis(PI, 60)
    curve = highfreq_cost_curve(b, InteriorObservation(0.0, PI), [0.4, 0.2], 2.0, 6.0, ctx)
    for e in curve:
        assert float(e.cost) * math.sqrt(e.T) == pytest.approx(1.0, rel=1e-30)


def test_highfreq_single_mode_window(ctx):
    b = laplacian_basis(PI, 10)
    obs = InteriorObservation(0.3, PI)
    # d/T = 2.5 and c/T = 3.5 leave mode 3 alone
    (e,) = highfreq_cost_curve(b, obs, [1.0], 2.5, 3.5, ctx)
    S = observation_weights(b, obs, (3,), ctx)
    assert e.n_modes == 1
    assert float(e.cost) == pytest.approx(1 / math.sqrt(float(S[0, 0])), rel=1e-25)


def test_lowfreq_probe_rate_scales_with_d(ctx):
    b = laplacian_basis(PI, 40)
    obs = InteriorObservation(0.3, PI)
    ratios = []
    for d in (1.0, 2.0, 3.0):
        est = lowfreq_probe(b, obs, 0.25, d, ctx)
        ratios.append(est.T_ln_cost / d)
    assert max(ratios) < 2.0


def test_highfreq_validates_constants(ctx):
    b = laplacian_basis(PI, 10)
    with pytest.raises(ValidationError):
        highfreq_cost_curve(b, InteriorObservation(0.3, PI), [0.5], 3.0, 2.0, ctx)


def test_degenerate_gramian_reported(ctx):
    # values at a Dirichlet end observe nothing
    b = laplacian_basis(PI, 4)
    with pytest.raises(DegenerateGramianError):
        cost_estimate(b, BoundaryObservation(PI, 0), 0.5, (1, 2), ctx)


def test_zero_data_gives_zero_control(ctx):
    b = laplacian_basis(PI, 6)
    c = hum_control(b, InteriorObservation(0.3, PI), 0.5, (1, 2, 3), [0, 0, 0], ctx)
    assert all(v == 0 for v in c.coefficients)
    assert float(c.norm()) == 0.0


def test_single_mode_full_observation_closed_form(ctx):
    b = laplacian_basis(PI, 3)
    T, u0 = 0.6, 0.8 - 0.3j
    c = hum_control(b, InteriorObservation(0.0, PI), T, (2,), [u0], ctx)
    q = complex(c.coefficients[0])
    assert q == pytest.approx(-1j * u0 / T, rel=1e-30)
    x = np.linspace(0.1, 3.0, 5)
    t = np.array([0.1, 0.45])
    ref = np.outer(np.exp(1j * 4 * t) * q, b.evaluate(2, x))
    np.testing.assert_allclose(c.evaluate(t, x), ref, atol=1e-14)
    end = c.final_state([u0])
    assert abs(complex(end[0])) < 1e-40


def test_hum_steers_ten_modes(ctx, rng):
    b = laplacian_basis(PI, 12)
    obs = InteriorObservation(0.3, PI)
    window = tuple(range(1, 11))
    u0 = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    c = hum_control(b, obs, 0.5, window, list(u0), ctx)
    end = c.final_state(list(u0))
    with ctx.scope():
        ratio = gmpy2.sqrt(sum(abs(v) ** 2 for v in end)) / float(np.linalg.norm(u0))
    assert ratio <= 1e-20
    cost = cost_estimate(b, obs, 0.5, window, ctx).cost
    assert float(c.norm()) <= float(cost) * float(np.linalg.norm(u0)) * (1 + 1e-20)


def test_hum_rejects_wrong_length(ctx):
    b = laplacian_basis(PI, 4)
    with pytest.raises(ValidationError) as exc:
        hum_control(b, InteriorObservation(0.3, PI), 0.5, (1, 2), [1.0], ctx)
    assert exc.value.field == "u0"


@pytest.mark.parametrize("omega", [[(0.2, 0.5), (0.4, 0.9)], [(0.5, 0.5)]])
def test_malformed_observation_sets(omega):
    with pytest.raises(ValidationError) as exc:
        InteriorObservation(omega)
    assert exc.value.field == "omega"


def _min_eig_difference(G_big, G_small):
    D = _dense(G_big) - _dense(G_small)
    scale = max(1.0, np.abs(_dense(G_big)).max())
    return np.linalg.eigvalsh(D).min() / scale


@given(st.integers(0, 2 ** 31 - 1))
def test_gramian_monotone_in_time_and_set(seed):
    ctx = PrecisionContext(128)
    rng = np.random.default_rng(seed)
    L = float(rng.uniform(0.8, 3.5))
    n = int(rng.integers(2, 7))
    b = laplacian_basis(L, n)
    window = tuple(range(1, n + 1))
    a = float(rng.uniform(0, 0.5)) * L
    w = float(rng.uniform(0.05, 0.4)) * L
    inner = InteriorObservation(a, a + w)
    outer = InteriorObservation(max(0.0, a - 0.1 * L), min(L, a + w + 0.1 * L))
    T1 = float(rng.uniform(0.05, 1.0))
    T2 = T1 + float(rng.uniform(0.01, 1.0))
    G11 = build_gramian(b, inner, T1, window, ctx)
    assert _min_eig_difference(build_gramian(b, inner, T2, window, ctx), G11) >= -1e-12
    assert _min_eig_difference(build_gramian(b, outer, T1, window, ctx), G11) >= -1e-12
