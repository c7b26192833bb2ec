import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctrlcost.errors import TruncationError, ValidationError
from ctrlcost.lowerbound import (WitnessConfig, complex_heat_norm, heat_envelope_ratios, witness_coefficients,
                                 witness_ratio_curve)
from ctrlcost.observability import InteriorObservation
from ctrlcost.precision import PrecisionContext
from ctrlcost.spectral import laplacian_basis


@pytest.fixture(scope="module")
def unit_basis():
    return laplacian_basis(1.0, 400)


@given(st.floats(0.002, 0.05), st.floats(0.05, 0.95))
def test_real_time_full_set_matches_expansion(t, y):
    ctx = PrecisionContext(96)
    b = laplacian_basis(1.0, 400)
    hn = complex_heat_norm(b, y, InteriorObservation(0.0, 1.0), t, ctx)
    n = np.arange(1, hn.n_modes + 1)
    ref = math.sqrt(np.sum(np.exp(-2 * t * (n * math.pi) ** 2) * 2 * np.sin(n * math.pi * y) ** 2))
    assert float(hn.value) == pytest.approx(ref, rel=1e-12)


def test_farther_set_sees_less(ctx, unit_basis):
    z = complex(0.01, 0.01)
    near = complex_heat_norm(unit_basis, 0.1, InteriorObservation(0.6, 1.0), z, ctx)
    far = complex_heat_norm(unit_basis, 0.1, InteriorObservation(0.8, 1.0), z, ctx)
    assert far.value < near.value


def test_heat_norm_needs_enough_modes(ctx):
    b = laplacian_basis(1.0, 10)
    with pytest.raises(TruncationError):
        complex_heat_norm(b, 0.1, InteriorObservation(0.7, 1.0), complex(0.001, 0.001), ctx)


def test_heat_norm_rejects_backward_time(ctx, unit_basis):
    with pytest.raises(ValidationError) as exc:
        complex_heat_norm(unit_basis, 0.1, InteriorObservation(0.7, 1.0), complex(-0.1, 0.1), ctx)
    assert exc.value.field == "z"


def test_envelope_ratios_stay_bounded(ctx, unit_basis):
    r = heat_envelope_ratios(unit_basis, 0.1, InteriorObservation(0.7, 1.0), [0.04, 0.02], ctx)
    assert all(v > 0 for v in r)
    assert max(r) / min(r) < 2


@pytest.mark.parametrize("y,d,field", [(1.5, 0.2, "y"), (0.1, 0.7, "d"), (0.1, -0.1, "d")])
def test_witness_validation(unit_basis, y, d, field):
    with pytest.raises(ValidationError) as exc:
        WitnessConfig(unit_basis, y, InteriorObservation(0.7, 1.0), d)
    assert exc.value.field == field


def test_witness_source_on_node():
    b = laplacian_basis(2.0, 50)
    # the first mode sin(pi x / 2) does not vanish inside; the endpoint is excluded by the y-range check
    with pytest.raises(ValidationError):
        WitnessConfig(b, 0.0, InteriorObservation(1.5, 2.0), 0.3)


def test_witness_window_and_coefficients(ctx, unit_basis):
    cfg = WitnessConfig(unit_basis, 0.1, InteriorObservation(0.7, 1.0), 0.55)
    window, c = witness_coefficients(cfg, 0.05, ctx)
    # 2 T omega <= d with omega_j = j pi: j <= 0.55 / (0.1 pi)
    assert window == tuple(range(1, int(0.55 / (0.1 * math.pi)) + 1))
    ref = [math.exp(-0.05 * (j * math.pi) ** 2) * math.sqrt(2) * math.sin(j * math.pi * 0.1) for j in window]
    np.testing.assert_allclose([float(v) for v in c], ref, rtol=1e-14)


def test_witness_ratio_below_cost(ctx, unit_basis):
    cfg = WitnessConfig(unit_basis, 0.1, InteriorObservation(0.7, 1.0), 0.55)
    pts = witness_ratio_curve(cfg, [0.05, 0.035], ctx)
    for p in pts:
        assert p.ratio >= 1 / math.sqrt(p.T) * 0.999
        assert p.ratio <= p.cost * (1 + 1e-20)
        assert p.row()["T_ln_R"] == pytest.approx(p.T * math.log(float(p.ratio)))
