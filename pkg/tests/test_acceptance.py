"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly with ``python3 tests/test_acceptance.py [N ...]``.
"""
import math
import sys
import time

import gmpy2
import numpy as np
import pytest

from ctrlcost.lowerbound import WitnessConfig, heat_envelope_ratios, witness_ratio_curve
from ctrlcost.observability import (BoundaryObservation, InteriorObservation, build_gramian, cost_curve,
                                    highfreq_cost_curve)
from ctrlcost.precision import PrecisionContext, as_mp_array, eig_hermitian, gauss_legendre
from ctrlcost.product import cylinder_boundary_cost, tensor_gramian_mineig
from ctrlcost.spectral import SturmLiouvilleProblem, laplacian_basis
from ctrlcost.transmutation import default_wave_window, fundamental_for_wave, transmute, wave_hum_control
from ctrlcost.window import ALPHA_STAR, SpectralSequence, build_family, fit_cost_exponent

PI = math.pi


def biorthogonality():
    ctx = PrecisionContext(256)
    fam = build_family(SpectralSequence.squares(), 1.0, tuple(range(1, 21)), 0.3, ctx, residual_tol=1.0)
    return fam.residual <= 1e-8, f"max residual {fam.residual:.2e} (limit 1e-8)"


def window_cost_exponent():
    ctx = PrecisionContext(256)
    eps = 0.3
    E, _, pts = fit_cost_exponent(SpectralSequence.squares(), [1.0, 0.7, 0.5, 0.35], tuple(range(1, 21)), eps, ctx)
    limit = ALPHA_STAR * (PI + math.sqrt(2) * eps) ** 2 * 2 * 1.25
    return E <= limit, f"fitted exponent {E:.3f} (limit {limit:.3f})"


def boundary_rate_bracket():
    ctx = PrecisionContext(256)
    T_grid = [0.6, 0.45, 0.34, 0.25, 0.19]
    basis = laplacian_basis(PI, int(8 / min(T_grid)) + 4)
    curve = cost_curve(basis, BoundaryObservation(PI, 1), T_grid, 8.0, ctx)
    lo, hi = 0.8 * PI ** 2 / 8, 1.25 * ALPHA_STAR * PI ** 2
    tail = [e.T_ln_cost for e in curve[-2:]]
    ok = all(lo <= v <= hi for v in tail)
    return ok, f"T ln C at T = 0.25, 0.19: {tail[0]:.3f}, {tail[1]:.3f} (bracket [{lo:.3f}, {hi:.3f}])"


def witness_lower_bound():
    ctx = PrecisionContext(256)
    d = 0.55
    cfg = WitnessConfig(laplacian_basis(1.0, 60), 0.1, InteriorObservation(0.7, 1.0), d)
    pts = witness_ratio_curve(cfg, [0.05, 0.035, 0.025], ctx)
    floor = 0.8 * d ** 2 / 4
    # a one-mode window gives R = cost exactly
    below = all(p.ratio <= p.cost * (1 + 1e-30) for p in pts)
    ok = below and all(p.T_ln_ratio >= floor for p in pts)
    vals = ", ".join(f"{p.T_ln_ratio:.4f}" for p in pts)
    return ok, f"T ln R = {vals} (floor {floor:.4f}); R <= cost: {below}"


def complex_heat_envelope():
    ctx = PrecisionContext(256)
    r = heat_envelope_ratios(laplacian_basis(1.0, 400), 0.1, InteriorObservation(0.7, 1.0), [0.02, 0.01, 0.005], ctx)
    spread = max(r) / min(r)
    return spread <= 2, f"ratios {', '.join(f'{v:.3e}' for v in r)}; max/min {spread:.3f} (limit 2)"


def transmutation_end_to_end():
    start = time.perf_counter()
    ctx = PrecisionContext(256)
    basis = laplacian_basis(1.0, 8 + 48 + 20)
    rng = np.random.default_rng(0)
    u0 = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    wave = wave_hum_control(basis, (0.4, 1.0), 2.2, list(u0), window=default_wave_window(basis, 8, 48), ctx=ctx)
    tr = transmute(fundamental_for_wave(wave, 0.3), wave)
    steer = tr.final_state()
    pde = tr.pde_residual().residual
    chain = tr.cost_chain()
    wall = time.perf_counter() - start
    ok = steer <= 1e-5 and pde <= 1e-4 and chain.holds
    return ok, (f"steering {steer:.2e} (limit 1e-5), PDE residual {pde:.2e} (limit 1e-4), "
                f"chain {chain.control:.3e} <= {chain.kernel:.3e} * {chain.wave:.3e}: {chain.holds}, {wall:.0f}s")


def tensor_equality():
    ctx = PrecisionContext(256)
    beta = [0.0, 1.7, 4.2]
    basis = laplacian_basis(PI, 8)
    interior = tensor_gramian_mineig(basis, InteriorObservation(0.3, PI), 1.0, (1, 2, 3, 4, 5, 6), beta, ctx)
    cyl = cylinder_boundary_cost(SturmLiouvilleProblem(PI), beta, 1.0, (1, 2, 3, 4, 5, 6), ctx)
    worst = max(interior.rel_diff, cyl.rel_diff)
    return worst <= 1e-10, f"interior {interior.rel_diff:.2e}, cylinder {cyl.rel_diff:.2e} (limit 1e-10)"


def highfreq_boundedness():
    ctx = PrecisionContext(256)
    T_grid = [0.8, 0.4, 0.2, 0.1]
    basis = laplacian_basis(PI, int(6 / min(T_grid)) + 4)
    curve = highfreq_cost_curve(basis, InteriorObservation(0.3, PI), T_grid, 2.0, 6.0, ctx)
    scaled = [float(e.cost) * math.sqrt(e.T) for e in curve]
    spread = max(scaled) / min(scaled)
    return spread <= 3, f"cost*sqrt(T) = {', '.join(f'{v:.3f}' for v in scaled)}; max/min {spread:.3f} (limit 3)"


def _min_eig(G, ctx):
    w, _ = eig_hermitian(G, ctx)
    return w[0]


def infrastructure_properties():
    ctx = PrecisionContext(256)
    rng = np.random.default_rng(20240601)
    # Hermitian round trip
    n = 8
    M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = as_mp_array((M + M.conj().T) / 2, ctx, complex_=True)
    w, V = eig_hermitian(A, ctx)
    with ctx.scope():
        R = V.dot(np.diag(w)).dot(np.conj(V).T)
        eig_err = max(abs(v) for v in (R - A).reshape(-1)) / max(abs(v) for v in A.reshape(-1))
    eig_ok = eig_err <= gmpy2.mpfr(2) ** -200
    # Gauss-Legendre: n nodes integrate x^k on [0, 1] exactly for k <= 2n - 1
    worst_gl = 0.0
    for nodes in (2, 5, 12, 24):
        x, wts = gauss_legendre(nodes, ctx, (0, 1))
        with ctx.scope():
            for k in range(2 * nodes):
                err = abs(sum(wt * xi ** k for xi, wt in zip(x, wts)) - gmpy2.mpfr(1) / (k + 1))
                worst_gl = max(worst_gl, float(err))
    gl_ok = worst_gl <= 2.0 ** -240
    # Gramian monotonicity in T and in Omega
    mono_ctx = PrecisionContext(128)
    worst_mono = math.inf
    for _ in range(50):
        L = float(rng.uniform(0.8, 3.5))
        m = int(rng.integers(2, 7))
        b = laplacian_basis(L, m)
        window = tuple(range(1, m + 1))
        a = float(rng.uniform(0, 0.5)) * L
        width = float(rng.uniform(0.05, 0.4)) * L
        inner = InteriorObservation(a, a + width)
        outer = InteriorObservation(max(0.0, a - 0.1 * L), min(L, a + width + 0.1 * L))
        T1 = float(rng.uniform(0.05, 1.0))
        T2 = T1 + float(rng.uniform(0.01, 1.0))
        G = build_gramian(b, inner, T1, window, mono_ctx)
        with mono_ctx.scope():
            scale = max(abs(v) for v in G.reshape(-1))
            for H in (build_gramian(b, inner, T2, window, mono_ctx), build_gramian(b, outer, T1, window, mono_ctx)):
                worst_mono = min(worst_mono, float(_min_eig(H - G, mono_ctx) / scale))
    mono_ok = worst_mono >= -1e-30
    ok = eig_ok and gl_ok and mono_ok
    return ok, (f"eigen round trip {float(eig_err):.1e} (limit 2^-200), quadrature error {worst_gl:.1e}, "
                f"min eig of Gramian increments {worst_mono:.1e} over 50 cases")


CRITERIA = [
    (1, "biorthogonality", biorthogonality),
    (2, "window cost exponent", window_cost_exponent),
    (3, "boundary rate bracket", boundary_rate_bracket),
    (4, "lower-bound witness", witness_lower_bound),
    (5, "complex heat envelope", complex_heat_envelope),
    (6, "transmutation end to end", transmutation_end_to_end),
    (7, "tensor equality", tensor_equality),
    (8, "high-frequency boundedness", highfreq_boundedness),
    (9, "infrastructure properties", infrastructure_properties),
]


def _line(number, name, ok, detail, seconds):
    return f"criterion {number} [{name}]: {'PASS' if ok else 'FAIL'} ({seconds:.0f}s) {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("number, name, check", CRITERIA, ids=[c[1].replace(" ", "-") for c in CRITERIA])
def test_criterion(number, name, check, capsys):
    start = time.perf_counter()
    ok, detail = check()
    with capsys.disabled():
        print("\n" + _line(number, name, ok, detail, time.perf_counter() - start))
    assert ok, detail


if __name__ == "__main__":
    wanted = {int(a) for a in sys.argv[1:]}
    failures = 0
    for number, name, check in CRITERIA:
        if wanted and number not in wanted:
            continue
        start = time.perf_counter()
        ok, detail = check()
        failures += not ok
        print(_line(number, name, ok, detail, time.perf_counter() - start), flush=True)
    sys.exit(1 if failures else 0)
