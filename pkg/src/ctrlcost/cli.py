"""Command-line front end: ``ctrlcost <command> --config run.toml``.

Each run reads a TOML config, validates every field the command uses, runs
one experiment and writes ``<command>.csv`` plus ``manifest.json`` into the
output directory.  The CSV depends only on the config, the precision and the
library version; wall time and environment go to the manifest.

Config layout::

    command = "cost-curve"          # optional if given on the command line
    mantissa_bits = 256             # --precision overrides

    [problem]
    length = 3.141592653589793      # or "pi"
    left = "dirichlet"              # "neumann" or [a, b] for a u + b u' = 0
    right = "dirichlet"
    p = 1.0                         # number, {polynomial = [c0, c1, ...]}
    q = 0.0                         #   or {x = [...], values = [...]}
    w = 1.0
    n_modes = 80

    [observation]
    intervals = [[0.4, 1.0]]        # or: boundary = 3.14159, order = 1

    [params]                        # command-specific, see COMMANDS
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import NumericalError, ValidationError
from .lowerbound import WitnessConfig, witness_ratio_curve
from .observability import (BoundaryObservation, InteriorObservation, cost_curve, highfreq_cost_curve)
from .precision import PrecisionContext, to_complex
from .product import cylinder_boundary_cost, tensor_gramian_mineig
from .spectral import LaplacianBasis, SturmLiouvilleProblem, solve_sturm_liouville
from .transmutation import (default_wave_window, fundamental_for_wave, transmute, two_stage_control,
                            wave_hum_control)
from .window import SpectralSequence, build_family, window_cost_bound

COMMANDS = {
    "eigen": "eigenpairs of the problem: n, eigenvalue, frequency",
    "cost-curve": "Gramian cost on windows omega <= c/T; params T, c, sobolev_order",
    "highfreq": "Gramian cost on windows d/T <= omega <= c/T; params T, d, c",
    "window-build": "biorthogonal family samples; params T, window, eps, sequence",
    "transmute": "transmuted control of u0; params T, S, u0, wave_extra, half_length",
    "two-stage": "smoothing plus transmuted control; params T, split, u0, n_low, half_length",
    "lower-bound": "heat-kernel witness ratios; params T, y, d",
    "product-check": "tensor against factor Gramian; params T, window, companion",
    "cylinder": "boundary cost on a cylinder; params T, window, companion",
}

EXIT_OK, EXIT_NUMERIC, EXIT_INVALID = 0, 1, 2


# ---------------------------------------------------------------------------
# field readers


def _get(table, key, field, default=..., kind=float):
    if key not in table:
        if default is ...:
            raise ValidationError(field, "missing")
        return default
    return _coerce(table[key], field, kind)


def _coerce(value, field, kind):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ValidationError(field, f"expected a finite number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(field, f"expected an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ValidationError(field, f"expected a string, got {value!r}")
        return value
    raise TypeError(kind)


def _float_list(table, key, field, default=...):
    raw = table.get(key, default)
    if raw is ...:
        raise ValidationError(field, "missing")
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raw = [raw]
    if not isinstance(raw, list) or not raw:
        raise ValidationError(field, "expected a non-empty list of numbers")
    return [_coerce(v, f"{field}[{i}]", float) for i, v in enumerate(raw)]


def _positive_grid(table, key, field):
    vals = _float_list(table, key, field)
    if any(v <= 0 for v in vals):
        raise ValidationError(field, "all entries must be positive")
    return vals


def _window(table, field, default=...):
    raw = table.get("window", default)
    if raw is ...:
        raise ValidationError(field, "missing")
    if isinstance(raw, dict):
        lo = _coerce(raw.get("first", 1), f"{field}.first", int)
        hi = _coerce(raw.get("last"), f"{field}.last", int) if "last" in raw else None
        if hi is None or not 1 <= lo <= hi:
            raise ValidationError(field, "need 1 <= first <= last")
        return tuple(range(lo, hi + 1))
    if not isinstance(raw, list) or not raw:
        raise ValidationError(field, "expected a list of mode numbers or {first, last}")
    win = tuple(_coerce(v, f"{field}[{i}]", int) for i, v in enumerate(raw))
    if min(win) < 1 or len(set(win)) != len(win):
        raise ValidationError(field, "mode numbers must be distinct and positive")
    return tuple(sorted(win))


# ---------------------------------------------------------------------------
# problem and observation


def _length(raw, field):
    if isinstance(raw, str):
        s = raw.strip().replace(" ", "")
        if s == "pi":
            return math.pi
        if s.endswith("*pi"):
            try:
                return float(s[:-3]) * math.pi
            except ValueError:
                pass
        raise ValidationError(field, f"expected a number, 'pi' or 'r*pi', got {raw!r}")
    v = _coerce(raw, field, float)
    if v <= 0:
        raise ValidationError(field, f"must be positive, got {v}")
    return v


def _coefficient(raw, field, length):
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return _coerce(raw, field, float)
    if not isinstance(raw, dict):
        raise ValidationError(field, "expected a number, {polynomial = [...]} or {x = [...], values = [...]}")
    if "polynomial" in raw:
        coeffs = _float_list(raw, "polynomial", f"{field}.polynomial")
        return np.polynomial.Polynomial(coeffs)
    xs = _float_list(raw, "x", f"{field}.x")
    vals = _float_list(raw, "values", f"{field}.values")
    if len(xs) != len(vals) or len(xs) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
        raise ValidationError(field, "table needs equal-length x and values on an increasing grid")
    if xs[0] > 0 or xs[-1] < length:
        raise ValidationError(f"{field}.x", f"table must cover [0, {length}]")
    return (np.array(xs), np.array(vals))


def _check_coefficient_sign(coef, name, length):
    if name == "q":
        return
    xs = np.linspace(0.0, length, 401)
    if isinstance(coef, float):
        vals = np.full_like(xs, coef)
    elif isinstance(coef, tuple):
        vals = np.interp(xs, *coef)
    else:
        vals = coef(xs)
    if np.any(vals <= 0):
        raise ValidationError(f"problem.{name}", "must be positive on the whole interval")


def parse_problem(cfg):
    table = cfg.get("problem")
    if not isinstance(table, dict):
        raise ValidationError("problem", "missing [problem] table")
    if "length" not in table:
        raise ValidationError("problem.length", "missing")
    length = _length(table["length"], "problem.length")
    coefs = {}
    for name, default in (("p", 1.0), ("q", 0.0), ("w", 1.0)):
        coefs[name] = _coefficient(table.get(name, default), f"problem.{name}", length)
        _check_coefficient_sign(coefs[name], name, length)
    bcs = {}
    for side in ("left", "right"):
        raw = table.get(side, "dirichlet")
        if isinstance(raw, list):
            if len(raw) != 2:
                raise ValidationError(f"problem.{side}", "expected [a, b]")
            raw = tuple(_coerce(v, f"problem.{side}", float) for v in raw)
        elif not isinstance(raw, str):
            raise ValidationError(f"problem.{side}", "expected 'dirichlet', 'neumann' or [a, b]")
        bcs[side] = raw
    n_modes = _get(table, "n_modes", "problem.n_modes", None, int)
    if n_modes is not None and n_modes < 1:
        raise ValidationError("problem.n_modes", f"must be positive, got {n_modes}")
    try:
        problem = SturmLiouvilleProblem(length, left=bcs["left"], right=bcs["right"], **coefs)
    except ValidationError as exc:
        raise ValidationError(f"problem.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    return problem, n_modes


def make_basis(problem, n_modes):
    if problem.is_plain_laplacian:
        return LaplacianBasis(problem, n_modes)
    return solve_sturm_liouville(problem, n_modes)


def parse_observation(cfg, length, interior_only=False):
    table = cfg.get("observation")
    if not isinstance(table, dict):
        raise ValidationError("observation", "missing [observation] table")
    if "boundary" in table:
        if interior_only:
            raise ValidationError("observation.boundary", "this command needs an interior set")
        point = _coerce(table["boundary"], "observation.boundary", float)
        if abs(point) < 1e-12:
            point = 0.0
        elif abs(point - length) < 1e-9 * max(1.0, length):
            point = length
        else:
            raise ValidationError("observation.boundary", f"{point} is not an endpoint of [0, {length}]")
        order = _get(table, "order", "observation.order", None, int)
        if order is not None and order not in (0, 1):
            raise ValidationError("observation.order", f"must be 0 or 1, got {order}")
        return BoundaryObservation(point, order)
    raw = table.get("intervals")
    if not isinstance(raw, list) or not raw:
        raise ValidationError("observation.intervals", "expected a list of [a, b] pairs")
    if all(isinstance(v, (int, float)) for v in raw):
        raw = [raw]
    pieces = []
    for i, piece in enumerate(raw):
        if not isinstance(piece, list) or len(piece) != 2:
            raise ValidationError(f"observation.intervals[{i}]", f"expected [a, b], got {piece!r}")
        a, b = (_coerce(v, f"observation.intervals[{i}]", float) for v in piece)
        if not 0 <= a < b <= length * (1 + 1e-12):
            raise ValidationError(f"observation.intervals[{i}]", f"need 0 <= a < b <= {length}, got ({a}, {b})")
        pieces.append((a, min(b, length)))
    try:
        return InteriorObservation(pieces)
    except ValidationError as exc:
        raise ValidationError("observation.intervals", str(exc).split(": ", 1)[-1]) from None


def _u0(params, seed, field="params.u0"):
    """Initial coefficients from ``u0 = {re = [...], im = [...]}`` or ``u0 = {random = N}``."""
    raw = params.get("u0")
    if not isinstance(raw, dict):
        raise ValidationError(field, "expected {re = [...], im = [...]} or {random = N}")
    if "random" in raw:
        n = _coerce(raw["random"], f"{field}.random", int)
        if n < 1:
            raise ValidationError(f"{field}.random", "must be positive")
        rng = np.random.default_rng(seed)
        return list(rng.standard_normal(n) + 1j * rng.standard_normal(n))
    re = _float_list(raw, "re", f"{field}.re")
    im = _float_list(raw, "im", f"{field}.im", [0.0] * len(re))
    if len(im) != len(re):
        raise ValidationError(f"{field}.im", "must match the length of re")
    if not any(complex(a, b) != 0 for a, b in zip(re, im)):
        raise ValidationError(field, "initial state is zero")
    return [complex(a, b) for a, b in zip(re, im)]


# ---------------------------------------------------------------------------
# commands; each returns (header, rows, summary)


def _require_modes(n_modes, field="problem.n_modes"):
    if n_modes is None:
        raise ValidationError(field, "missing")
    return n_modes


def _basis_for_frequency(problem, n_modes, top):
    """Basis whose modes reach past frequency ``top`` (``n_modes`` is a floor)."""
    guess = int(top * problem.length / math.pi) + 4
    n = max(n_modes or 0, guess)
    return make_basis(problem, n)


def run_eigen(cfg, params, ctx, seed):
    problem, n_modes = parse_problem(cfg)
    basis = make_basis(problem, _require_modes(n_modes))
    rows = [(n, float(lam), math.sqrt(max(float(lam), 0.0))) for n, lam in enumerate(basis.eigenvalues, 1)]
    summary = {"asymptotic_shift": float(basis.asymptotic_shift), "warning": basis.warning}
    return ("n", "eigenvalue", "frequency"), rows, summary


def run_cost_curve(cfg, params, ctx, seed):
    problem, n_modes = parse_problem(cfg)
    obs = parse_observation(cfg, problem.length)
    T_grid = _positive_grid(params, "T", "params.T")
    c = _get(params, "c", "params.c")
    if c <= 0:
        raise ValidationError("params.c", f"must be positive, got {c}")
    order = _get(params, "sobolev_order", "params.sobolev_order", 0, int)
    basis = _basis_for_frequency(problem, n_modes, c / min(T_grid))
    curve = cost_curve(basis, obs, T_grid, c, ctx, order)
    rows = [tuple(e.row().values()) for e in curve]
    return ("T", "cost", "T_ln_cost", "n_modes", "mantissa_bits"), rows, {}


def run_highfreq(cfg, params, ctx, seed):
    problem, n_modes = parse_problem(cfg)
    obs = parse_observation(cfg, problem.length)
    T_grid = _positive_grid(params, "T", "params.T")
    d = _get(params, "d", "params.d")
    c = _get(params, "c", "params.c")
    if not 0 < d < c:
        raise ValidationError("params.d", f"need 0 < d < c, got d={d}, c={c}")
    basis = _basis_for_frequency(problem, n_modes, c / min(T_grid))
    curve = highfreq_cost_curve(basis, obs, T_grid, d, c, ctx)
    rows = [tuple(e.row().values()) for e in curve]
    scaled = [float(e.cost) * math.sqrt(e.T) for e in curve]
    return (("T", "cost", "T_ln_cost", "n_modes", "mantissa_bits"), rows,
            {"cost_sqrtT_spread": max(scaled) / min(scaled)})


def _sequence(params, cfg):
    raw = params.get("sequence", {"rule": "squares"})
    if not isinstance(raw, dict):
        raise ValidationError("params.sequence", "expected a table")
    rule = raw.get("rule", "squares")
    if rule == "squares":
        return SpectralSequence.squares()
    if rule == "model":
        scale = _get(raw, "scale", "params.sequence.scale", 1.0)
        if scale <= 0:
            raise ValidationError("params.sequence.scale", "must be positive")
        return SpectralSequence.from_rule(scale, _get(raw, "shift", "params.sequence.shift", 0.0),
                                          _get(raw, "offset", "params.sequence.offset", 0.0))
    if rule == "problem":
        problem, n_modes = parse_problem(cfg)
        return SpectralSequence.from_basis(make_basis(problem, _require_modes(n_modes)))
    raise ValidationError("params.sequence.rule", f"expected 'squares', 'model' or 'problem', got {rule!r}")


def run_window_build(cfg, params, ctx, seed):
    T = _get(params, "T", "params.T")
    if T <= 0:
        raise ValidationError("params.T", f"must be positive, got {T}")
    eps = _get(params, "eps", "params.eps", 0.3)
    if eps <= 0:
        raise ValidationError("params.eps", f"must be positive, got {eps}")
    margin = _get(params, "margin", "params.margin", 0.1)
    if not 0 < margin < 1:
        raise ValidationError("params.margin", f"must lie in (0, 1), got {margin}")
    window = _window(params, "params.window")
    seq = _sequence(params, cfg)
    fam = build_family(seq, T, window, eps, ctx, margin=margin)
    vals = to_complex(fam.samples)
    times = [float(t) for t in fam.times]
    rows = [(n, t, v.real, v.imag) for i, n in enumerate(fam.window) for t, v in zip(times, vals[i])]
    summary = {"residual": fam.residual, "cost_bound": window_cost_bound(fam),
               "lattice_step": float(fam.h), "K": fam.K, "samples_per_function": len(times)}
    return ("n", "t", "Re", "Im"), rows, summary


def _laplacian(cfg, field="problem"):
    problem, n_modes = parse_problem(cfg)
    if not problem.is_plain_laplacian:
        raise ValidationError(field, "transmutation needs p = w = 1, q = 0 and Dirichlet/Neumann ends")
    return problem, n_modes


def _grid(params, key, field, lo, hi, default):
    count = _get(params, key, field, default, int)
    if count < 2:
        raise ValidationError(field, f"need at least 2 points, got {count}")
    return np.linspace(lo, hi, count)


def run_transmute(cfg, params, ctx, seed):
    problem, _ = _laplacian(cfg)
    obs = parse_observation(cfg, problem.length, interior_only=True)
    u0 = _u0(params, seed)
    T = _get(params, "T", "params.T")
    S = _get(params, "S", "params.S")
    L = _get(params, "half_length", "params.half_length", S)
    extra = _get(params, "wave_extra", "params.wave_extra", 48, int)
    eps = _get(params, "eps", "params.eps", 0.3)
    if extra < 0:
        raise ValidationError("params.wave_extra", "must be non-negative")
    if not 0 < S <= L:
        raise ValidationError("params.S", f"need 0 < S <= half_length = {L}, got {S}")
    if not 0 < T <= min(math.pi / 2, L) ** 2:
        raise ValidationError("params.T", f"need 0 < T <= {min(math.pi / 2, L) ** 2}, got {T}")
    if eps <= 0:
        raise ValidationError("params.eps", f"must be positive, got {eps}")
    times = _grid(params, "time_points", "params.time_points", 0.0, T, 65)
    xs = _grid(params, "space_points", "params.space_points", 0.0, problem.length, 33)
    basis = LaplacianBasis(problem, len(u0) + extra + 20)
    wave = wave_hum_control(basis, obs, S, u0, window=default_wave_window(basis, len(u0), extra), ctx=ctx)
    fund = fundamental_for_wave(wave, T, L=L, eps=eps, ctx=ctx)
    tr = transmute(fund, wave)
    g = tr.control(times, xs)
    rows = [(float(t), float(x), g[i, j].real, g[i, j].imag) for i, t in enumerate(times) for j, x in enumerate(xs)]
    chain = tr.cost_chain()
    report = tr.pde_residual()
    summary = {
        "steering_residual": tr.final_state(),
        "pde_residual": report.residual,
        "pde_leakage": report.leakage,
        "trace_error": tr.trace_error(),
        "cost_chain": {"control": chain.control, "kernel": chain.kernel, "wave": chain.wave,
                       "holds": chain.holds},
        "wave_window": len(wave.window),
        "kernel_modes": len(fund.window),
    }
    return ("t", "x", "Re", "Im"), rows, summary


def run_two_stage(cfg, params, ctx, seed):
    problem, _ = _laplacian(cfg)
    obs = parse_observation(cfg, problem.length, interior_only=True)
    u0 = _u0(params, seed)
    T = _get(params, "T", "params.T")
    split = _get(params, "split", "params.split")
    if not 0 < split < 1:
        raise ValidationError("params.split", f"must lie in (0, 1), got {split}")
    L = _get(params, "half_length", "params.half_length", 2.2)
    if not 0 < (1 - split) * T <= min(math.pi / 2, L) ** 2:
        raise ValidationError("params.T", "second stage horizon (1 - split) T is out of range for half_length")
    n_low = _get(params, "n_low", "params.n_low", min(8, len(u0)), int)
    if not 1 <= n_low <= len(u0):
        raise ValidationError("params.n_low", f"need 1 <= n_low <= {len(u0)}, got {n_low}")
    basis = LaplacianBasis(problem, len(u0) + 48 + 20)
    ts = two_stage_control(basis, obs, u0, T, split, ctx, n_low=n_low, L=L)
    times = _grid(params, "time_points", "params.time_points", 0.0, T - split * T, 65)
    xs = _grid(params, "space_points", "params.space_points", 0.0, problem.length, 33)
    g = ts.transmuted.control(times, xs)
    rows = [(float(t + split * T), float(x), g[i, j].real, g[i, j].imag)
            for i, t in enumerate(times) for j, x in enumerate(xs)]
    summary = {"steering_residual": ts.final_state(), "cost": ts.cost,
               "smoothing_cost": ts.smoothing_cost, "transmuted_cost": ts.transmuted_cost}
    return ("t", "x", "Re", "Im"), rows, summary


def run_lower_bound(cfg, params, ctx, seed):
    problem, n_modes = parse_problem(cfg)
    obs = parse_observation(cfg, problem.length, interior_only=True)
    T_grid = _positive_grid(params, "T", "params.T")
    y = _get(params, "y", "params.y")
    d = _get(params, "d", "params.d")
    basis = _basis_for_frequency(problem, n_modes, d / (2 * min(T_grid)))
    try:
        wcfg = WitnessConfig(basis, y, obs, d)
    except ValidationError as exc:
        raise ValidationError(f"params.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    with_cost = bool(params.get("with_cost", True))
    pts = witness_ratio_curve(wcfg, T_grid, ctx, with_cost)
    rows = [tuple(p.row().values()) for p in pts]
    return ("T", "R", "T_ln_R", "n_modes", "cost", "mantissa_bits"), rows, {}


def _companion(params):
    return _float_list(params, "companion", "params.companion")


def run_product_check(cfg, params, ctx, seed):
    problem, n_modes = parse_problem(cfg)
    obs = parse_observation(cfg, problem.length)
    T_grid = _positive_grid(params, "T", "params.T")
    window = _window(params, "params.window")
    beta = _companion(params)
    basis = make_basis(problem, max(n_modes or 0, max(window)))
    res = [tensor_gramian_mineig(basis, obs, T, window, beta, ctx) for T in T_grid]
    rows = [tuple(r.row().values()) for r in res]
    return ("T", "tensor_min", "factor_min", "rel_diff"), rows, {"max_rel_diff": max(r.rel_diff for r in res)}


def run_cylinder(cfg, params, ctx, seed):
    problem, n_modes = parse_problem(cfg)
    T_grid = _positive_grid(params, "T", "params.T")
    window = _window(params, "params.window")
    beta = _companion(params)
    basis = make_basis(problem, max(n_modes or 0, max(window)))
    res = [cylinder_boundary_cost(basis, beta, T, window, ctx) for T in T_grid]
    rows = [tuple(r.row().values()) for r in res]
    return ("T", "tensor_min", "factor_min", "rel_diff"), rows, {"max_rel_diff": max(r.rel_diff for r in res)}


RUNNERS = {
    "eigen": run_eigen,
    "cost-curve": run_cost_curve,
    "highfreq": run_highfreq,
    "window-build": run_window_build,
    "transmute": run_transmute,
    "two-stage": run_two_stage,
    "lower-bound": run_lower_bound,
    "product-check": run_product_check,
    "cylinder": run_cylinder,
}


# ---------------------------------------------------------------------------
# output


def format_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if value is None or isinstance(value, str):
        return value
    return float(value)


def run(cfg, out_dir, precision=None, seed=0):
    """Validate and run one experiment; returns the manifest dict."""
    command = cfg.get("command")
    if command not in RUNNERS:
        raise ValidationError("command", f"expected one of {sorted(RUNNERS)}, got {command!r}")
    bits = precision if precision is not None else cfg.get("mantissa_bits", 256)
    if isinstance(bits, bool) or not isinstance(bits, int):
        raise ValidationError("mantissa_bits", f"expected an integer, got {bits!r}")
    ctx = PrecisionContext(bits)
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ValidationError("params", "expected a table")
    resolved = copy.deepcopy(cfg)
    resolved["mantissa_bits"] = bits
    resolved["seed"] = seed

    start = time.perf_counter()
    header, rows, summary = RUNNERS[command](cfg, params, ctx, seed)
    wall = time.perf_counter() - start

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{command}.csv"
    csv_path.write_text(format_csv(header, rows))
    manifest = {
        "command": command,
        "version": __version__,
        "mantissa_bits": bits,
        "seed": seed,
        "config": resolved,
        "wall_time_s": wall,
        "python": platform.python_version(),
        "csv": csv_path.name,
        "rows": len(rows),
        "summary": _jsonable(summary),
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return manifest


def build_parser():
    parser = argparse.ArgumentParser(prog="ctrlcost", description="Controllability-cost experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, type=Path, help="TOML experiment config")
        p.add_argument("--precision", type=int, default=None, help="mantissa bits (overrides the config)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, default=0, help="seed for random initial data only")
    return parser


def load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError("config", f"no such file: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError("config", f"invalid TOML: {exc}") from None


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ValidationError("seed", "must be an unsigned 64-bit integer")
        cfg = load_config(args.config)
        if cfg.get("command", args.command) != args.command:
            raise ValidationError("command", f"config is for {cfg['command']!r}, not {args.command!r}")
        cfg["command"] = args.command
        manifest = run(cfg, args.out, args.precision, args.seed)
    except ValidationError as exc:
        print(f"ctrlcost: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"ctrlcost: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {Path(args.out) / manifest['csv']} ({manifest['rows']} rows) in {manifest['wall_time_s']:.1f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
